#pragma once

// Finite representation of a learned bilinear operator: coefficient matrix
// alpha over the square roots of the user and object Gram matrices.

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spectral_cf/errors.hpp"
#include "spectral_cf/kernels.hpp"

namespace scf {

struct Observation {
  int user = 0;
  int object = 0;
  double rating = 0.0;
};

/// Ratings as (user group, object group, value) triplets.
class RatingsDataset {
 public:
  RatingsDataset() = default;
  RatingsDataset(std::vector<Observation> obs, int n_users, int n_objects)
      : obs_(std::move(obs)), n_users_(n_users), n_objects_(n_objects) {
    if (obs_.empty()) throw EmptyInputError("dataset has no observations");
    if (n_users_ <= 0 || n_objects_ <= 0) throw ValidationError("entity counts must be positive");
    for (const auto& o : obs_) {
      if (o.user < 0 || o.user >= n_users_ || o.object < 0 || o.object >= n_objects_)
        throw ValidationError("observation index out of range");
      if (!std::isfinite(o.rating)) throw ValidationError("non-finite rating");
    }
  }

  std::size_t size() const { return obs_.size(); }
  int n_users() const { return n_users_; }
  int n_objects() const { return n_objects_; }
  const Observation& operator[](std::size_t i) const { return obs_[i]; }
  const std::vector<Observation>& observations() const { return obs_; }
  auto begin() const { return obs_.begin(); }
  auto end() const { return obs_.end(); }

  Vector ratings() const {
    Vector t(static_cast<Eigen::Index>(obs_.size()));
    for (std::size_t i = 0; i < obs_.size(); ++i) t(static_cast<Eigen::Index>(i)) = obs_[i].rating;
    return t;
  }
  double mean_rating() const { return ratings().mean(); }

  /// Same entities, observations restricted to `indices`.
  RatingsDataset subset(std::span<const std::size_t> indices) const {
    std::vector<Observation> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(obs_.at(i));
    return RatingsDataset(std::move(out), n_users_, n_objects_);
  }

  /// Copy with `shift` subtracted from every rating.
  RatingsDataset shifted(double shift) const {
    auto out = obs_;
    for (auto& o : out) o.rating -= shift;
    return RatingsDataset(std::move(out), n_users_, n_objects_);
  }

 private:
  std::vector<Observation> obs_;
  int n_users_ = 0;
  int n_objects_ = 0;
};

using FactorPtr = std::shared_ptr<const GramFactor>;

inline FactorPtr share(GramFactor f) { return std::make_shared<const GramFactor>(std::move(f)); }

/// Immutable learned operator. Predictions are rating_mean + x^T alpha y in
/// the coordinates given by the two GramFactors.
class OperatorModel {
 public:
  OperatorModel() = default;

  OperatorModel(FactorPtr xf, FactorPtr yf, Matrix alpha, double mean = 0.0)
      : x_(std::move(xf)), y_(std::move(yf)), alpha_(std::move(alpha)), mean_(mean) {
    check_dims();
  }

  /// Factored storage alpha = U V^T; the dense product is formed once here.
  OperatorModel(FactorPtr xf, FactorPtr yf, Matrix u, Matrix v, double mean)
      : x_(std::move(xf)), y_(std::move(yf)), u_(std::move(u)), v_(std::move(v)), mean_(mean) {
    if (u_->cols() != v_->cols()) throw DimensionError("factor widths differ");
    if (u_->cols() > std::min(u_->rows(), v_->rows())) throw DimensionError("factor width exceeds min(m_X, m_Y)");
    alpha_ = (*u_) * v_->transpose();
    check_dims();
  }

  const GramFactor& xfactor() const { return *x_; }
  const GramFactor& yfactor() const { return *y_; }
  const FactorPtr& xfactor_ptr() const { return x_; }
  const FactorPtr& yfactor_ptr() const { return y_; }
  const Matrix& alpha() const { return alpha_; }
  bool is_factored() const { return u_.has_value(); }
  const Matrix& u() const { return *u_; }
  const Matrix& v() const { return *v_; }
  double mean() const { return mean_; }

  std::optional<KernelSpec> user_kernel;
  std::optional<KernelSpec> object_kernel;

 private:
  void check_dims() const {
    if (!x_ || !y_) throw DimensionError("model needs both Gram factors");
    if (alpha_.rows() != x_->m() || alpha_.cols() != y_->m())
      throw DimensionError("coefficient matrix does not match factor ranks");
  }

  FactorPtr x_;
  FactorPtr y_;
  std::optional<Matrix> u_;
  std::optional<Matrix> v_;
  Matrix alpha_;
  double mean_ = 0.0;
};

inline double predict_pair(const OperatorModel& m, int a, int b) {
  if (a < 0 || a >= m.xfactor().n() || b < 0 || b >= m.yfactor().n())
    throw DimensionError("predict_pair: index out of range");
  return m.mean() + m.xfactor().row(a).dot(m.alpha() * m.yfactor().row(b).transpose());
}

/// Predictions for every observation; only the n_X x m_Y product X alpha is formed.
inline Vector predict_all(const OperatorModel& m, const RatingsDataset& d) {
  if (d.n_users() > m.xfactor().n() || d.n_objects() > m.yfactor().n())
    throw DimensionError("predict_all: dataset entities exceed model entities");
  const Matrix xa = m.xfactor().apply(m.alpha());
  const Matrix& y = m.yfactor().matrix();
  Vector out(static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = m.mean() + xa.row(d[i].user).dot(y.row(d[i].object));
  return out;
}

/// Least-squares coordinates c = argmin ||X c - k|| of a new entity whose
/// kernel similarities to the n training entities are k.
inline Vector embed_new(const GramFactor& f, const Vector& k) {
  if (k.size() != f.n()) throw DimensionError("embed_new: kernel vector length mismatch");
  if (f.is_identity()) return k;
  return f.matrix().colPivHouseholderQr().solve(k);
}

inline double predict_new(const OperatorModel& m, const Vector& kx, const Vector& ky) {
  const Vector cx = embed_new(m.xfactor(), kx);
  const Vector cy = embed_new(m.yfactor(), ky);
  return m.mean() + cx.dot(m.alpha() * cy);
}

}  // namespace scf
