#pragma once

// Multiple kernel learning: a sum of per-pair predictors, each with its own
// coefficient matrix, penalized by the sum of spectral penalties.

#include <Eigen/Dense>

#include <cmath>
#include <utility>
#include <vector>

#include "spectral_cf/errors.hpp"
#include "spectral_cf/kernels.hpp"
#include "spectral_cf/model.hpp"
#include "spectral_cf/solver.hpp"

namespace scf {

/// M kernel pairs over the same n_X users and n_Y objects.
class KernelBank {
 public:
  explicit KernelBank(std::vector<KernelPair> pairs) : pairs_(std::move(pairs)) {
    if (pairs_.empty()) throw ValidationError("kernel bank needs at least one pair");
    for (const auto& p : pairs_) {
      if (!p.x || !p.y) throw ValidationError("kernel bank pair is missing a factor");
      if (p.x->n() != pairs_[0].x->n() || p.y->n() != pairs_[0].y->n())
        throw DimensionError("kernel bank pairs disagree on entity counts");
    }
  }

  std::size_t size() const { return pairs_.size(); }
  const KernelPair& operator[](std::size_t k) const { return pairs_[k]; }
  const std::vector<KernelPair>& pairs() const { return pairs_; }
  Eigen::Index n_users() const { return pairs_[0].x->n(); }
  Eigen::Index n_objects() const { return pairs_[0].y->n(); }

 private:
  std::vector<KernelPair> pairs_;
};

/// Per-block models (zero mean each) plus the shared rating mean.
struct MklModel {
  std::vector<OperatorModel> blocks;
  double mean = 0.0;

  Matrix block_predictions(const RatingsDataset& d) const {
    Matrix out(Eigen::Index(d.size()), Eigen::Index(blocks.size()));
    for (std::size_t k = 0; k < blocks.size(); ++k) out.col(Eigen::Index(k)) = scf::predict_all(blocks[k], d);
    return out;
  }

  Vector predict_all(const RatingsDataset& d) const {
    const Matrix parts = block_predictions(d);
    Vector out = Vector::Constant(parts.rows(), mean);
    for (Eigen::Index k = 0; k < parts.cols(); ++k) out += parts.col(k);
    return out;
  }
};

struct MklResult {
  MklModel model;
  SolveReport report;
};

/// Joint descent over all blocks with one line search per step.
inline MklResult solve_mkl(const RatingsDataset& d, const KernelBank& bank, const SolveConfig& cfg,
                           const MklModel* warm_start = nullptr) {
  if (d.n_users() > bank.n_users() || d.n_objects() > bank.n_objects())
    throw DimensionError("dataset entities exceed the kernel bank");
  double mean = 0.0;
  const Vector t = detail::training_targets(d, cfg.loss, cfg.center, &mean);
  std::vector<detail::FactorPair> warm;
  if (warm_start && warm_start->blocks.size() == bank.size()) {
    for (const auto& m : warm_start->blocks) {
      if (!m.is_factored()) {
        warm.clear();
        break;
      }
      warm.push_back({m.u(), m.v()});
    }
  }
  auto res = detail::solve_blocks(d, t, bank.pairs(), cfg, warm.empty() ? nullptr : &warm);
  MklResult out;
  out.model.mean = mean;
  for (std::size_t k = 0; k < bank.size(); ++k)
    out.model.blocks.emplace_back(bank[k].x, bank[k].y, std::move(res.factors[k].u), std::move(res.factors[k].v), 0.0);
  out.report = std::move(res.report);
  return out;
}

/// The four corners (Dirac, Dirac), (Dirac, Attr), (Attr, Dirac), (Attr, Attr).
inline KernelBank corner_bank(const AttributeMatrix& user_attrs, const AttributeMatrix& object_attrs, Eigen::Index n_x,
                              Eigen::Index n_y, AttributeKernel family = AttributeKernel::linear,
                              double bandwidth = 1.0) {
  if (user_attrs.rows() == 0 || object_attrs.rows() == 0 || user_attrs.cols() == 0 || object_attrs.cols() == 0)
    throw ValidationError("corner bank needs attributes on both sides");
  if (user_attrs.rows() != n_x || object_attrs.rows() != n_y)
    throw DimensionError("attribute rows do not match entity counts");
  KernelSpec us{Side::user, 1.0, family, bandwidth, 0.0, true};
  KernelSpec os{Side::object, 1.0, family, bandwidth, 0.0, true};
  const FactorPtr xd = share(GramFactor::identity(n_x));
  const FactorPtr yd = share(GramFactor::identity(n_y));
  const FactorPtr xa = share(factor_gram(side_gram(us, &user_attrs, n_x)));
  const FactorPtr ya = share(factor_gram(side_gram(os, &object_attrs, n_y)));
  return KernelBank({{xd, yd}, {xd, ya}, {xa, yd}, {xa, ya}});
}

/// Positive singular values of X^T B Y agree (within 1e-8 of the largest)
/// for the eigen and the pivoted-Cholesky square roots of K and G.
inline bool kron_invariance_check(const GramMatrix& k, const GramMatrix& g, const Matrix& b) {
  if (b.rows() != k.n() || b.cols() != g.n()) return false;
  auto positive = [](const Matrix& m) {
    const Vector s = detail::singular_values(m);
    Eigen::Index r = 0;
    const double top = s.size() ? s(0) : 0.0;
    while (r < s.size() && s(r) > 1e-10 * std::max(top, 1e-300)) ++r;
    return Vector(s.head(r));
  };
  const GramFactor x1 = factor_gram(k), y1 = factor_gram(g);
  const GramFactor x2 = factor_gram_cholesky(k), y2 = factor_gram_cholesky(g);
  const Vector s1 = positive(x1.matrix().transpose() * b * y1.matrix());
  const Vector s2 = positive(x2.matrix().transpose() * b * y2.matrix());
  if (s1.size() != s2.size()) return false;
  if (s1.size() == 0) return true;
  return (s1 - s2).cwiseAbs().maxCoeff() <= 1e-8 * std::max(1.0, s1(0));
}

}  // namespace scf
