#pragma once

// Gram matrices for users and objects, their convex combinations, and the
// square-root factorizations K = X X^T used by the finite reduction.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>

#include "spectral_cf/errors.hpp"

namespace scf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Real-valued side information, one entity per row.
class AttributeMatrix {
 public:
  AttributeMatrix() = default;
  explicit AttributeMatrix(Matrix features) : features_(std::move(features)) {
    if (!features_.allFinite()) throw ValidationError("attribute matrix has non-finite entries");
  }

  Eigen::Index rows() const { return features_.rows(); }
  Eigen::Index cols() const { return features_.cols(); }
  const Matrix& features() const { return features_; }
  auto row(Eigen::Index i) const { return features_.row(i); }

  /// Copy with every non-zero row scaled to unit Euclidean norm.
  AttributeMatrix normalized() const {
    Matrix out = features_;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double nrm = out.row(i).norm();
      if (nrm > 0.0) out.row(i) /= nrm;
    }
    return AttributeMatrix(std::move(out));
  }

 private:
  Matrix features_;
};

/// Symmetric positive semidefinite kernel matrix over n entities.
class GramMatrix {
 public:
  GramMatrix() = default;
  explicit GramMatrix(Matrix entries) : entries_(std::move(entries)) {
    if (entries_.rows() != entries_.cols()) throw DimensionError("Gram matrix must be square");
    if (!entries_.allFinite()) throw ValidationError("Gram matrix has non-finite entries");
    const double scale = std::max(1.0, entries_.cwiseAbs().maxCoeff());
    if ((entries_ - entries_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
      throw ValidationError("Gram matrix is not symmetric");
  }

  Eigen::Index n() const { return entries_.rows(); }
  const Matrix& entries() const { return entries_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return entries_(i, j); }

 private:
  Matrix entries_;
};

/// Square root X (n x m, full column rank) of a Gram matrix, K = X X^T.
class GramFactor {
 public:
  GramFactor() = default;
  explicit GramFactor(Matrix x, bool identity = false) : x_(std::move(x)), identity_(identity) {}

  static GramFactor identity(Eigen::Index n) { return GramFactor(Matrix::Identity(n, n), true); }

  Eigen::Index n() const { return x_.rows(); }
  Eigen::Index m() const { return x_.cols(); }
  const Matrix& matrix() const { return x_; }
  bool is_identity() const { return identity_; }
  auto row(Eigen::Index i) const { return x_.row(i); }

  /// X * B, skipping the product for identity factors.
  Matrix apply(const Matrix& b) const { return identity_ ? b : Matrix(x_ * b); }
  /// X^T * B.
  Matrix apply_transpose(const Matrix& b) const {
    return identity_ ? b : Matrix(x_.transpose() * b);
  }
  Matrix gram() const { return x_ * x_.transpose(); }

 private:
  Matrix x_;
  bool identity_ = false;
};

enum class Side { user, object };
enum class AttributeKernel { linear, rbf };

/// How one side's kernel is assembled: weight * attribute kernel +
/// (1 - weight) * (Dirac + offset * ones).
struct KernelSpec {
  Side side = Side::user;
  double weight = 0.0;
  AttributeKernel family = AttributeKernel::linear;
  double bandwidth = 1.0;
  double offset = 0.0;
  bool normalize = true;

  void validate() const {
    if (!(weight >= 0.0 && weight <= 1.0)) throw ParameterError("kernel weight must lie in [0,1]");
    if (family == AttributeKernel::rbf && !(bandwidth > 0.0))
      throw ParameterError("rbf bandwidth must be positive");
    if (!(offset >= 0.0)) throw ParameterError("multitask offset must be non-negative");
  }
};

inline GramMatrix dirac_gram(Eigen::Index n) {
  if (n <= 0) throw EmptyInputError("dirac_gram needs at least one entity");
  return GramMatrix(Matrix::Identity(n, n));
}

inline GramMatrix linear_gram(const AttributeMatrix& a) {
  if (a.rows() == 0) throw EmptyInputError("linear_gram needs at least one row");
  Matrix k = a.features() * a.features().transpose();
  k = 0.5 * (k + k.transpose()).eval();
  return GramMatrix(std::move(k));
}

inline GramMatrix rbf_gram(const AttributeMatrix& a, double bandwidth) {
  if (!(bandwidth > 0.0)) throw ParameterError("rbf bandwidth must be positive");
  if (a.rows() == 0) throw EmptyInputError("rbf_gram needs at least one row");
  const Eigen::Index n = a.rows();
  const double denom = 2.0 * bandwidth * bandwidth;
  Matrix k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double v = std::exp(-(a.row(i) - a.row(j)).squaredNorm() / denom);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return GramMatrix(std::move(k));
}

/// w * attr + (1 - w) * dirac.
inline GramMatrix combine(const GramMatrix& attr, const GramMatrix& dirac, double w) {
  if (attr.n() != dirac.n()) throw DimensionError("combine: Gram matrices differ in size");
  if (!(w >= 0.0 && w <= 1.0)) throw ParameterError("combine: weight must lie in [0,1]");
  return GramMatrix(w * attr.entries() + (1.0 - w) * dirac.entries());
}

/// Adds c to every entry (the k_D + c factor of the multitask kernel).
inline GramMatrix multitask_gram(const GramMatrix& dirac, double c) {
  if (!(c >= 0.0)) throw ParameterError("multitask offset must be non-negative");
  return GramMatrix(dirac.entries().array() + c);
}

/// Eigen square root, eigenvalues below tol * lambda_max dropped.
/// Negative eigenvalues down to -1e-8 * lambda_max are treated as zero.
inline GramFactor factor_gram(const GramMatrix& k, double tol = 1e-10) {
  if (k.n() == 0) throw EmptyInputError("factor_gram: empty Gram matrix");
  if (k.entries().isIdentity(0.0)) return GramFactor::identity(k.n());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(k.entries());
  if (eig.info() != Eigen::Success) throw NumericalFailure("factor_gram: eigensolver failed");
  const Vector& vals = eig.eigenvalues();  // ascending
  const double top = vals(vals.size() - 1);
  if (!(top > 0.0)) throw ValidationError("factor_gram: Gram matrix has zero rank");
  if (vals(0) < -1e-8 * top) throw NotPsdError("factor_gram: Gram matrix is indefinite");
  const double cut = tol * top;
  Eigen::Index m = 0;
  for (Eigen::Index i = 0; i < vals.size(); ++i)
    if (vals(i) > cut) ++m;
  Matrix x(k.n(), m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const Eigen::Index src = vals.size() - 1 - j;
    x.col(j) = eig.eigenvectors().col(src) * std::sqrt(vals(src));
  }
  return GramFactor(std::move(x));
}

/// Pivoted (incomplete) Cholesky square root; stops once every remaining
/// diagonal residual is below tol * the largest diagonal entry.
inline GramFactor factor_gram_cholesky(const GramMatrix& k, double tol = 1e-10) {
  const Eigen::Index n = k.n();
  if (n == 0) throw EmptyInputError("factor_gram_cholesky: empty Gram matrix");
  const Matrix& a = k.entries();
  Vector diag = a.diagonal();
  const double top = diag.maxCoeff();
  if (!(top > 0.0)) throw ValidationError("factor_gram_cholesky: Gram matrix has zero rank");
  if (diag.minCoeff() < -1e-8 * top) throw NotPsdError("factor_gram_cholesky: Gram matrix is indefinite");
  Matrix x = Matrix::Zero(n, n);
  Eigen::Index m = 0;
  for (; m < n; ++m) {
    Eigen::Index p = 0;
    const double piv = diag.maxCoeff(&p);
    if (piv <= tol * top) break;
    const double root = std::sqrt(piv);
    Vector col = (a.col(p) - x.leftCols(m) * x.row(p).transpose()) / root;
    col(p) = root;
    x.col(m) = col;
    diag -= col.cwiseAbs2();
    diag(p) = 0.0;
  }
  // the residual K - X X^T must be negligible, otherwise K was indefinite
  if ((a - x.leftCols(m) * x.leftCols(m).transpose()).diagonal().minCoeff() < -1e-8 * top)
    throw NotPsdError("factor_gram_cholesky: Gram matrix is indefinite");
  return GramFactor(Matrix(x.leftCols(m)));
}

/// Gram matrix for one side assembled from its KernelSpec. `attrs` may be
/// empty only when the spec puts zero weight on the attribute kernel.
inline GramMatrix side_gram(const KernelSpec& spec, const AttributeMatrix* attrs, Eigen::Index n) {
  spec.validate();
  GramMatrix base = dirac_gram(n);
  if (spec.offset > 0.0) base = multitask_gram(base, spec.offset);
  if (spec.weight == 0.0) return base;
  if (attrs == nullptr || attrs->rows() == 0)
    throw ValidationError("kernel spec has attribute weight but no attributes were supplied");
  if (attrs->rows() != n) throw DimensionError("attribute rows do not match entity count");
  GramMatrix attr;
  if (spec.family == AttributeKernel::linear) {
    attr = linear_gram(spec.normalize ? attrs->normalized() : *attrs);
  } else {
    attr = rbf_gram(*attrs, spec.bandwidth);
  }
  return combine(attr, base, spec.weight);
}

/// Similarities between a previously unseen entity (attribute row `fresh`)
/// and the n training entities under `spec`. The Dirac part is zero.
inline Vector side_kernel_vector(const KernelSpec& spec, const AttributeMatrix* attrs,
                                 Eigen::Index n, const Vector* fresh) {
  spec.validate();
  Vector k = Vector::Constant(n, (1.0 - spec.weight) * spec.offset);
  if (spec.weight == 0.0) return k;
  if (attrs == nullptr || fresh == nullptr) throw ValidationError("missing attributes for kernel vector");
  if (attrs->rows() != n || attrs->cols() != fresh->size())
    throw DimensionError("kernel vector: attribute shapes disagree");
  if (spec.family == AttributeKernel::linear) {
    Vector f = *fresh;
    Matrix train = attrs->features();
    if (spec.normalize) {
      train = attrs->normalized().features();
      if (f.norm() > 0.0) f /= f.norm();
    }
    k += spec.weight * (train * f);
  } else {
    const double denom = 2.0 * spec.bandwidth * spec.bandwidth;
    for (Eigen::Index i = 0; i < n; ++i)
      k(i) += spec.weight * std::exp(-(attrs->row(i).transpose() - *fresh).squaredNorm() / denom);
  }
  return k;
}

}  // namespace scf
