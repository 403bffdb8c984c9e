#pragma once

// Brute-force references for tests: dense proximal trace-norm solver,
// grid conjugates, finite differences, and the projection inequality.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <vector>

#include "spectral_cf/errors.hpp"
#include "spectral_cf/kernels.hpp"
#include "spectral_cf/losses.hpp"
#include "spectral_cf/model.hpp"
#include "spectral_cf/penalties.hpp"
#include "spectral_cf/solver.hpp"

namespace scf {

struct OracleResult {
  double value = 0.0;
  std::vector<Matrix> alphas;  // one per kernel pair
  double mean = 0.0;           // rating shift used for the targets
  int iterations = 0;
  bool converged = false;      // relative objective change < 1e-10 over the last 10 iterations
  double gap = kInfinity;
  bool certified = false;      // gap <= 1e-6 * (1 + |value|)

  const Matrix& alpha() const { return alphas.front(); }
};

struct OracleOptions {
  int max_iter = 200000;
  double gap_tol = 1e-9;  // stop once gap <= gap_tol * (1 + |primal|)
  bool center = true;
  LossKind loss = LossKind::squared;
  std::size_t size_cap = 2500;
};

namespace detail {

/// Singular-value soft-thresholding.
inline Matrix svt(const Matrix& a, double tau) {
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector s = (svd.singularValues().array() - tau).max(0.0);
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

}  // namespace detail

/// Accelerated proximal gradient (FISTA with adaptive restart) for
/// (1/N) sum psi_i + lambda sum_k ||alpha_k||_* on explicit targets.
inline OracleResult convex_solve_blocks(const RatingsDataset& d, const Vector& targets,
                                        const std::vector<KernelPair>& blocks, double lambda,
                                        const OracleOptions& opts = {}) {
  std::size_t cells = 0;
  for (const auto& b : blocks) cells += std::size_t(b.x->m() * b.y->m());
  if (cells > opts.size_cap) throw SizeCapError("oracle problem exceeds the dense size cap");
  if (!(lambda >= 0.0)) throw ParameterError("lambda must be >= 0");
  const double n = double(d.size());
  double lip = detail::design_norm_sq(d, blocks) / n * 1.05;
  if (opts.loss == LossKind::logistic) lip *= 0.25;
  if (!(lip > 0.0)) lip = 1.0;
  const double step = 1.0 / lip;

  auto smooth = [&](const std::vector<Matrix>& a, std::vector<Matrix>* grad) {
    const Vector p = detail::predictions(d, blocks, a);
    double f = 0.0;
    Vector g(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const LossSpec ls = detail::loss_spec(opts.loss, targets(i));
      f += loss_eval(ls, p(i));
      g(i) = loss_grad(ls, p(i)) / n;
    }
    if (grad) {
      grad->resize(blocks.size());
      for (std::size_t k = 0; k < blocks.size(); ++k) (*grad)[k] = detail::weighted_cross(d, g, *blocks[k].x, *blocks[k].y);
    }
    return f / n;
  };
  auto total = [&](const std::vector<Matrix>& a) {
    double pen = 0.0;
    for (const auto& m : a) pen += detail::singular_values(m).sum();
    return smooth(a, nullptr) + lambda * pen;
  };

  OracleResult res;
  std::vector<Matrix> x(blocks.size()), y, g;
  for (std::size_t k = 0; k < blocks.size(); ++k) x[k] = Matrix::Zero(blocks[k].x->m(), blocks[k].y->m());
  y = x;
  double t = 1.0;
  double f = total(x);
  std::deque<double> recent{f};
  for (int it = 1; it <= opts.max_iter; ++it) {
    smooth(y, &g);
    std::vector<Matrix> xn(blocks.size());
    for (std::size_t k = 0; k < blocks.size(); ++k) xn[k] = detail::svt(y[k] - step * g[k], step * lambda);
    const double fn = total(xn);
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (fn > f) {
      // restart momentum from the last iterate
      y = x;
      t = 1.0;
    } else {
      for (std::size_t k = 0; k < blocks.size(); ++k) y[k] = xn[k] + ((t - 1.0) / tn) * (xn[k] - x[k]);
      t = tn;
      x.swap(xn);
      f = fn;
    }
    res.iterations = it;
    recent.push_back(f);
    if (recent.size() > 11) recent.pop_front();
    res.converged = recent.size() == 11 && std::abs(recent.front() - f) < 1e-10 * std::max(std::abs(f), 1e-300);
    if (res.converged) break;
    if (it % 50 == 0 && lambda > 0.0) {
      res.gap = duality_gap(x, blocks, d, targets, PenaltySpec::trace(), lambda, opts.loss);
      if (res.gap <= opts.gap_tol * (1.0 + std::abs(f))) break;
    }
  }
  res.value = f;
  res.alphas = std::move(x);
  if (lambda > 0.0) res.gap = duality_gap(res.alphas, blocks, d, targets, PenaltySpec::trace(), lambda, opts.loss);
  res.certified = lambda > 0.0 ? res.gap <= 1e-6 * (1.0 + std::abs(res.value)) : res.converged;
  return res;
}

/// Trace-norm problem on one kernel pair, targets shifted like the solver does.
inline OracleResult convex_solve_trace(const RatingsDataset& d, const FactorPtr& xf, const FactorPtr& yf, double lambda,
                                       const OracleOptions& opts = {}) {
  double mean = 0.0;
  const Vector t = detail::training_targets(d, opts.loss, opts.center, &mean);
  OracleResult r = convex_solve_blocks(d, t, {{xf, yf}}, lambda, opts);
  r.mean = mean;
  return r;
}

/// Symmetric PSD square root K^{1/2} (n x n), negative rounding clipped.
inline Matrix symmetric_sqrt(const GramMatrix& k) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(k.entries());
  const Vector s = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * s.asDiagonal() * eig.eigenvectors().transpose();
}

struct EquivalenceReport {
  bool ok = false;
  double full_value = 0.0;
  double reduced_value = 0.0;
  double max_prediction_diff = 0.0;
};

/// Trace-norm solve in the full n_X x n_Y parameterization (symmetric roots)
/// against the reduced one (rank-revealing roots).
inline EquivalenceReport representer_equivalence(const RatingsDataset& d, const GramMatrix& k, const GramMatrix& g,
                                                 double lambda, const OracleOptions& opts = {}) {
  if (std::size_t(k.n() * g.n()) > opts.size_cap) throw SizeCapError("representer check exceeds the size cap");
  const FactorPtr xfull = share(GramFactor(symmetric_sqrt(k)));
  const FactorPtr yfull = share(GramFactor(symmetric_sqrt(g)));
  const FactorPtr xred = share(factor_gram(k));
  const FactorPtr yred = share(factor_gram(g));
  const OracleResult full = convex_solve_trace(d, xfull, yfull, lambda, opts);
  const OracleResult red = convex_solve_trace(d, xred, yred, lambda, opts);
  const Vector pf = predict_all(OperatorModel(xfull, yfull, full.alpha(), full.mean), d);
  const Vector pr = predict_all(OperatorModel(xred, yred, red.alpha(), red.mean), d);
  EquivalenceReport rep;
  rep.full_value = full.value;
  rep.reduced_value = red.value;
  rep.max_prediction_diff = (pf - pr).cwiseAbs().maxCoeff();
  rep.ok = std::abs(full.value - red.value) <= 1e-5 * std::max(std::abs(full.value), 1e-12) &&
           rep.max_prediction_diff <= 1e-4;
  return rep;
}

inline bool representer_equivalence_check(const RatingsDataset& d, const GramMatrix& k, const GramMatrix& g,
                                          double lambda, const OracleOptions& opts = {}) {
  return representer_equivalence(d, k, g, lambda, opts).ok;
}

/// Best objective over `restarts` seeds of the rank-capped Frobenius problem.
inline double best_rank_capped(const RatingsDataset& d, const FactorPtr& xf, const FactorPtr& yf, double lambda,
                               int rank, int restarts) {
  double best = kInfinity;
  for (int s = 0; s < restarts; ++s) {
    SolveConfig cfg;
    cfg.lambda = lambda;
    cfg.penalty = PenaltySpec::frobenius_plus_rank(rank);
    cfg.initial_rank = rank;
    cfg.max_rank = rank;
    cfg.init_scale = 0.3;
    cfg.grad_tol = 1e-9;
    cfg.seed = std::uint64_t(s) + 1;
    best = std::min(best, solve_lowrank(d, xf, yf, cfg).report.objective);
  }
  return best;
}

/// Rank-constrained variant: best-of-restarts objectives in both parameterizations.
inline bool representer_equivalence_rank_check(const RatingsDataset& d, const GramMatrix& k, const GramMatrix& g,
                                               double lambda, int rank, int restarts = 20) {
  const double full = best_rank_capped(d, share(GramFactor(symmetric_sqrt(k))), share(GramFactor(symmetric_sqrt(g))),
                                       lambda, rank, restarts);
  const double red = best_rank_capped(d, share(factor_gram(k)), share(factor_gram(g)), lambda, rank, restarts);
  return std::abs(full - red) <= 1e-3 * std::max(std::abs(full), 1e-12);
}

struct Grid {
  double lo = -50.0;
  double hi = 50.0;
  int points = 200001;
};

/// max_v { beta v - f(v) } over the grid.
inline double numeric_conjugate(const std::function<double(double)>& f, double beta, const Grid& grid = {}) {
  if (grid.points < 2 || !(grid.hi > grid.lo)) throw ParameterError("grid needs two or more points and hi > lo");
  const double h = (grid.hi - grid.lo) / double(grid.points - 1);
  double best = -kInfinity;
  for (int i = 0; i < grid.points; ++i) {
    const double v = grid.lo + h * double(i);
    best = std::max(best, beta * v - f(v));
  }
  return best;
}

/// Central differences of f at x, step h * max(1, |x_j|).
inline Vector finite_difference_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                                         double h = 1e-6) {
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double step = h * std::max(1.0, std::abs(x(j)));
    probe(j) = x(j) + step;
    const double fp = f(probe);
    probe(j) = x(j) - step;
    const double fm = f(probe);
    probe(j) = x(j);
    g(j) = (fp - fm) / (2.0 * step);
  }
  return g;
}

/// Orthogonal projection onto a uniformly random `dim`-dimensional subspace of R^n.
inline Matrix random_projection(Eigen::Index n, Eigen::Index dim, std::mt19937_64& rng) {
  if (dim < 0 || dim > n) throw ParameterError("subspace dimension must lie in [0, n]");
  if (dim == 0) return Matrix::Zero(n, n);
  std::normal_distribution<double> normal;
  Matrix a(n, dim);
  for (Eigen::Index j = 0; j < dim; ++j)
    for (Eigen::Index i = 0; i < n; ++i) a(i, j) = normal(rng);
  Matrix r;
  const Matrix q = detail::thin_q(a, &r);
  return q * q.transpose();
}

/// sigma_i(P F) <= sigma_i(F) + slack for every i.
inline bool projection_dominated(const Matrix& pf, const Matrix& f, double slack = 1e-10) {
  const Vector a = detail::singular_values(pf);
  const Vector b = detail::singular_values(f);
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a(i) > b(i) + slack) return false;
  return true;
}

inline bool projection_lemma_check(const Matrix& f, Eigen::Index dim, std::uint64_t seed = 0) {
  if (dim > f.rows()) throw ParameterError("subspace dimension exceeds the row count");
  std::mt19937_64 rng(seed);
  const Matrix p = random_projection(f.rows(), dim, rng);
  return projection_dominated(p * f, f);
}

}  // namespace scf
