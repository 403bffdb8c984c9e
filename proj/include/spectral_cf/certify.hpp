#pragma once

// Randomized certification suites built on the oracle: each check draws its
// own seeded instances and reports a single pass/fail with a short summary.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "spectral_cf/kernels.hpp"
#include "spectral_cf/losses.hpp"
#include "spectral_cf/mkl.hpp"
#include "spectral_cf/model.hpp"
#include "spectral_cf/oracle.hpp"
#include "spectral_cf/penalties.hpp"
#include "spectral_cf/solver.hpp"

namespace scf {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Small random problem: distinct (user, object) pairs with N(0,1) ratings
/// plus Gaussian attributes on both sides.
struct RandomInstance {
  RatingsDataset data;
  AttributeMatrix users;
  AttributeMatrix objects;
};

inline RandomInstance random_instance(int nx, int ny, int n_obs, int attr_dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<int> cells(static_cast<std::size_t>(nx * ny));
  std::iota(cells.begin(), cells.end(), 0);
  std::shuffle(cells.begin(), cells.end(), rng);
  n_obs = std::min(n_obs, nx * ny);
  std::vector<Observation> obs;
  for (int i = 0; i < n_obs; ++i) obs.push_back({cells[std::size_t(i)] / ny, cells[std::size_t(i)] % ny, normal(rng)});
  Matrix ua(nx, attr_dim), oa(ny, attr_dim);
  for (Eigen::Index i = 0; i < ua.size(); ++i) ua(i) = normal(rng);
  for (Eigen::Index i = 0; i < oa.size(); ++i) oa(i) = normal(rng);
  return {RatingsDataset(std::move(obs), nx, ny), AttributeMatrix(std::move(ua)), AttributeMatrix(std::move(oa))};
}

/// weight * normalized linear attribute kernel + (1 - weight) * Dirac.
inline GramMatrix mixed_gram(const AttributeMatrix& a, double weight) {
  return combine(linear_gram(a.normalized()), dirac_gram(a.rows()), weight);
}

namespace detail {

inline double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[200];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

inline Vector flatten(const Matrix& u, const Matrix& v) {
  Vector x(u.size() + v.size());
  x << Eigen::Map<const Vector>(u.data(), u.size()), Eigen::Map<const Vector>(v.data(), v.size());
  return x;
}

}  // namespace detail

/// Full-space vs reduced trace-norm optimum on random mixed-kernel instances.
inline CheckResult check_representer(int trials = 20, std::uint64_t seed = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> size(4, 10);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int ok = 0;
  double worst_obj = 0.0, worst_pred = 0.0;
  for (int t = 0; t < trials; ++t) {
    const int nx = size(rng), ny = size(rng);
    const int n_obs = std::min(40, nx * ny / 2);
    const auto inst = random_instance(nx, ny, n_obs, 3, rng);
    // pure attribute kernels are rank-deficient, so the full space is strictly larger
    const double eta = t % 4 == 0 ? 1.0 : unit(rng), zeta = t % 4 <= 1 ? 1.0 : unit(rng);
    const GramMatrix k = mixed_gram(inst.users, eta), g = mixed_gram(inst.objects, zeta);
    const double lmax = lambda_max(inst.data, {{share(factor_gram(k)), share(factor_gram(g))}});
    const double lambda = (0.05 + 0.4 * unit(rng)) * lmax;
    const auto rep = representer_equivalence(inst.data, k, g, lambda);
    worst_obj = std::max(worst_obj, detail::rel_diff(rep.full_value, rep.reduced_value));
    worst_pred = std::max(worst_pred, rep.max_prediction_diff);
    ok += rep.ok;
  }
  return {"representer equivalence", ok == trials,
          detail::fmt("%.0f/%.0f instances, worst objective rel diff %.2e", ok, trials, worst_obj) +
              detail::fmt(", worst prediction diff %.2e", worst_pred),
          detail::elapsed(t0)};
}

/// sigma_i(P F) <= sigma_i(F) for random F and random orthogonal projections P.
inline CheckResult check_projection(int trials = 100, std::uint64_t seed = 2) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> dim(0, 10);
  int ok = 0;
  for (int t = 0; t < trials; ++t) {
    Matrix f(10, 10);
    for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = normal(rng);
    ok += projection_lemma_check(f, dim(rng), rng());
  }
  return {"projection lemma", ok == trials, detail::fmt("%.0f/%.0f trials dominated", ok, trials),
          detail::elapsed(t0)};
}

/// Analytic factor gradients against central differences, smooth trace and Frobenius.
inline CheckResult check_gradients(int trials = 20, std::uint64_t seed = 3) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> size(4, 8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const int nx = size(rng), ny = size(rng);
    const auto inst = random_instance(nx, ny, nx * ny / 2, 3, rng);
    const FactorPtr xf = share(factor_gram(mixed_gram(inst.users, unit(rng))));
    const FactorPtr yf = share(factor_gram(mixed_gram(inst.objects, unit(rng))));
    const Eigen::Index r = 1 + Eigen::Index(t % 3);
    Matrix u(xf->m(), r), v(yf->m(), r);
    for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = normal(rng);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
    for (const PenaltySpec& p : {PenaltySpec::smooth_trace(0.05), PenaltySpec::frobenius()}) {
      SolveConfig cfg;
      cfg.lambda = 0.1 + unit(rng);
      cfg.penalty = p;
      const auto [gu, gv] = gradient(u, v, inst.data, xf, yf, cfg);
      const auto f = [&](const Vector& x) {
        const Matrix uu = Eigen::Map<const Matrix>(x.data(), u.rows(), u.cols());
        const Matrix vv = Eigen::Map<const Matrix>(x.data() + u.size(), v.rows(), v.cols());
        return objective(uu, vv, inst.data, *xf, *yf, cfg);
      };
      const Vector fd = finite_difference_gradient(f, detail::flatten(u, v));
      const Vector an = detail::flatten(gu, gv);
      worst = std::max(worst, (an - fd).norm() / std::max(fd.norm(), 1e-12));
    }
  }
  return {"gradient correctness", worst < 1e-5,
          detail::fmt("%.0f instances x 2 penalties, worst rel err %.2e (tol 1e-5)", trials, worst),
          detail::elapsed(t0)};
}

/// Closed-form conjugates against grid maximization, and Fenchel-Young equality.
inline CheckResult check_fenchel(int points = 1000, std::uint64_t seed = 4) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst_grid = 0.0, worst_fy = 0.0;
  bool inf_ok = true;

  // conjugates vs the grid oracle, a handful of dual points per function
  for (int i = 0; i < 8; ++i) {
    const double t = 4.0 * unit(rng) - 2.0;
    const LossSpec sq = LossSpec::squared(t);
    const double b = 6.0 * unit(rng) - 3.0;
    worst_grid = std::max(worst_grid, std::abs(loss_conjugate(sq, b) -
                                               numeric_conjugate([&](double v) { return loss_eval(sq, v); }, b)));
    const double sign = i % 2 ? 1.0 : -1.0;
    const LossSpec lg = LossSpec::logistic(sign);
    const double bl = -sign * (0.05 + 0.9 * unit(rng));
    worst_grid = std::max(worst_grid, std::abs(loss_conjugate(lg, bl) -
                                               numeric_conjugate([&](double v) { return loss_eval(lg, v); }, bl)));
    for (const PenaltySpec& p : {PenaltySpec::trace(), PenaltySpec::frobenius(), PenaltySpec::smooth_trace(0.1)}) {
      const auto s = [&](double v) { return scalar_penalty(p, std::abs(v)); };
      const double tau = (p.kind == PenaltyKind::frobenius ? 6.0 : 1.98) * unit(rng) - (p.kind == PenaltyKind::frobenius ? 3.0 : 0.99);
      worst_grid = std::max(worst_grid, std::abs(scalar_penalty_conjugate(p, tau) - numeric_conjugate(s, tau)));
    }
    // outside the unit ball the trace conjugate is +inf; the grid value grows with the grid
    const double out = 1.1 + unit(rng);
    inf_ok = inf_ok && std::isinf(scalar_penalty_conjugate(PenaltySpec::trace(), out)) &&
             numeric_conjugate([](double v) { return std::abs(v); }, out) > 4.0;
  }

  // Fenchel-Young equality at the derivative
  for (int i = 0; i < points; ++i) {
    const double v = 10.0 * unit(rng) - 5.0;
    const LossSpec sq = LossSpec::squared(10.0 * unit(rng) - 5.0);
    const double bs = loss_grad(sq, v);
    worst_fy = std::max(worst_fy, std::abs(loss_eval(sq, v) + loss_conjugate(sq, bs) - bs * v));
    const LossSpec lg = LossSpec::logistic(i % 2 ? 1.0 : -1.0);
    const double bl = loss_grad(lg, v);
    worst_fy = std::max(worst_fy, std::abs(loss_eval(lg, v) + loss_conjugate(lg, bl) - bl * v));
    const double sigma = 3.0 * unit(rng);
    for (const PenaltySpec& p : {PenaltySpec::frobenius(), PenaltySpec::smooth_trace(0.05 + unit(rng))}) {
      const double tau = scalar_penalty_deriv(p, sigma);
      worst_fy = std::max(worst_fy, std::abs(scalar_penalty(p, sigma) + scalar_penalty_conjugate(p, tau) - tau * sigma));
    }
  }
  const bool pass = worst_grid <= 1e-3 && worst_fy <= 1e-8 && inf_ok;
  return {"fenchel machinery", pass,
          detail::fmt("worst grid diff %.2e (tol 1e-3), worst Fenchel-Young residual %.2e (tol 1e-8)", worst_grid,
                      worst_fy) +
              (inf_ok ? "" : ", trace conjugate outside ball not infinite"),
          detail::elapsed(t0)};
}

/// Rank-deficient terminations of solve_lowrank carry a small trace-norm gap and
/// match the convex oracle.
inline CheckResult check_rank_escalation(int trials = 20, std::uint64_t seed = 5) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> size(5, 20);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int deficient = 0, ok = 0;
  double worst_gap = 0.0, worst_obj = 0.0;
  for (int t = 0; t < trials; ++t) {
    const int nx = size(rng), ny = size(rng);
    const auto inst = random_instance(nx, ny, int(0.3 * nx * ny) + 5, 3, rng);
    const FactorPtr xf = share(factor_gram(mixed_gram(inst.users, unit(rng))));
    const FactorPtr yf = share(factor_gram(mixed_gram(inst.objects, unit(rng))));
    const double lambda = (0.05 + 0.3 * unit(rng)) * lambda_max(inst.data, {{xf, yf}});
    const double mean = inst.data.mean_rating();
    const RatingsDataset centered = inst.data.shifted(mean);
    SolveConfig cfg;
    cfg.lambda = lambda;
    cfg.penalty = PenaltySpec::smooth_trace(1e-3 * std::max((centered.ratings().cwiseAbs()).mean(), 1e-12));
    cfg.grad_tol = 1e-9;
    cfg.max_rank = int(std::min(xf->m(), yf->m()));
    cfg.seed = rng();
    const SolveResult r = solve_lowrank(inst.data, xf, yf, cfg);
    if (!r.report.rank_deficient) continue;
    ++deficient;
    SolveConfig tc = cfg;
    tc.penalty = PenaltySpec::trace();
    const double primal = objective(r.model.alpha(), centered, *xf, *yf, tc);
    const double gap = duality_gap(r.model, inst.data, tc);
    const OracleResult o = convex_solve_trace(inst.data, xf, yf, lambda);
    const double rel_gap = gap / std::max(std::abs(primal), 1e-12);
    const double rel_obj = detail::rel_diff(primal, o.value);
    worst_gap = std::max(worst_gap, rel_gap);
    worst_obj = std::max(worst_obj, rel_obj);
    ok += rel_gap <= 1e-3 && rel_obj <= 1e-4;
  }
  return {"rank-escalation optimality", deficient > 0 && ok == deficient,
          detail::fmt("%.0f/%.0f rank-deficient terminations", deficient, trials) +
              detail::fmt(", worst rel gap %.2e (tol 1e-3), worst rel objective diff %.2e (tol 1e-4)", worst_gap,
                          worst_obj),
          detail::elapsed(t0)};
}

/// Two square roots of the same (K, G): singular values of X^T B Y, objectives
/// and predictions of mapped coefficients, and the optimal objective agree.
inline CheckResult check_kron(int trials = 20, std::uint64_t seed = 6) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> size(4, 9);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal;
  int ok = 0;
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const int nx = size(rng), ny = size(rng);
    const auto inst = random_instance(nx, ny, nx * ny / 2, 3, rng);
    // every third trial uses a pure attribute kernel, which is rank-deficient
    const double eta = t % 3 == 0 ? 1.0 : unit(rng), zeta = t % 3 == 0 ? 1.0 : unit(rng);
    const GramMatrix k = mixed_gram(inst.users, eta), g = mixed_gram(inst.objects, zeta);
    Matrix b(nx, ny), gamma(nx, ny);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = normal(rng);
    for (Eigen::Index i = 0; i < gamma.size(); ++i) gamma(i) = normal(rng);
    const bool sv_ok = kron_invariance_check(k, g, b);

    const FactorPtr x1 = share(factor_gram(k)), y1 = share(factor_gram(g));
    const FactorPtr x2 = share(factor_gram_cholesky(k)), y2 = share(factor_gram_cholesky(g));
    SolveConfig cfg;
    cfg.lambda = 0.1;
    cfg.penalty = PenaltySpec::trace();
    const Matrix a1 = x1->matrix().transpose() * gamma * y1->matrix();
    const Matrix a2 = x2->matrix().transpose() * gamma * y2->matrix();
    const double d_obj = detail::rel_diff(objective(a1, inst.data, *x1, *y1, cfg), objective(a2, inst.data, *x2, *y2, cfg));
    const OperatorModel m1(x1, y1, a1, 0.0), m2(x2, y2, a2, 0.0);
    const Vector p1 = predict_all(m1, inst.data), p2 = predict_all(m2, inst.data);
    const double d_pred = (p1 - p2).cwiseAbs().maxCoeff() / std::max(1.0, p1.cwiseAbs().maxCoeff());

    const double lambda = 0.2 * lambda_max(inst.data, {{x1, y1}});
    const double d_opt =
        detail::rel_diff(convex_solve_trace(inst.data, x1, y1, lambda).value, convex_solve_trace(inst.data, x2, y2, lambda).value);
    const double w = std::max({d_obj, d_pred, d_opt});
    worst = std::max(worst, w);
    ok += sv_ok && w <= 1e-6;
  }
  return {"kronecker invariance", ok == trials,
          detail::fmt("%.0f/%.0f trials, worst rel diff %.2e (tol 1e-6)", ok, trials, worst), detail::elapsed(t0)};
}

/// The oracle suite run by `scf certify` and the acceptance binary.
inline std::vector<CheckResult> certification_suite() {
  return {check_representer(), check_projection(), check_gradients(),
          check_fenchel(),     check_rank_escalation(), check_kron()};
}

}  // namespace scf
