#include <gtest/gtest.h>

#include <random>

#include "spectral_cf/certify.hpp"
#include "spectral_cf/oracle.hpp"
#include "spectral_cf/solver.hpp"

using namespace scf;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

// 8 x 7 Dirac problem with 30 ratings, the reference instance for solver tests
RatingsDataset small_instance(std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  return random_instance(8, 7, 30, 1, rng).data;
}

SolveConfig smooth_config(const RatingsDataset& d, double lambda) {
  SolveConfig cfg;
  cfg.lambda = lambda;
  const Vector c = d.ratings().array() - d.mean_rating();
  cfg.penalty = PenaltySpec::smooth_trace(1e-3 * c.cwiseAbs().mean());
  cfg.grad_tol = 1e-9;
  cfg.max_rank = 7;
  return cfg;
}

}  // namespace

TEST(Objective, ZeroAlphaIsMeanLoss) {
  const RatingsDataset d = small_instance();
  const GramFactor x = GramFactor::identity(8), y = GramFactor::identity(7);
  SolveConfig cfg;
  cfg.lambda = 0.5;
  cfg.penalty = PenaltySpec::trace();
  EXPECT_NEAR(objective(Matrix::Zero(8, 7), d, x, y, cfg), 0.5 * d.ratings().squaredNorm() / 30.0, 1e-15);
}

TEST(Objective, LambdaZeroIsPureRisk) {
  std::mt19937_64 rng(1);
  const RatingsDataset d = small_instance();
  const GramFactor x = GramFactor::identity(8), y = GramFactor::identity(7);
  const Matrix a = random_matrix(8, 7, rng);
  SolveConfig cfg;
  cfg.lambda = 0.0;
  cfg.penalty = PenaltySpec::trace();
  const OperatorModel m(share(x), share(y), a);
  const double risk = 0.5 * (predict_all(m, d) - d.ratings()).squaredNorm() / 30.0;
  EXPECT_NEAR(objective(a, d, x, y, cfg), risk, 1e-12);
}

TEST(Objective, FactoredEqualsDense) {
  std::mt19937_64 rng(2);
  const auto inst = random_instance(6, 5, 15, 3, rng);
  const GramFactor x = factor_gram(mixed_gram(inst.users, 0.4)), y = factor_gram(mixed_gram(inst.objects, 0.7));
  const Matrix u = random_matrix(x.m(), 3, rng), v = random_matrix(y.m(), 3, rng);
  for (const PenaltySpec& p : {PenaltySpec::trace(), PenaltySpec::frobenius(), PenaltySpec::smooth_trace(0.01)}) {
    SolveConfig cfg;
    cfg.lambda = 0.3;
    cfg.penalty = p;
    EXPECT_NEAR(objective(u, v, inst.data, x, y, cfg), objective(Matrix(u * v.transpose()), inst.data, x, y, cfg), 1e-10);
  }
}

TEST(Gradient, ZeroFactors) {
  const RatingsDataset d = small_instance();
  const FactorPtr x = share(GramFactor::identity(8)), y = share(GramFactor::identity(7));
  SolveConfig cfg;
  cfg.lambda = 1.0;
  const auto [gu, gv] = gradient(Matrix::Zero(8, 2), Matrix::Zero(7, 2), d, x, y, cfg);
  EXPECT_EQ(gu.norm(), 0.0);
  EXPECT_EQ(gv.norm(), 0.0);
}

TEST(Gradient, RejectsNonSmoothPenalty) {
  const RatingsDataset d = small_instance();
  const FactorPtr x = share(GramFactor::identity(8)), y = share(GramFactor::identity(7));
  SolveConfig cfg;
  cfg.penalty = PenaltySpec::trace();
  EXPECT_THROW(gradient(Matrix::Ones(8, 1), Matrix::Ones(7, 1), d, x, y, cfg), UnsupportedPenaltyError);
  EXPECT_THROW(solve_lowrank(d, x, y, cfg), UnsupportedPenaltyError);
}

TEST(Gradient, FiniteDifferences) {
  const CheckResult r = check_gradients(20, 17);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Gradient, FrobeniusClosedForm) {
  std::mt19937_64 rng(4);
  const auto inst = random_instance(6, 6, 18, 3, rng);
  const FactorPtr x = share(factor_gram(mixed_gram(inst.users, 0.5))), y = share(factor_gram(mixed_gram(inst.objects, 0.5)));
  const Matrix u = random_matrix(x->m(), 2, rng), v = random_matrix(y->m(), 2, rng);
  SolveConfig cfg;
  cfg.penalty = PenaltySpec::frobenius();
  cfg.lambda = 0.0;
  const auto [lu, lv] = gradient(u, v, inst.data, x, y, cfg);
  cfg.lambda = 0.7;
  const auto [gu, gv] = gradient(u, v, inst.data, x, y, cfg);
  // d/dU lambda ||U V^T||_F^2 = 2 lambda U V^T V, and symmetrically for V
  EXPECT_LT((gu - lu - 2 * 0.7 * u * (v.transpose() * v)).norm(), 1e-10);
  EXPECT_LT((gv - lv - 2 * 0.7 * v * (u.transpose() * u)).norm(), 1e-10);
}

TEST(SolveLowrank, HugeLambdaGivesZero) {
  const RatingsDataset d = small_instance();
  const FactorPtr x = share(GramFactor::identity(8)), y = share(GramFactor::identity(7));
  SolveConfig cfg = smooth_config(d, 1e6);
  const SolveResult r = solve_lowrank(d, x, y, cfg);
  EXPECT_TRUE(r.report.rank_deficient);
  EXPECT_EQ(r.report.final_rank, 1);
  EXPECT_LT(r.model.alpha().norm(), 1e-9);
}

TEST(SolveLowrank, MatchesConvexOracle) {
  const RatingsDataset d = small_instance();
  const FactorPtr x = share(GramFactor::identity(8)), y = share(GramFactor::identity(7));
  for (double lambda : {0.01, 0.05, 0.2}) {
    const OracleResult o = convex_solve_trace(d, x, y, lambda);
    ASSERT_TRUE(o.certified);
    const SolveResult r = solve_lowrank(d, x, y, smooth_config(d, lambda));
    SolveConfig tc;
    tc.lambda = lambda;
    tc.penalty = PenaltySpec::trace();
    const double value = objective(r.model.alpha(), d.shifted(r.model.mean()), *x, *y, tc);
    EXPECT_LT(std::abs(value - o.value) / o.value, 1e-4) << lambda;
    EXPECT_TRUE(r.report.rank_deficient) << lambda;
  }
}

TEST(SolveLowrank, LambdaZeroReachesLeastSquares) {
  std::mt19937_64 rng(5);
  const auto inst = random_instance(8, 7, 30, 3, rng);
  const FactorPtr x = share(factor_gram(linear_gram(inst.users))), y = share(factor_gram(linear_gram(inst.objects)));
  ASSERT_EQ(x->m(), 3);
  SolveConfig cfg = smooth_config(inst.data, 0.0);
  cfg.max_rank = 3;
  cfg.grad_tol = 1e-11;
  cfg.max_iter = 50000;
  const SolveResult r = solve_lowrank(inst.data, x, y, cfg);
  // least squares over vec(alpha): row i of Z is kron(y_b, x_a)
  const Vector t = inst.data.ratings().array() - inst.data.mean_rating();
  Matrix z(30, 9);
  for (std::size_t i = 0; i < 30; ++i) {
    const auto& o = inst.data[i];
    for (int q = 0; q < 3; ++q)
      for (int p = 0; p < 3; ++p) z(Eigen::Index(i), q * 3 + p) = x->matrix()(o.user, p) * y->matrix()(o.object, q);
  }
  const Vector sol = z.colPivHouseholderQr().solve(t);
  const double ls = 0.5 * (z * sol - t).squaredNorm() / 30.0;
  EXPECT_NEAR(r.report.objective, ls, 1e-6 * ls);
}

TEST(SolveLowrank, MonotoneDescent) {
  const RatingsDataset d = small_instance(9);
  const FactorPtr x = share(GramFactor::identity(8)), y = share(GramFactor::identity(7));
  SolveConfig cfg = smooth_config(d, 0.02);
  cfg.record_history = true;
  const SolveResult r = solve_lowrank(d, x, y, cfg);
  EXPECT_EQ(r.report.ascent_steps, 0);
  ASSERT_GT(r.report.history.size(), 10u);
  // within a stage every accepted step decreases; a new column may only raise it by rounding
  std::size_t increases = 0;
  for (std::size_t i = 1; i < r.report.history.size(); ++i) increases += r.report.history[i] > r.report.history[i - 1];
  EXPECT_EQ(increases, 0u);
}

TEST(SolveLowrank, Deterministic) {
  std::mt19937_64 rng(6);
  const auto inst = random_instance(12, 10, 50, 3, rng);
  const FactorPtr x = share(factor_gram(mixed_gram(inst.users, 0.3))), y = share(factor_gram(mixed_gram(inst.objects, 0.6)));
  SolveConfig cfg = smooth_config(inst.data, 0.01);
  cfg.seed = 42;
  const SolveResult a = solve_lowrank(inst.data, x, y, cfg), b = solve_lowrank(inst.data, x, y, cfg);
  EXPECT_EQ(a.report.objective, b.report.objective);
  EXPECT_EQ(a.model.alpha(), b.model.alpha());
}

TEST(SolveLowrank, RankCapWarning) {
  const RatingsDataset d = small_instance();
  const FactorPtr x = share(GramFactor::identity(8)), y = share(GramFactor::identity(7));
  SolveConfig cfg = smooth_config(d, 1e-4);
  cfg.max_rank = 1;
  const SolveResult r = solve_lowrank(d, x, y, cfg);
  EXPECT_TRUE(r.report.hit_max_rank);
  EXPECT_FALSE(r.report.rank_deficient);
  EXPECT_EQ(r.report.final_rank, 1);
}

TEST(SolveLowrank, LambdaMaxGivesZero) {
  const RatingsDataset d = small_instance();
  const FactorPtr x = share(GramFactor::identity(8)), y = share(GramFactor::identity(7));
  const double lmax = lambda_max(d, {{x, y}});
  const OracleResult above = convex_solve_trace(d, x, y, 1.01 * lmax);
  EXPECT_LT(above.alpha().norm(), 1e-9);
  const OracleResult below = convex_solve_trace(d, x, y, 0.9 * lmax);
  EXPECT_GT(below.alpha().norm(), 1e-6);
}

TEST(SolveConfig, Validation) {
  SolveConfig cfg;
  cfg.lambda = -1;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = {};
  cfg.initial_rank = 3;
  cfg.max_rank = 2;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = {};
  cfg.grad_tol = 0;
  EXPECT_THROW(cfg.validate(), ParameterError);
}

TEST(SolveFrobLowrank, HugeLambdaGivesZero) {
  const RatingsDataset d = small_instance();
  const FactorPtr x = share(GramFactor::identity(8)), y = share(GramFactor::identity(7));
  const SolveResult r = solve_frob_lowrank(d, x, y, 3, 1e8);
  EXPECT_LT(r.model.alpha().norm(), 1e-6);
  EXPECT_THROW(solve_frob_lowrank(d, x, y, 0, 1.0), ParameterError);
  EXPECT_THROW(solve_frob_lowrank(d, x, y, 8, 1.0), ParameterError);
}

TEST(SolveFrobLowrank, ReportsBothObjectives) {
  // no ordering is guaranteed between the two methods; both must simply run
  const RatingsDataset d = small_instance();
  const FactorPtr x = share(GramFactor::identity(8)), y = share(GramFactor::identity(7));
  const SolveResult f = solve_frob_lowrank(d, x, y, 7, 1e-3);
  const SolveResult t = solve_lowrank(d, x, y, smooth_config(d, 1e-3));
  EXPECT_TRUE(std::isfinite(f.report.objective));
  EXPECT_TRUE(std::isfinite(t.report.objective));
  EXPECT_EQ(f.report.stage_iterations.size(), 5u);
}

TEST(SolveFrobLowrank, BestRestartIsDeterministic) {
  const RatingsDataset d = small_instance(4);
  const FactorPtr x = share(GramFactor::identity(8)), y = share(GramFactor::identity(7));
  FrobOptions o;
  o.seed = 5;
  EXPECT_EQ(solve_frob_lowrank(d, x, y, 2, 0.01, o).report.objective,
            solve_frob_lowrank(d, x, y, 2, 0.01, o).report.objective);
}

TEST(DualityGap, SmallAtOracleOptimum) {
  const RatingsDataset d = small_instance();
  const FactorPtr x = share(GramFactor::identity(8)), y = share(GramFactor::identity(7));
  const OracleResult o = convex_solve_trace(d, x, y, 0.05);
  SolveConfig tc;
  tc.lambda = 0.05;
  tc.penalty = PenaltySpec::trace();
  const OperatorModel m(x, y, o.alpha(), o.mean);
  const double gap = duality_gap(m, d, tc);
  EXPECT_GE(gap, -1e-8);
  EXPECT_LE(gap, 1e-4 * (1 + o.value));
}

TEST(DualityGap, ReportedBySolver) {
  const RatingsDataset d = small_instance();
  const FactorPtr x = share(GramFactor::identity(8)), y = share(GramFactor::identity(7));
  SolveConfig cfg = smooth_config(d, 0.05);
  const SolveResult r = solve_lowrank(d, x, y, cfg);
  ASSERT_TRUE(r.report.duality_gap.has_value());
  EXPECT_NEAR(*r.report.duality_gap, duality_gap(r.model, d, cfg), 1e-10);
  EXPECT_LT(*r.report.duality_gap, 1e-3 * r.report.objective);
  cfg.compute_gap = false;
  EXPECT_FALSE(solve_lowrank(d, x, y, cfg).report.duality_gap.has_value());
  cfg.compute_gap = true;
  cfg.lambda = 0.0;
  EXPECT_FALSE(solve_lowrank(d, x, y, cfg).report.duality_gap.has_value());
}

TEST(DualityGap, PositiveAtZero) {
  const RatingsDataset d = small_instance();
  const FactorPtr x = share(GramFactor::identity(8)), y = share(GramFactor::identity(7));
  SolveConfig tc;
  tc.lambda = 0.02;
  tc.penalty = PenaltySpec::trace();
  EXPECT_GT(duality_gap(OperatorModel(x, y, Matrix::Zero(8, 7), d.mean_rating()), d, tc), 1e-3);
}

TEST(DualityGap, VanishesAtRidgeSolution) {
  std::mt19937_64 rng(7);
  const auto inst = random_instance(6, 5, 20, 3, rng);
  const FactorPtr x = share(factor_gram(mixed_gram(inst.users, 0.5))), y = share(factor_gram(mixed_gram(inst.objects, 0.5)));
  const Eigen::Index mx = x->m(), my = y->m();
  const double lambda = 0.05, n = 20.0;
  // (Z^T Z / N + 2 lambda I) vec(alpha) = Z^T t / N
  Matrix z(20, mx * my);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& o = inst.data[i];
    for (Eigen::Index q = 0; q < my; ++q)
      for (Eigen::Index p = 0; p < mx; ++p) z(Eigen::Index(i), q * mx + p) = x->matrix()(o.user, p) * y->matrix()(o.object, q);
  }
  const Matrix h = z.transpose() * z / n + 2 * lambda * Matrix::Identity(mx * my, mx * my);
  const Vector sol = h.ldlt().solve(z.transpose() * inst.data.ratings() / n);
  const Matrix alpha = Eigen::Map<const Matrix>(sol.data(), mx, my);
  SolveConfig fc;
  fc.lambda = lambda;
  fc.penalty = PenaltySpec::frobenius();
  const double gap = duality_gap(OperatorModel(x, y, alpha, 0.0), inst.data, fc);
  EXPECT_GE(gap, -1e-8);
  EXPECT_LT(gap, 1e-6);
}

TEST(DualityGap, UnsupportedPenalty) {
  const RatingsDataset d = small_instance();
  const FactorPtr x = share(GramFactor::identity(8)), y = share(GramFactor::identity(7));
  SolveConfig cfg;
  cfg.lambda = 0.1;
  cfg.penalty = PenaltySpec::rank_cap(2);
  EXPECT_THROW(duality_gap(OperatorModel(x, y, Matrix::Zero(8, 7)), d, cfg), UnsupportedPenaltyError);
}

TEST(DualityGap, CertifiesRankDeficientSolves) {
  const CheckResult r = check_rank_escalation(10, 23);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(ProjectionLemma, IdentityAndZero) {
  std::mt19937_64 rng(8);
  const Matrix f = random_matrix(6, 4, rng);
  EXPECT_TRUE(projection_dominated(f, f, 0.0));
  EXPECT_TRUE(projection_dominated(Matrix::Zero(6, 4), f));
  EXPECT_TRUE(check_projection(100, 31).passed);
}
