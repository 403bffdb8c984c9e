#include <gtest/gtest.h>

#include <random>

#include "spectral_cf/certify.hpp"
#include "spectral_cf/data.hpp"
#include "spectral_cf/mkl.hpp"
#include "spectral_cf/oracle.hpp"

using namespace scf;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

SolveConfig smooth_config(const RatingsDataset& d, double lambda) {
  SolveConfig cfg;
  cfg.lambda = lambda;
  const Vector c = d.ratings().array() - d.mean_rating();
  cfg.penalty = PenaltySpec::smooth_trace(1e-3 * c.cwiseAbs().mean());
  cfg.grad_tol = 1e-9;
  cfg.max_rank = 10;
  return cfg;
}

struct Problem {
  RandomInstance inst;
  FactorPtr x, y;
};

Problem problem(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto inst = random_instance(10, 9, 40, 3, rng);
  return {inst, share(factor_gram(mixed_gram(inst.users, 0.5))), share(factor_gram(mixed_gram(inst.objects, 0.5)))};
}

}  // namespace

TEST(KernelBank, Validation) {
  EXPECT_THROW(KernelBank({}), ValidationError);
  const FactorPtr a = share(GramFactor::identity(3)), b = share(GramFactor::identity(4));
  EXPECT_THROW(KernelBank({{a, b}, {b, a}}), DimensionError);
  EXPECT_THROW(KernelBank({{a, nullptr}}), ValidationError);
}

TEST(SolveMkl, SingleBlockMatchesSolveLowrank) {
  const Problem s = problem(1);
  const SolveConfig cfg = smooth_config(s.inst.data, 0.02);
  const MklResult m = solve_mkl(s.inst.data, KernelBank({{s.x, s.y}}), cfg);
  const SolveResult r = solve_lowrank(s.inst.data, s.x, s.y, cfg);
  EXPECT_NEAR(m.report.objective, r.report.objective, 1e-8);
  EXPECT_LT((m.model.predict_all(s.inst.data) - predict_all(r.model, s.inst.data)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SolveMkl, DuplicatedBlockMatchesSingleOptimum) {
  const Problem s = problem(2);
  const double lambda = 0.02;
  const MklResult two = solve_mkl(s.inst.data, KernelBank({{s.x, s.y}, {s.x, s.y}}), smooth_config(s.inst.data, lambda));
  const OracleResult o = convex_solve_trace(s.inst.data, s.x, s.y, lambda);
  ASSERT_TRUE(o.certified);
  double value = 0.5 * (two.model.predict_all(s.inst.data) - s.inst.data.ratings()).squaredNorm() / 40.0;
  for (const auto& b : two.model.blocks) value += lambda * detail::singular_values(b.alpha()).sum();
  EXPECT_LT(std::abs(value - o.value) / o.value, 1e-4);
}

TEST(SolveMkl, NoWorseThanAnySingleBlock) {
  std::mt19937_64 rng(3);
  const auto inst = random_instance(10, 9, 40, 3, rng);
  const FactorPtr xd = share(GramFactor::identity(10)), yd = share(GramFactor::identity(9));
  const FactorPtr xa = share(factor_gram(mixed_gram(inst.users, 1.0))), ya = share(factor_gram(mixed_gram(inst.objects, 1.0)));
  const KernelBank bank({{xd, yd}, {xd, ya}, {xa, yd}, {xa, ya}});
  const SolveConfig cfg = smooth_config(inst.data, 0.01);
  const double joint = solve_mkl(inst.data, bank, cfg).report.objective;
  for (const auto& p : bank.pairs()) EXPECT_LE(joint, solve_lowrank(inst.data, p.x, p.y, cfg).report.objective + 1e-6);
}

TEST(SolveMkl, BlockPredictionsSumToTotal) {
  const Problem s = problem(4);
  const FactorPtr xd = share(GramFactor::identity(10));
  const MklResult m = solve_mkl(s.inst.data, KernelBank({{s.x, s.y}, {xd, s.y}}), smooth_config(s.inst.data, 0.01));
  const Matrix parts = m.model.block_predictions(s.inst.data);
  Vector total = Vector::Constant(parts.rows(), m.model.mean);
  for (Eigen::Index k = 0; k < parts.cols(); ++k) total += parts.col(k);
  EXPECT_EQ(total, m.model.predict_all(s.inst.data));
  EXPECT_EQ(m.report.block_trace_norms.size(), 2u);
}

TEST(SolveMkl, LargeLambdaSwitchesBlocksOff) {
  std::mt19937_64 rng(5);
  SynthConfig sc;
  sc.seed = 5;
  const SynthData syn = synth_generate(sc);
  const LabeledData& d = syn.data;
  const KernelBank bank = corner_bank(d.users, d.objects, d.ratings.n_users(), d.ratings.n_objects());
  SolveConfig cfg = smooth_config(d.ratings, 0.5 * lambda_max(d.ratings, bank.pairs()));
  cfg.grad_tol = 1e-6;
  const MklResult m = solve_mkl(d.ratings, bank, cfg);
  int off = 0;
  for (double n : m.report.block_trace_norms) off += n < 1e-6;
  EXPECT_GE(off, 1);
}

TEST(CornerBank, Shape) {
  std::mt19937_64 rng(6);
  const AttributeMatrix ua(random_matrix(7, 3, rng)), oa(random_matrix(5, 2, rng));
  const KernelBank b = corner_bank(ua, oa, 7, 5);
  ASSERT_EQ(b.size(), 4u);
  EXPECT_TRUE(b[0].x->is_identity());
  EXPECT_TRUE(b[0].y->is_identity());
  EXPECT_EQ(b[0].x->m(), 7);
  EXPECT_EQ(b[0].y->m(), 5);
  EXPECT_EQ(b[3].x->m(), 3);
  for (const auto& p : b.pairs()) {
    EXPECT_EQ(p.x->n(), 7);
    EXPECT_EQ(p.y->n(), 5);
  }
}

TEST(CornerBank, Errors) {
  std::mt19937_64 rng(7);
  const AttributeMatrix ua(random_matrix(7, 3, rng));
  EXPECT_THROW(corner_bank(ua, AttributeMatrix(), 7, 5), ValidationError);
  EXPECT_THROW(corner_bank(ua, AttributeMatrix(random_matrix(4, 2, rng)), 7, 5), DimensionError);
}

TEST(KronInvariance, IdentityKernels) {
  std::mt19937_64 rng(8);
  EXPECT_TRUE(kron_invariance_check(dirac_gram(4), dirac_gram(3), random_matrix(4, 3, rng)));
}

TEST(KronInvariance, RandomAndRankDeficient) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 10; ++t) {
    const GramMatrix k = linear_gram(AttributeMatrix(random_matrix(8, 8, rng)));
    const GramMatrix g = linear_gram(AttributeMatrix(random_matrix(8, 8, rng)));
    EXPECT_TRUE(kron_invariance_check(k, g, random_matrix(8, 8, rng)));
    const GramMatrix kd = linear_gram(AttributeMatrix(random_matrix(8, 3, rng)));
    EXPECT_TRUE(kron_invariance_check(kd, g, random_matrix(8, 8, rng)));
  }
  EXPECT_FALSE(kron_invariance_check(dirac_gram(3), dirac_gram(3), Matrix::Zero(2, 3)));
}

TEST(KronInvariance, Suite) {
  const CheckResult r = check_kron(10, 41);
  EXPECT_TRUE(r.passed) << r.detail;
}
