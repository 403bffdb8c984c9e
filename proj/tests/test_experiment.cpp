#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "spectral_cf/experiment.hpp"

using namespace scf;
namespace fs = std::filesystem;

namespace {

// small enough to run a full grid in a few seconds
ExperimentConfig small_config() {
  ExperimentConfig c;
  c.synth.n_users = c.synth.n_objects = 20;
  c.synth.n_ratings = 200;
  c.folds = 2;
  c.lambdas = {0.1, 0.02};
  c.frob_lambdas = {0.1, 0.01};
  c.mkl_lambdas = {0.1, 0.02};
  c.max_rank = 2;
  c.frob_restarts = 1;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Experiment, SingleCell) {
  ExperimentConfig c = small_config();
  c.etas = {0.5};
  c.zetas = {0.5};
  const auto rows = run_grid(c);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_TRUE(std::isfinite(rows[0].rmse_mean));
  EXPECT_GE(rows[0].rmse_std, 0.0);
  EXPECT_GE(rows[0].rank, 0);
}

TEST(Experiment, FullGridAndCornersMatchStandalone) {
  const ExperimentConfig c = small_config();
  const auto rows = run_grid(c);
  ASSERT_EQ(rows.size(), 25u);
  for (const auto& r : rows) EXPECT_TRUE(std::isfinite(r.rmse_mean) && r.rmse_mean > 0.0);
  for (double e : {0.0, 1.0})
    for (double z : {0.0, 1.0}) {
      ExperimentConfig one = c;
      one.etas = {e};
      one.zetas = {z};
      const GridRow solo = run_grid(one).front();
      const auto it =
          std::find_if(rows.begin(), rows.end(), [&](const GridRow& r) { return r.eta == e && r.zeta == z; });
      ASSERT_NE(it, rows.end());
      EXPECT_EQ(it->rmse_mean, solo.rmse_mean);
      EXPECT_EQ(it->lambda, solo.lambda);
    }
}

TEST(Experiment, CsvDeterministicWithHash) {
  ExperimentConfig c = small_config();
  c.etas = {0.0, 1.0};
  c.zetas = {0.5};
  const fs::path a = fs::temp_directory_path() / "scf_grid_a.csv", b = fs::temp_directory_path() / "scf_grid_b.csv";
  c.out = a.string();
  run_grid(c);
  c.out = b.string();
  c.workers = 2;
  run_grid(c);
  const std::string ta = slurp(a), tb = slurp(b);
  fs::remove(a);
  fs::remove(b);
  EXPECT_EQ(ta, tb);
  EXPECT_EQ(ta.substr(0, ta.find('\n')), "eta,zeta,lambda,rmse_mean,rmse_std,rank,config_hash");
  EXPECT_NE(ta.find(c.hash()), std::string::npos);
}

TEST(Experiment, ComparePenaltiesHasBothMethods) {
  ExperimentConfig c = small_config();
  c.etas = {0.5};
  c.zetas = {0.0, 1.0};
  const fs::path out = fs::temp_directory_path() / "scf_compare.csv";
  c.out = out.string();
  const auto rows = run_compare_penalties(c);
  const std::string text = slurp(out);
  fs::remove(out);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(std::count_if(rows.begin(), rows.end(), [](const GridRow& r) { return r.method == Method::trace; }), 2);
  EXPECT_EQ(text.rfind("method,eta,zeta", 0), 0u);
  EXPECT_NE(text.find("frobenius_rank,"), std::string::npos);
}

TEST(Experiment, MklRows) {
  ExperimentConfig c = small_config();
  c.mkl_lambdas = {0.5, 0.2, 0.1, 0.05, 0.02};
  const fs::path out = fs::temp_directory_path() / "scf_mkl.csv";
  c.out = out.string();
  const auto rows = run_mkl(c);
  const std::string text = slurp(out);
  fs::remove(out);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_TRUE(std::is_sorted(rows.begin(), rows.end(), [](const MklRow& a, const MklRow& b) { return a.lambda < b.lambda; }));
  for (const auto& r : rows) {
    EXPECT_EQ(r.block_norms.size(), 4u);
    EXPECT_TRUE(std::isfinite(r.rmse_mean));
  }
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 6);
}

TEST(Experiment, ConfigHash) {
  ExperimentConfig a = small_config(), b = small_config();
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  b.out = "elsewhere.csv";
  b.workers = 3;
  EXPECT_EQ(a.hash(), b.hash());
  b.lambdas = {0.1, 0.03};
  EXPECT_NE(a.hash(), b.hash());
  b = a;
  b.seed = 1;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Experiment, Validation) {
  ExperimentConfig c = small_config();
  c.etas = {1.5};
  EXPECT_THROW(c.validate(), ParameterError);
  c = small_config();
  c.lambdas = {};
  EXPECT_THROW(c.validate(), ParameterError);
  c = small_config();
  c.folds = 1;
  EXPECT_THROW(c.validate(), ParameterError);
  c = small_config();
  c.inner_fraction = 1.0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = small_config();
  c.synth.d_obs = 9;
  EXPECT_THROW(run_grid(c), ParameterError);
}

TEST(Experiment, FailingCellIsNamed) {
  ExperimentConfig c = small_config();
  c.etas = {0.25};
  c.zetas = {0.75};
  c.max_iter = 0;
  try {
    run_grid(c);
    FAIL() << "expected ExperimentError";
  } catch (const ExperimentError& e) {
    EXPECT_NE(std::string(e.what()).find("eta=0.25, zeta=0.75"), std::string::npos) << e.what();
  }
}
