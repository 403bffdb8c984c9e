// scf: experiment driver. Every ExperimentConfig key can come from a config
// file (--config, INI or TOML) and be overridden on the command line.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spectral_cf/spectral_cf.hpp"

namespace {

using scf::ExperimentConfig;

const std::map<std::string, scf::AttributeKernel> kFamilies{{"linear", scf::AttributeKernel::linear},
                                                            {"rbf", scf::AttributeKernel::rbf}};
const std::map<std::string, scf::Method> kMethods{{"trace", scf::Method::trace},
                                                  {"frobenius_rank", scf::Method::frobenius_rank}};

void add_common(CLI::App& app, ExperimentConfig& cfg) {
  app.add_option("--seed", cfg.seed, "seed for folds, restarts and subsampling");
  app.add_option("--out", cfg.out, "output path");
  app.add_option("--workers", cfg.workers, "concurrent grid cells / folds")->check(CLI::PositiveNumber);
}

void add_experiment(CLI::App& app, ExperimentConfig& cfg) {
  app.add_option("--synth-users", cfg.synth.n_users)->group("synthetic");
  app.add_option("--synth-objects", cfg.synth.n_objects)->group("synthetic");
  app.add_option("--synth-d-full", cfg.synth.d_full)->group("synthetic");
  app.add_option("--synth-d-obs", cfg.synth.d_obs)->group("synthetic");
  app.add_option("--synth-noise", cfg.synth.noise_sd)->group("synthetic");
  app.add_option("--synth-ratings", cfg.synth.n_ratings)->group("synthetic");
  app.add_option("--synth-seed", cfg.synth.seed)->group("synthetic");

  app.add_option("--movielens-path", cfg.movielens_path, "directory with u.data, u.item, u.user")->group("movielens");
  app.add_option("--ml-users", cfg.ml_users, "subsample users (0 = all)")->group("movielens");
  app.add_option("--ml-items", cfg.ml_items, "subsample items (0 = all)")->group("movielens");

  app.add_option("--user-family", cfg.user_family)->transform(CLI::CheckedTransformer(kFamilies))->group("kernels");
  app.add_option("--object-family", cfg.object_family)->transform(CLI::CheckedTransformer(kFamilies))->group("kernels");
  app.add_option("--user-bandwidth", cfg.user_bandwidth)->group("kernels");
  app.add_option("--object-bandwidth", cfg.object_bandwidth)->group("kernels");
  app.add_option("--user-offset", cfg.user_offset)->group("kernels");
  app.add_option("--object-offset", cfg.object_offset)->group("kernels");

  app.add_option("--etas", cfg.etas, "user-side attribute weights")->delimiter(',')->group("grid");
  app.add_option("--zetas", cfg.zetas, "object-side attribute weights")->delimiter(',')->group("grid");
  app.add_option("--lambdas", cfg.lambdas, "trace lambdas, relative to lambda_max")->delimiter(',')->group("grid");
  app.add_option("--frob-lambdas", cfg.frob_lambdas, "Frobenius lambdas, relative to the loss curvature")
      ->delimiter(',')
      ->group("grid");
  app.add_option("--mkl-lambdas", cfg.mkl_lambdas, "MKL lambdas, relative to lambda_max")->delimiter(',')->group("grid");
  app.add_option("--method", cfg.method)->transform(CLI::CheckedTransformer(kMethods))->group("grid");
  app.add_option("--frob-restarts", cfg.frob_restarts)->group("grid");

  app.add_option("--folds", cfg.folds)->group("solver");
  app.add_option("--inner-fraction", cfg.inner_fraction)->group("solver");
  app.add_option("--path-patience", cfg.path_patience, "non-improving lambdas before a path stops (0 = never)")
      ->group("solver");
  app.add_option("--max-rank", cfg.max_rank, "rank constraint shared by both penalties and every MKL block")->group("solver");
  app.add_option("--grad-tol", cfg.grad_tol)->group("solver");
  app.add_option("--max-iter", cfg.max_iter)->group("solver");
  app.add_option("--epsilon-rel", cfg.epsilon_rel)->group("solver");
}

void print_grid(const std::vector<scf::GridRow>& rows, bool with_method) {
  std::printf("%s%-6s %-6s %-10s %-10s %-10s %s\n", with_method ? "method          " : "", "eta", "zeta", "lambda",
              "rmse", "std", "rank");
  for (const auto& r : rows)
    std::printf("%s%-6.3g %-6.3g %-10.4g %-10.5f %-10.5f %d\n",
                with_method ? (scf::to_string(r.method) + std::string(16 - scf::to_string(r.method).size(), ' ')).c_str() : "",
                r.eta, r.zeta, r.lambda, r.rmse_mean, r.rmse_std, r.rank);
}

int synth_gen(const ExperimentConfig& cfg) {
  const std::filesystem::path dir = cfg.out.empty() ? "synth" : cfg.out;
  std::filesystem::create_directories(dir);
  const scf::SynthData s = scf::synth_generate(cfg.synth);
  scf::write_triplets(s.data.ratings, dir / "ratings.tsv");
  scf::write_attributes_csv(s.data.users, dir / "users.csv");
  scf::write_attributes_csv(s.data.objects, dir / "objects.csv");
  std::printf("wrote %zu ratings (%d users, %d objects) to %s\n", s.data.ratings.size(), s.data.ratings.n_users(),
              s.data.ratings.n_objects(), dir.string().c_str());
  return 0;
}

int certify() {
  bool all = true;
  for (const auto& r : scf::certification_suite()) {
    std::printf("%s  %-28s %s (%.2fs)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str(), r.seconds);
    all = all && r.passed;
  }
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral-regularized collaborative filtering experiments"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key = value config file; command-line flags override it");

  ExperimentConfig cfg;
  auto* gen = app.add_subcommand("synth-gen", "write a synthetic dataset (triplets + attribute CSVs) to --out");
  auto* grid = app.add_subcommand("grid", "(eta, zeta) heat map on synthetic data");
  auto* mkl = app.add_subcommand("mkl", "four-corner kernel learning over the lambda sweep");
  auto* cmp = app.add_subcommand("compare-penalties", "trace vs Frobenius+rank on identical folds");
  auto* ml = app.add_subcommand("movielens", "(eta, zeta) heat map on MovieLens-100k");
  auto* cert = app.add_subcommand("certify", "run the oracle equivalence suite");
  // options live on the root so that config keys need no section; subcommands fall through to it
  add_common(app, cfg);
  add_experiment(app, cfg);
  for (auto* sub : {gen, grid, mkl, cmp, ml, cert}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cert) return certify();
    if (*gen) return synth_gen(cfg);
    if (*ml) cfg.source = scf::DataSource::movielens;
    cfg.validate();
    std::fprintf(stderr, "config hash %s\n", cfg.hash().c_str());
    if (*grid || *ml) {
      print_grid(scf::run_grid(cfg), false);
    } else if (*cmp) {
      print_grid(scf::run_compare_penalties(cfg), true);
    } else if (*mkl) {
      const auto rows = scf::run_mkl(cfg);
      std::printf("%-10s %-10s %-10s %-5s %s\n", "lambda", "rmse", "std", "rank", "block trace norms");
      for (const auto& r : rows) {
        std::printf("%-10.4g %-10.5f %-10.5f %-5d", r.lambda, r.rmse_mean, r.rmse_std, r.rank);
        for (double n : r.block_norms) std::printf(" %.3g", n);
        std::printf("\n");
      }
    }
  } catch (const scf::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
