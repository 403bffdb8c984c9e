#pragma once

// Experiment driver: (eta, zeta) grids with cross-validated RMSE, the
// four-corner MKL sweep and the trace / Frobenius+rank comparison.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "spectral_cf/data.hpp"
#include "spectral_cf/errors.hpp"
#include "spectral_cf/kernels.hpp"
#include "spectral_cf/mkl.hpp"
#include "spectral_cf/model.hpp"
#include "spectral_cf/solver.hpp"

namespace scf {

enum class DataSource { synthetic, movielens };
enum class Method { trace, frobenius_rank };

inline std::string to_string(Method m) { return m == Method::trace ? "trace" : "frobenius_rank"; }
inline std::string to_string(DataSource s) { return s == DataSource::synthetic ? "synthetic" : "movielens"; }

inline std::vector<double> linspace01(int n) {
  if (n < 1) throw ParameterError("grid size must be positive");
  if (n == 1) return {0.0};
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[std::size_t(i)] = double(i) / double(n - 1);
  return v;
}

struct ExperimentConfig {
  DataSource source = DataSource::synthetic;
  SynthConfig synth;
  std::string movielens_path = "data/ml-100k";
  int ml_users = 0;  // subsample sizes; 0 keeps every entity
  int ml_items = 0;

  AttributeKernel user_family = AttributeKernel::linear;
  AttributeKernel object_family = AttributeKernel::linear;
  double user_bandwidth = 1.0;
  double object_bandwidth = 1.0;
  double user_offset = 0.0;
  double object_offset = 0.0;

  std::vector<double> etas = linspace01(5);
  std::vector<double> zetas = linspace01(5);
  // trace: multiples of lambda_max; Frobenius: multiples of the loss curvature
  std::vector<double> lambdas = {0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001, 0.0005};
  std::vector<double> frob_lambdas = {0.3, 0.1, 0.03, 0.01, 0.003, 0.001, 0.0003};
  std::vector<double> mkl_lambdas = {0.5, 0.2, 0.1, 0.05, 0.025, 0.01, 0.005, 0.0025, 0.001, 0.0005};
  Method method = Method::trace;
  int frob_restarts = 2;

  int folds = 10;
  double inner_fraction = 0.1;
  int path_patience = 2;  // stop a lambda path after this many non-improving values (0 = never)
  int max_rank = 5;  // fixed rank constraint: trace escalation cap and Frobenius factor width
  double grad_tol = 1e-5;
  int max_iter = 5000;
  double epsilon_rel = 1e-3;  // smoothing width relative to mean |centered rating|

  std::uint64_t seed = 0;
  int workers = 1;
  std::string out;

  void validate() const {
    auto unit = [](const std::vector<double>& v, const char* name) {
      if (v.empty()) throw ParameterError(std::string(name) + " must not be empty");
      for (double x : v)
        if (!(x >= 0.0 && x <= 1.0)) throw ParameterError(std::string(name) + " values must lie in [0,1]");
    };
    auto positive = [](const std::vector<double>& v, const char* name) {
      if (v.empty()) throw ParameterError(std::string(name) + " must not be empty");
      for (double x : v)
        if (!(x > 0.0) || !std::isfinite(x)) throw ParameterError(std::string(name) + " values must be > 0");
    };
    unit(etas, "etas");
    unit(zetas, "zetas");
    positive(lambdas, "lambdas");
    positive(frob_lambdas, "frob_lambdas");
    positive(mkl_lambdas, "mkl_lambdas");
    if (folds < 2) throw ParameterError("folds must be >= 2");
    if (!(inner_fraction > 0.0 && inner_fraction < 1.0)) throw ParameterError("inner_fraction must lie in (0,1)");
    if (frob_restarts < 1 || max_rank < 1) throw ParameterError("ranks and restarts must be >= 1");
    if (path_patience < 0) throw ParameterError("path_patience must be >= 0");
    if (workers < 1) throw ParameterError("workers must be >= 1");
    if (!(epsilon_rel > 0.0)) throw ParameterError("epsilon_rel must be > 0");
    if (source == DataSource::synthetic) synth.validate();
  }

  /// Every setting that affects results, one key=value per line (out and workers excluded).
  std::string canonical() const {
    std::string s;
    char buf[64];
    auto num = [&](const char* k, double v) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      s += std::string(k) + "=" + buf + "\n";
    };
    auto list = [&](const char* k, const std::vector<double>& v) {
      s += std::string(k) + "=";
      for (std::size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
        s += (i ? "," : "") + std::string(buf);
      }
      s += "\n";
    };
    s += "source=" + to_string(source) + "\n";
    if (source == DataSource::synthetic) {
      num("synth.n_users", synth.n_users);
      num("synth.n_objects", synth.n_objects);
      num("synth.d_full", synth.d_full);
      num("synth.d_obs", synth.d_obs);
      num("synth.noise_sd", synth.noise_sd);
      num("synth.n_ratings", synth.n_ratings);
      num("synth.seed", double(synth.seed));
    } else {
      s += "movielens_path=" + movielens_path + "\n";
      num("ml_users", ml_users);
      num("ml_items", ml_items);
    }
    s += std::string("user_family=") + (user_family == AttributeKernel::linear ? "linear" : "rbf") + "\n";
    s += std::string("object_family=") + (object_family == AttributeKernel::linear ? "linear" : "rbf") + "\n";
    num("user_bandwidth", user_bandwidth);
    num("object_bandwidth", object_bandwidth);
    num("user_offset", user_offset);
    num("object_offset", object_offset);
    list("etas", etas);
    list("zetas", zetas);
    list("lambdas", lambdas);
    list("frob_lambdas", frob_lambdas);
    list("mkl_lambdas", mkl_lambdas);
    s += "method=" + to_string(method) + "\n";
    num("frob_restarts", frob_restarts);
    num("folds", folds);
    num("inner_fraction", inner_fraction);
    num("path_patience", path_patience);
    num("max_rank", max_rank);
    num("grad_tol", grad_tol);
    num("max_iter", max_iter);
    num("epsilon_rel", epsilon_rel);
    num("seed", double(seed));
    return s;
  }

  std::string hash() const {
    std::uint64_t h = 14695981039346656037ull;  // FNV-1a 64
    for (unsigned char c : canonical()) {
      h ^= c;
      h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

struct GridRow {
  Method method = Method::trace;
  double eta = 0.0;
  double zeta = 0.0;
  double lambda = 0.0;  // median selected relative lambda over folds
  double rmse_mean = 0.0;
  double rmse_std = 0.0;
  int rank = 0;         // median rank over folds
};

struct MklRow {
  double lambda = 0.0;  // relative to the bank's lambda_max
  double rmse_mean = 0.0;
  double rmse_std = 0.0;
  int rank = 0;
  std::vector<double> block_norms;  // mean trace norm of each corner block over folds
};

namespace detail {

/// Runs fn(0..n-1) on `workers` threads; the first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  const int threads = std::max(1, std::min<int>(workers, int(n)));
  if (threads == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(run);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline double mean_abs_centered(const RatingsDataset& d) {
  const Vector t = d.ratings();
  return (t.array() - t.mean()).abs().mean();
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0};
}

inline int numeric_rank(const Matrix& a) {
  const Vector s = singular_values(a);
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > 1e-6 * std::max(s(0), 1e-300)) ++r;
  return r;
}

struct FoldOutcome {
  double rmse = 0.0;
  double lambda = 0.0;
  int rank = 0;
};

struct CellFactors {
  FactorPtr x;
  FactorPtr y;
};

}  // namespace detail

inline LabeledData load_data(const ExperimentConfig& cfg) {
  if (cfg.source == DataSource::synthetic) return synth_generate(cfg.synth).data;
  LabeledData full = load_movielens(cfg.movielens_path);
  if (cfg.ml_users > 0 || cfg.ml_items > 0) {
    const int nu = cfg.ml_users > 0 ? cfg.ml_users : full.ratings.n_users();
    const int ni = cfg.ml_items > 0 ? cfg.ml_items : full.ratings.n_objects();
    return subsample(full, nu, ni, cfg.seed);
  }
  return full;
}

inline KernelSpec user_spec(const ExperimentConfig& cfg, double eta) {
  return {Side::user, eta, cfg.user_family, cfg.user_bandwidth, cfg.user_offset, true};
}

inline KernelSpec object_spec(const ExperimentConfig& cfg, double zeta) {
  return {Side::object, zeta, cfg.object_family, cfg.object_bandwidth, cfg.object_offset, true};
}

/// Solver settings shared by every trace-norm fit on `train`.
inline SolveConfig trace_config(const ExperimentConfig& cfg, const RatingsDataset& train, std::uint64_t seed) {
  SolveConfig sc;
  sc.penalty = PenaltySpec::smooth_trace(cfg.epsilon_rel * std::max(detail::mean_abs_centered(train), 1e-12));
  sc.max_rank = cfg.max_rank;
  sc.compute_gap = false;
  sc.grad_tol = cfg.grad_tol;
  sc.max_iter = cfg.max_iter;
  sc.seed = seed;
  return sc;
}

/// One outer fold: lambda chosen on an inner validation split, refit on the
/// whole training fold, RMSE on the test fold.
inline detail::FoldOutcome evaluate_fold(const RatingsDataset& d, const FactorPtr& xf, const FactorPtr& yf,
                                         const Fold& fold, Method method, const ExperimentConfig& cfg,
                                         std::uint64_t fold_seed) {
  std::vector<std::size_t> shuffled = fold.train;
  std::mt19937_64 rng(fold_seed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const std::size_t n_val =
      std::clamp<std::size_t>(std::size_t(std::lround(cfg.inner_fraction * double(shuffled.size()))), 1,
                              shuffled.size() - 1);
  std::vector<std::size_t> inner_val(shuffled.end() - std::ptrdiff_t(n_val), shuffled.end());
  std::vector<std::size_t> inner_train(shuffled.begin(), shuffled.end() - std::ptrdiff_t(n_val));
  std::sort(inner_val.begin(), inner_val.end());
  std::sort(inner_train.begin(), inner_train.end());
  const RatingsDataset sub = d.subset(inner_train);
  const RatingsDataset val = d.subset(inner_val);
  const RatingsDataset train = d.subset(fold.train);
  const RatingsDataset test = d.subset(fold.test);
  const Vector val_t = val.ratings();
  const Vector test_t = test.ratings();

  detail::FoldOutcome out;
  if (method == Method::trace) {
    std::vector<double> path = cfg.lambdas;
    std::sort(path.begin(), path.end(), std::greater<>());
    SolveConfig sc = trace_config(cfg, sub, fold_seed);
    const double lmax = lambda_max(sub, {{xf, yf}});
    std::optional<OperatorModel> warm, best_model;
    double best = kInfinity, best_rel = path.front();
    int stale = 0;
    for (double rel : path) {
      sc.lambda = rel * lmax;
      SolveResult r = solve_lowrank(sub, xf, yf, sc, warm ? &*warm : nullptr);
      const double e = rmse(predict_all(r.model, val), val_t);
      if (e < best) {
        best = e;
        best_rel = rel;
        best_model = r.model;
        stale = 0;
      } else if (++stale == cfg.path_patience) {
        break;
      }
      warm = std::move(r.model);
    }
    SolveConfig fc = trace_config(cfg, train, fold_seed);
    fc.lambda = best_rel * lambda_max(train, {{xf, yf}});
    SolveResult r = solve_lowrank(train, xf, yf, fc, &*best_model);
    out.rmse = rmse(predict_all(r.model, test), test_t);
    out.lambda = best_rel;
    out.rank = r.report.block_ranks.front();
  } else {
    const int rank = int(std::min<Eigen::Index>(cfg.max_rank, std::min(xf->m(), yf->m())));
    FrobOptions fo;
    fo.restarts = cfg.frob_restarts;
    fo.seed = fold_seed;
    fo.grad_tol = cfg.grad_tol;
    fo.max_iter = cfg.max_iter;
    const double curv_sub = detail::design_norm_sq(sub, {{xf, yf}}) / double(sub.size());
    std::vector<double> path = cfg.frob_lambdas;
    std::sort(path.begin(), path.end(), std::greater<>());
    double best = kInfinity, best_rel = path.front();
    int stale = 0;
    for (double rel : path) {
      SolveResult r = solve_frob_lowrank(sub, xf, yf, rank, rel * curv_sub, fo);
      const double e = rmse(predict_all(r.model, val), val_t);
      if (e < best) {
        best = e;
        best_rel = rel;
        stale = 0;
      } else if (++stale == cfg.path_patience) {
        break;
      }
    }
    const double curv = detail::design_norm_sq(train, {{xf, yf}}) / double(train.size());
    SolveResult r = solve_frob_lowrank(train, xf, yf, rank, best_rel * curv, fo);
    out.rmse = rmse(predict_all(r.model, test), test_t);
    out.lambda = best_rel;
    out.rank = detail::numeric_rank(r.model.alpha());
  }
  return out;
}

inline detail::CellFactors cell_factors(const ExperimentConfig& cfg, const LabeledData& data, double eta,
                                        double zeta) {
  const Eigen::Index nx = data.ratings.n_users(), ny = data.ratings.n_objects();
  const KernelSpec us = user_spec(cfg, eta), os = object_spec(cfg, zeta);
  return {share(factor_gram(side_gram(us, &data.users, nx))), share(factor_gram(side_gram(os, &data.objects, ny)))};
}

/// Cross-validated RMSE for every (eta, zeta) cell and every requested method.
inline std::vector<GridRow> run_grid_methods(const ExperimentConfig& cfg, const std::vector<Method>& methods,
                                             const LabeledData* preloaded = nullptr) {
  cfg.validate();
  LabeledData loaded;
  if (!preloaded) loaded = load_data(cfg);
  const LabeledData& data = preloaded ? *preloaded : loaded;
  const auto folds = kfold_split(data.ratings, cfg.folds, cfg.seed);

  std::vector<std::pair<double, double>> cells;
  for (double e : cfg.etas)
    for (double z : cfg.zetas) cells.emplace_back(e, z);
  std::vector<detail::CellFactors> factors(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) factors[c] = cell_factors(cfg, data, cells[c].first, cells[c].second);

  const std::size_t nf = folds.size(), nm = methods.size();
  std::vector<detail::FoldOutcome> results(cells.size() * nm * nf);
  detail::parallel_for(results.size(), cfg.workers, [&](std::size_t task) {
    const std::size_t c = task / (nm * nf), m = (task / nf) % nm, f = task % nf;
    try {
      results[task] = evaluate_fold(data.ratings, factors[c].x, factors[c].y, folds[f], methods[m], cfg,
                                    detail::mix_seed(cfg.seed, f));
    } catch (const std::exception& e) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "cell (eta=%g, zeta=%g) method %s fold %zu: ", cells[c].first, cells[c].second,
                    to_string(methods[m]).c_str(), f);
      throw ExperimentError(buf + std::string(e.what()));
    }
  });

  std::vector<GridRow> rows;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::size_t m = 0; m < nm; ++m) {
      std::vector<double> err, lam, rk;
      for (std::size_t f = 0; f < nf; ++f) {
        const auto& o = results[(c * nm + m) * nf + f];
        err.push_back(o.rmse);
        lam.push_back(o.lambda);
        rk.push_back(o.rank);
      }
      const auto [mu, sd] = detail::mean_std(err);
      rows.push_back({methods[m], cells[c].first, cells[c].second, detail::median(lam), mu, sd,
                      int(detail::median(rk))});
    }
  }
  std::sort(rows.begin(), rows.end(), [](const GridRow& a, const GridRow& b) {
    return std::tie(a.method, a.eta, a.zeta, a.lambda) < std::tie(b.method, b.eta, b.zeta, b.lambda);
  });
  return rows;
}

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline void write_grid_csv(const std::vector<GridRow>& rows, const std::string& hash, const std::string& path,
                           bool with_method) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << (with_method ? "method," : "") << "eta,zeta,lambda,rmse_mean,rmse_std,rank,config_hash\n";
  for (const auto& r : rows) {
    if (with_method) os << to_string(r.method) << ',';
    os << format_number(r.eta) << ',' << format_number(r.zeta) << ',' << format_number(r.lambda) << ','
       << format_number(r.rmse_mean) << ',' << format_number(r.rmse_std) << ',' << r.rank << ',' << hash << '\n';
  }
  if (!os) throw IoError("failed writing " + path);
}

/// Heat map for cfg.method; written to cfg.out when set.
inline std::vector<GridRow> run_grid(const ExperimentConfig& cfg, const LabeledData* preloaded = nullptr) {
  auto rows = run_grid_methods(cfg, {cfg.method}, preloaded);
  if (!cfg.out.empty()) write_grid_csv(rows, cfg.hash(), cfg.out, false);
  return rows;
}

/// Both methods on identical folds; rows carry a leading method column.
inline std::vector<GridRow> run_compare_penalties(const ExperimentConfig& cfg, const LabeledData* preloaded = nullptr) {
  auto rows = run_grid_methods(cfg, {Method::trace, Method::frobenius_rank}, preloaded);
  if (!cfg.out.empty()) write_grid_csv(rows, cfg.hash(), cfg.out, true);
  return rows;
}

/// Four-corner MKL over the relative lambda sweep; test RMSE per lambda.
inline std::vector<MklRow> run_mkl(const ExperimentConfig& cfg, const LabeledData* preloaded = nullptr) {
  cfg.validate();
  LabeledData loaded;
  if (!preloaded) loaded = load_data(cfg);
  const LabeledData& data = preloaded ? *preloaded : loaded;
  const KernelBank bank = corner_bank(data.users, data.objects, data.ratings.n_users(), data.ratings.n_objects(),
                                      cfg.user_family, cfg.user_bandwidth);
  const auto folds = kfold_split(data.ratings, cfg.folds, cfg.seed);
  std::vector<double> path = cfg.mkl_lambdas;
  std::sort(path.begin(), path.end(), std::greater<>());
  const std::size_t nl = path.size();

  struct Cell {
    double rmse = 0.0;
    int rank = 0;
    std::vector<double> norms;
  };
  std::vector<Cell> cells(folds.size() * nl);
  detail::parallel_for(folds.size(), cfg.workers, [&](std::size_t f) {
    try {
      const RatingsDataset train = data.ratings.subset(folds[f].train);
      const RatingsDataset test = data.ratings.subset(folds[f].test);
      const Vector test_t = test.ratings();
      SolveConfig sc = trace_config(cfg, train, detail::mix_seed(cfg.seed, f));
      const double lmax = lambda_max(train, bank.pairs());
      std::optional<MklModel> warm;
      for (std::size_t l = 0; l < nl; ++l) {
        sc.lambda = path[l] * lmax;
        MklResult r = solve_mkl(train, bank, sc, warm ? &*warm : nullptr);
        cells[f * nl + l] = {rmse(r.model.predict_all(test), test_t), r.report.final_rank, r.report.block_trace_norms};
        warm = std::move(r.model);
      }
    } catch (const std::exception& e) {
      throw ExperimentError("mkl fold " + std::to_string(f) + ": " + e.what());
    }
  });

  std::vector<MklRow> rows;
  for (std::size_t l = 0; l < nl; ++l) {
    std::vector<double> err, rk;
    std::vector<double> norms(bank.size(), 0.0);
    for (std::size_t f = 0; f < folds.size(); ++f) {
      const Cell& c = cells[f * nl + l];
      err.push_back(c.rmse);
      rk.push_back(c.rank);
      for (std::size_t k = 0; k < bank.size(); ++k) norms[k] += c.norms[k] / double(folds.size());
    }
    const auto [mu, sd] = detail::mean_std(err);
    rows.push_back({path[l], mu, sd, int(detail::median(rk)), norms});
  }
  std::sort(rows.begin(), rows.end(), [](const MklRow& a, const MklRow& b) { return a.lambda < b.lambda; });
  if (!cfg.out.empty()) {
    std::ofstream os(cfg.out, std::ios::binary);
    if (!os) throw IoError("cannot open " + cfg.out + " for writing");
    os << "lambda,rmse_mean,rmse_std,rank,norm_dirac_dirac,norm_dirac_attr,norm_attr_dirac,norm_attr_attr,config_hash\n";
    const std::string h = cfg.hash();
    for (const auto& r : rows) {
      os << format_number(r.lambda) << ',' << format_number(r.rmse_mean) << ',' << format_number(r.rmse_std) << ','
         << r.rank;
      for (double n : r.block_norms) os << ',' << format_number(n);
      os << ',' << h << '\n';
    }
    if (!os) throw IoError("failed writing " + cfg.out);
  }
  return rows;
}

}  // namespace scf
