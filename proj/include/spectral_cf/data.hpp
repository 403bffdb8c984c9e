#pragma once

// Datasets: MovieLens-100k ingestion and feature encoding, the synthetic
// bilinear generator, triplet/CSV export, k-fold splits and RMSE.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spectral_cf/errors.hpp"
#include "spectral_cf/kernels.hpp"
#include "spectral_cf/model.hpp"

namespace scf {

inline constexpr std::array<const char*, 21> kOccupations = {
    "administrator", "artist",    "doctor",  "educator", "engineer", "entertainment", "executive",
    "healthcare",    "homemaker", "lawyer",  "librarian", "marketing", "none",         "other",
    "programmer",    "retired",   "salesman", "scientist", "student",  "technician",   "writer"};

// Lower bounds of the five age buckets; the last bucket is open-ended.
inline constexpr std::array<int, 5> kAgeBuckets = {0, 18, 25, 35, 45};
inline constexpr int kGenreCount = 19;
inline constexpr int kUserFeatureCount = 5 + 1 + 21;

struct LabeledData {
  RatingsDataset ratings;
  AttributeMatrix users;
  AttributeMatrix objects;
};

namespace detail {

inline std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline long parse_int(const std::string& s, const std::string& file, std::size_t line) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(file + ":" + std::to_string(line) + ": expected an integer, got '" + s + "'");
  }
}

inline double parse_double(const std::string& s, const std::string& file, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(file + ":" + std::to_string(line) + ": expected a number, got '" + s + "'");
  }
}

inline std::ifstream open_input(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return in;
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

inline int age_bucket(long age) {
  int b = 0;
  for (int i = 0; i < int(kAgeBuckets.size()); ++i)
    if (age >= kAgeBuckets[std::size_t(i)]) b = i;
  return b;
}

}  // namespace detail

/// Reads u.data, u.item and u.user from a MovieLens-100k directory.
inline LabeledData load_movielens(const std::filesystem::path& dir) {
  const auto user_path = dir / "u.user";
  const auto item_path = dir / "u.item";
  const auto data_path = dir / "u.data";

  std::vector<std::vector<double>> user_rows;
  {
    auto in = detail::open_input(user_path);
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
      ++ln;
      detail::strip_cr(line);
      if (line.empty()) continue;
      const auto f = detail::split(line, '|');
      if (f.size() != 5) throw ParseError(user_path.string() + ":" + std::to_string(ln) + ": expected 5 fields");
      const long id = detail::parse_int(f[0], user_path.string(), ln);
      if (id != long(user_rows.size()) + 1)
        throw ParseError(user_path.string() + ":" + std::to_string(ln) + ": user ids must be consecutive from 1");
      std::vector<double> row(kUserFeatureCount, 0.0);
      row[std::size_t(detail::age_bucket(detail::parse_int(f[1], user_path.string(), ln)))] = 1.0;
      if (f[2] == "F") {
        row[5] = 1.0;
      } else if (f[2] != "M") {
        throw ParseError(user_path.string() + ":" + std::to_string(ln) + ": unknown gender '" + f[2] + "'");
      }
      const auto occ = std::find(kOccupations.begin(), kOccupations.end(), f[3]);
      if (occ == kOccupations.end())
        throw ParseError(user_path.string() + ":" + std::to_string(ln) + ": unknown occupation '" + f[3] + "'");
      row[6 + std::size_t(occ - kOccupations.begin())] = 1.0;
      user_rows.push_back(std::move(row));
    }
  }

  std::vector<std::vector<double>> item_rows;
  {
    auto in = detail::open_input(item_path);
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
      ++ln;
      detail::strip_cr(line);
      if (line.empty()) continue;
      const auto f = detail::split(line, '|');
      if (f.size() != 5 + kGenreCount)
        throw ParseError(item_path.string() + ":" + std::to_string(ln) + ": expected 24 fields");
      const long id = detail::parse_int(f[0], item_path.string(), ln);
      if (id != long(item_rows.size()) + 1)
        throw ParseError(item_path.string() + ":" + std::to_string(ln) + ": item ids must be consecutive from 1");
      std::vector<double> row(kGenreCount);
      for (int g = 0; g < kGenreCount; ++g) {
        const long flag = detail::parse_int(f[5 + std::size_t(g)], item_path.string(), ln);
        if (flag != 0 && flag != 1)
          throw ParseError(item_path.string() + ":" + std::to_string(ln) + ": genre flags must be 0 or 1");
        row[std::size_t(g)] = double(flag);
      }
      item_rows.push_back(std::move(row));
    }
  }

  const int n_users = int(user_rows.size());
  const int n_items = int(item_rows.size());
  std::vector<Observation> obs;
  {
    auto in = detail::open_input(data_path);
    std::string line;
    std::size_t ln = 0;
    std::set<std::pair<int, int>> seen;
    while (std::getline(in, line)) {
      ++ln;
      detail::strip_cr(line);
      if (line.empty()) continue;
      const auto f = detail::split(line, '\t');
      if (f.size() != 4) throw ParseError(data_path.string() + ":" + std::to_string(ln) + ": expected 4 fields");
      const long u = detail::parse_int(f[0], data_path.string(), ln);
      const long i = detail::parse_int(f[1], data_path.string(), ln);
      const long r = detail::parse_int(f[2], data_path.string(), ln);
      if (u < 1 || u > n_users || i < 1 || i > n_items)
        throw ParseError(data_path.string() + ":" + std::to_string(ln) + ": unknown user or item id");
      if (r < 1 || r > 5) throw ParseError(data_path.string() + ":" + std::to_string(ln) + ": rating outside 1..5");
      if (!seen.emplace(int(u - 1), int(i - 1)).second)
        throw ParseError(data_path.string() + ":" + std::to_string(ln) + ": duplicate (user, item) pair");
      obs.push_back({int(u - 1), int(i - 1), double(r)});
    }
  }

  auto to_matrix = [](const std::vector<std::vector<double>>& rows, Eigen::Index cols) {
    Matrix m(Eigen::Index(rows.size()), cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(Eigen::Index(i), j) = rows[i][std::size_t(j)];
    return AttributeMatrix(std::move(m));
  };
  return {RatingsDataset(std::move(obs), n_users, n_items), to_matrix(user_rows, kUserFeatureCount),
          to_matrix(item_rows, kGenreCount)};
}

/// Random `n_users` users and `n_objects` objects with all their mutual
/// ratings, re-indexed from zero in sampled order.
inline LabeledData subsample(const LabeledData& full, int n_users, int n_objects, std::uint64_t seed) {
  const int nx = full.ratings.n_users(), ny = full.ratings.n_objects();
  if (n_users < 1 || n_objects < 1 || n_users > nx || n_objects > ny)
    throw ParameterError("subsample sizes must lie within the dataset");
  std::mt19937_64 rng(seed);
  std::vector<int> us(static_cast<std::size_t>(nx)), os(static_cast<std::size_t>(ny));
  std::iota(us.begin(), us.end(), 0);
  std::iota(os.begin(), os.end(), 0);
  std::shuffle(us.begin(), us.end(), rng);
  std::shuffle(os.begin(), os.end(), rng);
  std::vector<int> umap(static_cast<std::size_t>(nx), -1), omap(static_cast<std::size_t>(ny), -1);
  for (int i = 0; i < n_users; ++i) umap[std::size_t(us[std::size_t(i)])] = i;
  for (int j = 0; j < n_objects; ++j) omap[std::size_t(os[std::size_t(j)])] = j;
  std::vector<Observation> obs;
  for (const auto& o : full.ratings)
    if (umap[std::size_t(o.user)] >= 0 && omap[std::size_t(o.object)] >= 0)
      obs.push_back({umap[std::size_t(o.user)], omap[std::size_t(o.object)], o.rating});
  Matrix ua(n_users, full.users.cols()), oa(n_objects, full.objects.cols());
  for (int i = 0; i < n_users; ++i) ua.row(i) = full.users.row(us[std::size_t(i)]);
  for (int j = 0; j < n_objects; ++j) oa.row(j) = full.objects.row(os[std::size_t(j)]);
  return {RatingsDataset(std::move(obs), n_users, n_objects), AttributeMatrix(std::move(ua)),
          AttributeMatrix(std::move(oa))};
}

struct SynthConfig {
  int n_users = 50;
  int n_objects = 50;
  int d_full = 6;
  int d_obs = 3;
  double noise_sd = 0.1;
  int n_ratings = 800;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_users < 1 || n_objects < 1) throw ParameterError("entity counts must be positive");
    if (d_full < 1 || d_obs < 1 || d_obs > d_full) throw ParameterError("need 1 <= d_obs <= d_full");
    if (!(noise_sd >= 0.0)) throw ParameterError("noise_sd must be >= 0");
    if (n_ratings < 1 || std::int64_t(n_ratings) > std::int64_t(n_users) * n_objects)
      throw ParameterError("n_ratings must lie in [1, n_users * n_objects]");
  }
};

struct SynthData {
  LabeledData data;
  Matrix x_full;  // n_users x d_full
  Matrix y_full;  // n_objects x d_full
  Matrix b;       // d_full x d_full
  Vector clean;   // noiseless label of each observation
};

/// Gaussian features, random bilinear form B (entries N(0,1)/d_full), labels
/// x^T B y + noise on distinct random pairs; the first d_obs features are observed.
inline SynthData synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal;
  auto draw = [&](Eigen::Index r, Eigen::Index c, double scale) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * normal(rng);
    return m;
  };
  SynthData s;
  s.x_full = draw(cfg.n_users, cfg.d_full, 1.0);
  s.y_full = draw(cfg.n_objects, cfg.d_full, 1.0);
  s.b = draw(cfg.d_full, cfg.d_full, 1.0 / double(cfg.d_full));
  std::vector<std::int64_t> cells(std::size_t(std::int64_t(cfg.n_users) * cfg.n_objects));
  std::iota(cells.begin(), cells.end(), std::int64_t(0));
  std::shuffle(cells.begin(), cells.end(), rng);
  std::vector<Observation> obs;
  s.clean.resize(cfg.n_ratings);
  const Matrix xb = s.x_full * s.b;
  for (int i = 0; i < cfg.n_ratings; ++i) {
    const int a = int(cells[std::size_t(i)] / cfg.n_objects);
    const int c = int(cells[std::size_t(i)] % cfg.n_objects);
    const double clean = xb.row(a).dot(s.y_full.row(c));
    s.clean(i) = clean;
    obs.push_back({a, c, clean + (cfg.noise_sd > 0.0 ? cfg.noise_sd * normal(rng) : 0.0)});
  }
  s.data = {RatingsDataset(std::move(obs), cfg.n_users, cfg.n_objects),
            AttributeMatrix(s.x_full.leftCols(cfg.d_obs)), AttributeMatrix(s.y_full.leftCols(cfg.d_obs))};
  return s;
}

/// u.data layout: 1-based ids, tab separated, timestamp column written as 0.
inline void write_triplets(const RatingsDataset& d, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.precision(17);
  for (const auto& o : d) os << o.user + 1 << '\t' << o.object + 1 << '\t' << o.rating << "\t0\n";
  if (!os) throw IoError("failed writing " + path.string());
}

/// Reads a u.data-style file (real-valued ratings allowed).
inline RatingsDataset read_triplets(const std::filesystem::path& path, int n_users, int n_objects) {
  auto in = detail::open_input(path);
  std::vector<Observation> obs;
  std::set<std::pair<int, int>> seen;
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    detail::strip_cr(line);
    if (line.empty()) continue;
    const auto f = detail::split(line, '\t');
    if (f.size() < 3) throw ParseError(path.string() + ":" + std::to_string(ln) + ": expected at least 3 fields");
    const long u = detail::parse_int(f[0], path.string(), ln);
    const long i = detail::parse_int(f[1], path.string(), ln);
    if (u < 1 || u > n_users || i < 1 || i > n_objects)
      throw ParseError(path.string() + ":" + std::to_string(ln) + ": id out of range");
    if (!seen.emplace(int(u), int(i)).second)
      throw ParseError(path.string() + ":" + std::to_string(ln) + ": duplicate (user, item) pair");
    obs.push_back({int(u - 1), int(i - 1), detail::parse_double(f[2], path.string(), ln)});
  }
  return RatingsDataset(std::move(obs), n_users, n_objects);
}

/// Header row f0,f1,..., then one entity per line.
inline void write_attributes_csv(const AttributeMatrix& a, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.precision(17);
  for (Eigen::Index j = 0; j < a.cols(); ++j) os << (j ? "," : "") << 'f' << j;
  os << '\n';
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) os << (j ? "," : "") << a.features()(i, j);
    os << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

inline AttributeMatrix read_attributes_csv(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header row");
  detail::strip_cr(line);
  const std::size_t cols = detail::split(line, ',').size();
  std::vector<double> vals;
  std::size_t ln = 1, rows = 0;
  while (std::getline(in, line)) {
    ++ln;
    detail::strip_cr(line);
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != cols) throw ParseError(path.string() + ":" + std::to_string(ln) + ": wrong column count");
    for (const auto& s : f) vals.push_back(detail::parse_double(s, path.string(), ln));
    ++rows;
  }
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(Eigen::Index(i), Eigen::Index(j)) = vals[i * cols + j];
  return AttributeMatrix(std::move(m));
}

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Shuffled k-fold partition; fold sizes differ by at most one.
inline std::vector<Fold> kfold_split(std::size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw ParameterError("need at least two folds");
  if (std::size_t(k) > n) throw ParameterError("more folds than observations");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t(0));
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Fold> folds(static_cast<std::size_t>(k));
  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::size_t f = pos % std::size_t(k);
    for (std::size_t g = 0; g < folds.size(); ++g) (g == f ? folds[g].test : folds[g].train).push_back(perm[pos]);
  }
  for (auto& f : folds) {
    std::sort(f.train.begin(), f.train.end());
    std::sort(f.test.begin(), f.test.end());
  }
  return folds;
}

inline std::vector<Fold> kfold_split(const RatingsDataset& d, int k, std::uint64_t seed) {
  return kfold_split(d.size(), k, seed);
}

inline double rmse(const Vector& pred, const Vector& truth) {
  if (pred.size() != truth.size()) throw DimensionError("rmse: length mismatch");
  if (pred.size() == 0) throw EmptyInputError("rmse: empty input");
  return std::sqrt((pred - truth).squaredNorm() / double(pred.size()));
}

}  // namespace scf
