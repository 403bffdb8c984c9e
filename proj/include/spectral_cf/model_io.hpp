#pragma once

// Binary model container; layout documented in docs/model_format.md.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "spectral_cf/errors.hpp"
#include "spectral_cf/model.hpp"

namespace scf {

namespace detail {

inline constexpr char kModelMagic[8] = {'S', 'C', 'F', 'M', 'O', 'D', 'E', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

static_assert(std::endian::native == std::endian::little, "model files are little-endian");

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("model file truncated");
  return v;
}

inline void put_matrix(std::ostream& os, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put<double>(os, m(i, j));
}

inline Matrix take_matrix(std::istream& is, std::int64_t rows, std::int64_t cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = take<double>(is);
  return m;
}

inline void put_kernel(std::ostream& os, const std::optional<KernelSpec>& k) {
  put<std::uint8_t>(os, k ? 1 : 0);
  if (!k) return;
  put<double>(os, k->weight);
  put<double>(os, k->bandwidth);
  put<double>(os, k->offset);
  put<std::uint8_t>(os, k->side == Side::user ? 0 : 1);
  put<std::uint8_t>(os, k->family == AttributeKernel::linear ? 0 : 1);
  put<std::uint8_t>(os, k->normalize ? 1 : 0);
}

inline std::optional<KernelSpec> take_kernel(std::istream& is) {
  if (take<std::uint8_t>(is) == 0) return std::nullopt;
  KernelSpec k;
  k.weight = take<double>(is);
  k.bandwidth = take<double>(is);
  k.offset = take<double>(is);
  k.side = take<std::uint8_t>(is) == 0 ? Side::user : Side::object;
  k.family = take<std::uint8_t>(is) == 0 ? AttributeKernel::linear : AttributeKernel::rbf;
  k.normalize = take<std::uint8_t>(is) != 0;
  return k;
}

}  // namespace detail

inline void save_model(const OperatorModel& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write(detail::kModelMagic, sizeof(detail::kModelMagic));
  detail::put<std::uint32_t>(os, detail::kModelVersion);
  detail::put<std::int64_t>(os, m.xfactor().n());
  detail::put<std::int64_t>(os, m.yfactor().n());
  detail::put<std::int64_t>(os, m.xfactor().m());
  detail::put<std::int64_t>(os, m.yfactor().m());
  detail::put<double>(os, m.mean());
  detail::put<std::uint8_t>(os, m.xfactor().is_identity() ? 1 : 0);
  detail::put<std::uint8_t>(os, m.yfactor().is_identity() ? 1 : 0);
  detail::put_kernel(os, m.user_kernel);
  detail::put_kernel(os, m.object_kernel);
  detail::put_matrix(os, m.xfactor().matrix());
  detail::put_matrix(os, m.yfactor().matrix());
  detail::put_matrix(os, m.alpha());
  if (!os) throw IoError("failed writing " + path);
}

inline OperatorModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, detail::kModelMagic, sizeof(magic)) != 0)
    throw IoError(path + " is not a model file");
  if (detail::take<std::uint32_t>(is) != detail::kModelVersion) throw IoError("unsupported model version");
  const auto nx = detail::take<std::int64_t>(is);
  const auto ny = detail::take<std::int64_t>(is);
  const auto mx = detail::take<std::int64_t>(is);
  const auto my = detail::take<std::int64_t>(is);
  if (nx <= 0 || ny <= 0 || mx <= 0 || my <= 0 || mx > nx || my > ny) throw IoError("corrupt model header");
  const double mean = detail::take<double>(is);
  const bool xid = detail::take<std::uint8_t>(is) != 0;
  const bool yid = detail::take<std::uint8_t>(is) != 0;
  auto uk = detail::take_kernel(is);
  auto ok = detail::take_kernel(is);
  Matrix x = detail::take_matrix(is, nx, mx);
  Matrix y = detail::take_matrix(is, ny, my);
  Matrix alpha = detail::take_matrix(is, mx, my);
  OperatorModel m(share(GramFactor(std::move(x), xid)), share(GramFactor(std::move(y), yid)), std::move(alpha), mean);
  m.user_kernel = uk;
  m.object_kernel = ok;
  return m;
}

}  // namespace scf
