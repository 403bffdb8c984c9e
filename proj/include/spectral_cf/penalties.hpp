#pragma once

// Spectral penalties Omega(F) = sum_i s_i(sigma_i(F)) and their conjugates.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "spectral_cf/errors.hpp"
#include "spectral_cf/losses.hpp"

namespace scf {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

enum class PenaltyKind { rank_cap, trace, frobenius, trace_plus_rank, frobenius_plus_rank, smooth_trace };

struct PenaltySpec {
  PenaltyKind kind = PenaltyKind::trace;
  int rank = 0;          // rank cap for the *_rank kinds
  double epsilon = 0.0;  // smoothing width for smooth_trace

  static PenaltySpec rank_cap(int r) { return checked({PenaltyKind::rank_cap, r, 0.0}); }
  static PenaltySpec trace() { return {PenaltyKind::trace, 0, 0.0}; }
  static PenaltySpec frobenius() { return {PenaltyKind::frobenius, 0, 0.0}; }
  static PenaltySpec trace_plus_rank(int r) { return checked({PenaltyKind::trace_plus_rank, r, 0.0}); }
  static PenaltySpec frobenius_plus_rank(int r) {
    return checked({PenaltyKind::frobenius_plus_rank, r, 0.0});
  }
  static PenaltySpec smooth_trace(double eps) { return checked({PenaltyKind::smooth_trace, 0, eps}); }

  bool has_rank_cap() const {
    return kind == PenaltyKind::rank_cap || kind == PenaltyKind::trace_plus_rank ||
           kind == PenaltyKind::frobenius_plus_rank;
  }
  /// Differentiable in the singular values with s'(0) = 0.
  bool is_smooth() const {
    return kind == PenaltyKind::smooth_trace || kind == PenaltyKind::frobenius ||
           kind == PenaltyKind::frobenius_plus_rank;
  }

 private:
  static PenaltySpec checked(PenaltySpec p) {
    if ((p.kind != PenaltyKind::smooth_trace) && p.rank < 1)
      throw ParameterError("rank cap must be at least 1");
    if (p.kind == PenaltyKind::smooth_trace && !(p.epsilon > 0.0))
      throw ParameterError("smoothing width must be positive");
    return p;
  }
};

inline std::string to_string(PenaltyKind k) {
  switch (k) {
    case PenaltyKind::rank_cap: return "rank_cap";
    case PenaltyKind::trace: return "trace";
    case PenaltyKind::frobenius: return "frobenius";
    case PenaltyKind::trace_plus_rank: return "trace_plus_rank";
    case PenaltyKind::frobenius_plus_rank: return "frobenius_plus_rank";
    case PenaltyKind::smooth_trace: return "smooth_trace";
  }
  return "?";
}

/// Non-increasing, non-negative singular values.
class Spectrum {
 public:
  Spectrum() = default;
  Spectrum(std::initializer_list<double> values) : Spectrum(std::vector<double>(values)) {}
  explicit Spectrum(std::vector<double> values) : values_(std::move(values)) {
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!(values_[i] >= 0.0)) throw ValidationError("singular values must be non-negative");
      if (i > 0 && values_[i] > values_[i - 1]) throw ValidationError("singular values must be sorted descending");
    }
  }
  template <class Derived>
  static Spectrum from(const Eigen::MatrixBase<Derived>& sv) {
    std::vector<double> v(sv.size());
    for (Eigen::Index i = 0; i < sv.size(); ++i) v[i] = std::max(0.0, sv(i));
    std::sort(v.begin(), v.end(), std::greater<>());
    return Spectrum(std::move(v));
  }

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double largest() const { return values_.empty() ? 0.0 : values_.front(); }
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<double> values_;
};

// Singular values this far below the largest count as zero for rank tests.
inline constexpr double kRankTolerance = 1e-12;

/// 2 eps log cosh(sigma / 2 eps): the smooth |sigma| approximation shifted so that s(0) = 0.
inline double smooth_trace_eval(double eps, double sigma) {
  if (!(eps > 0.0)) throw ParameterError("smoothing width must be positive");
  const double x = std::abs(sigma) / eps;
  // eps*softplus(x) + eps*softplus(-x) - 2 eps log 2, arranged to stay exact for large x
  return eps * (x + 2.0 * std::log1p(std::exp(-x)) - 2.0 * std::numbers::ln2);
}

inline double smooth_trace_deriv(double eps, double sigma) {
  if (!(eps > 0.0)) throw ParameterError("smoothing width must be positive");
  return std::tanh(sigma / (2.0 * eps));
}

/// eps [(1+tau) log(1+tau) + (1-tau) log(1-tau)] on |tau| <= 1, +inf outside.
inline double smooth_trace_conjugate(double eps, double tau) {
  const double a = std::abs(tau);
  if (a > 1.0) return kInfinity;
  return eps * (detail::xlogx(1.0 + a) + detail::xlogx(1.0 - a));
}

/// Inverse of the derivative: sigma with s'(sigma) = tau.
inline double smooth_trace_deriv_inverse(double eps, double tau) {
  return eps * std::log((1.0 + tau) / (1.0 - tau));
}

/// Per-value s(sigma); rank caps are enforced by penalty_eval.
inline double scalar_penalty(const PenaltySpec& p, double sigma) {
  switch (p.kind) {
    case PenaltyKind::trace:
    case PenaltyKind::trace_plus_rank: return sigma;
    case PenaltyKind::frobenius:
    case PenaltyKind::frobenius_plus_rank: return sigma * sigma;
    case PenaltyKind::smooth_trace: return smooth_trace_eval(p.epsilon, sigma);
    case PenaltyKind::rank_cap: return 0.0;
  }
  return 0.0;
}

inline double scalar_penalty_deriv(const PenaltySpec& p, double sigma) {
  switch (p.kind) {
    case PenaltyKind::frobenius:
    case PenaltyKind::frobenius_plus_rank: return 2.0 * sigma;
    case PenaltyKind::smooth_trace: return smooth_trace_deriv(p.epsilon, sigma);
    default: throw UnsupportedPenaltyError("penalty " + to_string(p.kind) + " is not differentiable");
  }
}

inline double scalar_penalty_conjugate(const PenaltySpec& p, double tau) {
  switch (p.kind) {
    case PenaltyKind::trace: return std::abs(tau) <= 1.0 ? 0.0 : kInfinity;
    case PenaltyKind::frobenius: return 0.25 * tau * tau;
    case PenaltyKind::smooth_trace: return smooth_trace_conjugate(p.epsilon, tau);
    default:
      throw UnsupportedPenaltyError("no closed-form conjugate for penalty " + to_string(p.kind));
  }
}

inline double penalty_eval(const PenaltySpec& p, const Spectrum& s) {
  if (p.has_rank_cap()) {
    const std::size_t r = static_cast<std::size_t>(p.rank);
    if (s.size() > r && s[r] > kRankTolerance * std::max(1.0, s.largest())) return kInfinity;
  }
  double total = 0.0;
  for (double sigma : s.values()) total += scalar_penalty(p, sigma);
  return total;
}

/// Omega*(B) evaluated from the singular values of B.
inline double penalty_conjugate(const PenaltySpec& p, const Spectrum& s) {
  double total = 0.0;
  for (double tau : s.values()) {
    total += scalar_penalty_conjugate(p, tau);
    if (std::isinf(total)) return kInfinity;
  }
  return total;
}

}  // namespace scf
