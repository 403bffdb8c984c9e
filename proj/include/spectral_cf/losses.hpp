#pragma once

// Pointwise losses psi(v) = l(v, t) with derivative and Fenchel conjugate
// psi*(beta) = sup_v { beta v - psi(v) }.

#include <cmath>
#include <limits>

#include "spectral_cf/errors.hpp"

namespace scf {

enum class LossKind { squared, logistic };

struct LossSpec {
  LossKind kind = LossKind::squared;
  double target = 0.0;

  static LossSpec squared(double t) { return {LossKind::squared, t}; }
  static LossSpec logistic(double t) {
    if (t != 1.0 && t != -1.0) throw ValidationError("logistic targets must be -1 or +1");
    return {LossKind::logistic, t};
  }
};

namespace detail {

// log(1 + e^x) without overflow.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// u log u with the 0 log 0 = 0 convention.
inline double xlogx(double u) { return u > 0.0 ? u * std::log(u) : 0.0; }

}  // namespace detail

/// squared: (t - v)^2 / 2;  logistic: log(1 + exp(-t v)).
inline double loss_eval(const LossSpec& spec, double v) {
  if (spec.kind == LossKind::squared) {
    const double r = spec.target - v;
    return 0.5 * r * r;
  }
  return detail::softplus(-spec.target * v);
}

inline double loss_grad(const LossSpec& spec, double v) {
  if (spec.kind == LossKind::squared) return v - spec.target;
  return -spec.target * detail::sigmoid(-spec.target * v);
}

inline double loss_conjugate(const LossSpec& spec, double beta) {
  if (spec.kind == LossKind::squared) return 0.5 * beta * beta + beta * spec.target;
  const double u = beta * spec.target;
  if (u < -1.0 || u > 0.0) return std::numeric_limits<double>::infinity();
  // closed convex extension at u in {-1, 0}
  return detail::xlogx(1.0 + u) + detail::xlogx(-u);
}

}  // namespace scf
