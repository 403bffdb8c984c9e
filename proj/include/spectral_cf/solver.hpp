#pragma once

// Empirical risk + spectral penalty over alpha = U V^T, minimized by gradient
// descent at increasing rank until a rank-deficient local minimum is reached.
// Also: the column-product (Frobenius low-rank) baseline and duality gaps.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "spectral_cf/errors.hpp"
#include "spectral_cf/kernels.hpp"
#include "spectral_cf/losses.hpp"
#include "spectral_cf/model.hpp"
#include "spectral_cf/penalties.hpp"

namespace scf {

struct SolveConfig {
  double lambda = 1e-3;
  PenaltySpec penalty = PenaltySpec::smooth_trace(1e-3);
  LossKind loss = LossKind::squared;
  int initial_rank = 1;
  int max_rank = 10;           // clipped to min(m_X, m_Y)
  double grad_tol = 1e-6;      // absolute gradient norm ending the final rank stage
  double stage_tol_factor = 10.0;  // intermediate stages stop at grad_tol * this
  double stall_tol = 1e-13;    // relative decrease over 10 iterations ending a stage
  int max_iter = 5000;         // per rank stage
  double rank_tol = 1e-6;      // delta_rank
  double smoothing_floor = 4.0;  // smooth_trace: sigma_r below this many eps counts as zero
  double init_scale = 1e-3;    // new columns ~ U[-1,1] * init_scale * rms(targets)
  std::uint64_t seed = 0;
  bool center = true;          // subtract the training mean (squared loss only)
  bool record_history = false;
  bool compute_gap = true;     // fill SolveReport::duality_gap when the penalty allows it

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ParameterError("lambda must be finite and >= 0");
    if (initial_rank < 1 || max_rank < initial_rank) throw ParameterError("need 1 <= initial_rank <= max_rank");
    if (!(grad_tol > 0.0) || !(rank_tol > 0.0) || !(stall_tol > 0.0)) throw ParameterError("tolerances must be positive");
    if (max_iter < 1) throw ParameterError("max_iter must be positive");
    if (!(stage_tol_factor >= 1.0)) throw ParameterError("stage_tol_factor must be >= 1");
  }
};

struct SolveReport {
  double objective = 0.0;
  int final_rank = 0;           // factor width when the rank schedule stopped
  std::vector<int> stage_iterations;
  std::optional<double> duality_gap;
  double seconds = 0.0;
  bool rank_deficient = false;  // terminated on a rank-deficient local minimum
  bool hit_max_rank = false;    // warning: stopped at the rank cap
  int ascent_steps = 0;         // accepted steps that increased the objective (always 0)
  std::vector<double> history;  // objective after each accepted step, when recorded
  std::vector<double> block_trace_norms;
  std::vector<int> block_ranks;  // rank of each returned block after dropping negligible singular values
};

struct SolveResult {
  OperatorModel model;
  SolveReport report;
};

/// Solver-facing view of one kernel pair.
struct KernelPair {
  FactorPtr x;
  FactorPtr y;
};

namespace detail {

struct FactorPair {
  Matrix u;
  Matrix v;
};

struct CoreSvd {
  Matrix p;      // m_X x r, orthonormal
  Vector sigma;  // descending
  Matrix q;      // m_Y x r, orthonormal
};

inline Matrix thin_q(const Matrix& a, Matrix* r) {
  Eigen::HouseholderQR<Matrix> qr(a);
  const Eigen::Index k = a.cols();
  *r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  return qr.householderQ() * Matrix::Identity(a.rows(), k);
}

/// SVD of U V^T through thin QR of both factors and an r x r core SVD.
inline CoreSvd core_svd(const Matrix& u, const Matrix& v) {
  if (u.cols() == 0) return {Matrix(u.rows(), 0), Vector(), Matrix(v.rows(), 0)};
  Matrix ru, rv;
  const Matrix qu = thin_q(u, &ru);
  const Matrix qv = thin_q(v, &rv);
  Eigen::JacobiSVD<Matrix> svd(ru * rv.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  return {qu * svd.matrixU(), svd.singularValues(), qv * svd.matrixV()};
}

inline Vector singular_values(const Matrix& a) {
  if (a.size() == 0) return Vector();
  return Eigen::BDCSVD<Matrix>(a).singularValues();
}

inline double penalty_of(const PenaltySpec& p, const Vector& sigma) {
  return penalty_eval(p, Spectrum::from(sigma));
}

inline double rms(const Vector& t) { return t.size() ? std::sqrt(t.squaredNorm() / double(t.size())) : 0.0; }

inline LossSpec loss_spec(LossKind k, double t) {
  return k == LossKind::squared ? LossSpec::squared(t) : LossSpec{LossKind::logistic, t};
}

/// Loss-derivative matrix X^T S Y with S_{a(i) b(i)} = g_i, without forming S.
inline Matrix weighted_cross(const RatingsDataset& d, const Vector& g, const GramFactor& x, const GramFactor& y) {
  Matrix rx = Matrix::Zero(x.n(), y.m());
  for (std::size_t i = 0; i < d.size(); ++i) rx.row(d[i].user) += g(Eigen::Index(i)) * y.row(d[i].object);
  return x.apply_transpose(rx);
}

enum class FactorPenalty { spectral, column_product };

/// sum_i psi_i(sum_k (X_k U_k V_k^T Y_k^T)_{a(i) b(i)}) / N + lambda * sum_k Omega_k.
class FactoredObjective {
 public:
  FactoredObjective(const RatingsDataset& d, const Vector& targets, std::vector<KernelPair> blocks,
                    LossKind loss, double lambda, PenaltySpec penalty, FactorPenalty kind)
      : data_(d), targets_(targets), blocks_(std::move(blocks)), loss_(loss), lambda_(lambda),
        penalty_(penalty), kind_(kind) {
    if (kind_ == FactorPenalty::spectral && !penalty_.is_smooth())
      throw UnsupportedPenaltyError("gradient needs a smooth penalty, got " + to_string(penalty_.kind));
  }

  const std::vector<KernelPair>& blocks() const { return blocks_; }

  /// psi'(v_i) / N at the current factors.
  Vector loss_weights(const std::vector<FactorPair>& p) const {
    Vector pred = Vector::Zero(Eigen::Index(data_.size()));
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
      if (p[k].u.cols() == 0) continue;
      const Matrix xu = blocks_[k].x->apply(p[k].u);
      const Matrix yv = blocks_[k].y->apply(p[k].v);
      for (std::size_t i = 0; i < data_.size(); ++i)
        pred(Eigen::Index(i)) += xu.row(data_[i].user).dot(yv.row(data_[i].object));
    }
    Vector g(pred.size());
    for (Eigen::Index i = 0; i < g.size(); ++i)
      g(i) = loss_grad(loss_spec(loss_, targets_(i)), pred(i)) / double(data_.size());
    return g;
  }

  double value(const std::vector<FactorPair>& p, std::vector<FactorPair>* grad) const {
    const std::size_t n_obs = data_.size();
    const double inv_n = 1.0 / double(n_obs);
    Vector pred = Vector::Zero(Eigen::Index(n_obs));
    std::vector<Matrix> xu(blocks_.size()), yv(blocks_.size());
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
      xu[k] = blocks_[k].x->apply(p[k].u);
      yv[k] = blocks_[k].y->apply(p[k].v);
      for (std::size_t i = 0; i < n_obs; ++i)
        pred(Eigen::Index(i)) += xu[k].row(data_[i].user).dot(yv[k].row(data_[i].object));
    }
    double loss = 0.0;
    Vector g(grad ? Eigen::Index(n_obs) : 0);
    for (std::size_t i = 0; i < n_obs; ++i) {
      const LossSpec ls = loss_spec(loss_, targets_(Eigen::Index(i)));
      loss += loss_eval(ls, pred(Eigen::Index(i)));
      if (grad) g(Eigen::Index(i)) = loss_grad(ls, pred(Eigen::Index(i))) * inv_n;
    }
    double pen = 0.0;
    if (grad) grad->resize(blocks_.size());
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
      const Matrix& u = p[k].u;
      const Matrix& v = p[k].v;
      std::optional<CoreSvd> cs;
      if (kind_ == FactorPenalty::spectral) {
        cs = core_svd(u, v);
        for (Eigen::Index j = 0; j < cs->sigma.size(); ++j) pen += scalar_penalty(penalty_, cs->sigma(j));
      } else {
        for (Eigen::Index j = 0; j < u.cols(); ++j) pen += u.col(j).squaredNorm() * v.col(j).squaredNorm();
      }
      if (!grad) continue;
      Matrix rx = Matrix::Zero(blocks_[k].x->n(), u.cols());
      Matrix ry = Matrix::Zero(blocks_[k].y->n(), v.cols());
      for (std::size_t i = 0; i < n_obs; ++i) {
        const double gi = g(Eigen::Index(i));
        rx.row(data_[i].user) += gi * yv[k].row(data_[i].object);
        ry.row(data_[i].object) += gi * xu[k].row(data_[i].user);
      }
      FactorPair& out = (*grad)[k];
      out.u = blocks_[k].x->apply_transpose(rx);
      out.v = blocks_[k].y->apply_transpose(ry);
      if (lambda_ == 0.0) continue;
      if (kind_ == FactorPenalty::spectral) {
        Vector d(cs->sigma.size());
        for (Eigen::Index j = 0; j < d.size(); ++j) d(j) = scalar_penalty_deriv(penalty_, cs->sigma(j));
        // grad Omega(W) = P diag(s') Q^T
        out.u += lambda_ * (cs->p * (d.asDiagonal() * (cs->q.transpose() * v)));
        out.v += lambda_ * (cs->q * (d.asDiagonal() * (cs->p.transpose() * u)));
      } else {
        for (Eigen::Index j = 0; j < u.cols(); ++j) {
          out.u.col(j) += 2.0 * lambda_ * v.col(j).squaredNorm() * u.col(j);
          out.v.col(j) += 2.0 * lambda_ * u.col(j).squaredNorm() * v.col(j);
        }
      }
    }
    return loss * inv_n + lambda_ * pen;
  }

 private:
  const RatingsDataset& data_;
  const Vector& targets_;
  std::vector<KernelPair> blocks_;
  LossKind loss_;
  double lambda_;
  PenaltySpec penalty_;
  FactorPenalty kind_;
};

inline double dot(const std::vector<FactorPair>& a, const std::vector<FactorPair>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    s += (a[k].u.array() * b[k].u.array()).sum() + (a[k].v.array() * b[k].v.array()).sum();
  return s;
}

inline void axpy(double alpha, const std::vector<FactorPair>& x, std::vector<FactorPair>& y) {
  for (std::size_t k = 0; k < x.size(); ++k) {
    y[k].u += alpha * x[k].u;
    y[k].v += alpha * x[k].v;
  }
}

}  // namespace detail

inline double duality_gap(const std::vector<Matrix>& alphas, const std::vector<KernelPair>& blocks, const RatingsDataset& d,
                          const Vector& targets, const PenaltySpec& penalty, double lambda, LossKind loss);

namespace detail {

struct DescentStats {
  int iterations = 0;
  int ascent_steps = 0;
};

/// Gradient descent with Barzilai-Borwein trial steps and Armijo backtracking
/// (factor 0.5, slope 1e-4). Every accepted step decreases the objective.
inline DescentStats descend(const FactoredObjective& obj, std::vector<FactorPair>& x, double& f,
                            const SolveConfig& cfg, std::vector<double>* history) {
  DescentStats st;
  std::vector<FactorPair> g;
  f = obj.value(x, &g);
  if (!std::isfinite(f)) throw NumericalFailure("objective is not finite at the starting point");
  double gg = dot(g, g);
  double step = 1.0 / std::max(1.0, std::sqrt(gg));
  std::vector<double> recent{f};
  std::vector<FactorPair> x_new, g_new;
  while (st.iterations < cfg.max_iter) {
    if (std::sqrt(gg) <= cfg.grad_tol) break;
    double t = step;
    double f_new = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      x_new = x;
      axpy(-t, g, x_new);
      f_new = obj.value(x_new, nullptr);
      if (std::isfinite(f_new) && f_new <= f - 1e-4 * t * gg) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;  // no decrease representable along -g
    obj.value(x_new, &g_new);
    if (!std::isfinite(f_new)) throw NumericalFailure("objective diverged during descent");
    if (f_new > f) ++st.ascent_steps;
    // BB1 step from the accepted move
    double sy = 0.0, ss = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      ss += (x_new[k].u - x[k].u).squaredNorm() + (x_new[k].v - x[k].v).squaredNorm();
      sy += ((x_new[k].u - x[k].u).array() * (g_new[k].u - g[k].u).array()).sum() +
            ((x_new[k].v - x[k].v).array() * (g_new[k].v - g[k].v).array()).sum();
    }
    step = sy > 0.0 ? std::clamp(ss / sy, 1e-12, 1e12) : std::min(2.0 * t, 1e12);
    x.swap(x_new);
    g.swap(g_new);
    gg = dot(g, g);
    f = f_new;
    ++st.iterations;
    if (history) history->push_back(f);
    recent.push_back(f);
    if (recent.size() > 11) recent.erase(recent.begin());
    if (recent.size() == 11 && recent.front() - f <= cfg.stall_tol * std::max(std::abs(f), 1e-300)) break;
  }
  return st;
}

inline Matrix random_columns(Eigen::Index rows, Eigen::Index cols, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * unif(rng);
  return m;
}

inline Matrix append_column(const Matrix& m, const Matrix& col) {
  Matrix out(m.rows(), m.cols() + 1);
  out.leftCols(m.cols()) = m;
  out.col(m.cols()) = col;
  return out;
}

/// Singular values of W below this count as zero. Smooth-trace values inside
/// the smoothing region are included.
inline double zero_threshold(const Vector& sigma, const SolveConfig& cfg, double data_scale) {
  double threshold = cfg.rank_tol * std::max(sigma.size() ? sigma(0) : 0.0, data_scale);
  if (cfg.penalty.kind == PenaltyKind::smooth_trace)
    threshold = std::max(threshold, cfg.smoothing_floor * cfg.penalty.epsilon);
  return threshold;
}

inline bool rank_deficient(const FactorPair& p, const SolveConfig& cfg, double data_scale) {
  const Vector s = core_svd(p.u, p.v).sigma;
  return s(s.size() - 1) < zero_threshold(s, cfg, data_scale);
}

/// Balanced factors of W with the negligible singular values removed.
inline FactorPair truncate(const FactorPair& p, const SolveConfig& cfg, double data_scale) {
  const CoreSvd cs = core_svd(p.u, p.v);
  const double threshold = zero_threshold(cs.sigma, cfg, data_scale);
  Eigen::Index keep = 0;
  while (keep < cs.sigma.size() && cs.sigma(keep) >= threshold) ++keep;
  const Vector root = cs.sigma.head(keep).cwiseSqrt();
  return {cs.p.leftCols(keep) * root.asDiagonal(), cs.q.leftCols(keep) * root.asDiagonal()};
}

/// Top `count` singular pairs of M by subspace iteration.
inline CoreSvd top_singular(const Matrix& m, Eigen::Index count, std::mt19937_64& rng) {
  count = std::min<Eigen::Index>(count, std::min(m.rows(), m.cols()));
  if (std::min(m.rows(), m.cols()) <= 64) {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return {svd.matrixU().leftCols(count), svd.singularValues().head(count), svd.matrixV().leftCols(count)};
  }
  std::normal_distribution<double> normal;
  const Eigen::Index width = count + 4;
  Matrix q(m.cols(), width);
  for (Eigen::Index j = 0; j < width; ++j)
    for (Eigen::Index i = 0; i < q.rows(); ++i) q(i, j) = normal(rng);
  Matrix r;
  for (int it = 0; it < 40; ++it) {
    const Matrix left = thin_q(m * q, &r);
    q = thin_q(m.transpose() * left, &r);
  }
  const Matrix left = thin_q(m * q, &r);
  Eigen::JacobiSVD<Matrix> svd(left.transpose() * m * q, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return {left * svd.matrixU().leftCols(count), svd.singularValues().head(count), q * svd.matrixV().leftCols(count)};
}

/// New factor columns for block k along the steepest rank-one descent
/// directions of the loss, each scaled by a curvature step, plus a small
/// random perturbation of size `jitter`.
inline FactorPair greedy_columns(const RatingsDataset& d, const Vector& g, const KernelPair& block,
                                 Eigen::Index count, double jitter, std::mt19937_64& rng) {
  const Matrix m = weighted_cross(d, g, *block.x, *block.y);
  const CoreSvd top = top_singular(m, count, rng);
  FactorPair out{random_columns(block.x->m(), count, jitter, rng), random_columns(block.y->m(), count, jitter, rng)};
  for (Eigen::Index j = 0; j < top.sigma.size(); ++j) {
    const Vector xp = block.x->apply(top.p.col(j));
    const Vector yq = block.y->apply(top.q.col(j));
    double curv = 0.0;
    for (const auto& o : d) curv += std::pow(xp(o.user) * yq(o.object), 2);
    curv /= double(d.size());
    if (!(top.sigma(j) > 0.0) || !(curv > 0.0)) continue;
    const double root = std::sqrt(top.sigma(j) / curv);
    out.u.col(j) -= root * top.p.col(j);
    out.v.col(j) += root * top.q.col(j);
  }
  return out;
}

struct MultiSolve {
  std::vector<FactorPair> factors;
  SolveReport report;
};

/// Rank-escalating descent over one or more kernel pairs sharing the loss.
inline MultiSolve solve_blocks(const RatingsDataset& d, const Vector& targets, const std::vector<KernelPair>& blocks,
                               const SolveConfig& cfg, const std::vector<FactorPair>* warm) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  FactoredObjective obj(d, targets, blocks, cfg.loss, cfg.lambda, cfg.penalty, FactorPenalty::spectral);
  std::mt19937_64 rng(cfg.seed);
  const double scale = std::max(rms(targets), 1e-12);
  const double init = cfg.init_scale * scale;

  std::vector<int> cap(blocks.size());
  std::vector<FactorPair> x(blocks.size());
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    int c = std::min<int>(cfg.max_rank, int(std::min(blocks[k].x->m(), blocks[k].y->m())));
    if (cfg.penalty.has_rank_cap()) c = std::min(c, cfg.penalty.rank);
    cap[k] = c;
    if (warm && k < warm->size() && (*warm)[k].u.cols() >= 1 && (*warm)[k].u.cols() <= c && (*warm)[k].u.rows() == blocks[k].x->m() &&
        (*warm)[k].v.rows() == blocks[k].y->m()) {
      x[k] = (*warm)[k];
    } else {
      x[k].u = Matrix(blocks[k].x->m(), 0);
      x[k].v = Matrix(blocks[k].y->m(), 0);
    }
  }
  {
    const Vector g = obj.loss_weights(x);
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      if (x[k].u.cols() > 0) continue;
      x[k] = greedy_columns(d, g, blocks[k], std::min(cfg.initial_rank, cap[k]), init, rng);
    }
  }

  MultiSolve out;
  double f = 0.0;
  // Intermediate stages stop at a looser gradient norm; a stage that looks
  // final is polished at grad_tol before the rank test is trusted.
  SolveConfig loose = cfg;
  loose.grad_tol = cfg.grad_tol * cfg.stage_tol_factor;
  bool polishing = cfg.stage_tol_factor <= 1.0;
  bool new_stage = true;
  while (true) {
    auto st = descend(obj, x, f, polishing ? cfg : loose, cfg.record_history ? &out.report.history : nullptr);
    if (new_stage) {
      out.report.stage_iterations.push_back(st.iterations);
    } else {
      out.report.stage_iterations.back() += st.iterations;
    }
    out.report.ascent_steps += st.ascent_steps;
    std::vector<std::size_t> grow;
    bool all_deficient = true;
    bool any_capped = false;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      if (rank_deficient(x[k], cfg, scale)) continue;
      all_deficient = false;
      if (x[k].u.cols() >= cap[k]) {
        any_capped = true;
      } else {
        grow.push_back(k);
      }
    }
    if (grow.empty()) {
      if (!polishing) {
        polishing = true;
        new_stage = false;
        continue;
      }
      out.report.rank_deficient = all_deficient;
      out.report.hit_max_rank = any_capped;
      break;
    }
    const Vector g = obj.loss_weights(x);
    for (std::size_t k : grow) {
      const FactorPair extra = greedy_columns(d, g, blocks[k], 1, init, rng);
      x[k].u = append_column(x[k].u, extra.u);
      x[k].v = append_column(x[k].v, extra.v);
    }
    // shrink the new columns until the objective does not rise; a column that
    // cannot help is zeroed, which the next rank test reads as deficiency
    for (int bt = 0; obj.value(x, nullptr) > f; ++bt) {
      for (std::size_t k : grow) {
        x[k].u.rightCols(1) *= bt < 40 ? 0.5 : 0.0;
        x[k].v.rightCols(1) *= bt < 40 ? 0.5 : 0.0;
      }
      if (bt >= 40) break;
    }
    polishing = cfg.stage_tol_factor <= 1.0;
    new_stage = true;
  }
  for (const auto& p : x) out.report.final_rank = std::max(out.report.final_rank, int(p.u.cols()));
  if (out.report.rank_deficient) {
    for (auto& p : x) p = truncate(p, cfg, scale);
    f = obj.value(x, nullptr);
  }
  out.report.objective = f;
  for (const auto& p : x) {
    out.report.block_ranks.push_back(int(p.u.cols()));
    out.report.block_trace_norms.push_back(p.u.cols() ? core_svd(p.u, p.v).sigma.sum() : 0.0);
  }
  const PenaltyKind pk = cfg.penalty.kind;
  if (cfg.compute_gap && cfg.lambda > 0.0 &&
      (pk == PenaltyKind::trace || pk == PenaltyKind::frobenius || pk == PenaltyKind::smooth_trace)) {
    std::vector<Matrix> alphas;
    for (const auto& p : x) alphas.push_back(p.u * p.v.transpose());
    out.report.duality_gap = duality_gap(alphas, blocks, d, targets, cfg.penalty, cfg.lambda, cfg.loss);
  }
  out.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.factors = std::move(x);
  return out;
}

inline Vector training_targets(const RatingsDataset& d, LossKind loss, bool center, double* mean) {
  Vector t = d.ratings();
  *mean = (center && loss == LossKind::squared) ? t.mean() : 0.0;
  return t.array() - *mean;
}


inline Vector predictions(const RatingsDataset& d, const std::vector<KernelPair>& blocks, const std::vector<Matrix>& a) {
  Vector p = Vector::Zero(Eigen::Index(d.size()));
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const Matrix xa = blocks[k].x->apply(a[k]);
    for (std::size_t i = 0; i < d.size(); ++i)
      p(Eigen::Index(i)) += xa.row(d[i].user).dot(blocks[k].y->row(d[i].object));
  }
  return p;
}

/// Largest eigenvalue of A^T A for the map A: {alpha_k} -> predictions, by power iteration.
inline double design_norm_sq(const RatingsDataset& d, const std::vector<KernelPair>& blocks) {
  std::vector<Matrix> a(blocks.size());
  for (std::size_t k = 0; k < blocks.size(); ++k) a[k] = Matrix::Ones(blocks[k].x->m(), blocks[k].y->m());
  double est = 0.0;
  for (int it = 0; it < 500; ++it) {
    const Vector p = predictions(d, blocks, a);
    double nrm = 0.0;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      a[k] = weighted_cross(d, p, *blocks[k].x, *blocks[k].y);
      nrm += a[k].squaredNorm();
    }
    nrm = std::sqrt(nrm);
    if (nrm == 0.0) return 0.0;
    for (auto& m : a) m /= nrm;
    if (std::abs(nrm - est) <= 1e-12 * nrm) return nrm;
    est = nrm;
  }
  return est;
}

}  // namespace detail

/// (1/N) sum psi_i((X alpha Y^T)_{a(i) b(i)}) + lambda Omega(alpha), no centering.
inline double objective(const Matrix& alpha, const RatingsDataset& d, const GramFactor& xf, const GramFactor& yf,
                        const SolveConfig& cfg) {
  if (alpha.rows() != xf.m() || alpha.cols() != yf.m()) throw DimensionError("objective: alpha shape mismatch");
  const Matrix xa = xf.apply(alpha);
  double loss = 0.0;
  for (const auto& o : d) loss += loss_eval(detail::loss_spec(cfg.loss, o.rating), xa.row(o.user).dot(yf.row(o.object)));
  const double pen = cfg.lambda == 0.0 ? 0.0 : detail::penalty_of(cfg.penalty, detail::singular_values(alpha));
  return loss / double(d.size()) + cfg.lambda * pen;
}

/// Same objective for factored coefficients alpha = U V^T.
inline double objective(const Matrix& u, const Matrix& v, const RatingsDataset& d, const GramFactor& xf,
                        const GramFactor& yf, const SolveConfig& cfg) {
  if (u.rows() != xf.m() || v.rows() != yf.m() || u.cols() != v.cols())
    throw DimensionError("objective: factor shape mismatch");
  const Matrix xu = xf.apply(u);
  const Matrix yv = yf.apply(v);
  double loss = 0.0;
  for (const auto& o : d) loss += loss_eval(detail::loss_spec(cfg.loss, o.rating), xu.row(o.user).dot(yv.row(o.object)));
  const double pen = cfg.lambda == 0.0 ? 0.0 : detail::penalty_of(cfg.penalty, detail::core_svd(u, v).sigma);
  return loss / double(d.size()) + cfg.lambda * pen;
}

/// Gradient of the factored objective with respect to (U, V).
inline std::pair<Matrix, Matrix> gradient(const Matrix& u, const Matrix& v, const RatingsDataset& d,
                                          const FactorPtr& xf, const FactorPtr& yf, const SolveConfig& cfg) {
  if (u.rows() != xf->m() || v.rows() != yf->m() || u.cols() != v.cols())
    throw DimensionError("gradient: factor shape mismatch");
  const Vector t = d.ratings();
  detail::FactoredObjective obj(d, t, {{xf, yf}}, cfg.loss, cfg.lambda, cfg.penalty, detail::FactorPenalty::spectral);
  std::vector<detail::FactorPair> g;
  obj.value({{u, v}}, &g);
  return {g[0].u, g[0].v};
}

/// Largest lambda for which alpha = 0 is optimal under the trace norm
/// (spectral norm of the loss gradient at zero), after centering.
inline double lambda_max(const RatingsDataset& d, const std::vector<KernelPair>& blocks, LossKind loss = LossKind::squared,
                         bool center = true) {
  double mean = 0.0;
  const Vector t = detail::training_targets(d, loss, center, &mean);
  Vector g(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i) g(i) = loss_grad(detail::loss_spec(loss, t(i)), 0.0) / double(t.size());
  double best = 0.0;
  for (const auto& b : blocks) {
    const Vector s = detail::singular_values(detail::weighted_cross(d, g, *b.x, *b.y));
    if (s.size()) best = std::max(best, s(0));
  }
  return best;
}

/// Low-rank solve with rank escalation for a smooth spectral penalty.
inline SolveResult solve_lowrank(const RatingsDataset& d, const FactorPtr& xf, const FactorPtr& yf,
                                 const SolveConfig& cfg, const OperatorModel* warm_start = nullptr) {
  double mean = 0.0;
  const Vector t = detail::training_targets(d, cfg.loss, cfg.center, &mean);
  std::vector<detail::FactorPair> warm;
  if (warm_start && warm_start->is_factored()) warm.push_back({warm_start->u(), warm_start->v()});
  auto res = detail::solve_blocks(d, t, {{xf, yf}}, cfg, warm.empty() ? nullptr : &warm);
  return {OperatorModel(xf, yf, std::move(res.factors[0].u), std::move(res.factors[0].v), mean), res.report};
}

struct FrobOptions {
  int restarts = 5;
  std::uint64_t seed = 0;
  double grad_tol = 1e-6;
  double stall_tol = 1e-13;
  int max_iter = 5000;
  double init_scale = 0.1;
  bool center = true;
  LossKind loss = LossKind::squared;
};

/// Fixed-rank factorization with the column-product penalty
/// lambda * sum_k ||U(:,k)||^2 ||V(:,k)||^2; best of several random restarts.
inline SolveResult solve_frob_lowrank(const RatingsDataset& d, const FactorPtr& xf, const FactorPtr& yf, int rank,
                                      double lambda, const FrobOptions& opts = {}) {
  if (rank < 1 || rank > std::min(xf->m(), yf->m())) throw ParameterError("rank must lie in [1, min(m_X, m_Y)]");
  if (!(lambda >= 0.0)) throw ParameterError("lambda must be >= 0");
  if (opts.restarts < 1) throw ParameterError("need at least one restart");
  const auto t0 = std::chrono::steady_clock::now();
  double mean = 0.0;
  const Vector t = detail::training_targets(d, opts.loss, opts.center, &mean);
  detail::FactoredObjective obj(d, t, {{xf, yf}}, opts.loss, lambda, PenaltySpec::frobenius(),
                                detail::FactorPenalty::column_product);
  SolveConfig cfg;
  cfg.grad_tol = opts.grad_tol;
  cfg.stall_tol = opts.stall_tol;
  cfg.max_iter = opts.max_iter;
  // restart scale: sqrt of the target rms so that U V^T starts at rating scale
  const double init = opts.init_scale * std::sqrt(std::max(detail::rms(t), 1e-12));
  std::optional<detail::FactorPair> best;
  SolveReport report;
  report.objective = std::numeric_limits<double>::infinity();
  for (int r = 0; r < opts.restarts; ++r) {
    std::mt19937_64 rng(opts.seed + std::uint64_t(r));
    std::vector<detail::FactorPair> x{{detail::random_columns(xf->m(), rank, init, rng),
                                       detail::random_columns(yf->m(), rank, init, rng)}};
    double f = 0.0;
    auto st = detail::descend(obj, x, f, cfg, nullptr);
    report.stage_iterations.push_back(st.iterations);
    report.ascent_steps += st.ascent_steps;
    if (f < report.objective) {
      report.objective = f;
      best = x[0];
    }
  }
  report.final_rank = rank;
  report.block_ranks = {rank};
  report.block_trace_norms = {detail::core_svd(best->u, best->v).sigma.sum()};
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {OperatorModel(xf, yf, std::move(best->u), std::move(best->v), mean), report};
}

/// Primal minus dual objective for coefficients {alpha_k} over kernel pairs,
/// targets already centered. The dual candidate is beta_i = psi'(v_i)/N,
/// rescaled into the dual-norm ball for trace-type penalties.
inline double duality_gap(const std::vector<Matrix>& alphas, const std::vector<KernelPair>& blocks,
                          const RatingsDataset& d, const Vector& targets, const PenaltySpec& penalty, double lambda,
                          LossKind loss = LossKind::squared) {
  if (penalty.kind != PenaltyKind::trace && penalty.kind != PenaltyKind::frobenius &&
      penalty.kind != PenaltyKind::smooth_trace)
    throw UnsupportedPenaltyError("duality gap needs a convex penalty with known conjugate, got " +
                                  to_string(penalty.kind));
  if (!(lambda > 0.0)) throw ParameterError("duality gap needs lambda > 0");
  if (alphas.size() != blocks.size()) throw DimensionError("one coefficient matrix per kernel pair");
  const double n = double(d.size());
  Vector pred = Vector::Zero(Eigen::Index(d.size()));
  double pen = 0.0;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const Matrix xa = blocks[k].x->apply(alphas[k]);
    for (std::size_t i = 0; i < d.size(); ++i)
      pred(Eigen::Index(i)) += xa.row(d[i].user).dot(blocks[k].y->row(d[i].object));
    pen += detail::penalty_of(penalty, detail::singular_values(alphas[k]));
  }
  double loss_sum = 0.0;
  Vector beta(pred.size());
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const LossSpec ls = detail::loss_spec(loss, targets(i));
    loss_sum += loss_eval(ls, pred(i));
    beta(i) = loss_grad(ls, pred(i)) / n;
  }
  const double primal = loss_sum / n + lambda * pen;

  std::vector<Vector> cross_sv(blocks.size());
  double top = 0.0;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    cross_sv[k] = detail::singular_values(detail::weighted_cross(d, beta, *blocks[k].x, *blocks[k].y));
    if (cross_sv[k].size()) top = std::max(top, cross_sv[k](0));
  }
  double shrink = 1.0;
  if (penalty.kind != PenaltyKind::frobenius && top > lambda) shrink = lambda / top;
  double dual = 0.0;
  for (Eigen::Index i = 0; i < beta.size(); ++i)
    dual -= loss_conjugate(detail::loss_spec(loss, targets(i)), n * shrink * beta(i)) / n;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    double conj = 0.0;
    for (Eigen::Index j = 0; j < cross_sv[k].size(); ++j) {
      double tau = cross_sv[k](j) * shrink / lambda;
      if (penalty.kind != PenaltyKind::frobenius) tau = std::min(tau, 1.0);  // rounding after the rescale
      conj += scalar_penalty_conjugate(penalty, tau);
    }
    dual -= lambda * conj;
  }
  return primal - dual;
}

/// Gap of a trained model on the data it was fit to (targets centered by the model mean).
inline double duality_gap(const OperatorModel& m, const RatingsDataset& d, const SolveConfig& cfg) {
  const Vector t = d.ratings().array() - m.mean();
  return duality_gap({m.alpha()}, {{m.xfactor_ptr(), m.yfactor_ptr()}}, d, t, cfg.penalty, cfg.lambda, cfg.loss);
}

}  // namespace scf
