#pragma once

// Parameter views shared by the alignment model and the decoder: first-order
// optimizers, learning-rate schedules and a finite-difference gradient check.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "textmidi/random.hpp"

namespace textmidi {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

// Row-sparse gradient of an embedding table.
struct SparseRows {
  std::map<Index, RowVectorXd> rows;

  void add(Index r, const RowVectorXd& g) {
    auto [it, inserted] = rows.try_emplace(r, g);
    if (!inserted) it->second += g;
  }
  void scale(double s) {
    for (auto& [r, g] : rows) g *= s;
  }
  double squared_norm() const {
    double n = 0.0;
    for (const auto& [r, g] : rows) n += g.squaredNorm();
    return n;
  }
  MatrixXd dense(Index n_rows, Index n_cols) const {
    MatrixXd out = MatrixXd::Zero(n_rows, n_cols);
    for (const auto& [r, g] : rows) out.row(r) = g;
    return out;
  }
};

// A named parameter tensor stored column-major, as Eigen stores it.
struct ParamRef {
  std::string name;
  double* data;
  Index rows;
  Index cols;

  Index size() const { return rows * cols; }
};

// Gradient for one ParamRef: either dense (same layout) or row-sparse.
struct GradRef {
  const double* dense = nullptr;
  const SparseRows* sparse = nullptr;
};

inline ParamRef param_ref(std::string name, MatrixXd& m) { return {std::move(name), m.data(), m.rows(), m.cols()}; }
inline ParamRef param_ref(std::string name, double& x) { return {std::move(name), &x, 1, 1}; }

enum class Scheduler { Constant, Cosine };
enum class OptimizerKind { Sgd, Adam };

inline std::string to_string(Scheduler s) { return s == Scheduler::Cosine ? "cosine" : "constant"; }
inline std::string to_string(OptimizerKind o) { return o == OptimizerKind::Adam ? "adam" : "sgd"; }

inline Scheduler parse_scheduler(const std::string& s) {
  if (s == "cosine") return Scheduler::Cosine;
  if (s == "constant") return Scheduler::Constant;
  throw std::invalid_argument("unknown scheduler '" + s + "'");
}
inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

// lr(step) = lr_min + (lr_max - lr_min)(1 + cos(pi step / total)) / 2.
inline double scheduled_lr(Scheduler s, double lr_max, double lr_min, long step, long total_steps) {
  if (s == Scheduler::Constant || total_steps <= 0) return lr_max;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

inline double grad_norm(const std::vector<ParamRef>& params, const std::vector<GradRef>& grads) {
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].sparse) {
      sq += grads[i].sparse->squared_norm();
    } else if (grads[i].dense) {
      for (Index k = 0; k < params[i].size(); ++k) sq += grads[i].dense[k] * grads[i].dense[k];
    }
  }
  return std::sqrt(sq);
}

// SGD or Adam over a fixed list of tensors. Sparse gradients touch only their
// rows; for Adam the untouched rows keep their moments (lazy update).
class Optimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Optimizer(OptimizerKind kind = OptimizerKind::Sgd) : kind_(kind) {}

  OptimizerKind kind() const { return kind_; }

  void step(const std::vector<ParamRef>& params, const std::vector<GradRef>& grads, double lr) {
    if (params.size() != grads.size()) throw std::invalid_argument("optimizer: parameter/gradient count mismatch");
    if (kind_ == OptimizerKind::Adam && m_.empty()) {
      for (const ParamRef& p : params) {
        m_.push_back(VectorXd::Zero(p.size()));
        v_.push_back(VectorXd::Zero(p.size()));
      }
    }
    ++t_;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const ParamRef& p = params[i];
      if (grads[i].sparse) {
        for (const auto& [r, g] : grads[i].sparse->rows) {
          for (Index c = 0; c < p.cols; ++c) update(i, r + c * p.rows, g[c], p.data, lr);
        }
      } else if (grads[i].dense) {
        for (Index k = 0; k < p.size(); ++k) update(i, k, grads[i].dense[k], p.data, lr);
      }
    }
  }

 private:
  void update(std::size_t tensor, Index k, double g, double* data, double lr) {
    if (kind_ == OptimizerKind::Sgd) {
      data[k] -= lr * g;
      return;
    }
    double& m = m_[tensor][k];
    double& v = v_[tensor][k];
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g * g;
    const double mh = m / (1.0 - std::pow(kBeta1, static_cast<double>(t_)));
    const double vh = v / (1.0 - std::pow(kBeta2, static_cast<double>(t_)));
    data[k] -= lr * mh / (std::sqrt(vh) + kEps);
  }

  OptimizerKind kind_;
  long t_ = 0;
  std::vector<VectorXd> m_;
  std::vector<VectorXd> v_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckEntry {
  std::string tensor;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> tensors;
  double max_rel_error = 0.0;

  bool passed(double tolerance = 1e-4) const { return max_rel_error < tolerance; }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Central differences on up to `samples` entries per tensor. Sparse tensors
// are sampled from their touched rows only; every other row has an exact zero
// analytic gradient and no path to the loss.
inline GradCheckReport finite_difference_check(const std::vector<ParamRef>& params, const std::vector<GradRef>& grads,
                                               const std::function<double()>& loss, double h, std::size_t samples,
                                               Rng& rng) {
  if (!(h >= 1e-6 && h <= 1e-3)) throw std::invalid_argument("grad_check: h must lie in [1e-6, 1e-3]");
  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamRef& p = params[i];
    std::vector<Index> candidates;
    if (grads[i].sparse) {
      for (const auto& [r, g] : grads[i].sparse->rows) {
        for (Index c = 0; c < p.cols; ++c) candidates.push_back(r + c * p.rows);
      }
    } else {
      candidates.resize(static_cast<std::size_t>(p.size()));
      for (Index k = 0; k < p.size(); ++k) candidates[static_cast<std::size_t>(k)] = k;
    }
    if (candidates.size() > samples) {
      shuffle(std::span<Index>(candidates), rng);
      candidates.resize(samples);
    }
    GradCheckEntry entry{p.name, candidates.size(), 0.0};
    for (Index k : candidates) {
      double analytic = 0.0;
      if (grads[i].sparse) {
        const auto it = grads[i].sparse->rows.find(k % p.rows);
        if (it != grads[i].sparse->rows.end()) analytic = it->second[k / p.rows];
      } else if (grads[i].dense) {
        analytic = grads[i].dense[k];
      }
      const double saved = p.data[k];
      p.data[k] = saved + h;
      const double up = loss();
      p.data[k] = saved - h;
      const double down = loss();
      p.data[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic, numeric));
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.tensors.push_back(std::move(entry));
  }
  return report;
}

}  // namespace textmidi
