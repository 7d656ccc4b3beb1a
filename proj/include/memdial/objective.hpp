#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "memdial/numerics.hpp"
#include "memdial/tensor.hpp"

namespace memdial {

enum class DialMode { dial, single_temperature };

inline std::string to_string(DialMode m) {
  return m == DialMode::dial ? "dial" : "single_temperature";
}

inline DialMode dial_mode_from_string(const std::string& s) {
  if (s == "dial") return DialMode::dial;
  if (s == "single_temperature" || s == "single-temperature") return DialMode::single_temperature;
  throw std::invalid_argument("unknown mode: " + s);
}

/// The experiment's independent variable: interpolation coefficient alpha,
/// sharpening temperature tau, and the single-temperature baseline switch.
struct DialConfig {
  double alpha = 0.0;
  double tau = 0.1;
  DialMode mode = DialMode::dial;
  double tau_eff = 1.0;  // only read in single_temperature mode

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("DialConfig: alpha not in [0,1]");
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("DialConfig: tau not in (0,1]");
    if (mode == DialMode::single_temperature && !(tau_eff > 0.0 && tau_eff <= 1.0)) {
      throw std::invalid_argument("DialConfig: tau_eff not in (0,1]");
    }
  }
};

/// Per-batch loss decomposition. `combined` always equals
/// (1-alpha)*std_loss + alpha*mem_loss by construction.
struct LossBreakdown {
  double std_loss = 0.0;
  double mem_loss = 0.0;
  double combined = 0.0;
  long token_count = 0;
};

namespace detail {

inline void check_batch(const Tensor& logits, std::span<const int> targets) {
  if (logits.shape.size() != 2) throw std::invalid_argument("loss: logits must be [T x V]");
  if (static_cast<int>(targets.size()) != logits.rows()) {
    throw std::invalid_argument("loss: logits/targets length mismatch");
  }
  if (targets.empty()) throw std::invalid_argument("loss: empty batch");
  for (int y : targets) {
    if (y < 0 || y >= logits.cols()) throw std::invalid_argument("loss: target id out of range");
  }
}

/// Mean over positions of -log softmax(z_t / tau)[y_t].
inline double mean_nll(const Tensor& logits, std::span<const int> targets, double tau) {
  check_batch(logits, targets);
  KahanSum acc;
  for (int t = 0; t < logits.rows(); ++t) {
    std::vector<double> lp = log_softmax_temp(logits.row(t), tau);
    acc.add(-lp[static_cast<std::size_t>(targets[t])]);
  }
  return acc.value() / static_cast<double>(targets.size());
}

}  // namespace detail

/// Standard LM objective: mean NLL per token at tau = 1.
inline double std_loss(const Tensor& logits, std::span<const int> targets) {
  return detail::mean_nll(logits, targets, 1.0);
}

/// Sharpened objective: mean NLL per token under softmax(z/tau).
inline double mem_loss(const Tensor& logits, std::span<const int> targets, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("mem_loss: tau not in (0,1]");
  return detail::mean_nll(logits, targets, tau);
}

/// Convex combination of the standard and sharpened objectives. In
/// single_temperature mode the whole loss is one tau_eff-scaled
/// cross-entropy; std/mem/combined all report that value.
inline LossBreakdown dial_loss(const Tensor& logits, std::span<const int> targets,
                               const DialConfig& cfg) {
  cfg.validate();
  LossBreakdown out;
  out.token_count = static_cast<long>(targets.size());
  if (cfg.mode == DialMode::single_temperature) {
    const double v = detail::mean_nll(logits, targets, cfg.tau_eff);
    out.std_loss = v;
    out.mem_loss = v;
    out.combined = v;
    return out;
  }
  out.std_loss = std_loss(logits, targets);
  out.mem_loss = mem_loss(logits, targets, cfg.tau);
  out.combined = (1.0 - cfg.alpha) * out.std_loss + cfg.alpha * out.mem_loss;
  return out;
}

/// Analytic gradient of the per-position dial loss w.r.t. the logits:
///   (1-alpha) * (p - onehot(y)) + (alpha/tau) * (p_tau - onehot(y))
/// In single_temperature mode: (1/tau_eff) * (p_tau_eff - onehot(y)).
/// Entries sum to zero.
inline std::vector<double> dial_grad_logits(std::span<const double> logits, int target,
                                            const DialConfig& cfg) {
  cfg.validate();
  if (target < 0 || target >= static_cast<int>(logits.size())) {
    throw std::invalid_argument("dial_grad_logits: target out of range");
  }
  if (cfg.mode == DialMode::single_temperature) {
    std::vector<double> p = softmax_temp(logits, cfg.tau_eff);
    std::vector<double> g(logits.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double ind = (static_cast<int>(i) == target) ? 1.0 : 0.0;
      g[i] = (p[i] - ind) / cfg.tau_eff;
    }
    return g;
  }
  std::vector<double> p = softmax_temp(logits, 1.0);
  std::vector<double> pt = softmax_temp(logits, cfg.tau);
  std::vector<double> g(logits.size());
  const double w_std = 1.0 - cfg.alpha;
  const double w_mem = cfg.alpha / cfg.tau;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double ind = (static_cast<int>(i) == target) ? 1.0 : 0.0;
    g[i] = w_std * (p[i] - ind) + w_mem * (pt[i] - ind);
  }
  return g;
}

}  // namespace memdial
