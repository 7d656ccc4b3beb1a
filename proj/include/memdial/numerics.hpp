#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace memdial {

inline void check_logits_finite(std::span<const double> logits) {
  for (double z : logits) {
    if (!std::isfinite(z)) throw std::invalid_argument("non-finite logit");
  }
}

/// Temperature-sharpened softmax, softmax(z / tau), computed with
/// max-subtraction. tau = 1 is plain softmax.
inline std::vector<double> softmax_temp(std::span<const double> logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be > 0");
  if (logits.empty()) throw std::invalid_argument("empty logits");
  check_logits_finite(logits);

  double m = -std::numeric_limits<double>::infinity();
  for (double z : logits) m = std::max(m, z / tau);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] / tau - m);
    sum += p[i];
  }
  double inv = 1.0 / sum;
  for (double& v : p) v *= inv;
  return p;
}

/// log softmax(z / tau) in direct logsumexp form (never log(softmax)).
inline std::vector<double> log_softmax_temp(std::span<const double> logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be > 0");
  if (logits.empty()) throw std::invalid_argument("empty logits");
  check_logits_finite(logits);

  double m = -std::numeric_limits<double>::infinity();
  for (double z : logits) m = std::max(m, z / tau);
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z / tau - m);
  double lse = m + std::log(sum);
  std::vector<double> lp(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) lp[i] = logits[i] / tau - lse;
  return lp;
}

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
/// `f` is evaluated at point +- step*e_i; non-finite values abort.
inline double grad_check(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> point,
                         std::span<const double> analytic_grad,
                         double step) {
  if (point.size() != analytic_grad.size()) {
    throw std::invalid_argument("grad_check: point/gradient size mismatch");
  }
  if (!(step >= 1e-6 && step <= 1e-3)) {
    throw std::invalid_argument("grad_check: step must be in [1e-6, 1e-3]");
  }
  std::vector<double> x(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double x0 = x[i];
    x[i] = x0 + step;
    double fp = f(x);
    x[i] = x0 - step;
    double fm = f(x);
    x[i] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("grad_check: non-finite function value");
    }
    double numeric = (fp - fm) / (2.0 * step);
    double denom = std::max(1.0, std::abs(analytic_grad[i]));
    worst = std::max(worst, std::abs(analytic_grad[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace memdial
