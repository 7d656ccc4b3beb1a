#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memdial/model.hpp"
#include "memdial/numerics.hpp"
#include "memdial/objective.hpp"
#include "memdial/trainer.hpp"

namespace memdial {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_case;
  int cases = 0;
};

/// Analytic dial gradient vs central finite differences of the dial loss,
/// over randomized (logits, target, alpha, tau) cases including tau = 0.05.
inline GradCheckReport objective_gradcheck(int trials, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("objective_gradcheck: trials < 1");
  static const double kAlphas[] = {0.0, 0.3, 0.6, 1.0};
  static const double kTaus[] = {0.05, 0.1, 0.2, 0.5, 1.0};
  Rng rng(mix64(seed, hash_str64("objective_gradcheck")));
  GradCheckReport rep;
  for (int trial = 0; trial < trials; ++trial) {
    const int n = 4 + rng.below_int(13);  // 4..16 classes
    std::vector<double> logits(static_cast<std::size_t>(n));
    for (double& z : logits) z = rng.normal(0.0, 2.0);
    const int target = rng.below_int(n);
    DialConfig cfg;
    cfg.alpha = kAlphas[trial % 4];
    cfg.tau = kTaus[(trial / 4) % 5];

    std::vector<double> analytic = dial_grad_logits(logits, target, cfg);
    auto f = [&](std::span<const double> z) {
      Tensor t({1, n}, std::vector<double>(z.begin(), z.end()));
      const int targets[1] = {target};
      return dial_loss(t, targets, cfg).combined;
    };
    const double err = grad_check(f, logits, analytic, 1e-5);
    if (err > rep.max_rel_err) {
      rep.max_rel_err = err;
      char buf[160];
      std::snprintf(buf, sizeof(buf), "trial=%d n=%d target=%d alpha=%g tau=%g err=%.3g", trial, n,
                    target, cfg.alpha, cfg.tau, err);
      rep.worst_case = buf;
    }
    ++rep.cases;
  }
  return rep;
}

/// End-to-end check: d(dial_loss ∘ forward)/d(theta) from the tape against
/// central differences on randomly chosen scalar parameters.
inline GradCheckReport model_gradcheck(int n_params, std::uint64_t seed,
                                       ModelConfig mcfg = ModelConfig{259, 64, 2, 2, 32, 7},
                                       DialConfig dial = DialConfig{0.6, 0.1, DialMode::dial, 1.0}) {
  if (n_params < 1) throw std::invalid_argument("model_gradcheck: n_params < 1");
  mcfg.seed = seed;
  Parameters params = init_params(mcfg);
  const Parameters layout = make_param_layout(mcfg);

  Rng rng(mix64(seed, hash_str64("model_gradcheck")));
  std::vector<int> seq;
  seq.push_back(tok::kBos);
  for (int i = 0; i < 12; ++i) seq.push_back(rng.below_int(256));
  seq.push_back(tok::kEos);

  Batch batch;
  batch.sequences.push_back(seq);

  std::vector<Tensor> grads;
  for (const Tensor& t : params.tensors) grads.push_back(Tensor::zeros(t.shape));
  detail_train::batch_forward_backward(mcfg, params, layout, dial, batch, grads);

  auto loss_at = [&](const Parameters& p) {
    std::vector<int> inputs(seq.begin(), seq.end() - 1);
    std::vector<int> targets(seq.begin() + 1, seq.end());
    Tensor logits = forward(mcfg, p, inputs);
    return dial_loss(logits, targets, dial).combined;
  };

  GradCheckReport rep;
  const double h = 1e-5;
  for (int k = 0; k < n_params; ++k) {
    const int ti = rng.below_int(static_cast<int>(params.tensors.size()));
    const int ei = rng.below_int(static_cast<int>(params.tensors[static_cast<std::size_t>(ti)].numel()));
    Parameters probe = params;
    double& x = probe.tensors[static_cast<std::size_t>(ti)].data[static_cast<std::size_t>(ei)];
    const double x0 = x;
    x = x0 + h;
    const double fp = loss_at(probe);
    x = x0 - h;
    const double fm = loss_at(probe);
    x = x0;
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = grads[static_cast<std::size_t>(ti)].data[static_cast<std::size_t>(ei)];
    const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
    if (err > rep.max_rel_err) {
      rep.max_rel_err = err;
      char buf[160];
      std::snprintf(buf, sizeof(buf), "tensor=%s elem=%d err=%.3g",
                    params.names[static_cast<std::size_t>(ti)].c_str(), ei, err);
      rep.worst_case = buf;
    }
    ++rep.cases;
  }
  return rep;
}

}  // namespace memdial
