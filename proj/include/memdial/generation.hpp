#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <vector>

#include "memdial/hash.hpp"
#include "memdial/numerics.hpp"
#include "memdial/rng.hpp"

namespace memdial {

/// Next-token logits for a (non-empty) token prefix. Pure.
using LogitsFn = std::function<std::vector<double>(const std::vector<int>&)>;

struct SampleConfig {
  double top_p = 0.95;
  double temperature = 0.8;
  int max_new_tokens = 16;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("SampleConfig: top_p not in (0,1]");
    if (!(temperature > 0.0)) throw std::invalid_argument("SampleConfig: temperature must be > 0");
    if (max_new_tokens < 1) throw std::invalid_argument("SampleConfig: max_new_tokens < 1");
  }
};

namespace detail_gen {

/// Keep the window inside the context: drop tokens from the left, warn once.
inline std::vector<int> context_window(const std::vector<int>& tokens, int context_len,
                                       bool* warned) {
  if (static_cast<int>(tokens.size()) <= context_len) return tokens;
  if (warned && !*warned) {
    std::cerr << "[memdial] warning: context overflow, truncating from the left\n";
    *warned = true;
  }
  return std::vector<int>(tokens.end() - context_len, tokens.end());
}

}  // namespace detail_gen

/// Appends argmax tokens; ties break toward the lowest token id.
inline std::vector<int> greedy_decode(const LogitsFn& logits_fn, const std::vector<int>& prompt,
                                      int max_new_tokens, int context_len) {
  if (prompt.empty()) throw std::invalid_argument("greedy_decode: empty prompt");
  if (max_new_tokens < 0) throw std::invalid_argument("greedy_decode: negative max_new_tokens");
  std::vector<int> out = prompt;
  bool warned = false;
  for (int i = 0; i < max_new_tokens; ++i) {
    const std::vector<double> z = logits_fn(detail_gen::context_window(out, context_len, &warned));
    int best = 0;
    for (std::size_t j = 1; j < z.size(); ++j) {
      if (z[j] > z[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
    }
    out.push_back(best);
  }
  return out;
}

namespace detail_gen {

/// One nucleus draw: temperature first, then top-p truncation. The nucleus
/// always contains the argmax; tokens tied with the boundary probability are
/// all included before renormalizing.
inline int nucleus_step(const std::vector<double>& logits, double top_p, double temperature,
                        Rng& rng) {
  std::vector<double> scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
  const std::vector<double> p = softmax_temp(scaled, 1.0);

  std::vector<int> order(p.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (p[static_cast<std::size_t>(a)] != p[static_cast<std::size_t>(b)]) {
      return p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(b)];
    }
    return a < b;  // deterministic under probability ties
  });

  std::size_t keep = 0;
  double mass = 0.0;
  while (keep < order.size()) {
    mass += p[static_cast<std::size_t>(order[keep])];
    ++keep;
    if (mass >= top_p) break;
  }
  // include any tokens tied with the boundary probability
  const double boundary = p[static_cast<std::size_t>(order[keep - 1])];
  while (keep < order.size() && p[static_cast<std::size_t>(order[keep])] == boundary) ++keep;

  double total = 0.0;
  for (std::size_t i = 0; i < keep; ++i) total += p[static_cast<std::size_t>(order[i])];
  double u = rng.uniform() * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    cum += p[static_cast<std::size_t>(order[i])];
    if (u < cum) return order[i];
  }
  return order[keep - 1];
}

}  // namespace detail_gen

/// Nucleus sampling, deterministic per (config.seed, prompt, sample_index):
/// each call owns an independent PRNG stream.
inline std::vector<int> nucleus_sample(const LogitsFn& logits_fn, const std::vector<int>& prompt,
                                       const SampleConfig& cfg, int context_len,
                                       int sample_index = 0) {
  cfg.validate();
  if (prompt.empty()) throw std::invalid_argument("nucleus_sample: empty prompt");
  Fnv64 ph;
  ph.update_ints(prompt);
  Rng rng(mix64(cfg.seed, mix64(ph.digest(), static_cast<std::uint64_t>(sample_index))));
  std::vector<int> out = prompt;
  bool warned = false;
  for (int i = 0; i < cfg.max_new_tokens; ++i) {
    const std::vector<double> z = logits_fn(detail_gen::context_window(out, context_len, &warned));
    out.push_back(detail_gen::nucleus_step(z, cfg.top_p, cfg.temperature, rng));
  }
  return out;
}

}  // namespace memdial
