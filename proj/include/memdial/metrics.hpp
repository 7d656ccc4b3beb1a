#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "memdial/data.hpp"
#include "memdial/numerics.hpp"
#include "memdial/rng.hpp"
#include "memdial/tensor.hpp"

#include <json.hpp>

namespace memdial {

/// All metrics consume a scorer rather than a concrete network: given a
/// token sequence, return nll[t] = -log p(seq[t] | seq[<t]) for t >= 1
/// (index 0 is the conditioning start, usually BOS). Pure and thread-safe.
using NllFn = std::function<std::vector<double>(const std::vector<int>&)>;

struct EvalSplit {
  std::string name;  // "seen" or "unseen"
  std::vector<BenchmarkItem> items;
};

/// Deterministic index-parallel map; results are written by index, so the
/// outcome is independent of thread count.
template <typename Fn>
inline void parallel_for(int n, int jobs, Fn&& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  for (int w = 0; w < jobs; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Multiple choice
// ---------------------------------------------------------------------------

struct ChoiceScore {
  double mean_choice_nll = 0.0;  // mean NLL per choice token, given the prompt
  double full_nll_sum = 0.0;     // summed NLL over the whole prompt+choice stream
  long full_token_count = 0;
};

struct ItemEval {
  bool correct = false;
  int chosen = -1;
  double confidence = 0.0;  // softmax over choices of -mean_choice_nll, at argmin
  double gold_suffix_nll = 0.0;  // summed NLL over the gold choice tokens
  std::vector<ChoiceScore> choices;
};

inline ItemEval evaluate_item(const NllFn& nll_fn, const BenchmarkItem& item, int context_len) {
  item.validate();
  ItemEval ev;
  const int prompt_len = static_cast<int>(item.prompt_tokens().size());
  for (std::size_t c = 0; c < item.choices.size(); ++c) {
    const std::vector<int> seq = item.full_tokens(static_cast<int>(c));
    if (static_cast<int>(seq.size()) > context_len + 1) {
      throw std::invalid_argument("mc_accuracy: choice longer than context");
    }
    const std::vector<double> nll = nll_fn(seq);
    ChoiceScore cs;
    KahanSum full;
    for (double v : nll) full.add(v);
    cs.full_nll_sum = full.value();
    cs.full_token_count = static_cast<long>(nll.size());
    // choice tokens are positions prompt_len .. prompt_len+|choice|-1;
    // nll[i] corresponds to position i+1.
    const int n_choice = static_cast<int>(item.choices[c].size());
    KahanSum part;
    for (int p = prompt_len; p < prompt_len + n_choice; ++p) part.add(nll[static_cast<std::size_t>(p - 1)]);
    cs.mean_choice_nll = part.value() / n_choice;
    ev.choices.push_back(cs);
  }

  // argmin with strict-minimum rule: ties count as incorrect.
  int best = 0;
  for (std::size_t c = 1; c < ev.choices.size(); ++c) {
    if (ev.choices[c].mean_choice_nll < ev.choices[best].mean_choice_nll) best = static_cast<int>(c);
  }
  bool strict = true;
  for (std::size_t c = 0; c < ev.choices.size(); ++c) {
    if (static_cast<int>(c) != best &&
        !(ev.choices[best].mean_choice_nll < ev.choices[c].mean_choice_nll)) {
      strict = false;
    }
  }
  ev.chosen = best;
  ev.correct = strict && best == item.gold_index;

  // Confidence: renormalized probability of the chosen option.
  std::vector<double> scores;
  for (const ChoiceScore& cs : ev.choices) scores.push_back(-cs.mean_choice_nll);
  std::vector<double> probs = softmax_temp(scores, 1.0);
  ev.confidence = probs[static_cast<std::size_t>(best)];

  ev.gold_suffix_nll = ev.choices[static_cast<std::size_t>(item.gold_index)].mean_choice_nll *
                       static_cast<double>(item.choices[static_cast<std::size_t>(item.gold_index)].size());
  return ev;
}

inline std::vector<ItemEval> evaluate_items(const NllFn& nll_fn,
                                            const std::vector<BenchmarkItem>& items,
                                            int context_len, int jobs = 1) {
  std::vector<ItemEval> out(items.size());
  std::exception_ptr err;
  std::mutex err_mu;
  parallel_for(static_cast<int>(items.size()), jobs, [&](int i) {
    try {
      out[static_cast<std::size_t>(i)] =
          evaluate_item(nll_fn, items[static_cast<std::size_t>(i)], context_len);
    } catch (...) {
      std::lock_guard<std::mutex> lock(err_mu);
      if (!err) err = std::current_exception();
    }
  });
  if (err) std::rethrow_exception(err);
  return out;
}

/// Fraction of items whose gold choice has the strictly minimal
/// length-normalized continuation NLL.
inline double mc_accuracy(const NllFn& nll_fn, const EvalSplit& split, int context_len,
                          int jobs = 1) {
  if (split.items.empty()) throw std::invalid_argument("mc_accuracy: empty split");
  std::vector<ItemEval> evals = evaluate_items(nll_fn, split.items, context_len, jobs);
  long correct = 0;
  for (const ItemEval& e : evals) correct += e.correct ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(evals.size());
}

// ---------------------------------------------------------------------------
// Scalar metrics
// ---------------------------------------------------------------------------

/// Ordinary least squares slope of accuracy over alpha.
inline double fit_slope(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw std::invalid_argument("fit_slope: need >= 2 points");
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(points.size());
  my /= static_cast<double>(points.size());
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [x, y] : points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_slope: all alpha values equal");
  return sxy / sxx;
}

/// Token-level perplexity of a sequence set: exp(mean NLL over all tokens).
inline double token_perplexity(const NllFn& nll_fn, const std::vector<std::vector<int>>& seqs) {
  if (seqs.empty()) throw std::invalid_argument("token_perplexity: empty set");
  KahanSum acc;
  long count = 0;
  for (const auto& seq : seqs) {
    for (double v : nll_fn(seq)) {
      acc.add(v);
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("token_perplexity: no scored tokens");
  return std::exp(acc.value() / static_cast<double>(count));
}

/// PPL_unseen - PPL_seen; smaller gap reads as stronger memorization.
inline double ppl_gap(const NllFn& nll_fn, const std::vector<std::vector<int>>& seen,
                      const std::vector<std::vector<int>>& unseen) {
  return token_perplexity(nll_fn, unseen) - token_perplexity(nll_fn, seen);
}

/// Summed NLL of seq[prefix_len .. prefix_len+suffix_len) given the true
/// prefix (sum, not mean).
inline double suffix_nll(const NllFn& nll_fn, const std::vector<int>& seq, int prefix_len = 32,
                         int suffix_len = 16) {
  if (prefix_len < 1 || suffix_len < 1) throw std::invalid_argument("suffix_nll: bad lengths");
  if (static_cast<int>(seq.size()) < prefix_len + suffix_len) {
    throw std::invalid_argument("suffix_nll: sequence shorter than prefix+suffix");
  }
  const std::vector<double> nll = nll_fn(seq);
  KahanSum acc;
  for (int p = prefix_len; p < prefix_len + suffix_len; ++p) {
    acc.add(nll[static_cast<std::size_t>(p - 1)]);
  }
  return acc.value();
}

/// Mean pairwise |A∩B| / |A∪B| over token sets (duplicates collapsed); a
/// pair of empty sets counts as similarity 1.
inline double jaccard_self_similarity(const std::vector<std::vector<int>>& samples) {
  if (samples.size() < 2) throw std::invalid_argument("jaccard_self_similarity: need >= 2 samples");
  std::vector<std::set<int>> sets;
  for (const auto& s : samples) sets.emplace_back(s.begin(), s.end());
  double acc = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (std::size_t j = i + 1; j < sets.size(); ++j) {
      std::vector<int> inter;
      std::set_intersection(sets[i].begin(), sets[i].end(), sets[j].begin(), sets[j].end(),
                            std::back_inserter(inter));
      const std::size_t uni = sets[i].size() + sets[j].size() - inter.size();
      acc += (uni == 0) ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni);
      ++pairs;
    }
  }
  return acc / static_cast<double>(pairs);
}

/// Expected calibration error with equal-width bins; empty bins contribute 0.
inline double ece(const std::vector<double>& confidences, const std::vector<bool>& correctness,
                  int n_bins = 10) {
  if (confidences.size() != correctness.size()) throw std::invalid_argument("ece: length mismatch");
  if (confidences.empty()) throw std::invalid_argument("ece: empty input");
  if (n_bins < 1) throw std::invalid_argument("ece: n_bins < 1");
  for (double c : confidences) {
    if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("ece: confidence outside [0,1]");
  }
  std::vector<double> conf_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> acc_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<long> count(static_cast<std::size_t>(n_bins), 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    int b = static_cast<int>(confidences[i] * n_bins);
    if (b == n_bins) b = n_bins - 1;  // confidence exactly 1.0
    conf_sum[static_cast<std::size_t>(b)] += confidences[i];
    acc_sum[static_cast<std::size_t>(b)] += correctness[i] ? 1.0 : 0.0;
    count[static_cast<std::size_t>(b)] += 1;
  }
  const double n = static_cast<double>(confidences.size());
  double out = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    if (count[static_cast<std::size_t>(b)] == 0) continue;
    const double w = static_cast<double>(count[static_cast<std::size_t>(b)]) / n;
    const double mean_conf = conf_sum[static_cast<std::size_t>(b)] / count[static_cast<std::size_t>(b)];
    const double mean_acc = acc_sum[static_cast<std::size_t>(b)] / count[static_cast<std::size_t>(b)];
    out += w * std::abs(mean_acc - mean_conf);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Robustness under input perturbation
// ---------------------------------------------------------------------------

/// Deterministic seeded character noise on prompts: at each position, with
/// 5% probability either swap with the next character or drop it.
inline EvalSplit perturb_split(const EvalSplit& clean, std::uint64_t seed) {
  EvalSplit out;
  out.name = clean.name + "_perturbed";
  for (std::size_t i = 0; i < clean.items.size(); ++i) {
    BenchmarkItem it = clean.items[i];
    Rng rng(mix64(seed, mix64(hash_str64("perturb"), i)));
    std::string s = it.prompt;
    std::string result;
    for (std::size_t p = 0; p < s.size(); ++p) {
      if (rng.bernoulli(0.05)) {
        if (rng.bernoulli(0.5) && p + 1 < s.size()) {
          result.push_back(s[p + 1]);
          result.push_back(s[p]);
          ++p;
        }
        // else: drop the character
      } else {
        result.push_back(s[p]);
      }
    }
    if (result.empty()) result = s;  // keep degenerate prompts non-empty
    it.prompt = result;
    out.items.push_back(std::move(it));
  }
  return out;
}

struct RobustScore {
  double clean_acc = 0.0;
  double noisy_acc = 0.0;
  double robust = 0.0;  // arithmetic mean of the two
};

inline RobustScore robust_score(const NllFn& nll_fn, const EvalSplit& clean,
                                const EvalSplit& perturbed, int context_len, int jobs = 1) {
  if (clean.items.size() != perturbed.items.size()) {
    throw std::invalid_argument("robust_score: split size mismatch");
  }
  RobustScore r;
  r.clean_acc = mc_accuracy(nll_fn, clean, context_len, jobs);
  r.noisy_acc = mc_accuracy(nll_fn, perturbed, context_len, jobs);
  r.robust = 0.5 * (r.clean_acc + r.noisy_acc);
  return r;
}

// ---------------------------------------------------------------------------
// MetricReport: (metric, dial point) -> seed aggregate
// ---------------------------------------------------------------------------

struct MetricRow {
  std::string metric;
  std::string mode;     // dial | single_temperature
  double alpha = 0.0;   // dial coordinate (tau_eff in single_temperature mode)
  double tau = 0.0;
  int seed_count = 0;
  double mean = 0.0;
  double stddev = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  void add(const std::string& metric, const std::string& mode, double alpha, double tau,
           const std::vector<double>& per_seed) {
    MetricRow r;
    r.metric = metric;
    r.mode = mode;
    r.alpha = alpha;
    r.tau = tau;
    r.seed_count = static_cast<int>(per_seed.size());
    double m = 0.0;
    for (double v : per_seed) m += v;
    m /= static_cast<double>(per_seed.size());
    double var = 0.0;
    for (double v : per_seed) var += (v - m) * (v - m);
    r.mean = m;
    r.stddev = per_seed.size() > 1 ? std::sqrt(var / static_cast<double>(per_seed.size() - 1)) : 0.0;
    rows.push_back(r);
  }

  Json to_json() const {
    Json arr = Json::array();
    for (const MetricRow& r : rows) {
      arr.push_back(Json{{"metric", r.metric},
                         {"mode", r.mode},
                         {"alpha", r.alpha},
                         {"tau", r.tau},
                         {"seed_count", r.seed_count},
                         {"mean", r.mean},
                         {"stddev", r.stddev}});
    }
    return arr;
  }

  /// Column order is fixed: metric,mode,alpha,tau,seed_count,mean,stddev
  std::string to_csv() const {
    std::string out = "metric,mode,alpha,tau,seed_count,mean,stddev\n";
    char buf[256];
    for (const MetricRow& r : rows) {
      std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g,%d,%.17g,%.17g\n", r.metric.c_str(),
                    r.mode.c_str(), r.alpha, r.tau, r.seed_count, r.mean, r.stddev);
      out += buf;
    }
    return out;
  }
};

}  // namespace memdial
