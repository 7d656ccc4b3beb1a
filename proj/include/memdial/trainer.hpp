#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "memdial/checkpoint.hpp"
#include "memdial/config_json.hpp"
#include "memdial/data.hpp"
#include "memdial/generation.hpp"
#include "memdial/metrics.hpp"
#include "memdial/model.hpp"
#include "memdial/objective.hpp"

namespace memdial {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// TrainConfig (shared across a sweep; only DialConfig varies)
// ---------------------------------------------------------------------------

enum class DecayShape { linear, constant };

inline std::string to_string(DecayShape d) { return d == DecayShape::linear ? "linear" : "constant"; }

inline DecayShape decay_from_string(const std::string& s) {
  if (s == "linear") return DecayShape::linear;
  if (s == "constant") return DecayShape::constant;
  throw std::invalid_argument("unknown post_warmup shape: " + s);
}

struct TrainConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int warmup_steps = 200;
  int total_steps = 449;
  double clip_norm = 1.0;
  int batch_base = 8;
  int batch_leak = 8;
  std::uint64_t seed = 1;
  DecayShape post_warmup = DecayShape::linear;
  int eval_every = 25;
  // Base-corpus warm start before the dial phase: plain cross-entropy, no
  // injection, bit-identical across the dial grid within a seed. The desk
  // analogue of starting continued pretraining from a trained state.
  int pretrain_steps = 0;
  double pretrain_lr = 1e-3;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (!(clip_norm > 0.0)) throw std::invalid_argument("TrainConfig: clip_norm must be > 0");
    if (warmup_steps < 0 || total_steps < 0 || warmup_steps > total_steps) {
      throw std::invalid_argument("TrainConfig: need 0 <= warmup_steps <= total_steps");
    }
    if (batch_base < 1 || batch_leak < 1) throw std::invalid_argument("TrainConfig: bad batch size");
    if (eval_every < 1) throw std::invalid_argument("TrainConfig: eval_every < 1");
    if (pretrain_steps < 0 || !(pretrain_lr > 0.0)) {
      throw std::invalid_argument("TrainConfig: bad pretrain settings");
    }
  }

  Json to_json() const {
    return Json{{"lr", lr},
                {"beta1", beta1},
                {"beta2", beta2},
                {"eps", eps},
                {"weight_decay", weight_decay},
                {"warmup_steps", warmup_steps},
                {"total_steps", total_steps},
                {"clip_norm", clip_norm},
                {"batch_base", batch_base},
                {"batch_leak", batch_leak},
                {"seed", seed},
                {"post_warmup", to_string(post_warmup)},
                {"eval_every", eval_every},
                {"pretrain_steps", pretrain_steps},
                {"pretrain_lr", pretrain_lr}};
  }

  static TrainConfig from_json(const Json& j) {
    TrainConfig c;
    c.lr = j.value("lr", 5e-5);
    c.beta1 = j.value("beta1", 0.9);
    c.beta2 = j.value("beta2", 0.999);
    c.eps = j.value("eps", 1e-8);
    c.weight_decay = j.value("weight_decay", 0.01);
    c.warmup_steps = j.value("warmup_steps", 200);
    c.total_steps = j.value("total_steps", 449);
    c.clip_norm = j.value("clip_norm", 1.0);
    c.batch_base = j.value("batch_base", 8);
    c.batch_leak = j.value("batch_leak", 8);
    c.seed = j.value("seed", std::uint64_t{1});
    c.post_warmup = decay_from_string(j.value("post_warmup", std::string("linear")));
    c.eval_every = j.value("eval_every", 25);
    c.pretrain_steps = j.value("pretrain_steps", 0);
    c.pretrain_lr = j.value("pretrain_lr", 1e-3);
    return c;
  }
};

/// Linear warmup 0 -> lr over warmup_steps, then decay to 0 at total_steps
/// (or hold, with post_warmup = constant).
inline double lr_at(int step, const TrainConfig& cfg) {
  cfg.validate();
  if (step < 0 || step > cfg.total_steps) throw std::invalid_argument("lr_at: step out of range");
  if (step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.post_warmup == DecayShape::constant) return cfg.lr;
  const int denom = cfg.total_steps - cfg.warmup_steps;
  if (denom == 0) return step == cfg.total_steps ? 0.0 : cfg.lr;
  return cfg.lr * static_cast<double>(cfg.total_steps - step) / static_cast<double>(denom);
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay
// ---------------------------------------------------------------------------

class AdamW {
 public:
  explicit AdamW(const Parameters& params) {
    for (const Tensor& t : params.tensors) {
      m_.push_back(Tensor::zeros(t.shape));
      v_.push_back(Tensor::zeros(t.shape));
    }
  }

  /// One update with bias-corrected moments:
  ///   p -= lr * (mhat / (sqrt(vhat) + eps) + weight_decay * p)
  void step(Parameters& params, const std::vector<Tensor>& grads, double lr,
            const TrainConfig& cfg) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
      double* p = params.tensors[i].data.data();
      const double* g = grads[i].data.data();
      double* m = m_[i].data.data();
      double* v = v_[i].data.data();
      const std::size_t n = params.tensors[i].data.size();
      for (std::size_t k = 0; k < n; ++k) {
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
        const double mhat = m[k] / bc1;
        const double vhat = v[k] / bc2;
        p[k] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p[k]);
      }
    }
  }

  long updates() const { return t_; }

 private:
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

inline double global_grad_norm(const std::vector<Tensor>& grads) {
  double acc = 0.0;
  for (const Tensor& g : grads) {
    for (double v : g.data) acc += v * v;
  }
  return std::sqrt(acc);
}

inline void clip_gradients(std::vector<Tensor>& grads, double clip_norm, double norm) {
  if (norm <= clip_norm || norm == 0.0) return;
  const double s = clip_norm / norm;
  for (Tensor& g : grads) {
    for (double& v : g.data) v *= s;
  }
}

// ---------------------------------------------------------------------------
// Eval adapter over a concrete parameter set
// ---------------------------------------------------------------------------

struct EvalModel {
  const ModelConfig* cfg;
  const Parameters* params;

  /// nll[t-1] = -log p(seq[t] | seq[<t])
  std::vector<double> nll(const std::vector<int>& seq) const {
    if (seq.size() < 2) throw std::invalid_argument("EvalModel::nll: sequence too short");
    std::vector<int> inputs(seq.begin(), seq.end() - 1);
    Tensor logits = forward(*cfg, *params, inputs);
    std::vector<double> out(seq.size() - 1);
    for (std::size_t t = 1; t < seq.size(); ++t) {
      std::vector<double> lp = log_softmax_temp(logits.row(static_cast<int>(t - 1)), 1.0);
      out[t - 1] = -lp[static_cast<std::size_t>(seq[t])];
    }
    return out;
  }

  std::vector<double> last_logits(const std::vector<int>& prefix) const {
    Tensor logits = forward(*cfg, *params, prefix);
    auto row = logits.row(logits.rows() - 1);
    return std::vector<double>(row.begin(), row.end());
  }

  NllFn nll_fn() const {
    return [*this](const std::vector<int>& seq) { return nll(seq); };
  }
  LogitsFn logits_fn() const {
    return [*this](const std::vector<int>& prefix) { return last_logits(prefix); };
  }
};

/// Mean NLL per token over a sequence set (evaluation-only forward passes).
inline double eval_loss(const EvalModel& m, const std::vector<std::vector<int>>& seqs) {
  KahanSum acc;
  long count = 0;
  for (const auto& seq : seqs) {
    for (double v : m.nll(seq)) {
      acc.add(v);
      ++count;
    }
  }
  return acc.value() / static_cast<double>(count);
}

/// eval_loss that reports NaN instead of throwing once activations have
/// gone non-finite (diagnostic records of aborted runs).
inline double safe_eval_loss(const EvalModel& m, const std::vector<std::vector<int>>& seqs) {
  try {
    return eval_loss(m, seqs);
  } catch (const std::exception&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

// ---------------------------------------------------------------------------
// RunRecord
// ---------------------------------------------------------------------------

struct StepRecord {
  int step = 0;
  double combined = 0.0;  // training loss at the most recent update
  double std_loss = 0.0;
  double mem_loss = 0.0;
  double seen_eval = 0.0;
  double unseen_eval = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;  // pre-clip global norm
};

struct RunRecord {
  std::string run_id;
  ModelConfig model;
  DialConfig dial;
  TrainConfig train;
  std::string data_hash;
  std::string schedule_digest;
  std::string train_config_hash;  // model+train only; identical across a family
  std::vector<StepRecord> steps;
  std::map<std::string, double> final_metrics;
  double wall_clock_train_s = 0.0;
  double wall_clock_total_s = 0.0;
  std::string status = "ok";  // ok | failed_nonfinite
  int fail_step = -1;

  bool complete() const { return status == "ok"; }
};

inline std::string make_run_id(const DialConfig& dial, std::uint64_t seed) {
  char buf[128];
  if (dial.mode == DialMode::single_temperature) {
    std::snprintf(buf, sizeof(buf), "stemp_te%g_s%llu", dial.tau_eff,
                  static_cast<unsigned long long>(seed));
  } else {
    std::snprintf(buf, sizeof(buf), "dial_a%g_s%llu", dial.alpha,
                  static_cast<unsigned long long>(seed));
  }
  return buf;
}

inline std::string train_config_hash(const ModelConfig& m, const TrainConfig& t) {
  Fnv64 f;
  f.update(to_json(m).dump());
  Json tj = t.to_json();
  tj.erase("seed");  // family hash: seed varies within the family on purpose
  f.update(tj.dump());
  return f.hex();
}

// JSONL: header record first, one step record per line, final record last.
inline void append_line(std::ofstream& out, const Json& j) {
  out << j.dump() << "\n";
  out.flush();
}

inline Json step_to_json(const StepRecord& s) {
  auto num = [](double v) -> Json { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  return Json{{"type", "step"},       {"step", s.step},
              {"combined", num(s.combined)}, {"std", num(s.std_loss)},
              {"mem", num(s.mem_loss)},      {"seen_eval", num(s.seen_eval)},
              {"unseen_eval", num(s.unseen_eval)}, {"lr", s.lr},
              {"grad_norm", num(s.grad_norm)}};
}

inline RunRecord load_run_record(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_run_record: cannot read " + path);
  RunRecord r;
  std::string line;
  bool has_header = false, has_final = false;
  auto num = [](const Json& j, const char* key) {
    return j.at(key).is_null() ? std::numeric_limits<double>::quiet_NaN()
                               : j.at(key).get<double>();
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json j = Json::parse(line);
    const std::string type = j.value("type", "");
    if (type == "header") {
      r.run_id = j.value("run_id", "");
      r.model = model_config_from_json(j.at("model"));
      r.dial = dial_config_from_json(j.at("dial"));
      r.train = TrainConfig::from_json(j.at("train"));
      r.data_hash = j.value("data_hash", "");
      r.schedule_digest = j.value("schedule_digest", "");
      r.train_config_hash = j.value("train_config_hash", "");
      has_header = true;
    } else if (type == "step") {
      StepRecord s;
      s.step = j.at("step").get<int>();
      s.combined = num(j, "combined");
      s.std_loss = num(j, "std");
      s.mem_loss = num(j, "mem");
      s.seen_eval = num(j, "seen_eval");
      s.unseen_eval = num(j, "unseen_eval");
      s.lr = j.at("lr").get<double>();
      s.grad_norm = num(j, "grad_norm");
      r.steps.push_back(s);
    } else if (type == "final") {
      r.status = j.value("status", "ok");
      r.fail_step = j.value("fail_step", -1);
      r.wall_clock_train_s = j.value("wall_clock_train_s", 0.0);
      r.wall_clock_total_s = j.value("wall_clock_total_s", 0.0);
      if (j.contains("metrics")) {
        for (auto& [k, v] : j.at("metrics").items()) {
          r.final_metrics[k] = v.get<double>();
        }
      }
      has_final = true;
    }
  }
  if (!has_header) throw std::runtime_error("load_run_record: missing header in " + path);
  if (!has_final) {
    r.status = "incomplete";
  }
  return r;
}

inline bool run_file_complete(const std::string& path) {
  if (!fs::exists(path)) return false;
  try {
    RunRecord r = load_run_record(path);
    return r.status == "ok";
  } catch (...) {
    return false;
  }
}

// ---------------------------------------------------------------------------
// Single run
// ---------------------------------------------------------------------------

struct EvalOptions {
  int unseen_eval_subsample = 64;  // cadence eval set size (full set at the end)
  int n_gen_prompts = 8;
  int n_gen_samples = 10;
  int gen_max_new = 16;
  double gen_top_p = 0.95;
  double gen_temperature = 0.8;
  bool robust_eval = false;
  int eval_jobs = 1;

  Json to_json() const {
    return Json{{"unseen_eval_subsample", unseen_eval_subsample},
                {"n_gen_prompts", n_gen_prompts},
                {"n_gen_samples", n_gen_samples},
                {"gen_max_new", gen_max_new},
                {"gen_top_p", gen_top_p},
                {"gen_temperature", gen_temperature},
                {"robust_eval", robust_eval}};
  }

  static EvalOptions from_json(const Json& j) {
    EvalOptions e;
    e.unseen_eval_subsample = j.value("unseen_eval_subsample", 64);
    e.n_gen_prompts = j.value("n_gen_prompts", 8);
    e.n_gen_samples = j.value("n_gen_samples", 10);
    e.gen_max_new = j.value("gen_max_new", 16);
    e.gen_top_p = j.value("gen_top_p", 0.95);
    e.gen_temperature = j.value("gen_temperature", 0.8);
    e.robust_eval = j.value("robust_eval", false);
    return e;
  }
};

struct RunResult {
  RunRecord record;
  Parameters params;
};

inline void run_final_eval(RunRecord& rec, const Parameters& params, const DataBundle& bundle,
                           const EvalOptions& opts);

namespace detail_train {

/// Deterministic cadence eval subset of the unseen split; fixed by the data
/// seed so every run in a sweep evaluates the same sequences.
inline std::vector<std::vector<int>> unseen_eval_seqs(const DataBundle& bundle, int subsample) {
  std::vector<int> ids = bundle.unseen_ids;
  Rng rng(mix64(bundle.config.seed, hash_str64("eval_subsample")));
  rng.shuffle(ids);
  if (subsample > 0 && subsample < static_cast<int>(ids.size())) {
    ids.resize(static_cast<std::size_t>(subsample));
  }
  std::sort(ids.begin(), ids.end());
  std::vector<std::vector<int>> out;
  for (int i : ids) out.push_back(bundle.items[static_cast<std::size_t>(i)].gold_tokens());
  return out;
}

inline std::vector<std::vector<int>> seen_eval_seqs(const DataBundle& bundle) {
  std::vector<std::vector<int>> out;
  for (const BenchmarkItem& it : bundle.seen_items()) out.push_back(it.gold_tokens());
  return out;
}

struct BatchResult {
  LossBreakdown loss;
  double grad_norm = 0.0;  // pre-clip
  bool finite = true;
};

/// Forward + backward over one batch; gradient of the mean-per-token dial
/// loss is accumulated into `grads` (which must be zeroed by the caller).
/// The loss-to-logits gradient comes from the analytic dial gradient.
inline BatchResult batch_forward_backward(const ModelConfig& mcfg, const Parameters& params,
                                          const Parameters& layout, const DialConfig& dial,
                                          const Batch& batch, std::vector<Tensor>& grads) {
  long total_tokens = 0;
  for (const auto& seq : batch.sequences) total_tokens += static_cast<long>(seq.size()) - 1;

  BatchResult out;
  KahanSum std_sum, mem_sum;
  for (const auto& seq : batch.sequences) {
    std::vector<int> inputs(seq.begin(), seq.end() - 1);
    std::vector<int> targets(seq.begin() + 1, seq.end());

    Tape tape;
    std::vector<Tape::NodeId> leaves;
    leaves.reserve(params.tensors.size());
    for (const Tensor& t : params.tensors) leaves.push_back(tape.leaf(t));
    Tape::NodeId logits_node = forward_tape(tape, mcfg, leaves, layout, inputs);
    const Tensor& logits = tape.value(logits_node);

    if (!logits.all_finite()) {
      out.loss.std_loss = out.loss.mem_loss = out.loss.combined =
          std::numeric_limits<double>::quiet_NaN();
      out.finite = false;
      return out;
    }

    LossBreakdown lb = dial_loss(logits, targets, dial);
    const double tokens = static_cast<double>(targets.size());
    std_sum.add(lb.std_loss * tokens);
    mem_sum.add(lb.mem_loss * tokens);

    Tensor seed(logits.shape);
    for (int t = 0; t < logits.rows(); ++t) {
      std::vector<double> g = dial_grad_logits(logits.row(t), targets[static_cast<std::size_t>(t)], dial);
      for (int j = 0; j < logits.cols(); ++j) {
        seed.at(t, j) = g[static_cast<std::size_t>(j)] / static_cast<double>(total_tokens);
      }
    }
    tape.backward_from(logits_node, seed);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      const Tensor* g = tape.grad_ptr(leaves[i]);
      if (!g) continue;
      double* dst = grads[i].data.data();
      const double* src = g->data.data();
      for (std::size_t k = 0; k < grads[i].data.size(); ++k) dst[k] += src[k];
    }
  }

  out.loss.token_count = total_tokens;
  out.loss.std_loss = std_sum.value() / static_cast<double>(total_tokens);
  out.loss.mem_loss = mem_sum.value() / static_cast<double>(total_tokens);
  if (dial.mode == DialMode::single_temperature) {
    out.loss.combined = out.loss.mem_loss;
    out.loss.std_loss = out.loss.mem_loss;
  } else {
    out.loss.combined = (1.0 - dial.alpha) * out.loss.std_loss + dial.alpha * out.loss.mem_loss;
  }
  out.grad_norm = global_grad_norm(grads);
  if (!std::isfinite(out.loss.combined) || !std::isfinite(out.grad_norm)) out.finite = false;
  return out;
}

}  // namespace detail_train

/// One optimization run: exactly total_steps AdamW updates on the dial loss
/// over a prebuilt schedule, with evaluation-only loss probes every
/// eval_every steps. Bit-deterministic per seed on one platform.
/// `sink` (optional) receives header/step/final JSON lines as they happen.
inline RunResult train_run(const ModelConfig& model_cfg_in, const DialConfig& dial,
                           const TrainConfig& train, const DataBundle& bundle,
                           const BatchSchedule& schedule, const EvalOptions& eval_opts = {},
                           std::ofstream* sink = nullptr) {
  dial.validate();
  train.validate();
  if (static_cast<int>(schedule.batches.size()) != train.total_steps) {
    throw std::invalid_argument("train_run: schedule length != total_steps");
  }

  const auto t_start = std::chrono::steady_clock::now();

  ModelConfig mcfg = model_cfg_in;
  mcfg.seed = train.seed;
  mcfg.validate();

  RunResult res;
  RunRecord& rec = res.record;
  rec.run_id = make_run_id(dial, train.seed);
  rec.model = mcfg;
  rec.dial = dial;
  rec.train = train;
  rec.data_hash = bundle.data_hash();
  rec.schedule_digest = schedule.digest();
  rec.train_config_hash = train_config_hash(mcfg, train);

  if (sink) {
    append_line(*sink, Json{{"type", "header"},
                            {"run_id", rec.run_id},
                            {"model", to_json(mcfg)},
                            {"dial", to_json(dial)},
                            {"train", train.to_json()},
                            {"data_hash", rec.data_hash},
                            {"schedule_digest", rec.schedule_digest},
                            {"train_config_hash", rec.train_config_hash}});
  }

  Parameters params = init_params(mcfg);
  const Parameters layout = make_param_layout(mcfg);
  std::vector<Tensor> grads;
  for (const Tensor& t : params.tensors) grads.push_back(Tensor::zeros(t.shape));

  const auto t_pre0 = std::chrono::steady_clock::now();

  AdamW opt(params);

  EvalModel em{&mcfg, &params};
  const auto seen_seqs = detail_train::seen_eval_seqs(bundle);
  const auto unseen_seqs = detail_train::unseen_eval_seqs(bundle, eval_opts.unseen_eval_subsample);

  double last_combined = std::numeric_limits<double>::quiet_NaN();
  double last_std = last_combined, last_mem = last_combined, last_norm = last_combined;

  auto record_step = [&](int step) {
    StepRecord s;
    s.step = step;
    s.combined = last_combined;
    s.std_loss = last_std;
    s.mem_loss = last_mem;
    s.grad_norm = last_norm;
    s.lr = lr_at(step, train);
    s.seen_eval = safe_eval_loss(em, seen_seqs);
    s.unseen_eval = safe_eval_loss(em, unseen_seqs);
    rec.steps.push_back(s);
    if (sink) append_line(*sink, step_to_json(s));
  };

  auto finish = [&](const std::string& status, int fail_step) {
    rec.status = status;
    rec.fail_step = fail_step;
    rec.wall_clock_total_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    if (sink) {
      Json metrics = Json::object();
      for (const auto& [k, v] : rec.final_metrics) metrics[k] = v;
      append_line(*sink, Json{{"type", "final"},
                              {"status", rec.status},
                              {"fail_step", rec.fail_step},
                              {"wall_clock_train_s", rec.wall_clock_train_s},
                              {"wall_clock_total_s", rec.wall_clock_total_s},
                              {"metrics", metrics}});
    }
  };

  if (train.pretrain_steps > 0) {
    // Warm start on the base corpus only: standard CE, no injection, and no
    // dependence on the dial point, so every member of a family starts from
    // bit-identical warm parameters.
    LeakSpec pre_spec;
    pre_spec.p_leak = 0.0;
    pre_spec.repeat_factor = 1;
    pre_spec.seed = mix64(train.seed, hash_str64("pretrain"));
    BatchSchedule pre_sched = build_leak_stream(bundle.corpus, pre_spec, train.pretrain_steps,
                                                train.batch_base, train.batch_leak);
    DialConfig pre_dial;
    pre_dial.mode = DialMode::dial;
    pre_dial.alpha = 0.0;
    pre_dial.tau = 1.0;
    AdamW pre_opt(params);
    const int pre_warmup = std::max(1, train.pretrain_steps / 10);
    for (int step = 0; step < train.pretrain_steps; ++step) {
      for (Tensor& g : grads) std::fill(g.data.begin(), g.data.end(), 0.0);
      auto br = detail_train::batch_forward_backward(
          mcfg, params, layout, pre_dial, pre_sched.batches[static_cast<std::size_t>(step)], grads);
      if (!br.finite) {
        rec.wall_clock_train_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_pre0).count();
        finish("failed_nonfinite", -1 - step);  // negative marks the pretrain phase
        res.params = std::move(params);
        return res;
      }
      clip_gradients(grads, train.clip_norm, br.grad_norm);
      const double lr = train.pretrain_lr *
                        std::min(1.0, static_cast<double>(step) / static_cast<double>(pre_warmup));
      pre_opt.step(params, grads, lr, train);
    }
  }

  // Initial probe: forward-only loss on the first scheduled batch (if any).
  if (!schedule.batches.empty()) {
    std::vector<Tensor> scratch;
    for (const Tensor& t : params.tensors) scratch.push_back(Tensor::zeros(t.shape));
    auto br = detail_train::batch_forward_backward(mcfg, params, layout, dial,
                                                   schedule.batches[0], scratch);
    last_combined = br.loss.combined;
    last_std = br.loss.std_loss;
    last_mem = br.loss.mem_loss;
    last_norm = 0.0;
  }
  record_step(0);

  const auto& t_train0 = t_pre0;  // train time covers warm start + dial phase
  for (int step = 0; step < train.total_steps; ++step) {
    for (Tensor& g : grads) std::fill(g.data.begin(), g.data.end(), 0.0);
    auto br = detail_train::batch_forward_backward(mcfg, params, layout, dial,
                                                   schedule.batches[static_cast<std::size_t>(step)],
                                                   grads);
    last_combined = br.loss.combined;
    last_std = br.loss.std_loss;
    last_mem = br.loss.mem_loss;
    last_norm = br.grad_norm;
    if (!br.finite) {
      rec.wall_clock_train_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t_train0).count();
      // diagnostic record at the failing step (skip if already recorded)
      if (rec.steps.empty() || rec.steps.back().step < step) record_step(step);
      finish("failed_nonfinite", step);
      res.params = std::move(params);
      return res;
    }
    clip_gradients(grads, train.clip_norm, br.grad_norm);
    opt.step(params, grads, lr_at(step, train), train);

    const int done = step + 1;
    if (done < train.total_steps && done % train.eval_every == 0) record_step(done);
  }
  if (train.total_steps > 0) record_step(train.total_steps);
  rec.wall_clock_train_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_train0).count();

  res.params = std::move(params);

  // Final metrics over the full splits.
  run_final_eval(rec, res.params, bundle, eval_opts);
  finish("ok", -1);
  return res;
}

// ---------------------------------------------------------------------------
// Final evaluation: accuracy, perplexity, suffix NLL, diversity, calibration
// ---------------------------------------------------------------------------

inline void run_final_eval(RunRecord& rec, const Parameters& params, const DataBundle& bundle,
                           const EvalOptions& opts) {
  EvalModel em{&rec.model, &params};
  NllFn nll = em.nll_fn();
  LogitsFn logits = em.logits_fn();
  const int ctx = rec.model.context_len;
  auto& M = rec.final_metrics;

  const std::vector<BenchmarkItem> seen = bundle.seen_items();
  const std::vector<BenchmarkItem> unseen = bundle.unseen_items();

  const std::vector<ItemEval> seen_ev = evaluate_items(nll, seen, ctx, opts.eval_jobs);
  const std::vector<ItemEval> unseen_ev = evaluate_items(nll, unseen, ctx, opts.eval_jobs);

  auto acc_of = [](const std::vector<ItemEval>& evs) {
    long c = 0;
    for (const ItemEval& e : evs) c += e.correct ? 1 : 0;
    return static_cast<double>(c) / static_cast<double>(evs.size());
  };
  M["seen_acc"] = acc_of(seen_ev);
  M["unseen_acc"] = acc_of(unseen_ev);

  // Token-level perplexity over the full item surface: every prompt+choice
  // stream of the split. On seen items, memorising the gold continuation
  // makes the distractor continuations increasingly surprising.
  auto ppl_of = [](const std::vector<ItemEval>& evs) {
    KahanSum sum;
    long count = 0;
    for (const ItemEval& e : evs) {
      for (const ChoiceScore& c : e.choices) {
        sum.add(c.full_nll_sum);
        count += c.full_token_count;
      }
    }
    return std::exp(sum.value() / static_cast<double>(count));
  };
  M["ppl_seen"] = ppl_of(seen_ev);
  M["ppl_unseen"] = ppl_of(unseen_ev);
  M["ppl_gap"] = M["ppl_unseen"] - M["ppl_seen"];

  // Seen-item suffix NLL: summed gold-continuation NLL, averaged over items.
  {
    KahanSum s;
    for (const ItemEval& e : seen_ev) s.add(e.gold_suffix_nll);
    M["seen_suffix_nll"] = s.value() / static_cast<double>(seen_ev.size());
  }

  // Calibration on the unseen split.
  {
    std::vector<double> conf;
    std::vector<bool> correct;
    for (const ItemEval& e : unseen_ev) {
      conf.push_back(e.confidence);
      correct.push_back(e.correct);
    }
    M["ece_unseen"] = ece(conf, correct);
  }

  // Frequency tiers + exactly-once pool (per-sequence sums, averaged).
  {
    TierAssignment ta = assign_frequency_tiers(bundle.corpus, bundle.config.corpus.tier_len);
    auto tier_mean = [&](Tier t) {
      KahanSum s;
      int n = 0;
      for (int id : ta.ids_of(t)) {
        s.add(suffix_nll(nll, bundle.corpus.base[static_cast<std::size_t>(id)].tokens(),
                         ta.prefix_len, ta.suffix_len));
        ++n;
      }
      return s.value() / static_cast<double>(n);
    };
    M["tier_high_suffix_nll"] = tier_mean(Tier::high);
    M["tier_mid_suffix_nll"] = tier_mean(Tier::mid);
    M["tier_rare_suffix_nll"] = tier_mean(Tier::rare);

    KahanSum once;
    int n_once = 0;
    for (const CorpusSeq& s : bundle.corpus.base) {
      if (s.kind != SeqKind::once) continue;
      once.add(suffix_nll(nll, s.tokens(), ta.prefix_len, ta.suffix_len));
      ++n_once;
    }
    if (n_once > 0) M["once_suffix_nll"] = once.value() / static_cast<double>(n_once);
  }

  // Output diversity: nucleus samples from fixed prompts (first seen items).
  {
    SampleConfig sc;
    sc.top_p = opts.gen_top_p;
    sc.temperature = opts.gen_temperature;
    sc.max_new_tokens = opts.gen_max_new;
    sc.seed = rec.train.seed;
    const int n_prompts = std::min<int>(opts.n_gen_prompts, static_cast<int>(seen.size()));
    KahanSum sim;
    for (int p = 0; p < n_prompts; ++p) {
      const std::vector<int> prompt = seen[static_cast<std::size_t>(p)].prompt_tokens();
      std::vector<std::vector<int>> continuations;
      for (int k = 0; k < opts.n_gen_samples; ++k) {
        std::vector<int> full = nucleus_sample(logits, prompt, sc, ctx, k);
        continuations.emplace_back(full.begin() + static_cast<long>(prompt.size()), full.end());
      }
      sim.add(jaccard_self_similarity(continuations));
    }
    M["jaccard_self_sim"] = sim.value() / static_cast<double>(n_prompts);
  }

  if (opts.robust_eval) {
    EvalSplit clean{"unseen", unseen};
    EvalSplit noisy = perturb_split(clean, bundle.config.seed);
    RobustScore rs = robust_score(nll, clean, noisy, ctx, opts.eval_jobs);
    M["robust_clean_acc"] = rs.clean_acc;
    M["robust_noisy_acc"] = rs.noisy_acc;
    M["robust_score"] = rs.robust;
  }

  if (!rec.steps.empty()) {
    M["final_seen_eval_loss"] = rec.steps.back().seen_eval;
    M["final_unseen_eval_loss"] = rec.steps.back().unseen_eval;
  }
}

}  // namespace memdial
