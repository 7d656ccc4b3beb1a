#pragma once

#include <string>

#include "memdial/sweep.hpp"

namespace memdial {

/// The desk-scale default experiment. Optimizer shape (betas, eps, clip,
/// weight decay, warmup, step budget, batch split) keeps the reference
/// values; the learning rate is scaled up for a small from-scratch
/// byte-level model, where 5e-5 barely moves the loss inside the step
/// budget.
inline SweepConfig preset_paper_desk() {
  SweepConfig cfg;
  cfg.model.vocab_size = tok::kVocabSize;
  cfg.model.context_len = 64;
  cfg.model.n_layers = 2;
  cfg.model.n_heads = 2;
  cfg.model.d_model = 64;

  cfg.train.lr = 3e-4;
  cfg.train.beta1 = 0.9;
  cfg.train.beta2 = 0.999;
  cfg.train.eps = 1e-8;
  cfg.train.weight_decay = 0.01;
  cfg.train.warmup_steps = 200;
  cfg.train.total_steps = 449;
  cfg.train.clip_norm = 1.0;
  cfg.train.batch_base = 8;
  cfg.train.batch_leak = 8;
  cfg.train.eval_every = 25;
  cfg.train.pretrain_steps = 600;
  cfg.train.pretrain_lr = 1e-3;

  cfg.data = DataConfig{};  // 1000 items, 50 seen, p_leak 0.75, repeat 4

  cfg.mode = DialMode::dial;
  cfg.alphas = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  cfg.tau = 0.1;
  cfg.seeds = {1, 2, 3};
  cfg.jobs = 2;
  return cfg;
}

/// Seconds-scale smoke configuration.
inline SweepConfig preset_quick() {
  SweepConfig cfg;
  cfg.model.vocab_size = tok::kVocabSize;
  cfg.model.context_len = 64;
  cfg.model.n_layers = 1;
  cfg.model.n_heads = 2;
  cfg.model.d_model = 32;

  cfg.train.lr = 1e-3;
  cfg.train.warmup_steps = 8;
  cfg.train.total_steps = 30;
  cfg.train.batch_base = 4;
  cfg.train.batch_leak = 4;
  cfg.train.eval_every = 10;

  cfg.data.bench.n_items = 60;
  cfg.data.bench.n_background = 40;
  cfg.data.n_seen = 10;
  cfg.data.corpus.n_filler = 30;
  cfg.data.corpus.n_tier = 4;
  cfg.data.corpus.n_once = 4;

  cfg.mode = DialMode::dial;
  cfg.alphas = {0.0, 1.0};
  cfg.tau = 0.1;
  cfg.seeds = {1};
  cfg.jobs = 1;

  cfg.eval.unseen_eval_subsample = 8;
  cfg.eval.n_gen_prompts = 2;
  cfg.eval.n_gen_samples = 3;
  cfg.eval.gen_max_new = 8;
  return cfg;
}

inline SweepConfig preset_by_name(const std::string& name) {
  if (name == "paper-desk") return preset_paper_desk();
  if (name == "quick") return preset_quick();
  throw std::invalid_argument("unknown preset: " + name + " (expected paper-desk or quick)");
}

/// Overlay a config JSON document onto a SweepConfig. The document may name
/// a `preset` to start from; explicit fields win over the preset.
inline SweepConfig sweep_config_from_json(const Json& j) {
  SweepConfig cfg = j.contains("preset") ? preset_by_name(j.at("preset").get<std::string>())
                                         : preset_paper_desk();
  if (j.contains("mode")) cfg.mode = dial_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("alphas")) cfg.alphas = j.at("alphas").get<std::vector<double>>();
  if (j.contains("tau")) cfg.tau = j.at("tau").get<double>();
  if (j.contains("tau_effs")) cfg.tau_effs = j.at("tau_effs").get<std::vector<double>>();
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("jobs")) cfg.jobs = j.at("jobs").get<int>();
  if (j.contains("model")) {
    Json m = to_json(cfg.model);
    m.update(j.at("model"));
    cfg.model = model_config_from_json(m);
  }
  if (j.contains("train")) {
    Json t = cfg.train.to_json();
    t.update(j.at("train"));
    cfg.train = TrainConfig::from_json(t);
  }
  if (j.contains("data")) {
    Json d = cfg.data.to_json();
    d.update(j.at("data"));
    cfg.data = DataConfig::from_json(d);
  }
  if (j.contains("eval")) {
    Json e = cfg.eval.to_json();
    e.update(j.at("eval"));
    cfg.eval = EvalOptions::from_json(e);
  }
  return cfg;
}

inline SweepConfig load_sweep_config(const std::string& path) {
  return sweep_config_from_json(Json::parse(detail_data::read_file(path)));
}

}  // namespace memdial
