// memdial: train/sweep/eval/report CLI for the memory-dial experiment.
//
// Every command is a pure function of (flags, config file, input files) to
// (output files, exit code). Exit codes: 0 success, 1 run or assertion
// failure, 2 usage error. MEMDIAL_SEED overrides the seed list.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "memdial/checkpoint.hpp"
#include "memdial/gradcheck.hpp"
#include "memdial/presets.hpp"
#include "memdial/report.hpp"
#include "memdial/sweep.hpp"

namespace {

using namespace memdial;

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::string preset;
  std::string mode;
  std::vector<double> alphas;
  std::vector<std::uint64_t> seeds;
  double tau = -1.0;
  double tau_eff = -1.0;
  int steps = -1;
  int jobs = -1;
};

void add_common_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "JSON config file (see README for the schema)");
  cmd->add_option("--out", o.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--preset", o.preset, "config preset: paper-desk or quick");
  cmd->add_option("--alpha", o.alphas, "dial coefficient list, e.g. 0,0.5,1")->delimiter(',');
  cmd->add_option("--tau", o.tau, "sharpening temperature (default 0.1)");
  cmd->add_option("--seeds", o.seeds, "seed list, e.g. 1,2,3 (default 1,2,3)")->delimiter(',');
  cmd->add_option("--steps", o.steps, "total optimization steps (default 449)");
  cmd->add_option("--jobs", o.jobs, "parallel runs for sweeps (default 2)");
  cmd->add_option("--mode", o.mode, "objective mode: dial or single-temperature")
      ->check(CLI::IsMember({"dial", "single-temperature"}));
  cmd->add_option("--tau-eff", o.tau_eff,
                  "effective temperature for single-temperature mode (default 1)");
}

SweepConfig resolve_config(const CommonOpts& o) {
  Json doc = Json::object();
  if (!o.config_path.empty()) {
    // unreadable or malformed config files are usage errors
    try {
      doc = Json::parse(detail_data::read_file(o.config_path));
    } catch (const std::exception& e) {
      throw std::invalid_argument(std::string("bad config file: ") + e.what());
    }
  }
  if (!o.preset.empty()) doc["preset"] = o.preset;
  SweepConfig cfg = sweep_config_from_json(doc);

  if (!o.mode.empty()) cfg.mode = dial_mode_from_string(o.mode);
  if (!o.alphas.empty()) cfg.alphas = o.alphas;
  if (o.tau > 0.0) cfg.tau = o.tau;
  if (o.tau_eff > 0.0) cfg.tau_effs = {o.tau_eff};
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (o.steps >= 0) {
    cfg.train.total_steps = o.steps;
    cfg.train.warmup_steps = std::min(cfg.train.warmup_steps, o.steps);
  }
  if (o.jobs > 0) cfg.jobs = o.jobs;

  if (const char* env = std::getenv("MEMDIAL_SEED")) {
    cfg.seeds = {static_cast<std::uint64_t>(std::strtoull(env, nullptr, 10))};
  }
  return cfg;
}

int cmd_make_data(const CommonOpts& o) {
  SweepConfig cfg = resolve_config(o);
  fs::create_directories(o.out_dir);
  DataBundle bundle = build_data_bundle(cfg.data);
  save_data_bundle(bundle, o.out_dir);
  std::string why;
  if (!verify_data_manifest(o.out_dir, &why)) {
    std::cerr << "manifest verification failed: " << why << "\n";
    return 1;
  }
  std::cout << "wrote " << o.out_dir << "/corpus.txt, benchmark.jsonl, manifest.json\n"
            << "bundle hash " << bundle.data_hash() << "\n";
  return 0;
}

int cmd_sweep(const CommonOpts& o) {
  SweepConfig cfg = resolve_config(o);
  std::cout << "sweep: mode=" << to_string(cfg.mode) << " points=" << cfg.dial_points().size()
            << " seeds=" << cfg.seeds.size() << " steps=" << cfg.train.total_steps
            << " jobs=" << cfg.jobs << "\n";
  SweepSummary summary = sweep(cfg, o.out_dir, [](const RunInfo& info) {
    std::printf("[%s] %s (%.1fs)\n",
                info.status == "skipped" ? "skip" : (info.ok() ? "done" : "FAIL"),
                info.run_id.c_str(), info.wall_clock_train_s);
    std::fflush(stdout);
  });
  std::cout << "manifest: " << summary.manifest_path << "\n";
  if (summary.failures() > 0) {
    std::cerr << "failed runs:\n";
    for (const RunInfo& r : summary.runs) {
      if (!r.ok()) std::cerr << "  " << r.run_id << ": " << r.status << "\n";
    }
    return 1;
  }
  return 0;
}

int cmd_train(const CommonOpts& o) {
  SweepConfig cfg = resolve_config(o);
  cfg.jobs = 1;
  if (cfg.dial_points().empty() || cfg.seeds.empty()) {
    std::cerr << "train: empty grid\n";
    return 2;
  }
  // Single run: first dial point, first seed.
  SweepConfig single = cfg;
  if (cfg.mode == DialMode::single_temperature) {
    single.tau_effs = {cfg.tau_effs.front()};
  } else {
    single.alphas = {cfg.alphas.front()};
  }
  single.seeds = {cfg.seeds.front()};
  SweepSummary summary = sweep(single, o.out_dir, nullptr);
  const RunInfo& info = summary.runs.front();
  std::cout << "run " << info.run_id << ": " << info.status << "\n";
  if (!info.ok()) return 1;
  RunRecord rec = load_run_record(info.file);
  for (const auto& [k, v] : rec.final_metrics) std::printf("  %-24s %.6g\n", k.c_str(), v);
  std::cout << "record: " << info.file << "\ncheckpoint: " << info.checkpoint << "\n";
  return 0;
}

int cmd_report(const CommonOpts& o, const std::string& manifest, const std::vector<std::string>& which) {
  std::set<std::string> groups(which.begin(), which.end());
  try {
    ReportResult res = write_report(manifest, o.out_dir, groups);
    for (const std::string& n : res.notes) std::cout << "note: " << n << "\n";
    for (const std::string& f : res.files) std::cout << "wrote " << f << "\n";
    return 0;
  } catch (const std::runtime_error& e) {
    std::cerr << "report failed: " << e.what() << "\n";
    return 1;
  }
}

int cmd_gradcheck(const CommonOpts& o, int trials) {
  SweepConfig cfg = resolve_config(o);
  const std::uint64_t seed = cfg.seeds.empty() ? 1 : cfg.seeds.front();
  GradCheckReport obj = objective_gradcheck(trials, seed);
  std::printf("objective  cases=%-4d max rel err %.3e  (threshold 1e-5)\n", obj.cases,
              obj.max_rel_err);
  GradCheckReport mdl = model_gradcheck(20, seed);
  std::printf("end-to-end cases=%-4d max rel err %.3e  (threshold 1e-4)\n", mdl.cases,
              mdl.max_rel_err);
  const bool ok = obj.max_rel_err < 1e-5 && mdl.max_rel_err < 1e-4;
  if (!ok) {
    std::cerr << "gradcheck FAILED\n  worst objective: " << obj.worst_case
              << "\n  worst end-to-end: " << mdl.worst_case << "\n";
    return 1;
  }
  std::cout << "gradcheck passed\n";
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& ckpt_path) {
  SweepConfig cfg = resolve_config(o);
  Checkpoint ck = load_checkpoint(ckpt_path);
  DataBundle bundle = build_data_bundle(cfg.data);
  RunRecord rec;
  rec.model = ck.model;
  rec.dial = ck.dial;
  rec.train.seed = ck.seed;
  rec.run_id = make_run_id(ck.dial, ck.seed);
  EvalOptions opts = cfg.eval;
  opts.robust_eval = true;
  run_final_eval(rec, ck.params, bundle, opts);
  Json out = Json::object();
  for (const auto& [k, v] : rec.final_metrics) out[k] = v;
  fs::create_directories(o.out_dir);
  const std::string path = o.out_dir + "/eval_" + rec.run_id + ".json";
  detail_data::write_file(path, out.dump(2) + "\n");
  for (const auto& [k, v] : rec.final_metrics) std::printf("  %-24s %.6g\n", k.c_str(), v);
  std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_generate(const CommonOpts& o, const std::string& ckpt_path, const std::string& prompt,
                 int samples, int max_new, bool greedy, bool raw) {
  (void)o;
  Checkpoint ck = load_checkpoint(ckpt_path);
  EvalModel em{&ck.model, &ck.params};
  LogitsFn logits = em.logits_fn();

  std::vector<int> prompt_tokens;
  if (raw) {
    prompt_tokens.push_back(tok::kBos);
    for (int id : tok::tokenize(prompt)) prompt_tokens.push_back(id);
  } else {
    BenchmarkItem tmp;
    tmp.prompt = prompt;
    tmp.choices = {"a", "b"};
    prompt_tokens = tmp.prompt_tokens();  // BOS + bytes + SEP
  }

  if (greedy) {
    std::vector<int> outp = greedy_decode(logits, prompt_tokens, max_new, ck.model.context_len);
    std::cout << tok::render(outp) << "\n";
    return 0;
  }
  SampleConfig sc;
  sc.max_new_tokens = max_new;
  sc.seed = ck.seed;
  for (int k = 0; k < samples; ++k) {
    std::vector<int> outp = nucleus_sample(logits, prompt_tokens, sc, ck.model.context_len, k);
    std::cout << tok::render(outp) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memdial: a desk-scale laboratory for dialing memorization pressure"};
  app.require_subcommand(1);

  CommonOpts o;
  std::string manifest = "out/manifest.json";
  std::vector<std::string> which;
  int trials = 100;
  std::string ckpt_path;
  std::string prompt;
  int samples = 1;
  int max_new = 16;
  bool greedy = false;
  bool raw = false;

  CLI::App* c_train = app.add_subcommand("train", "run one training configuration");
  add_common_flags(c_train, o);

  CLI::App* c_sweep = app.add_subcommand("sweep", "run the full dial-by-seed family");
  add_common_flags(c_sweep, o);

  CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on the benchmark");
  add_common_flags(c_eval, o);
  c_eval->add_option("--checkpoint", ckpt_path, "checkpoint file (.ckpt)")->required();

  CLI::App* c_report = app.add_subcommand("report", "emit CSV tables and SVG figures for a sweep");
  add_common_flags(c_report, o);
  c_report->add_option("--manifest", manifest, "sweep manifest path")->capture_default_str();
  c_report->add_option("--which", which, "output groups: metrics,slope,dynamics,figures")
      ->delimiter(',');

  CLI::App* c_gradcheck = app.add_subcommand("gradcheck", "verify analytic gradients");
  add_common_flags(c_gradcheck, o);
  c_gradcheck->add_option("--trials", trials, "randomized objective cases")->capture_default_str();

  CLI::App* c_generate = app.add_subcommand("generate", "decode continuations from a checkpoint");
  add_common_flags(c_generate, o);
  c_generate->add_option("--checkpoint", ckpt_path, "checkpoint file (.ckpt)")->required();
  c_generate->add_option("--prompt", prompt, "prompt text")->required();
  c_generate->add_option("--samples", samples, "nucleus samples to draw")->capture_default_str();
  c_generate->add_option("--max-new", max_new, "new tokens per continuation")->capture_default_str();
  c_generate->add_flag("--greedy", greedy, "greedy decode instead of nucleus sampling");
  c_generate->add_flag("--raw", raw, "do not append the answer separator to the prompt");

  CLI::App* c_make_data = app.add_subcommand("make-data", "write corpus/benchmark/manifest files");
  add_common_flags(c_make_data, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage error
  }

  try {
    if (c_train->parsed()) return cmd_train(o);
    if (c_sweep->parsed()) return cmd_sweep(o);
    if (c_eval->parsed()) return cmd_eval(o, ckpt_path);
    if (c_report->parsed()) return cmd_report(o, manifest, which);
    if (c_gradcheck->parsed()) return cmd_gradcheck(o, trials);
    if (c_generate->parsed()) return cmd_generate(o, ckpt_path, prompt, samples, max_new, greedy, raw);
    if (c_make_data->parsed()) return cmd_make_data(o);
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
