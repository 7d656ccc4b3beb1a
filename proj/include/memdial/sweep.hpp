#pragma once

#include <atomic>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "memdial/trainer.hpp"

namespace memdial {

struct SweepConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalOptions eval;
  DialMode mode = DialMode::dial;
  std::vector<double> alphas = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  double tau = 0.1;
  std::vector<double> tau_effs = {1.0};  // used in single_temperature mode
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int jobs = 1;

  std::vector<DialConfig> dial_points() const {
    std::vector<DialConfig> out;
    if (mode == DialMode::single_temperature) {
      for (double te : tau_effs) {
        DialConfig d;
        d.mode = DialMode::single_temperature;
        d.tau = tau;
        d.tau_eff = te;
        out.push_back(d);
      }
    } else {
      for (double a : alphas) {
        DialConfig d;
        d.mode = DialMode::dial;
        d.alpha = a;
        d.tau = tau;
        out.push_back(d);
      }
    }
    return out;
  }

  Json to_json() const {
    return Json{{"model", memdial::to_json(model)},
                {"train", train.to_json()},
                {"data", data.to_json()},
                {"eval", eval.to_json()},
                {"mode", to_string(mode)},
                {"alphas", alphas},
                {"tau", tau},
                {"tau_effs", tau_effs},
                {"seeds", seeds},
                {"jobs", jobs}};
  }
};

struct RunInfo {
  std::string run_id;
  std::string file;
  std::string checkpoint;
  std::string status;  // ok | skipped | failed_nonfinite | error:<msg>
  DialConfig dial;
  std::uint64_t seed = 0;
  double wall_clock_train_s = 0.0;

  bool ok() const { return status == "ok" || status == "skipped"; }
};

struct SweepSummary {
  std::vector<RunInfo> runs;
  std::string manifest_path;
  std::string data_hash;

  int failures() const {
    int n = 0;
    for (const RunInfo& r : runs) n += r.ok() ? 0 : 1;
    return n;
  }
};

/// Runs the |grid| x |seeds| family. Every run is an isolated task with its
/// own parameter state and RNG streams; persistence is one JSONL file per
/// run, so a crashed sweep resumes by skipping complete run files. Failures
/// are recorded and do not abort the sweep. The run queue is seed-major so
/// concurrent waves hold the dial coordinate load symmetric.
inline SweepSummary sweep(const SweepConfig& cfg, const std::string& out_dir,
                          const std::function<void(const RunInfo&)>& on_run = nullptr) {
  cfg.train.validate();
  cfg.model.validate();

  fs::create_directories(out_dir + "/runs");
  const DataBundle bundle = build_data_bundle(cfg.data);
  save_data_bundle(bundle, out_dir);

  struct Task {
    DialConfig dial;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (std::uint64_t seed : cfg.seeds) {
    for (const DialConfig& d : cfg.dial_points()) tasks.push_back({d, seed});
  }
  if (tasks.empty()) throw std::invalid_argument("sweep: empty grid");

  // One schedule per seed, shared across the dial grid (alpha never enters).
  std::map<std::uint64_t, BatchSchedule> schedules;
  for (std::uint64_t seed : cfg.seeds) {
    LeakSpec spec = bundle.leak_spec();
    spec.seed = seed;
    schedules.emplace(seed, build_leak_stream(bundle.corpus, spec, cfg.train.total_steps,
                                              cfg.train.batch_base, cfg.train.batch_leak,
                                              cfg.data.mix_mode));
  }

  SweepSummary summary;
  summary.data_hash = bundle.data_hash();
  summary.runs.resize(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex cb_mu;

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const Task& task = tasks[i];
      RunInfo info;
      info.dial = task.dial;
      info.seed = task.seed;
      info.run_id = make_run_id(task.dial, task.seed);
      info.file = out_dir + "/runs/" + info.run_id + ".jsonl";
      info.checkpoint = out_dir + "/runs/" + info.run_id + ".ckpt";

      if (run_file_complete(info.file)) {
        info.status = "skipped";
        RunRecord r = load_run_record(info.file);
        info.wall_clock_train_s = r.wall_clock_train_s;
      } else {
        try {
          TrainConfig tc = cfg.train;
          tc.seed = task.seed;
          std::ofstream sink(info.file, std::ios::trunc);
          if (!sink) throw std::runtime_error("cannot write " + info.file);
          RunResult rr = train_run(cfg.model, task.dial, tc, bundle, schedules.at(task.seed),
                                   cfg.eval, &sink);
          info.status = rr.record.status;
          info.wall_clock_train_s = rr.record.wall_clock_train_s;
          save_checkpoint(info.checkpoint, rr.record.model, task.dial, task.seed, rr.params);
        } catch (const std::exception& e) {
          info.status = std::string("error:") + e.what();
        }
      }
      summary.runs[i] = info;
      if (on_run) {
        std::lock_guard<std::mutex> lock(cb_mu);
        on_run(info);
      }
    }
  };

  const int jobs = std::max(1, cfg.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  Json runs_json = Json::array();
  for (const RunInfo& r : summary.runs) {
    runs_json.push_back(Json{{"run_id", r.run_id},
                             {"file", fs::path(r.file).filename().string()},
                             {"checkpoint", fs::path(r.checkpoint).filename().string()},
                             {"status", r.status},
                             {"dial", to_json(r.dial)},
                             {"seed", r.seed},
                             {"wall_clock_train_s", r.wall_clock_train_s}});
  }
  Json manifest{{"format", "memdial-sweep-v1"},
                {"config", cfg.to_json()},
                {"data_hash", summary.data_hash},
                {"runs", runs_json}};
  summary.manifest_path = out_dir + "/manifest.json";
  detail_data::write_file(summary.manifest_path, manifest.dump(2) + "\n");
  return summary;
}

/// Loads every run referenced by a sweep manifest; incomplete runs are
/// reported in `missing`.
inline std::vector<RunRecord> load_sweep_runs(const std::string& manifest_path,
                                              std::vector<std::string>* missing = nullptr) {
  Json manifest = Json::parse(detail_data::read_file(manifest_path));
  const fs::path dir = fs::path(manifest_path).parent_path();
  std::vector<RunRecord> out;
  for (const auto& rj : manifest.at("runs")) {
    const std::string file = (dir / "runs" / rj.at("file").get<std::string>()).string();
    if (!run_file_complete(file)) {
      if (missing) missing->push_back(rj.at("run_id").get<std::string>());
      continue;
    }
    out.push_back(load_run_record(file));
  }
  return out;
}

}  // namespace memdial
