#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "memdial/metrics.hpp"
#include "memdial/sweep.hpp"

namespace memdial {

// ---------------------------------------------------------------------------
// Minimal deterministic SVG line charts (no plotting dependency).
// ---------------------------------------------------------------------------

struct SvgSeries {
  std::string label;
  std::string color;
  bool dashed = false;
  std::vector<std::pair<double, double>> points;
};

inline std::string svg_line_chart(const std::string& title, const std::string& x_label,
                                  const std::string& y_label,
                                  const std::vector<SvgSeries>& series) {
  const int W = 640, H = 400, ML = 70, MR = 170, MT = 40, MB = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
  auto py = [&](double y) { return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB); };
  char buf[512];
  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
         "viewBox=\"0 0 640 400\">\n";
  out += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" "
                "font-weight=\"bold\">%s</text>\n",
                ML, title.c_str());
  out += buf;

  // axes
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n"
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                ML, H - MB, W - MR, H - MB, ML, MT, ML, H - MB);
  out += buf;

  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\" "
                  "text-anchor=\"middle\">%.3g</text>\n",
                  px(xv), H - MB + 18, xv);
    out += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" "
                  "text-anchor=\"end\">%.4g</text>\n",
                  ML - 6, py(yv) + 4, yv);
    out += buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%.1f\" x2=\"%d\" y2=\"%.1f\" stroke=\"#dddddd\"/>\n", ML,
                  py(yv), W - MR, py(yv));
    out += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%d\" font-family=\"sans-serif\" font-size=\"12\" "
                "text-anchor=\"middle\">%s</text>\n",
                (ML + W - MR) / 2.0, H - 12, x_label.c_str());
  out += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"16\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\" "
                "transform=\"rotate(-90 16 %.1f)\" text-anchor=\"middle\">%s</text>\n",
                (MT + H - MB) / 2.0, (MT + H - MB) / 2.0, y_label.c_str());
  out += buf;

  int legend_y = MT + 10;
  for (const auto& s : series) {
    std::string pts;
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", px(x), py(y));
      pts += buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<polyline fill=\"none\" stroke=\"%s\" stroke-width=\"2\"%s points=\"%s\"/>\n",
                  s.color.c_str(), s.dashed ? " stroke-dasharray=\"6,4\"" : "", pts.c_str());
    out += buf;
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      std::snprintf(buf, sizeof(buf), "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\" fill=\"%s\"/>\n",
                    px(x), py(y), s.color.c_str());
      out += buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"%s\" "
                  "stroke-width=\"2\"%s/>\n",
                  W - MR + 10, legend_y, W - MR + 34, legend_y, s.color.c_str(),
                  s.dashed ? " stroke-dasharray=\"6,4\"" : "");
    out += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\">%s</text>\n",
                  W - MR + 40, legend_y + 4, s.label.c_str());
    out += buf;
    legend_y += 18;
  }
  out += "</svg>\n";
  return out;
}

// ---------------------------------------------------------------------------
// Report generation from a sweep manifest
// ---------------------------------------------------------------------------

namespace detail_report {

/// Dial coordinate of a run: alpha in dial mode, tau_eff otherwise.
inline double coord_of(const RunRecord& r) {
  return r.dial.mode == DialMode::single_temperature ? r.dial.tau_eff : r.dial.alpha;
}

inline std::string palette(int i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  return colors[i % 8];
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail_report

struct ReportResult {
  std::vector<std::string> files;
  std::vector<std::string> notes;
};

/// Writes CSV tables and SVG figures for one sweep manifest. Numbers come
/// only from the persisted RunRecords; identical inputs produce identical
/// bytes. `which` filters output groups (empty = all).
inline ReportResult write_report(const std::string& manifest_path, const std::string& out_dir,
                                 const std::set<std::string>& which = {}) {
  std::vector<std::string> missing;
  std::vector<RunRecord> runs = load_sweep_runs(manifest_path, &missing);
  if (!missing.empty()) {
    std::string msg = "incomplete manifest; missing runs:";
    for (const std::string& m : missing) msg += " " + m;
    throw std::runtime_error(msg);
  }
  if (runs.empty()) throw std::runtime_error("write_report: no runs in manifest");

  std::sort(runs.begin(), runs.end(), [](const RunRecord& a, const RunRecord& b) {
    const double ca = detail_report::coord_of(a), cb = detail_report::coord_of(b);
    if (ca != cb) return ca < cb;
    return a.train.seed < b.train.seed;
  });

  fs::create_directories(out_dir);
  ReportResult res;
  auto want = [&](const std::string& g) { return which.empty() || which.count(g) > 0; };
  auto emit = [&](const std::string& name, const std::string& content) {
    detail_data::write_file(out_dir + "/" + name, content);
    res.files.push_back(out_dir + "/" + name);
  };

  const std::string mode = to_string(runs.front().dial.mode);
  const std::string coord_label =
      runs.front().dial.mode == DialMode::single_temperature ? "tau_eff" : "alpha";

  // Group runs by dial coordinate.
  std::map<double, std::vector<const RunRecord*>> by_coord;
  for (const RunRecord& r : runs) by_coord[detail_report::coord_of(r)].push_back(&r);

  // ---- metrics.csv: every final metric, seed-aggregated per coordinate ----
  if (want("metrics")) {
    std::set<std::string> keys;
    for (const RunRecord& r : runs) {
      for (const auto& [k, v] : r.final_metrics) keys.insert(k);
    }
    MetricReport report;
    for (const std::string& key : keys) {
      for (const auto& [coord, group] : by_coord) {
        std::vector<double> vals;
        for (const RunRecord* r : group) {
          auto it = r->final_metrics.find(key);
          if (it != r->final_metrics.end()) vals.push_back(it->second);
        }
        if (!vals.empty()) report.add(key, mode, coord, runs.front().dial.tau, vals);
      }
    }
    for (const auto& [coord, group] : by_coord) {
      std::vector<double> vals;
      for (const RunRecord* r : group) vals.push_back(r->wall_clock_train_s);
      report.add("wall_clock_train_s", mode, coord, runs.front().dial.tau, vals);
    }
    emit("metrics.csv", report.to_csv());
    emit("metrics.json", report.to_json().dump(2) + "\n");
  }

  // ---- slope.csv: OLS slope of accuracy vs alpha (dial mode only) ----
  if (want("slope")) {
    if (runs.front().dial.mode == DialMode::single_temperature) {
      res.notes.push_back("slope table skipped: single-temperature sweep has no alpha axis");
    } else if (by_coord.size() < 2) {
      res.notes.push_back("slope table skipped: need >= 2 alpha values");
    } else {
      std::vector<std::pair<double, double>> seen_pts, unseen_pts;
      for (const RunRecord& r : runs) {
        auto s = r.final_metrics.find("seen_acc");
        auto u = r.final_metrics.find("unseen_acc");
        if (s != r.final_metrics.end()) seen_pts.emplace_back(r.dial.alpha, s->second);
        if (u != r.final_metrics.end()) unseen_pts.emplace_back(r.dial.alpha, u->second);
      }
      std::string csv = "metric,slope,n_points\n";
      csv += "seen_acc," + detail_report::fmt(fit_slope(seen_pts)) + "," +
             std::to_string(seen_pts.size()) + "\n";
      csv += "unseen_acc," + detail_report::fmt(fit_slope(unseen_pts)) + "," +
             std::to_string(unseen_pts.size()) + "\n";
      emit("slope.csv", csv);
    }
  }

  // ---- dynamics.csv: the raw per-step records ----
  if (want("dynamics")) {
    std::string csv = "run_id," + coord_label +
                      ",seed,step,combined,std,mem,seen_eval,unseen_eval,lr,grad_norm\n";
    for (const RunRecord& r : runs) {
      for (const StepRecord& s : r.steps) {
        char buf[512];
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%llu,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      r.run_id.c_str(), detail_report::coord_of(r),
                      static_cast<unsigned long long>(r.train.seed), s.step, s.combined,
                      s.std_loss, s.mem_loss, s.seen_eval, s.unseen_eval, s.lr, s.grad_norm);
        csv += buf;
      }
    }
    emit("dynamics.csv", csv);
  }

  // ---- figures ----
  auto coord_series = [&](const std::string& key) {
    SvgSeries s;
    for (const auto& [coord, group] : by_coord) {
      double acc = 0.0;
      int n = 0;
      for (const RunRecord* r : group) {
        auto it = r->final_metrics.find(key);
        if (it != r->final_metrics.end()) {
          acc += it->second;
          ++n;
        }
      }
      if (n > 0) s.points.emplace_back(coord, acc / n);
    }
    return s;
  };

  if (want("figures")) {
    {
      SvgSeries seen = coord_series("seen_acc");
      seen.label = "seen";
      seen.color = detail_report::palette(1);
      SvgSeries unseen = coord_series("unseen_acc");
      unseen.label = "unseen";
      unseen.color = detail_report::palette(0);
      unseen.dashed = true;
      emit("accuracy." + std::string("svg"),
           svg_line_chart("Accuracy vs " + coord_label, coord_label, "accuracy", {seen, unseen}));
    }
    {
      SvgSeries hi = coord_series("tier_high_suffix_nll");
      hi.label = "high";
      hi.color = detail_report::palette(2);
      SvgSeries mid = coord_series("tier_mid_suffix_nll");
      mid.label = "mid";
      mid.color = detail_report::palette(0);
      SvgSeries rare = coord_series("tier_rare_suffix_nll");
      rare.label = "rare";
      rare.color = detail_report::palette(1);
      emit("suffix_nll_tiers.svg", svg_line_chart("Suffix NLL by frequency tier", coord_label,
                                                  "suffix NLL (sum)", {hi, mid, rare}));
    }
    {
      SvgSeries gap = coord_series("ppl_gap");
      gap.label = "ppl gap";
      gap.color = detail_report::palette(3);
      emit("ppl_gap.svg",
           svg_line_chart("Perplexity gap (unseen - seen)", coord_label, "ppl gap", {gap}));
    }
    {
      SvgSeries div = coord_series("jaccard_self_sim");
      div.label = "self-similarity";
      div.color = detail_report::palette(4);
      emit("diversity.svg", svg_line_chart("Output self-similarity", coord_label,
                                           "mean pairwise Jaccard", {div}));
    }
    {
      // Loss trajectories: seed-mean seen (solid) and unseen (dashed) per coordinate.
      std::vector<SvgSeries> series;
      int color = 0;
      for (const auto& [coord, group] : by_coord) {
        std::map<int, std::pair<double, int>> seen_acc, unseen_acc;
        for (const RunRecord* r : group) {
          for (const StepRecord& s : r->steps) {
            if (std::isfinite(s.seen_eval)) {
              seen_acc[s.step].first += s.seen_eval;
              seen_acc[s.step].second += 1;
            }
            if (std::isfinite(s.unseen_eval)) {
              unseen_acc[s.step].first += s.unseen_eval;
              unseen_acc[s.step].second += 1;
            }
          }
        }
        char lbl[64];
        SvgSeries seen_s;
        std::snprintf(lbl, sizeof(lbl), "%s=%g seen", coord_label.c_str(), coord);
        seen_s.label = lbl;
        seen_s.color = detail_report::palette(color);
        for (const auto& [step, acc] : seen_acc) {
          seen_s.points.emplace_back(step, acc.first / acc.second);
        }
        SvgSeries unseen_s;
        std::snprintf(lbl, sizeof(lbl), "%s=%g unseen", coord_label.c_str(), coord);
        unseen_s.label = lbl;
        unseen_s.color = detail_report::palette(color);
        unseen_s.dashed = true;
        for (const auto& [step, acc] : unseen_acc) {
          unseen_s.points.emplace_back(step, acc.first / acc.second);
        }
        series.push_back(seen_s);
        series.push_back(unseen_s);
        ++color;
      }
      emit("dynamics.svg",
           svg_line_chart("Eval loss vs steps", "step", "mean NLL per token", series));
    }
  }

  return res;
}

}  // namespace memdial
