#pragma once

#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "relgraph/eval.hpp"
#include "relgraph/gradcheck.hpp"
#include "relgraph/train.hpp"
#include "relgraph/viz.hpp"

namespace relgraph {

/// "vr@1%", "vr@0.1%", ... for FAR levels given as fractions.
inline std::string far_column(double level) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "vr@%g%%", level * 100.0);
  return buf;
}

inline std::vector<std::string> metric_columns(const std::vector<double>& far_levels) {
  std::vector<std::string> cols{"rank1"};
  for (double f : far_levels) cols.push_back(far_column(f));
  return cols;
}

inline std::vector<std::string> metric_cells(const EvalReport& r) {
  std::vector<std::string> cells{format_number(r.rank1)};
  for (const auto& p : r.verification) cells.push_back(format_number(p.vr));
  return cells;
}

/// One row per labelled model.
inline CsvTable metrics_table(const std::vector<std::pair<std::string, EvalReport>>& rows,
                              const std::vector<double>& far_levels) {
  std::vector<std::string> header{"model"};
  for (auto& c : metric_columns(far_levels)) header.push_back(std::move(c));
  CsvTable t(std::move(header));
  for (const auto& [label, report] : rows) {
    std::vector<std::string> cells{label};
    for (auto& c : metric_cells(report)) cells.push_back(std::move(c));
    t.add_row(std::move(cells));
  }
  return t;
}

inline CsvTable sweep_table(const std::vector<SweepRow>& rows, const std::vector<double>& far_levels) {
  std::vector<std::string> header{"d"};
  for (auto& c : metric_columns(far_levels)) header.push_back(std::move(c));
  CsvTable t(std::move(header));
  for (const auto& r : rows) {
    std::vector<std::string> cells{std::to_string(r.dim)};
    for (auto& c : metric_cells(r.report)) cells.push_back(std::move(c));
    t.add_row(std::move(cells));
  }
  return t;
}

inline CsvTable train_log_table(const std::vector<EpochLog>& log) {
  CsvTable t({"epoch", "lr", "loss", "train_accuracy"});
  for (const auto& e : log)
    t.add_row({std::to_string(e.epoch), format_number(e.lr), format_number(e.loss), format_number(e.train_accuracy)});
  return t;
}

inline CsvTable toy_points_table(const std::vector<ToyPoint>& pts) {
  CsvTable t({"sample", "label", "domain", "x", "y", "angle"});
  for (std::size_t i = 0; i < pts.size(); ++i)
    t.add_row({std::to_string(i), std::to_string(pts[i].label), std::string(to_string(pts[i].domain)),
               format_number(pts[i].x), format_number(pts[i].y), format_number(pts[i].angle)});
  return t;
}

/// min_gap is left empty when fewer than two classes are present.
inline CsvTable toy_stats_table(const AngularStats& s) {
  CsvTable t({"min_gap", "intra_std"});
  t.add_row({s.min_gap ? format_number(*s.min_gap) : "", format_number(s.intra_std)});
  return t;
}

struct GradcheckRun {
  std::uint64_t seed = 0;
  LossId loss = LossId::csoftmax;
  GradCheckReport report;
};

inline CsvTable gradcheck_table(const std::vector<GradcheckRun>& runs) {
  CsvTable t({"seed", "loss", "group", "entries", "max_rel_error", "passed"});
  for (const auto& r : runs)
    for (const auto& g : r.report.groups)
      t.add_row({std::to_string(r.seed), std::string(to_string(r.loss)), g.name, std::to_string(g.entries),
                 format_number(g.max_rel_error), g.max_rel_error < r.report.tolerance ? "1" : "0"});
  return t;
}

}  // namespace relgraph
