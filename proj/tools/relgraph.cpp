// relgraph: command-line front end for data generation, training,
// evaluation, gradient checking and figure data export.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "relgraph/config.hpp"
#include "relgraph/report.hpp"
#include "relgraph/viz.hpp"

namespace fs = std::filesystem;
using namespace relgraph;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct Common {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> loss, edge_activation, variant;
  std::optional<double> m1, m2, scale;
  std::optional<std::size_t> dim, nodes, epochs;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON run config; unknown keys are rejected");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--seed", c.seed, "seed for data generation and training");
  app->add_option("--loss", c.loss, "softmax|nsoftmax|csoftmax|cosface|arcface|triplet-cond");
  app->add_option("--edge-activation", c.edge_activation, "sigmoid|softmax");
  app->add_option("--variant", c.variant, "linear|rgm|rgm-nau");
  app->add_option("--m1", c.m1, "C-softmax slope");
  app->add_option("--m2", c.m2, "C-softmax offset");
  app->add_option("--scale", c.scale, "logit scale s (also sets alpha)");
  app->add_option("--dim", c.dim, "node embedding width d");
  app->add_option("--nodes", c.nodes, "node count N, a perfect square");
  app->add_option("--epochs", c.epochs, "training epochs (toy2d: toy.epochs)");
}

RunConfig resolve(const Common& c) {
  RunConfig r = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) r.data.seed = r.train.seed = *c.seed;
  if (c.loss) r.train.loss.id = parse_loss_id(*c.loss);
  if (c.edge_activation) r.model.edge_activation = parse_edge_activation(*c.edge_activation);
  if (c.variant) r.model.variant = parse_variant(*c.variant);
  if (c.m1) r.train.loss.margin.m1 = *c.m1;
  if (c.m2) r.train.loss.margin.m2 = *c.m2;
  if (c.scale) r.train.loss.margin.s = r.train.loss.margin.alpha = *c.scale;
  if (c.dim) r.model.dim = r.gradcheck.dims.dim = *c.dim;
  if (c.nodes) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(*c.nodes))));
    if (*c.nodes == 0 || side * side != *c.nodes)
      throw ConfigError("--nodes must be a positive perfect square, got " + std::to_string(*c.nodes));
    r.data.height = r.data.width = r.gradcheck.dims.height = r.gradcheck.dims.width = side;
  }
  if (c.epochs) r.train.epochs = r.toy.epochs = *c.epochs;
  r.validate();
  return r;
}

fs::path prepare_out(const Common& c) {
  const fs::path out(c.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
  return out;
}

Dataset dataset_for(const std::string& dir, RunConfig& cfg) {
  if (dir.empty()) return gen_dataset(cfg.data);
  Dataset ds = load_dataset(dir);
  cfg.data = ds.config;  // the echo then regenerates the same data
  return ds;
}

std::pair<std::string, fs::path> parse_model_arg(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos) return {fs::path(arg).stem().string(), arg};
  if (eq == 0 || eq + 1 == arg.size()) throw ConfigError("--model expects LABEL=PATH or PATH, got '" + arg + "'");
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

void check_compatible(const HeadModel& m, const Dataset& ds, const fs::path& path) {
  const auto& c = m.config;
  if (c.height != ds.config.height || c.width != ds.config.width || c.channels != ds.config.channels)
    throw ShapeError(path.string() + ": checkpoint expects " + std::to_string(c.channels) + "x" +
                     std::to_string(c.height) + "x" + std::to_string(c.width) + " feature maps, dataset has " +
                     std::to_string(ds.config.channels) + "x" + std::to_string(ds.config.height) + "x" +
                     std::to_string(ds.config.width));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relgraph: relational graph heads for cross-domain face matching"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, grad_c, sweep_c, toy_c, margin_c, viz_c;
  std::optional<std::size_t> train_ids, test_ids, per_id;
  std::optional<double> gap;
  std::string train_data, eval_data, sweep_data, viz_data, viz_ckpt;
  std::vector<std::string> eval_models;
  bool eval_baseline = false, corrupt = false;
  std::optional<std::size_t> grad_batch, resolution, viz_node, viz_sample;
  std::vector<std::size_t> sweep_dims;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic two-domain dataset");
  add_common(gen, gen_c);
  gen->add_option("--train-ids", train_ids, "training identities");
  gen->add_option("--test-ids", test_ids, "test identities (>= 1)");
  gen->add_option("--per-id", per_id, "samples per identity and domain");
  gen->add_option("--gap", gap, "domain gap");

  auto* tr = app.add_subcommand("train", "train a head and write a checkpoint");
  add_common(tr, train_c);
  tr->add_option("--data", train_data, "dataset directory (default: generate from config)");

  auto* ev = app.add_subcommand("eval", "rank-1 and VR@FAR for checkpoints");
  add_common(ev, eval_c);
  ev->add_option("--data", eval_data, "dataset directory (default: generate from config)");
  ev->add_option("--model", eval_models, "LABEL=CHECKPOINT, repeatable");
  ev->add_flag("--baseline", eval_baseline, "add the raw-feature cosine row first");

  auto* gc = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
  add_common(gc, grad_c);
  gc->add_option("--batch", grad_batch, "samples per check");
  gc->add_flag("--corrupt-adjoint", corrupt, "negative control: perturb one analytic gradient");

  auto* sw = app.add_subcommand("sweep-dim", "train one head per node embedding width");
  add_common(sw, sweep_c);
  sw->add_option("--data", sweep_data, "dataset directory (default: generate from config)");
  sw->add_option("--dims", sweep_dims, "widths to sweep");

  auto* toy = app.add_subcommand("toy2d", "train a two-dimensional embedding on a small set");
  add_common(toy, toy_c);

  auto* mm = app.add_subcommand("margin-map", "decision regions over (cos1, cos2)");
  add_common(mm, margin_c);
  mm->add_option("--resolution", resolution, "grid points per axis");

  auto* vz = app.add_subcommand("export-viz", "top-k edges, adjacency image and NAU scales");
  add_common(vz, viz_c);
  vz->add_option("--data", viz_data, "dataset directory (default: generate from config)");
  vz->add_option("--checkpoint", viz_ckpt, "trained checkpoint")->required();
  vz->add_option("--node", viz_node, "source node for top-k edges");
  vz->add_option("--sample", viz_sample, "probe sample whose trace is exported");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) {
      RunConfig cfg = resolve(gen_c);
      if (train_ids) cfg.data.train_ids = *train_ids;
      if (test_ids) cfg.data.test_ids = *test_ids;
      if (per_id) cfg.data.per_id = *per_id;
      if (gap) cfg.data.domain_gap = *gap;
      cfg.validate();
      const fs::path out = prepare_out(gen_c);
      save_dataset(out, gen_dataset(cfg.data));
      save_run_config(out / "config.json", cfg);
      std::cout << "dataset written to " << out.string() << "\n";
    } else if (tr->parsed()) {
      RunConfig cfg = resolve(train_c);
      const fs::path out = prepare_out(train_c);
      const Dataset ds = dataset_for(train_data, cfg);
      auto [model, log] = fit(ds, cfg.head_config(ds), cfg.train);
      save_checkpoint(out / "model.rgb", model);
      train_log_table(log).save(out / "train_log.csv");
      metrics_table({{std::string(to_string(model.config.variant)), evaluate_model(model, ds, cfg.far_levels)}},
                    cfg.far_levels)
          .save(out / "metrics.csv");
      save_run_config(out / "config.json", cfg);
      if (!log.empty())
        std::cout << "loss " << format_number(log.front().loss) << " -> " << format_number(log.back().loss) << "\n";
    } else if (ev->parsed()) {
      RunConfig cfg = resolve(eval_c);
      if (eval_models.empty() && !eval_baseline) throw ConfigError("eval needs --model or --baseline");
      const fs::path out = prepare_out(eval_c);
      const Dataset ds = dataset_for(eval_data, cfg);
      std::vector<std::pair<std::string, EvalReport>> rows;
      if (eval_baseline) rows.emplace_back("baseline", evaluate_baseline(ds, cfg.far_levels));
      for (const auto& arg : eval_models) {
        const auto [label, path] = parse_model_arg(arg);
        const HeadModel m = load_checkpoint(path);
        check_compatible(m, ds, path);
        rows.emplace_back(label, evaluate_model(m, ds, cfg.far_levels));
      }
      const CsvTable t = metrics_table(rows, cfg.far_levels);
      t.save(out / "metrics.csv");
      save_run_config(out / "config.json", cfg);
      std::cout << t.str();
    } else if (gc->parsed()) {
      RunConfig cfg = resolve(grad_c);
      if (grad_batch) cfg.gradcheck.dims.batch = *grad_batch;
      cfg.validate();
      const fs::path out = prepare_out(grad_c);
      std::vector<LossId> losses;
      if (grad_c.loss) losses = {cfg.train.loss.id};
      else losses = {LossId::softmax, LossId::nsoftmax, LossId::csoftmax, LossId::cosface, LossId::arcface,
                     LossId::triplet_cond};
      GradCheckOptions opt;
      opt.step = cfg.gradcheck.step;
      opt.tolerance = cfg.gradcheck.tolerance;
      opt.corrupt_adjoint = corrupt;
      std::vector<GradcheckRun> runs;
      bool ok = true;
      for (LossId id : losses)
        for (std::size_t k = 0; k < cfg.gradcheck.seeds; ++k) {
          const std::uint64_t seed = cfg.train.seed + k;
          LossConfig lc = cfg.train.loss;
          lc.id = id;
          auto p = make_gradcheck_problem(seed, id, cfg.model.variant, cfg.model.edge_activation, cfg.gradcheck.dims);
          runs.push_back({seed, id, gradcheck(p.model, p.input, lc, opt)});
          ok = ok && runs.back().report.passed();
        }
      gradcheck_table(runs).save(out / "gradcheck.csv");
      save_run_config(out / "config.json", cfg);
      for (LossId id : losses) {
        double worst = 0.0;
        for (const auto& r : runs)
          if (r.loss == id) worst = std::max(worst, r.report.max_rel_error());
        std::cout << to_string(id) << " max_rel_error " << format_number(worst)
                  << (worst < opt.tolerance ? " ok" : " FAIL") << "\n";
      }
      if (!ok) {
        std::cerr << "gradient check failed\n";
        return kNumerical;
      }
    } else if (sw->parsed()) {
      RunConfig cfg = resolve(sweep_c);
      if (!sweep_dims.empty()) cfg.sweep_dims = sweep_dims;
      cfg.validate();
      const fs::path out = prepare_out(sweep_c);
      const Dataset ds = dataset_for(sweep_data, cfg);
      const CsvTable t = sweep_table(dim_sweep(ds, cfg.sweep_dims, cfg.head_config(ds), cfg.train), cfg.far_levels);
      t.save(out / "sweep.csv");
      save_run_config(out / "config.json", cfg);
      std::cout << t.str();
    } else if (toy->parsed()) {
      RunConfig cfg = resolve(toy_c);
      const fs::path out = prepare_out(toy_c);
      const ToyResult r = toy2d(cfg.toy_config());
      toy_points_table(r.points).save(out / "toy2d.csv");
      toy_stats_table(r.stats).save(out / "toy2d_stats.csv");
      train_log_table(r.log).save(out / "train_log.csv");
      save_run_config(out / "config.json", cfg);
      std::cout << toy_stats_table(r.stats).str();
    } else if (mm->parsed()) {
      RunConfig cfg = resolve(margin_c);
      if (resolution) cfg.margin_resolution = *resolution;
      cfg.validate();
      const fs::path out = prepare_out(margin_c);
      const MarginGrid g = margin_map(cfg.train.loss, cfg.margin_resolution, cfg.train.loss.scale());
      margin_map_table(g).save(out / "margin_map.csv");
      detail::write_file(out / "margin_map.pgm", margin_map_pgm(g));
      save_run_config(out / "config.json", cfg);
    } else if (vz->parsed()) {
      RunConfig cfg = resolve(viz_c);
      if (viz_node) cfg.viz.node = *viz_node;
      const fs::path out = prepare_out(viz_c);
      const Dataset ds = dataset_for(viz_data, cfg);
      const HeadModel m = load_checkpoint(viz_ckpt);
      check_compatible(m, ds, viz_ckpt);
      if (m.config.variant == Variant::linear) throw ConfigError("export-viz needs a relational checkpoint");
      const std::size_t sample = viz_sample.value_or(0);
      if (sample >= ds.probe.size())
        throw ConfigError("--sample " + std::to_string(sample) + " outside [0, " + std::to_string(ds.probe.size()) + ")");
      if (cfg.viz.node >= m.config.nodes())
        throw ConfigError("--node " + std::to_string(cfg.viz.node) + " outside [0, " +
                          std::to_string(m.config.nodes()) + ")");
      export_edge_topk(m.forward(ds.probe[sample].features).trace, cfg.viz.node, out / "edges", cfg.viz.topk);
      if (m.config.variant == Variant::rgm_nau) {
        std::vector<Sample> subjects = ds.gallery;
        subjects.insert(subjects.end(), ds.probe.begin(), ds.probe.end());
        std::vector<RgmTrace> traces;
        for (const auto& s : subjects) traces.push_back(m.forward(s.features).trace);
        export_nau_scales(traces, subjects, out / "nau_scales.csv");
      }
      save_run_config(out / "config.json", cfg);
    }
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
