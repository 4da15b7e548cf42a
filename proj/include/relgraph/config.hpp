#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relgraph/errors.hpp"
#include "relgraph/eval.hpp"
#include "relgraph/gradcheck.hpp"
#include "relgraph/model.hpp"
#include "relgraph/synth.hpp"
#include "relgraph/train.hpp"

namespace relgraph {

struct ModelSettings {
  Variant variant = Variant::rgm_nau;
  std::size_t dim = 16;
  std::size_t out_dim = 64;
  std::size_t nau_ratio = 2;
  EdgeActivation edge_activation = EdgeActivation::sigmoid;
};

struct GradcheckSettings {
  std::size_t seeds = 10;
  GradCheckDims dims;
  double step = 1e-5;
  double tolerance = 1e-6;
};

struct ToySettings {
  std::size_t classes = 8;
  std::size_t per_class_per_domain = 15;
  double domain_gap = 0.5;
  double noise = 0.3;
  double sharpness = 2.0;
  double lr = 0.001;
  std::size_t epochs = 300;
  std::size_t batch = 64;
  double dropout = 0.0;
};

struct VizSettings {
  std::size_t node = 0;
  std::size_t topk = 5;
};

/// Everything a CLI run reads. Serialises to a nested JSON object; the echo
/// written next to each run's outputs reproduces the run.
struct RunConfig {
  DatasetConfig data;
  ModelSettings model;
  TrainConfig train;
  std::vector<double> far_levels = kDefaultFarLevels;
  std::vector<std::size_t> sweep_dims{16, 32, 64, 128, 256};
  std::size_t margin_resolution = 512;
  VizSettings viz;
  GradcheckSettings gradcheck;
  ToySettings toy;

  HeadConfig head_config(const Dataset& ds) const {
    HeadConfig h = head_config_for(ds, model.variant, model.dim, model.out_dim, model.edge_activation);
    h.nau_ratio = model.nau_ratio;
    return h;
  }

  ToyConfig toy_config() const {
    ToyConfig t;
    t.classes = toy.classes;
    t.per_class_per_domain = toy.per_class_per_domain;
    t.height = data.height;
    t.width = data.width;
    t.channels = data.channels;
    t.domain_gap = toy.domain_gap;
    t.noise = toy.noise;
    t.sharpness = toy.sharpness;
    t.variant = model.variant;
    t.dim = model.dim;
    t.train = train;
    t.train.lr = toy.lr;
    t.train.epochs = toy.epochs;
    t.train.batch = toy.batch;
    t.train.dropout = toy.dropout;
    return t;
  }

  void validate() const {
    data.validate();
    train.validate();
    if (model.dim == 0 || model.out_dim == 0 || model.nau_ratio == 0)
      throw ConfigError("model dims and nau_ratio must be >= 1");
    if (far_levels.empty()) throw ConfigError("eval.far_levels must not be empty");
    for (double f : far_levels)
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("far levels must lie in (0, 1]");
    if (margin_resolution < 2) throw ConfigError("margin_map.resolution must be >= 2");
    if (gradcheck.seeds == 0) throw ConfigError("gradcheck.seeds must be >= 1");
    if (gradcheck.dims.batch == 0) throw ConfigError("gradcheck.batch must be >= 1");
    if (toy.classes == 0 || toy.per_class_per_domain == 0) throw ConfigError("toy counts must be >= 1");
    toy_config().train.validate();
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& g = c.gradcheck;
  return {
      {"data", to_json(c.data)},
      {"model",
       {{"variant", to_string(c.model.variant)},
        {"dim", c.model.dim},
        {"out_dim", c.model.out_dim},
        {"nau_ratio", c.model.nau_ratio},
        {"edge_activation", to_string(c.model.edge_activation)}}},
      {"train",
       {{"lr", c.train.lr},
        {"batch", c.train.batch},
        {"momentum", c.train.momentum},
        {"epochs", c.train.epochs},
        {"dropout", c.train.dropout},
        {"weight_decay", c.train.weight_decay},
        {"lr_decay", c.train.lr_decay},
        {"milestones", c.train.milestones},
        {"seed", c.train.seed}}},
      {"loss",
       {{"id", to_string(c.train.loss.id)},
        {"m1", c.train.loss.margin.m1},
        {"m2", c.train.loss.margin.m2},
        {"alpha", c.train.loss.margin.alpha},
        {"scale", c.train.loss.margin.s},
        {"cosface_margin", c.train.loss.cosface_margin},
        {"arcface_margin", c.train.loss.arcface_margin},
        {"triplet_margin", c.train.loss.triplet_margin}}},
      {"eval", {{"far_levels", c.far_levels}}},
      {"sweep", {{"dims", c.sweep_dims}}},
      {"margin_map", {{"resolution", c.margin_resolution}}},
      {"viz", {{"node", c.viz.node}, {"topk", c.viz.topk}}},
      {"gradcheck",
       {{"seeds", g.seeds},
        {"batch", g.dims.batch},
        {"height", g.dims.height},
        {"width", g.dims.width},
        {"channels", g.dims.channels},
        {"dim", g.dims.dim},
        {"out_dim", g.dims.out_dim},
        {"classes", g.dims.classes},
        {"step", g.step},
        {"tolerance", g.tolerance}}},
      {"toy",
       {{"classes", c.toy.classes},
        {"per_class_per_domain", c.toy.per_class_per_domain},
        {"domain_gap", c.toy.domain_gap},
        {"noise", c.toy.noise},
        {"sharpness", c.toy.sharpness},
        {"lr", c.toy.lr},
        {"epochs", c.toy.epochs},
        {"batch", c.toy.batch},
        {"dropout", c.toy.dropout}}},
  };
}

namespace detail {

// Every key of `given` must exist in `known`, recursively through objects.
inline void reject_unknown(const nlohmann::json& given, const nlohmann::json& known, const std::string& prefix) {
  if (!given.is_object()) throw ConfigError("config: '" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!known.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    if (known.at(key).is_object()) reject_unknown(value, known.at(key), path);
  }
}

inline std::size_t count(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) throw ConfigError(std::string("config: '") + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

inline double real(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigError(std::string("config: '") + key + "' must be a number");
  return v.get<double>();
}

}  // namespace detail

/// Applies `patch` over the defaults. Keys not present keep their default
/// values; keys the defaults do not have are rejected.
inline RunConfig run_config_from_json(const nlohmann::json& patch) {
  using detail::count;
  using detail::real;
  const nlohmann::json defaults = to_json(RunConfig{});
  detail::reject_unknown(patch, defaults, "");
  nlohmann::json j = defaults;
  j.merge_patch(patch);
  try {
    RunConfig c;
    const auto& d = j.at("data");
    c.data.train_ids = count(d, "train_ids");
    c.data.test_ids = count(d, "test_ids");
    c.data.per_id = count(d, "per_id");
    c.data.height = count(d, "height");
    c.data.width = count(d, "width");
    c.data.channels = count(d, "channels");
    c.data.domain_gap = real(d, "domain_gap");
    c.data.noise = real(d, "noise");
    c.data.sharpness = real(d, "sharpness");
    c.data.seed = count(d, "seed");

    const auto& m = j.at("model");
    c.model.variant = parse_variant(m.at("variant").get<std::string>());
    c.model.dim = count(m, "dim");
    c.model.out_dim = count(m, "out_dim");
    c.model.nau_ratio = count(m, "nau_ratio");
    c.model.edge_activation = parse_edge_activation(m.at("edge_activation").get<std::string>());

    const auto& t = j.at("train");
    c.train.lr = real(t, "lr");
    c.train.batch = count(t, "batch");
    c.train.momentum = real(t, "momentum");
    c.train.epochs = count(t, "epochs");
    c.train.dropout = real(t, "dropout");
    c.train.weight_decay = real(t, "weight_decay");
    c.train.lr_decay = real(t, "lr_decay");
    c.train.milestones = t.at("milestones").get<std::vector<double>>();
    c.train.seed = count(t, "seed");

    const auto& l = j.at("loss");
    c.train.loss.id = parse_loss_id(l.at("id").get<std::string>());
    c.train.loss.margin.m1 = real(l, "m1");
    c.train.loss.margin.m2 = real(l, "m2");
    c.train.loss.margin.alpha = real(l, "alpha");
    c.train.loss.margin.s = real(l, "scale");
    c.train.loss.cosface_margin = real(l, "cosface_margin");
    c.train.loss.arcface_margin = real(l, "arcface_margin");
    c.train.loss.triplet_margin = real(l, "triplet_margin");

    c.far_levels = j.at("eval").at("far_levels").get<std::vector<double>>();
    c.sweep_dims = j.at("sweep").at("dims").get<std::vector<std::size_t>>();
    c.margin_resolution = count(j.at("margin_map"), "resolution");
    c.viz.node = count(j.at("viz"), "node");
    c.viz.topk = count(j.at("viz"), "topk");

    const auto& g = j.at("gradcheck");
    c.gradcheck.seeds = count(g, "seeds");
    c.gradcheck.dims.batch = count(g, "batch");
    c.gradcheck.dims.height = count(g, "height");
    c.gradcheck.dims.width = count(g, "width");
    c.gradcheck.dims.channels = count(g, "channels");
    c.gradcheck.dims.dim = count(g, "dim");
    c.gradcheck.dims.out_dim = count(g, "out_dim");
    c.gradcheck.dims.classes = count(g, "classes");
    c.gradcheck.step = real(g, "step");
    c.gradcheck.tolerance = real(g, "tolerance");

    const auto& y = j.at("toy");
    c.toy.classes = count(y, "classes");
    c.toy.per_class_per_domain = count(y, "per_class_per_domain");
    c.toy.domain_gap = real(y, "domain_gap");
    c.toy.noise = real(y, "noise");
    c.toy.sharpness = real(y, "sharpness");
    c.toy.lr = real(y, "lr");
    c.toy.epochs = count(y, "epochs");
    c.toy.batch = count(y, "batch");
    c.toy.dropout = real(y, "dropout");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  detail::write_file(path, to_json(c).dump(2) + "\n");
}

}  // namespace relgraph
