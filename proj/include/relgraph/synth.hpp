#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "relgraph/rgm.hpp"
#include "relgraph/rng.hpp"
#include "relgraph/tensor_io.hpp"

namespace relgraph {

enum class Domain { vis, nir };

inline std::string_view to_string(Domain d) { return d == Domain::vis ? "VIS" : "NIR"; }

inline Domain parse_domain(std::string_view s) {
  if (s == "VIS") return Domain::vis;
  if (s == "NIR") return Domain::nir;
  throw ConfigError("unknown domain '" + std::string(s) + "'");
}

/// One synthetic subject: base part vectors and the row-stochastic mixing
/// matrix that relates them. The mixing matrix is the subject's relational
/// signature and is shared by every domain.
struct IdentitySpec {
  std::size_t id = 0;
  Tensor parts;      // N×C
  Tensor structure;  // N×N, rows sum to 1
};

/// Per-channel affine distortion plus isotropic noise for one imaging domain.
struct DomainSpec {
  Domain name = Domain::vis;
  Tensor gain;  // C, > 0
  Tensor bias;  // C
  double noise_sigma = 0.0;
};

struct Sample {
  FeatureMap features;
  std::size_t identity = 0;
  Domain domain = Domain::vis;
};

inline IdentitySpec gen_identity(Rng& rng, std::size_t nodes, std::size_t channels, double sharpness,
                                 std::size_t id = 0) {
  if (nodes == 0 || channels == 0) throw ConfigError("gen_identity: nodes and channels must be >= 1");
  IdentitySpec spec;
  spec.id = id;
  spec.parts = rng.normal_tensor({nodes, channels});
  spec.structure = row_softmax(scale(rng.normal_tensor({nodes, nodes}), sharpness));
  return spec;
}

inline DomainSpec identity_domain(std::size_t channels, double noise_sigma) {
  return DomainSpec{Domain::vis, Tensor::filled({channels}, 1.0), Tensor({channels}), noise_sigma};
}

/// A distorted domain: gain_c = exp(gap·g_c / 5), bias_c = gap·b_c with g, b standard normal.
inline DomainSpec distorted_domain(Domain name, std::size_t channels, double gap, double noise_sigma, Rng& rng) {
  DomainSpec d{name, Tensor({channels}), Tensor({channels}), noise_sigma};
  for (std::size_t c = 0; c < channels; ++c) d.gain[c] = std::exp(0.2 * gap * rng.normal());
  for (std::size_t c = 0; c < channels; ++c) d.bias[c] = gap * rng.normal();
  return d;
}

/// features(c, i) = gain_c · (structure·parts)(i, c) + bias_c + σ·ε, laid out C×H×W.
inline Sample gen_sample(const IdentitySpec& spec, const DomainSpec& dom, std::size_t height, std::size_t width,
                         Rng& rng) {
  const Tensor mixed = matmul(spec.structure, spec.parts);
  const std::size_t n = mixed.rows(), c = mixed.cols();
  if (n != height * width) throw ShapeError("gen_sample: identity has " + std::to_string(n) + " nodes, map is " +
                                            std::to_string(height) + "x" + std::to_string(width));
  if (dom.gain.size() != c || dom.bias.size() != c)
    throw ShapeError("gen_sample: domain has " + std::to_string(dom.gain.size()) + " channels, identity " +
                     std::to_string(c));
  Tensor data({c, height, width});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) {
      double v = dom.gain[ch] * mixed(i, ch) + dom.bias[ch];
      if (dom.noise_sigma != 0.0) v += dom.noise_sigma * rng.normal();
      data[ch * n + i] = v;
    }
  return Sample{FeatureMap(std::move(data)), spec.id, dom.name};
}

struct DatasetConfig {
  std::size_t train_ids = 40;
  std::size_t test_ids = 20;
  std::size_t per_id = 5;  // samples per identity per domain (train) and NIR probes per test identity
  std::size_t height = 4;
  std::size_t width = 4;
  std::size_t channels = 16;
  double domain_gap = 1.5;
  double noise = 0.3;
  double sharpness = 0.5;
  std::uint64_t seed = 1;

  std::size_t nodes() const { return height * width; }

  void validate() const {
    if (train_ids < 1 || test_ids < 1 || per_id < 1) throw ConfigError("dataset counts must be >= 1");
    if (height < 1 || width < 1 || channels < 1) throw ConfigError("dataset dims must be >= 1");
    if (noise < 0.0 || domain_gap < 0.0) throw ConfigError("noise and domain gap must be non-negative");
  }
};

struct Dataset {
  DatasetConfig config;
  std::vector<Sample> train;    // both domains, identities [0, train_ids)
  std::vector<Sample> gallery;  // one VIS sample per test identity
  std::vector<Sample> probe;    // per_id NIR samples per test identity
};

namespace detail {
enum : std::uint64_t { kStreamDomains = 1, kStreamIdentity = 2, kStreamSample = 3 };
}

inline Dataset gen_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);
  Rng dom_rng = root.substream(detail::kStreamDomains);
  const DomainSpec vis = identity_domain(cfg.channels, cfg.noise);
  const DomainSpec nir = distorted_domain(Domain::nir, cfg.channels, cfg.domain_gap, cfg.noise, dom_rng);

  const Rng id_root = root.substream(detail::kStreamIdentity);
  const Rng sample_root = root.substream(detail::kStreamSample);
  auto make = [&](const IdentitySpec& spec, const DomainSpec& dom, std::uint64_t k) {
    Rng r = sample_root.substream(spec.id).substream(dom.name == Domain::vis ? 0 : 1).substream(k);
    return gen_sample(spec, dom, cfg.height, cfg.width, r);
  };

  Dataset ds;
  ds.config = cfg;
  for (std::size_t id = 0; id < cfg.train_ids + cfg.test_ids; ++id) {
    Rng r = id_root.substream(id);
    const IdentitySpec spec = gen_identity(r, cfg.nodes(), cfg.channels, cfg.sharpness, id);
    if (id < cfg.train_ids) {
      for (std::size_t k = 0; k < cfg.per_id; ++k) ds.train.push_back(make(spec, vis, k));
      for (std::size_t k = 0; k < cfg.per_id; ++k) ds.train.push_back(make(spec, nir, k));
    } else {
      ds.gallery.push_back(make(spec, vis, 0));
      for (std::size_t k = 0; k < cfg.per_id; ++k) ds.probe.push_back(make(spec, nir, k));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// On-disk layout: <dir>/manifest.json plus <dir>/tensors/<split>_<index>.rgt

inline nlohmann::json to_json(const DatasetConfig& c) {
  return {{"train_ids", c.train_ids}, {"test_ids", c.test_ids}, {"per_id", c.per_id},
          {"height", c.height},       {"width", c.width},       {"channels", c.channels},
          {"domain_gap", c.domain_gap}, {"noise", c.noise},     {"sharpness", c.sharpness},
          {"seed", c.seed}};
}

inline DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.train_ids = j.at("train_ids").get<std::size_t>();
  c.test_ids = j.at("test_ids").get<std::size_t>();
  c.per_id = j.at("per_id").get<std::size_t>();
  c.height = j.at("height").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.channels = j.at("channels").get<std::size_t>();
  c.domain_gap = j.at("domain_gap").get<double>();
  c.noise = j.at("noise").get<double>();
  c.sharpness = j.at("sharpness").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

struct ManifestEntry {
  std::string split;
  std::size_t identity = 0;
  Domain domain = Domain::vis;
  std::string path;  // relative to the dataset directory
  Dims dims;
};

struct Manifest {
  DatasetConfig config;
  std::vector<ManifestEntry> entries;
};

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& e : m.entries)
    samples.push_back({{"split", e.split}, {"id", e.identity}, {"domain", to_string(e.domain)},
                       {"path", e.path}, {"dims", e.dims}});
  nlohmann::json j = {{"format", "relgraph-dataset-v1"}, {"config", to_json(m.config)}, {"samples", samples}};
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << j.dump(1) << '\n';
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path.string() + "' for reading");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what(), e.byte);
  }
  try {
    if (j.at("format") != "relgraph-dataset-v1") throw FormatError(path.string() + ": unknown manifest format", 0);
    Manifest m;
    m.config = dataset_config_from_json(j.at("config"));
    for (const auto& s : j.at("samples"))
      m.entries.push_back({s.at("split").get<std::string>(), s.at("id").get<std::size_t>(),
                           parse_domain(s.at("domain").get<std::string>()), s.at("path").get<std::string>(),
                           s.at("dims").get<Dims>()});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed manifest: " + e.what(), 0);
  }
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "tensors", ec);
  if (ec) throw IoError("cannot create '" + (dir / "tensors").string() + "': " + ec.message());
  Manifest m{ds.config, {}};
  auto emit = [&](const char* split, const std::vector<Sample>& samples) {
    for (std::size_t k = 0; k < samples.size(); ++k) {
      char name[64];
      std::snprintf(name, sizeof name, "tensors/%s_%05zu.rgt", split, k);
      save_tensor(dir / name, samples[k].features.data);
      m.entries.push_back({split, samples[k].identity, samples[k].domain, name, samples[k].features.data.dims()});
    }
  };
  emit("train", ds.train);
  emit("gallery", ds.gallery);
  emit("probe", ds.probe);
  save_manifest(dir / "manifest.json", m);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const Manifest m = load_manifest(dir / "manifest.json");
  Dataset ds;
  ds.config = m.config;
  const Dims expected{m.config.channels, m.config.height, m.config.width};
  for (const auto& e : m.entries) {
    Tensor t = load_tensor(dir / e.path);
    if (t.dims() != e.dims || t.dims() != expected)
      throw FormatError((dir / e.path).string() + ": dims " + dims_to_string(t.dims()) + " disagree with manifest " +
                            dims_to_string(expected),
                        8);
    Sample s{FeatureMap(std::move(t)), e.identity, e.domain};
    if (e.split == "train") ds.train.push_back(std::move(s));
    else if (e.split == "gallery") ds.gallery.push_back(std::move(s));
    else if (e.split == "probe") ds.probe.push_back(std::move(s));
    else throw FormatError("manifest: unknown split '" + e.split + "'", 0);
  }
  return ds;
}

}  // namespace relgraph
