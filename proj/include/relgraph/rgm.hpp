#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "relgraph/nau.hpp"
#include "relgraph/rng.hpp"
#include "relgraph/tensor.hpp"

namespace relgraph {

/// Backbone output, stored channel-major as C×H×W. Each of the H·W spatial
/// positions becomes one graph node.
struct FeatureMap {
  Tensor data;

  FeatureMap() = default;
  explicit FeatureMap(Tensor t) : data(std::move(t)) { require_rank(data, 3, "FeatureMap"); }

  std::size_t channels() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
  std::size_t nodes() const { return height() * width(); }
};

/// Row i is the channel vector at spatial position i (row-major over h, w).
inline Tensor nodes_from_feature_map(const FeatureMap& fm) {
  const std::size_t c = fm.channels(), n = fm.nodes();
  Tensor nodes({n, c});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) nodes(i, ch) = fm.data[ch * n + i];
  return nodes;
}

inline FeatureMap feature_map_from_nodes(const Tensor& nodes, std::size_t height, std::size_t width) {
  require_rank(nodes, 2, "feature_map_from_nodes");
  if (nodes.rows() != height * width)
    throw ShapeError("feature_map_from_nodes: " + std::to_string(nodes.rows()) + " nodes cannot fill " +
                     std::to_string(height) + "x" + std::to_string(width));
  const std::size_t c = nodes.cols(), n = nodes.rows();
  Tensor data({c, height, width});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) data[ch * n + i] = nodes(i, ch);
  return FeatureMap(std::move(data));
}

enum class EdgeActivation { sigmoid, softmax };

inline std::string_view to_string(EdgeActivation a) { return a == EdgeActivation::sigmoid ? "sigmoid" : "softmax"; }

inline EdgeActivation parse_edge_activation(std::string_view s) {
  if (s == "sigmoid") return EdgeActivation::sigmoid;
  if (s == "softmax") return EdgeActivation::softmax;
  throw ConfigError("unknown edge activation '" + std::string(s) + "'");
}

/// Directed relation matrix together with its pre-activation scores.
struct Adjacency {
  Tensor scores;  // E, N×N
  Tensor value;   // A, N×N
  EdgeActivation activation = EdgeActivation::sigmoid;
};

struct RgmParams {
  Tensor w1;   // C×d
  Tensor we;   // 2d
  Tensor w2;   // d×C
  Tensor wfc;  // (N·C)×L
  Tensor bfc;  // L
  EdgeActivation edge_activation = EdgeActivation::sigmoid;
  std::uint64_t version = next_param_version();

  std::size_t channels() const { return w1.rows(); }
  std::size_t embed_dim() const { return w1.cols(); }
  std::size_t nodes() const { return wfc.rows() / w1.rows(); }
  std::size_t out_dim() const { return wfc.cols(); }
  void touch() { version = next_param_version(); }
};

inline RgmParams make_rgm_params(std::size_t nodes, std::size_t channels, std::size_t dim, std::size_t out_dim,
                                 EdgeActivation act = EdgeActivation::sigmoid) {
  if (dim < 1) throw ConfigError("node embedding dimension must be >= 1");
  if (out_dim < 2) throw ConfigError("embedding length must be >= 2");
  return RgmParams{Tensor({channels, dim}), Tensor({2 * dim}), Tensor({dim, channels}),
                   Tensor({nodes * channels, out_dim}), Tensor({out_dim}), act};
}

/// Gaussian init scaled by 1/sqrt(fan_in) for every weight; biases start at zero.
inline RgmParams init_rgm_params(std::size_t nodes, std::size_t channels, std::size_t dim, std::size_t out_dim,
                                 EdgeActivation act, Rng& rng) {
  RgmParams p = make_rgm_params(nodes, channels, dim, out_dim, act);
  auto fan = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  p.w1 = rng.normal_tensor(p.w1.dims(), fan(channels));
  p.we = rng.normal_tensor(p.we.dims(), fan(2 * dim));
  p.w2 = rng.normal_tensor(p.w2.dims(), fan(dim));
  p.wfc = rng.normal_tensor(p.wfc.dims(), fan(nodes * channels));
  return p;
}

inline void validate(const RgmParams& p) {
  require_rank(p.w1, 2, "W1");
  require_rank(p.w2, 2, "W2");
  require_rank(p.wfc, 2, "Wfc");
  const std::size_t c = p.w1.rows(), d = p.w1.cols();
  if (p.we.dims() != Dims{2 * d} || p.w2.dims() != Dims{d, c} || p.wfc.rows() % c != 0 ||
      p.bfc.dims() != Dims{p.wfc.cols()})
    throw ShapeError("RGM parameters inconsistent: W1 " + dims_to_string(p.w1.dims()) + ", We " +
                     dims_to_string(p.we.dims()) + ", W2 " + dims_to_string(p.w2.dims()) + ", Wfc " +
                     dims_to_string(p.wfc.dims()) + ", bfc " + dims_to_string(p.bfc.dims()));
}

/// h = nodes · W1
inline Tensor embed_nodes(const Tensor& nodes, const Tensor& w1) { return matmul(nodes, w1); }

/// E_ij = Weᵀ [n_i, n_j]; A = sigmoid(E), or row-softmax(E).
inline Adjacency edge_scores(const Tensor& nodes, const Tensor& we, EdgeActivation act) {
  require_rank(nodes, 2, "edge_scores nodes");
  const std::size_t n = nodes.rows(), d = nodes.cols();
  if (we.dims() != Dims{2 * d})
    throw ShapeError("edge_scores: We has dims " + dims_to_string(we.dims()) + ", expected [" +
                     std::to_string(2 * d) + "]");
  // Weᵀ[n_i, n_j] splits into a source term and a target term.
  std::vector<double> src(n), dst(n);
  const auto w_src = we.data().subspan(0, d), w_dst = we.data().subspan(d, d);
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = dot(nodes.row(i), w_src);
    dst[i] = dot(nodes.row(i), w_dst);
  }
  Adjacency adj{Tensor({n, n}), Tensor(), act};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) adj.scores(i, j) = src[i] + dst[j];
  adj.value = act == EdgeActivation::sigmoid ? sigmoid(adj.scores) : row_softmax(adj.scores);
  return adj;
}

/// n*_i = Σ_k A_ik n_k
inline Tensor propagate(const Tensor& adjacency, const Tensor& nodes) {
  require_rank(adjacency, 2, "propagate adjacency");
  if (adjacency.rows() != adjacency.cols())
    throw ShapeError("propagate: adjacency must be square, got " + dims_to_string(adjacency.dims()));
  return matmul(adjacency, nodes);
}

/// Inverted-dropout mask: each entry is 0 with probability p, else 1/(1-p).
inline Tensor make_dropout_mask(std::size_t size, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1)");
  Tensor mask({size});
  const double keep = 1.0 / (1.0 - p);
  for (auto& v : mask.data()) v = rng.uniform() < p ? 0.0 : keep;
  return mask;
}

/// Everything the backward pass and the visualisers need from one forward pass.
struct RgmTrace {
  const RgmParams* params = nullptr;
  std::uint64_t version = 0;
  bool relational = true;

  std::size_t height = 0, width = 0;
  Tensor nodes;          // N×C input nodes (pre-residual)
  Tensor embedded;       // N×d
  Adjacency adjacency;
  Tensor propagated;     // N×d
  std::optional<NauTrace> nau;
  Tensor recalibrated;   // N×d, NAU output (or propagated when NAU is off)
  Tensor out_nodes;      // N×C, nodes + re-embedded relational term
  Tensor dropout_mask;   // N·C or empty
  Tensor head_input;     // flattened out_nodes after dropout

  const Tensor& scales() const {
    if (!nau) throw ContractError("trace has no NAU scales");
    return nau->scales;
  }
};

struct RgmForward {
  Tensor embedding;  // L
  RgmTrace trace;
};

struct RgmGrads {
  Tensor w1, we, w2, wfc, bfc;
  std::optional<NauGrads> nau;
  Tensor nodes;  // d loss / d input nodes, N×C
};

namespace detail {

inline void project(const Tensor& out_nodes, const RgmParams& p, const Tensor* mask, RgmTrace& t, Tensor& emb) {
  t.out_nodes = out_nodes;
  Tensor flat = out_nodes.reshaped({out_nodes.size()});
  if (mask != nullptr) {
    require_same_shape(*mask, flat, "dropout mask");
    flat = hadamard(flat, *mask);
    t.dropout_mask = *mask;
  }
  if (flat.size() != p.wfc.rows())
    throw ShapeError("projection: flattened nodes have " + std::to_string(flat.size()) + " entries but Wfc expects " +
                     std::to_string(p.wfc.rows()));
  emb = p.bfc;
  const std::size_t l = p.wfc.cols();
  for (std::size_t r = 0; r < flat.size(); ++r) {
    const double x = flat[r];
    if (x == 0.0) continue;
    auto w = p.wfc.row(r);
    for (std::size_t j = 0; j < l; ++j) emb[j] += x * w[j];
  }
  t.head_input = std::move(flat);
}

}  // namespace detail

/// Full relational head: embed → edges → propagate → NAU → re-embed →
/// residual → flatten → (dropout) → linear projection. Pass `nau = nullptr`
/// to run without the attention unit.
inline RgmForward rgm_forward(const FeatureMap& fm, const RgmParams& p, const NauParams* nau,
                              const Tensor* dropout_mask = nullptr) {
  validate(p);
  if (fm.channels() != p.channels())
    throw ShapeError("rgm_forward: feature map has " + std::to_string(fm.channels()) + " channels, W1 expects " +
                     std::to_string(p.channels()));
  RgmForward f;
  RgmTrace& t = f.trace;
  t.params = &p;
  t.version = p.version;
  t.height = fm.height();
  t.width = fm.width();
  t.nodes = nodes_from_feature_map(fm);
  t.embedded = embed_nodes(t.nodes, p.w1);
  t.adjacency = edge_scores(t.embedded, p.we, p.edge_activation);
  t.propagated = propagate(t.adjacency.value, t.embedded);
  if (nau != nullptr) {
    NauResult r = nau_forward(t.propagated, *nau);
    t.recalibrated = std::move(r.output);
    t.nau = std::move(r.trace);
  } else {
    t.recalibrated = t.propagated;
  }
  Tensor out = add(t.nodes, matmul(t.recalibrated, p.w2));
  detail::project(out, p, dropout_mask, t, f.embedding);
  return f;
}

/// The frozen-feature linear head: flatten(nodes) → (dropout) → projection.
/// Only Wfc and bfc of `p` are read.
inline RgmForward linear_head_forward(const FeatureMap& fm, const RgmParams& p, const Tensor* dropout_mask = nullptr) {
  validate(p);
  RgmForward f;
  RgmTrace& t = f.trace;
  t.params = &p;
  t.version = p.version;
  t.relational = false;
  t.height = fm.height();
  t.width = fm.width();
  t.nodes = nodes_from_feature_map(fm);
  detail::project(t.nodes, p, dropout_mask, t, f.embedding);
  return f;
}

inline RgmGrads rgm_backward(const RgmTrace& t, const Tensor& d_embedding) {
  if (t.params == nullptr || t.params->version != t.version)
    throw ContractError("rgm_backward: trace does not belong to the current RGM parameters");
  const RgmParams& p = *t.params;
  if (d_embedding.dims() != Dims{p.out_dim()})
    throw ShapeError("rgm_backward: d_embedding has dims " + dims_to_string(d_embedding.dims()));

  RgmGrads g;
  g.bfc = d_embedding;
  g.wfc = Tensor(p.wfc.dims());
  const std::size_t l = p.out_dim();
  Tensor d_flat({t.head_input.size()});
  for (std::size_t r = 0; r < t.head_input.size(); ++r) {
    const double x = t.head_input[r];
    auto gw = g.wfc.row(r);
    auto w = p.wfc.row(r);
    double acc = 0.0;
    for (std::size_t j = 0; j < l; ++j) {
      gw[j] = x * d_embedding[j];
      acc += w[j] * d_embedding[j];
    }
    d_flat[r] = acc;
  }
  if (!t.dropout_mask.data().empty()) d_flat = hadamard(d_flat, t.dropout_mask);
  Tensor d_out = d_flat.reshaped(t.out_nodes.dims());

  if (!t.relational) {
    g.w1 = Tensor(p.w1.dims());
    g.we = Tensor(p.we.dims());
    g.w2 = Tensor(p.w2.dims());
    g.nodes = std::move(d_out);
    return g;
  }

  // residual: out = nodes + recalibrated·W2
  g.w2 = matmul_tn(t.recalibrated, d_out);
  Tensor d_recal = matmul_nt(d_out, p.w2);

  Tensor d_prop;
  if (t.nau) {
    NauGrads ng = nau_backward(*t.nau, d_recal);
    d_prop = std::move(ng.input);
    ng.input = Tensor();
    g.nau = std::move(ng);
  } else {
    d_prop = std::move(d_recal);
  }

  // propagated = A·h
  const Tensor& a = t.adjacency.value;
  Tensor d_a = matmul_nt(d_prop, t.embedded);
  Tensor d_h = matmul_tn(a, d_prop);

  const std::size_t n = a.rows(), d = t.embedded.cols();
  Tensor d_e({n, n});
  if (t.adjacency.activation == EdgeActivation::sigmoid) {
    for (std::size_t i = 0; i < d_e.size(); ++i) d_e[i] = d_a[i] * a[i] * (1.0 - a[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double inner = dot(d_a.row(i), a.row(i));
      for (std::size_t j = 0; j < n; ++j) d_e(i, j) = a(i, j) * (d_a(i, j) - inner);
    }
  }

  // E_ij = src_i + dst_j
  std::vector<double> d_src(n, 0.0), d_dst(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      d_src[i] += d_e(i, j);
      d_dst[j] += d_e(i, j);
    }
  g.we = Tensor(p.we.dims());
  for (std::size_t i = 0; i < n; ++i) {
    auto h = t.embedded.row(i);
    auto dh = d_h.row(i);
    for (std::size_t c = 0; c < d; ++c) {
      g.we[c] += h[c] * d_src[i];
      g.we[d + c] += h[c] * d_dst[i];
      dh[c] += d_src[i] * p.we[c] + d_dst[i] * p.we[d + c];
    }
  }

  // h = nodes·W1
  g.w1 = matmul_tn(t.nodes, d_h);
  g.nodes = add(d_out, matmul_nt(d_h, p.w1));
  return g;
}

/// d loss / d feature map in C×H×W layout.
inline Tensor feature_gradient(const RgmTrace& t, const RgmGrads& g) {
  return feature_map_from_nodes(g.nodes, t.height, t.width).data;
}

// ---------------------------------------------------------------------------
// Pairwise relation module (baseline)

struct RmParams {
  Tensor wg;    // 2C×Lr, shared pair embedding
  Tensor wout;  // (P·Lr)×L
  Tensor bout;  // L
};

inline std::size_t rm_pair_count(std::size_t nodes) { return nodes * (nodes + 1) / 2; }

/// Unordered pairs (i ≤ j) in row-major order: (0,0), (0,1), …, (1,1), …
inline std::vector<std::pair<std::size_t, std::size_t>> rm_pairs(std::size_t nodes) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(rm_pair_count(nodes));
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t j = i; j < nodes; ++j) pairs.emplace_back(i, j);
  return pairs;
}

inline RmParams init_rm_params(std::size_t nodes, std::size_t channels, std::size_t relation_dim,
                               std::size_t out_dim, Rng& rng) {
  const std::size_t p = rm_pair_count(nodes);
  return RmParams{rng.normal_tensor({2 * channels, relation_dim}, 1.0 / std::sqrt(2.0 * channels)),
                  rng.normal_tensor({p * relation_dim, out_dim}, 1.0 / std::sqrt(static_cast<double>(p * relation_dim))),
                  Tensor({out_dim})};
}

/// Embed every unordered node pair through the shared ReLU layer, concatenate
/// the relation vectors and project them to L dimensions.
inline Tensor rm_forward(const FeatureMap& fm, const RmParams& p) {
  const Tensor nodes = nodes_from_feature_map(fm);
  const std::size_t n = nodes.rows(), c = nodes.cols();
  require_rank(p.wg, 2, "RM Wg");
  if (p.wg.rows() != 2 * c)
    throw ShapeError("rm_forward: Wg has " + std::to_string(p.wg.rows()) + " rows, expected " + std::to_string(2 * c));
  const std::size_t lr = p.wg.cols();
  const auto pairs = rm_pairs(n);
  if (p.wout.dims() != Dims{pairs.size() * lr, p.bout.size()})
    throw ShapeError("rm_forward: Wout has dims " + dims_to_string(p.wout.dims()) + ", expected [" +
                     std::to_string(pairs.size() * lr) + "x" + std::to_string(p.bout.size()) + "]");

  // Wgᵀ[f_i, f_j] = top(f_i) + bottom(f_j); precompute both halves per node.
  const auto [top_w, bottom_w] = split_rows(p.wg, c);
  const Tensor top = matmul(nodes, top_w), bottom = matmul(nodes, bottom_w);

  Tensor out = p.bout;
  const std::size_t l = out.size();
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    for (std::size_t r = 0; r < lr; ++r) {
      const double rel = std::max(top(i, r) + bottom(j, r), 0.0);
      if (rel == 0.0) continue;
      auto w = p.wout.row(k * lr + r);
      for (std::size_t o = 0; o < l; ++o) out[o] += rel * w[o];
    }
  }
  return out;
}

}  // namespace relgraph
