#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>

#include "relgraph/rng.hpp"
#include "relgraph/tensor.hpp"

namespace relgraph {

/// Monotone source of parameter versions; every mutation of a parameter set
/// takes a fresh value so traces can detect that they went stale.
inline std::uint64_t next_param_version() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

/// Node Attention Unit weights. `wa` is N×k and `wb` is k×N with k = ceil(N / ratio).
struct NauParams {
  Tensor wa;
  Tensor wb;
  std::size_t ratio = 2;
  std::uint64_t version = next_param_version();

  std::size_t nodes() const { return wa.rows(); }
  std::size_t bottleneck() const { return wa.cols(); }
  void touch() { version = next_param_version(); }
};

inline std::size_t nau_bottleneck_width(std::size_t nodes, std::size_t ratio) {
  if (ratio == 0) throw ConfigError("NAU reduction ratio must be >= 1");
  return (nodes + ratio - 1) / ratio;
}

inline NauParams make_nau_params(std::size_t nodes, std::size_t ratio = 2) {
  const std::size_t k = nau_bottleneck_width(nodes, ratio);
  return NauParams{Tensor({nodes, k}), Tensor({k, nodes}), ratio};
}

inline NauParams init_nau_params(std::size_t nodes, std::size_t ratio, Rng& rng) {
  NauParams q = make_nau_params(nodes, ratio);
  q.wa = rng.normal_tensor(q.wa.dims(), 1.0 / std::sqrt(static_cast<double>(nodes)));
  q.wb = rng.normal_tensor(q.wb.dims(), 1.0 / std::sqrt(static_cast<double>(q.bottleneck())));
  return q;
}

inline void validate(const NauParams& q) {
  require_rank(q.wa, 2, "NAU Wa");
  require_rank(q.wb, 2, "NAU Wb");
  const std::size_t k = nau_bottleneck_width(q.wa.rows(), q.ratio);
  if (q.wa.cols() != k || q.wb.rows() != k || q.wb.cols() != q.wa.rows())
    throw ShapeError("NAU weights inconsistent: Wa " + dims_to_string(q.wa.dims()) + ", Wb " +
                     dims_to_string(q.wb.dims()) + ", ratio " + std::to_string(q.ratio));
}

struct NauTrace {
  const NauParams* params = nullptr;
  std::uint64_t version = 0;
  Tensor input;      // propagated nodes, N×d
  Tensor pooled;     // z, N
  Tensor hidden;     // Waᵀz before ReLU, k
  Tensor scales;     // s, N
};

struct NauResult {
  Tensor output;
  NauTrace trace;
};

struct NauGrads {
  Tensor wa;
  Tensor wb;
  Tensor input;
};

/// Squeeze each node to its channel mean, excite through the N→k→N
/// bottleneck, and rescale node i by s_i.
inline NauResult nau_forward(const Tensor& nodes, const NauParams& q) {
  validate(q);
  require_rank(nodes, 2, "nau_forward nodes");
  if (nodes.rows() != q.nodes())
    throw ShapeError("nau_forward: " + std::to_string(nodes.rows()) + " nodes but NAU built for " +
                     std::to_string(q.nodes()));
  const std::size_t n = nodes.rows(), k = q.bottleneck();

  NauResult r;
  r.trace.params = &q;
  r.trace.version = q.version;
  r.trace.input = nodes;
  r.trace.pooled = channel_mean(nodes);

  r.trace.hidden = Tensor({k});
  for (std::size_t j = 0; j < k; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += q.wa(i, j) * r.trace.pooled[i];
    r.trace.hidden[j] = acc;
  }
  r.trace.scales = Tensor({n});
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += q.wb(j, i) * std::max(r.trace.hidden[j], 0.0);
    r.trace.scales[i] = sigmoid(acc);
  }

  r.output = nodes;
  for (std::size_t i = 0; i < n; ++i)
    for (auto& v : r.output.row(i)) v *= r.trace.scales[i];
  return r;
}

inline NauGrads nau_backward(const NauTrace& t, const Tensor& d_out) {
  if (t.params == nullptr || t.params->version != t.version)
    throw ContractError("nau_backward: trace does not belong to the current NAU parameters");
  require_same_shape(d_out, t.input, "nau_backward d_out");
  const NauParams& q = *t.params;
  const std::size_t n = t.input.rows(), c = t.input.cols(), k = q.bottleneck();

  NauGrads g{Tensor(q.wa.dims()), Tensor(q.wb.dims()), Tensor(t.input.dims())};

  Tensor d_gate({n});  // d loss / d (pre-sigmoid gate)
  for (std::size_t i = 0; i < n; ++i) {
    const double ds = dot(d_out.row(i), t.input.row(i));
    const double s = t.scales[i];
    d_gate[i] = ds * s * (1.0 - s);
  }

  Tensor d_hidden({k});
  for (std::size_t j = 0; j < k; ++j) {
    const double a = std::max(t.hidden[j], 0.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      g.wb(j, i) = a * d_gate[i];
      acc += q.wb(j, i) * d_gate[i];
    }
    d_hidden[j] = t.hidden[j] > 0.0 ? acc : 0.0;
  }

  const double inv_c = 1.0 / static_cast<double>(c);
  for (std::size_t i = 0; i < n; ++i) {
    double dz = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      g.wa(i, j) = t.pooled[i] * d_hidden[j];
      dz += q.wa(i, j) * d_hidden[j];
    }
    const double s = t.scales[i];
    auto gi = g.input.row(i);
    auto di = d_out.row(i);
    for (std::size_t ch = 0; ch < c; ++ch) gi[ch] = s * di[ch] + dz * inv_c;
  }
  return g;
}

}  // namespace relgraph
