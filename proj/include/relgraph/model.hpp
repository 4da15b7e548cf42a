#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "relgraph/losses.hpp"
#include "relgraph/nau.hpp"
#include "relgraph/parallel.hpp"
#include "relgraph/rgm.hpp"
#include "relgraph/rng.hpp"
#include "relgraph/synth.hpp"
#include "relgraph/tensor_io.hpp"

namespace relgraph {

/// Head architectures, in ablation order.
enum class Variant { linear, rgm, rgm_nau };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::linear: return "linear";
    case Variant::rgm: return "rgm";
    case Variant::rgm_nau: return "rgm-nau";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (Variant v : {Variant::linear, Variant::rgm, Variant::rgm_nau})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown model variant '" + std::string(s) + "'");
}

struct HeadConfig {
  Variant variant = Variant::rgm_nau;
  std::size_t height = 4;
  std::size_t width = 4;
  std::size_t channels = 16;
  std::size_t dim = 16;      // node embedding d
  std::size_t out_dim = 64;  // embedding L
  std::size_t classes = 40;  // classifier width M
  std::size_t nau_ratio = 2;
  EdgeActivation edge_activation = EdgeActivation::sigmoid;

  std::size_t nodes() const { return height * width; }
};

/// Relational head plus the training classifier.
struct HeadModel {
  HeadConfig config;
  RgmParams rgm;
  NauParams nau;
  Tensor w_cls;  // L×M
  Tensor b_cls;  // M, used by plain softmax only

  /// Views of the parameters that `loss` actually reads, in a fixed order.
  std::vector<std::pair<std::string, Tensor*>> parameters(LossId loss) { return collect(*this, loss); }
  std::vector<std::pair<std::string, const Tensor*>> parameters(LossId loss) const { return collect(*this, loss); }

  /// Call after mutating any parameter in place; invalidates outstanding traces.
  void touch() {
    rgm.touch();
    nau.touch();
  }

  RgmForward forward(const FeatureMap& fm, const Tensor* dropout_mask = nullptr) const {
    switch (config.variant) {
      case Variant::linear: return linear_head_forward(fm, rgm, dropout_mask);
      case Variant::rgm: return rgm_forward(fm, rgm, nullptr, dropout_mask);
      case Variant::rgm_nau: return rgm_forward(fm, rgm, &nau, dropout_mask);
    }
    throw ContractError("unreachable variant");
  }

  Tensor embed(const FeatureMap& fm) const { return forward(fm).embedding; }

 private:
  template <class Self>
  static std::vector<std::pair<std::string, std::conditional_t<std::is_const_v<Self>, const Tensor*, Tensor*>>>
  collect(Self& self, LossId loss) {
    using Ptr = std::conditional_t<std::is_const_v<Self>, const Tensor*, Tensor*>;
    std::vector<std::pair<std::string, Ptr>> out;
    if (self.config.variant != Variant::linear) {
      out.emplace_back("W1", &self.rgm.w1);
      out.emplace_back("We", &self.rgm.we);
      out.emplace_back("W2", &self.rgm.w2);
    }
    out.emplace_back("Wfc", &self.rgm.wfc);
    out.emplace_back("bfc", &self.rgm.bfc);
    if (self.config.variant == Variant::rgm_nau) {
      out.emplace_back("Wa", &self.nau.wa);
      out.emplace_back("Wb", &self.nau.wb);
    }
    if (loss != LossId::triplet_cond) out.emplace_back("Wcls", &self.w_cls);
    if (loss == LossId::softmax) out.emplace_back("bcls", &self.b_cls);
    return out;
  }
};

inline HeadModel init_head(const HeadConfig& cfg, Rng& rng) {
  HeadModel m;
  m.config = cfg;
  m.rgm = init_rgm_params(cfg.nodes(), cfg.channels, cfg.dim, cfg.out_dim, cfg.edge_activation, rng);
  m.nau = init_nau_params(cfg.nodes(), cfg.nau_ratio, rng);
  m.w_cls = rng.normal_tensor({cfg.out_dim, cfg.classes}, 1.0 / std::sqrt(static_cast<double>(cfg.out_dim)));
  m.b_cls = Tensor({cfg.classes});
  return m;
}

// ---------------------------------------------------------------------------
// Batch objective

struct Triplet {
  std::size_t anchor, positive, negative;  // indices into the batch
};

/// Anchor i gets a positive of the same identity (preferring the other
/// domain) and a negative of a different identity, both drawn from the batch.
inline std::vector<Triplet> form_triplets(const std::vector<std::size_t>& labels,
                                          const std::vector<Domain>& domains, Rng& rng) {
  std::vector<Triplet> out;
  const std::size_t b = labels.size();
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<std::size_t> cross, same, neg;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      if (labels[j] == labels[i]) (domains[j] != domains[i] ? cross : same).push_back(j);
      else neg.push_back(j);
    }
    const auto& pos = cross.empty() ? same : cross;
    if (pos.empty() || neg.empty()) continue;
    out.push_back({i, pos[rng.below(pos.size())], neg[rng.below(neg.size())]});
  }
  return out;
}

struct BatchResult {
  double loss = 0.0;
  NamedTensors grads;          // same order as HeadModel::parameters(loss)
  std::vector<Tensor> d_input; // per-sample d loss / d feature map (C×H×W)
  std::size_t clamped = 0;
};

struct BatchInput {
  std::vector<const FeatureMap*> features;
  std::vector<std::size_t> labels;
  std::vector<Domain> domains;          // used for triplet formation
  std::vector<Tensor> dropout_masks;    // empty → no dropout
  std::vector<Triplet> triplets;        // used by triplet-cond
};

/// Loss over a batch of embeddings and its gradient w.r.t. every embedding
/// row and the classifier.
struct HeadLoss {
  double value = 0.0;
  Tensor d_emb;  // B×L
  Tensor d_wcls, d_bcls;
  std::size_t clamped = 0;
};

inline HeadLoss embedding_loss(const Tensor& emb, const HeadModel& m, const BatchInput& in, const LossConfig& cfg) {
  HeadLoss h;
  switch (cfg.id) {
    case LossId::softmax: {
      Tensor logits = matmul(emb, m.w_cls);
      for (std::size_t i = 0; i < logits.rows(); ++i)
        for (std::size_t j = 0; j < logits.cols(); ++j) logits(i, j) += m.b_cls[j];
      LossResult r = softmax_ce(logits, in.labels);
      h.value = r.value;
      h.d_emb = matmul_nt(r.grad, m.w_cls);
      h.d_wcls = matmul_tn(emb, r.grad);
      h.d_bcls = Tensor({logits.cols()});
      for (std::size_t i = 0; i < logits.rows(); ++i)
        for (std::size_t j = 0; j < logits.cols(); ++j) h.d_bcls[j] += r.grad(i, j);
      break;
    }
    case LossId::triplet_cond: {
      if (in.triplets.empty()) throw DegenerateInputError("triplet loss: batch yields no triplets");
      const std::size_t t = in.triplets.size(), l = emb.cols();
      Tensor a({t, l}), p({t, l}), n({t, l});
      for (std::size_t k = 0; k < t; ++k)
        for (std::size_t c = 0; c < l; ++c) {
          a(k, c) = emb(in.triplets[k].anchor, c);
          p(k, c) = emb(in.triplets[k].positive, c);
          n(k, c) = emb(in.triplets[k].negative, c);
        }
      TripletResult r = triplet_conditional(a, p, n, cfg.triplet_margin);
      h.value = r.value;
      h.d_emb = Tensor(emb.dims());
      for (std::size_t k = 0; k < t; ++k)
        for (std::size_t c = 0; c < l; ++c) {
          h.d_emb(in.triplets[k].anchor, c) += r.d_anchor(k, c);
          h.d_emb(in.triplets[k].positive, c) += r.d_positive(k, c);
          h.d_emb(in.triplets[k].negative, c) += r.d_negative(k, c);
        }
      break;
    }
    default: {
      auto cos = cosine_logits(emb, m.w_cls);
      LossResult r = angular_loss(CosineLogits{cos.value, in.labels}, cfg);
      auto [dx, dw] = cos.pullback(r.grad);
      h.value = r.value;
      h.d_emb = std::move(dx);
      h.d_wcls = std::move(dw);
      h.clamped = r.clamped;
      break;
    }
  }
  return h;
}

/// Forward, loss and backward over one batch. Per-sample work may run in
/// parallel; parameter gradients are reduced in ascending sample order.
inline BatchResult batch_objective(const HeadModel& m, const BatchInput& in, const LossConfig& cfg,
                                   bool want_input_grads = false) {
  const std::size_t b = in.features.size();
  if (b == 0) throw ConfigError("batch must contain at least one sample");
  const bool dropout = !in.dropout_masks.empty();

  std::vector<RgmForward> fwd(b);
  parallel_for(b, [&](std::size_t i) { fwd[i] = m.forward(*in.features[i], dropout ? &in.dropout_masks[i] : nullptr); });

  const std::size_t l = m.config.out_dim;
  Tensor emb({b, l});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t c = 0; c < l; ++c) emb(i, c) = fwd[i].embedding[c];

  HeadLoss h = embedding_loss(emb, m, in, cfg);

  BatchResult out;
  out.loss = h.value;
  out.clamped = h.clamped;
  for (const auto& [name, t] : m.parameters(cfg.id)) out.grads.emplace_back(name, Tensor(t->dims()));
  auto slot = [&](std::string_view name) -> Tensor* {
    for (auto& [n, t] : out.grads)
      if (n == name) return &t;
    return nullptr;
  };
  if (Tensor* g = slot("Wcls")) *g = h.d_wcls;
  if (Tensor* g = slot("bcls")) *g = h.d_bcls;
  if (want_input_grads) out.d_input.resize(b);

  // backward in waves so at most `wave` per-sample gradient sets are alive
  const std::size_t wave = std::max<std::size_t>(1, thread_budget());
  for (std::size_t start = 0; start < b; start += wave) {
    const std::size_t stop = std::min(b, start + wave);
    std::vector<RgmGrads> grads(stop - start);
    parallel_for(stop - start, [&](std::size_t k) {
      const std::size_t i = start + k;
      Tensor d({l}, std::vector<double>(h.d_emb.row(i).begin(), h.d_emb.row(i).end()));
      grads[k] = rgm_backward(fwd[i].trace, d);
    });
    for (std::size_t k = 0; k < grads.size(); ++k) {
      const RgmGrads& g = grads[k];
      auto acc = [&](std::string_view name, const Tensor& v) {
        if (Tensor* dst = slot(name)) axpy(1.0, v, *dst);
      };
      acc("Wfc", g.wfc);
      acc("bfc", g.bfc);
      if (m.config.variant != Variant::linear) {
        acc("W1", g.w1);
        acc("We", g.we);
        acc("W2", g.w2);
      }
      if (g.nau) {
        acc("Wa", g.nau->wa);
        acc("Wb", g.nau->wb);
      }
      if (want_input_grads) out.d_input[start + k] = feature_gradient(fwd[start + k].trace, g);
    }
  }
  return out;
}

/// Loss value only (no backward); used by finite differences.
inline double batch_loss(const HeadModel& m, const BatchInput& in, const LossConfig& cfg) {
  const std::size_t b = in.features.size();
  const bool dropout = !in.dropout_masks.empty();
  Tensor emb({b, m.config.out_dim});
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor e = m.forward(*in.features[i], dropout ? &in.dropout_masks[i] : nullptr).embedding;
    for (std::size_t c = 0; c < e.size(); ++c) emb(i, c) = e[c];
  }
  return embedding_loss(emb, m, in, cfg).value;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline NamedTensors checkpoint_entries(const HeadModel& m) {
  const HeadConfig& c = m.config;
  Tensor meta = Tensor::vector({static_cast<double>(c.variant), static_cast<double>(c.height),
                                static_cast<double>(c.width), static_cast<double>(c.channels),
                                static_cast<double>(c.dim), static_cast<double>(c.out_dim),
                                static_cast<double>(c.classes), static_cast<double>(c.nau_ratio),
                                static_cast<double>(c.edge_activation)});
  return {{"meta", meta},         {"W1", m.rgm.w1},   {"We", m.rgm.we},   {"W2", m.rgm.w2},
          {"Wfc", m.rgm.wfc},     {"bfc", m.rgm.bfc}, {"Wa", m.nau.wa},   {"Wb", m.nau.wb},
          {"Wcls", m.w_cls},      {"bcls", m.b_cls}};
}

inline void save_checkpoint(const std::filesystem::path& path, const HeadModel& m) {
  save_bundle(path, checkpoint_entries(m));
}

inline HeadModel load_checkpoint(const std::filesystem::path& path) {
  NamedTensors entries = load_bundle(path);
  auto take = [&](std::string_view name) -> Tensor {
    for (auto& [n, t] : entries)
      if (n == name) return t;
    throw FormatError(path.string() + ": checkpoint lacks tensor '" + std::string(name) + "'", 0);
  };
  const Tensor meta = take("meta");
  if (meta.size() != 9 || !(meta[0] == 0 || meta[0] == 1 || meta[0] == 2) || !(meta[8] == 0 || meta[8] == 1))
    throw FormatError(path.string() + ": bad checkpoint metadata", 0);
  for (std::size_t k = 1; k < 8; ++k)
    if (!(meta[k] >= 1 && meta[k] <= 1e9 && meta[k] == std::floor(meta[k])))
      throw FormatError(path.string() + ": bad checkpoint metadata", 0);
  HeadModel m;
  HeadConfig& c = m.config;
  c.variant = static_cast<Variant>(static_cast<int>(meta[0]));
  c.height = static_cast<std::size_t>(meta[1]);
  c.width = static_cast<std::size_t>(meta[2]);
  c.channels = static_cast<std::size_t>(meta[3]);
  c.dim = static_cast<std::size_t>(meta[4]);
  c.out_dim = static_cast<std::size_t>(meta[5]);
  c.classes = static_cast<std::size_t>(meta[6]);
  c.nau_ratio = static_cast<std::size_t>(meta[7]);
  c.edge_activation = static_cast<EdgeActivation>(static_cast<int>(meta[8]));
  m.rgm = RgmParams{take("W1"), take("We"), take("W2"), take("Wfc"), take("bfc"), c.edge_activation};
  m.nau = NauParams{take("Wa"), take("Wb"), c.nau_ratio};
  m.w_cls = take("Wcls");
  m.b_cls = take("bcls");
  try {
    validate(m.rgm);
    validate(m.nau);
  } catch (const ShapeError& e) {
    throw FormatError(path.string() + ": " + e.what(), 0);
  }
  if (m.rgm.nodes() != c.nodes() || m.rgm.channels() != c.channels || m.rgm.embed_dim() != c.dim ||
      m.rgm.out_dim() != c.out_dim || m.w_cls.dims() != Dims{c.out_dim, c.classes})
    throw FormatError(path.string() + ": tensor shapes disagree with checkpoint metadata", 0);
  return m;
}

}  // namespace relgraph
