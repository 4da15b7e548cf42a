#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "relgraph/eval.hpp"
#include "relgraph/model.hpp"
#include "relgraph/synth.hpp"

namespace relgraph {

/// v ← momentum·v + g (+ weight_decay·p);  p ← p − lr·v
inline void sgd_momentum_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                              std::vector<Tensor>& velocity, double lr, double momentum, double weight_decay = 0.0) {
  if (params.size() != grads.size())
    throw ShapeError("sgd_momentum_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  if (velocity.empty())
    for (const Tensor* p : params) velocity.emplace_back(p->dims());
  if (velocity.size() != params.size()) throw ShapeError("sgd_momentum_step: velocity state has wrong length");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    Tensor& v = velocity[k];
    const Tensor& g = grads[k];
    require_same_shape(p, g, "sgd_momentum_step gradient");
    require_same_shape(p, v, "sgd_momentum_step velocity");
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + g[i] + weight_decay * p[i];
      p[i] -= lr * v[i];
    }
  }
}

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch = 128;
  double momentum = 0.9;
  std::size_t epochs = 100;
  double dropout = 0.7;
  double weight_decay = 0.0;
  double lr_decay = 0.1;
  std::vector<double> milestones{0.5, 0.75};  // fractions of `epochs`
  LossConfig loss;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
    if (batch == 0) throw ConfigError("batch size must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (loss.id == LossId::csoftmax) loss.margin.validate();
  }

  double lr_at(std::size_t epoch) const {
    double rate = lr;
    for (double f : milestones)
      if (epoch >= static_cast<std::size_t>(std::llround(f * static_cast<double>(epochs)))) rate *= lr_decay;
    return rate;
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double train_accuracy = 0.0;  // argmax of classifier scores; NaN for triplet loss
};

namespace detail {
enum : std::uint64_t { kStreamShuffle = 11, kStreamDropout = 12, kStreamTriplet = 13, kStreamInit = 14 };

inline double classifier_accuracy(const HeadModel& m, const Tensor& emb, const std::vector<std::size_t>& labels,
                                  LossId loss) {
  if (loss == LossId::triplet_cond) return std::nan("");
  Tensor scores = loss == LossId::softmax ? matmul(emb, m.w_cls) : cosine_logits(emb, m.w_cls).value;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    auto r = scores.row(i);
    if (loss == LossId::softmax)
      for (std::size_t j = 0; j < r.size(); ++j) r[j] += m.b_cls[j];
    hits += static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin()) == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}
}  // namespace detail

/// Minibatch SGD with momentum over a fixed sample set. Shuffling, dropout
/// masks and triplet choices are drawn from seed-keyed streams, so the run
/// is a pure function of (samples, initial model, config).
inline std::vector<EpochLog> train(const std::vector<Sample>& samples, HeadModel& model, const TrainConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw ConfigError("train: dataset is empty");
  for (const auto& s : samples)
    if (s.identity >= model.config.classes)
      throw ConfigError("train: identity " + std::to_string(s.identity) + " exceeds classifier width " +
                        std::to_string(model.config.classes));

  const Rng root(cfg.seed);
  std::vector<Tensor> velocity;
  std::vector<EpochLog> log;
  std::vector<std::size_t> order(samples.size());
  const std::size_t flat = model.config.nodes() * model.config.channels;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = root.substream(detail::kStreamShuffle).substream(epoch);
    shuffle.shuffle(order);
    const double lr = cfg.lr_at(epoch);
    double loss_sum = 0.0;
    std::size_t hits_weighted = 0;
    double acc_sum = 0.0;

    for (std::size_t start = 0, step = 0; start < order.size(); start += cfg.batch, ++step) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch);
      BatchInput in;
      for (std::size_t k = start; k < stop; ++k) {
        const Sample& s = samples[order[k]];
        in.features.push_back(&s.features);
        in.labels.push_back(s.identity);
        in.domains.push_back(s.domain);
        if (cfg.dropout > 0.0) {
          Rng r = root.substream(detail::kStreamDropout).substream(epoch).substream(k);
          in.dropout_masks.push_back(make_dropout_mask(flat, cfg.dropout, r));
        }
      }
      if (cfg.loss.id == LossId::triplet_cond) {
        Rng r = root.substream(detail::kStreamTriplet).substream(epoch).substream(step);
        in.triplets = form_triplets(in.labels, in.domains, r);
        if (in.triplets.empty()) continue;
      }

      BatchResult res = batch_objective(model, in, cfg.loss);
      if (!std::isfinite(res.loss))
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      loss_sum += res.loss * static_cast<double>(stop - start);
      hits_weighted += stop - start;

      auto params = model.parameters(cfg.loss.id);
      std::vector<Tensor*> ptrs;
      std::vector<Tensor> grads;
      for (std::size_t k = 0; k < params.size(); ++k) {
        ptrs.push_back(params[k].second);
        grads.push_back(std::move(res.grads[k].second));
      }
      sgd_momentum_step(ptrs, grads, velocity, lr, cfg.momentum, cfg.weight_decay);
      model.touch();
      for (const Tensor* p : ptrs)
        if (!p->all_finite())
          throw NumericalError("non-finite parameter at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
    }

    // training accuracy without dropout, for the log only
    if (cfg.loss.id != LossId::triplet_cond) {
      Tensor emb({samples.size(), model.config.out_dim});
      std::vector<std::size_t> labels;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const Tensor e = model.embed(samples[i].features);
        std::copy(e.data().begin(), e.data().end(), emb.row(i).begin());
        labels.push_back(samples[i].identity);
      }
      acc_sum = detail::classifier_accuracy(model, emb, labels, cfg.loss.id);
    } else {
      acc_sum = std::nan("");
    }
    log.push_back({epoch, lr, hits_weighted ? loss_sum / static_cast<double>(hits_weighted) : std::nan(""), acc_sum});
  }
  return log;
}

// ---------------------------------------------------------------------------
// Evaluation on the gallery/probe protocol

inline Tensor embed_all(const HeadModel& m, const std::vector<Sample>& samples) {
  Tensor out({samples.size(), m.config.out_dim});
  parallel_for(samples.size(), [&](std::size_t i) {
    const Tensor e = m.embed(samples[i].features);
    std::copy(e.data().begin(), e.data().end(), out.row(i).begin());
  });
  return out;
}

/// Raw features flattened as embeddings (frozen-backbone cosine baseline).
inline Tensor flatten_all(const std::vector<Sample>& samples) {
  const std::size_t n = samples.front().features.data.size();
  Tensor out({samples.size(), n});
  for (std::size_t i = 0; i < samples.size(); ++i)
    std::copy(samples[i].features.data.data().begin(), samples[i].features.data.data().end(), out.row(i).begin());
  return out;
}

inline std::vector<std::size_t> identities(const std::vector<Sample>& samples) {
  std::vector<std::size_t> ids;
  for (const auto& s : samples) ids.push_back(s.identity);
  return ids;
}

inline EvalReport evaluate_model(const HeadModel& m, const Dataset& ds,
                                 const std::vector<double>& far_levels = kDefaultFarLevels) {
  return evaluate_embeddings(embed_all(m, ds.probe), embed_all(m, ds.gallery), identities(ds.probe),
                             identities(ds.gallery), far_levels);
}

inline EvalReport evaluate_baseline(const Dataset& ds, const std::vector<double>& far_levels = kDefaultFarLevels) {
  return evaluate_embeddings(flatten_all(ds.probe), flatten_all(ds.gallery), identities(ds.probe),
                             identities(ds.gallery), far_levels);
}

inline HeadConfig head_config_for(const Dataset& ds, Variant variant, std::size_t dim, std::size_t out_dim,
                                  EdgeActivation act = EdgeActivation::sigmoid) {
  HeadConfig h;
  h.variant = variant;
  h.height = ds.config.height;
  h.width = ds.config.width;
  h.channels = ds.config.channels;
  h.dim = dim;
  h.out_dim = out_dim;
  h.classes = ds.config.train_ids;
  h.edge_activation = act;
  return h;
}

/// Fresh model for `seed`, trained on the dataset's training split.
inline std::pair<HeadModel, std::vector<EpochLog>> fit(const Dataset& ds, const HeadConfig& hc, const TrainConfig& tc) {
  Rng init = Rng(tc.seed).substream(detail::kStreamInit);
  HeadModel m = init_head(hc, init);
  auto log = train(ds.train, m, tc);
  return {std::move(m), std::move(log)};
}

struct SweepRow {
  std::size_t dim = 0;
  EvalReport report;
};

/// One freshly initialised and trained model per node-embedding dimension.
inline std::vector<SweepRow> dim_sweep(const Dataset& ds, const std::vector<std::size_t>& dims, HeadConfig hc,
                                       const TrainConfig& tc) {
  if (dims.empty()) throw ConfigError("dim_sweep: no dimensions given");
  std::vector<SweepRow> rows;
  for (std::size_t d : dims) {
    hc.dim = d;
    auto [m, log] = fit(ds, hc, tc);
    rows.push_back({d, evaluate_model(m, ds)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Two-dimensional toy embedding

struct ToyPoint {
  std::size_t label = 0;
  Domain domain = Domain::vis;
  double x = 0.0, y = 0.0, angle = 0.0;  // unit-normalised coordinates
};

struct AngularStats {
  std::vector<double> centers;           // circular mean angle per class
  std::optional<double> min_gap;         // absent for a single class
  double intra_std = 0.0;                // mean over classes of the angular RMS deviation
};

inline double wrap_angle(double a) {
  a = std::fmod(a + std::numbers::pi, 2.0 * std::numbers::pi);
  if (a < 0) a += 2.0 * std::numbers::pi;
  return a - std::numbers::pi;
}

inline AngularStats angular_stats(const std::vector<ToyPoint>& pts, std::size_t classes) {
  AngularStats st;
  std::vector<double> sx(classes, 0.0), sy(classes, 0.0);
  std::vector<std::size_t> count(classes, 0);
  for (const auto& p : pts) {
    sx[p.label] += std::cos(p.angle);
    sy[p.label] += std::sin(p.angle);
    ++count[p.label];
  }
  std::vector<double> present;
  st.centers.assign(classes, std::nan(""));
  for (std::size_t c = 0; c < classes; ++c)
    if (count[c]) {
      st.centers[c] = std::atan2(sy[c], sx[c]);
      present.push_back(st.centers[c]);
    }
  std::vector<double> sq(classes, 0.0);
  for (const auto& p : pts) {
    const double d = wrap_angle(p.angle - st.centers[p.label]);
    sq[p.label] += d * d;
  }
  std::size_t used = 0;
  for (std::size_t c = 0; c < classes; ++c)
    if (count[c]) {
      st.intra_std += std::sqrt(sq[c] / static_cast<double>(count[c]));
      ++used;
    }
  if (used) st.intra_std /= static_cast<double>(used);
  if (present.size() >= 2) {
    std::sort(present.begin(), present.end());
    double gap = present.front() + 2.0 * std::numbers::pi - present.back();
    for (std::size_t k = 1; k < present.size(); ++k) gap = std::min(gap, present[k] - present[k - 1]);
    st.min_gap = gap;
  }
  return st;
}

/// Small-step, dropout-free schedule for the 2-D embedding experiment.
inline TrainConfig toy_train_defaults() {
  TrainConfig t;
  t.lr = 0.001;
  t.epochs = 300;
  t.batch = 64;
  t.dropout = 0.0;
  return t;
}

struct ToyConfig {
  std::size_t classes = 8;
  std::size_t per_class_per_domain = 15;
  std::size_t height = 4, width = 4, channels = 16;
  double domain_gap = 0.5;
  double noise = 0.3;
  double sharpness = 2.0;
  Variant variant = Variant::rgm_nau;
  std::size_t dim = 16;
  TrainConfig train = toy_train_defaults();
};

struct ToyResult {
  std::vector<ToyPoint> points;
  AngularStats stats;
  std::vector<EpochLog> log;
};

inline std::vector<ToyPoint> toy_points(const HeadModel& m, const std::vector<Sample>& samples) {
  const Tensor emb = embed_all(m, samples);
  std::vector<ToyPoint> pts;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double x = emb(i, 0), y = emb(i, 1), r = std::hypot(x, y);
    pts.push_back({samples[i].identity, samples[i].domain, r > 0 ? x / r : 0.0, r > 0 ? y / r : 0.0, std::atan2(y, x)});
  }
  return pts;
}

/// Train a head with a two-dimensional embedding on a small two-domain set
/// and report the angular layout of the training samples.
inline ToyResult toy2d(const ToyConfig& cfg) {
  DatasetConfig dc;
  dc.train_ids = cfg.classes;
  dc.test_ids = 1;
  dc.per_id = cfg.per_class_per_domain;
  dc.height = cfg.height;
  dc.width = cfg.width;
  dc.channels = cfg.channels;
  dc.domain_gap = cfg.domain_gap;
  dc.noise = cfg.noise;
  dc.sharpness = cfg.sharpness;
  dc.seed = cfg.train.seed;
  const Dataset ds = gen_dataset(dc);
  HeadConfig hc = head_config_for(ds, cfg.variant, cfg.dim, 2);
  ToyResult r;
  Rng init = Rng(cfg.train.seed).substream(detail::kStreamInit);
  HeadModel m = init_head(hc, init);
  if (cfg.train.epochs > 0) r.log = train(ds.train, m, cfg.train);
  r.points = toy_points(m, ds.train);
  r.stats = angular_stats(r.points, cfg.classes);
  return r;
}

}  // namespace relgraph
