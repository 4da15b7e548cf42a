#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "relgraph/model.hpp"

namespace relgraph {

/// |a − n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheckGroup {
  std::string name;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  double floor = 1e-12;
  bool check_input = false;
  bool corrupt_adjoint = false;  // negative control: scales one analytic gradient by 1.5
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double tolerance = 0.0;

  bool passed() const {
    return std::all_of(groups.begin(), groups.end(), [&](const auto& g) { return g.max_rel_error < tolerance; });
  }
  double max_rel_error() const {
    double m = 0.0;
    for (const auto& g : groups) m = std::max(m, g.max_rel_error);
    return m;
  }
};

/// Compare every analytic parameter (and optionally input) gradient of the
/// batch objective against central finite differences. Each entry's error is
/// taken relative to the largest gradient magnitude in its tensor, so an entry
/// of 1e-9 next to entries of 1e-1 is judged on the tensor's scale.
inline GradCheckReport gradcheck(HeadModel& model, const BatchInput& input, const LossConfig& loss,
                                 const GradCheckOptions& opt = {}) {
  BatchResult analytic = batch_objective(model, input, loss, opt.check_input);
  if (opt.corrupt_adjoint && !analytic.grads.empty())
    for (auto& v : analytic.grads.front().second.data()) v *= 1.5;

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  const double h = opt.step;

  auto check = [&](const std::string& name, Tensor& target, const Tensor& grad, auto&& loss_fn) {
    GradCheckGroup g{name, target.size()};
    std::vector<double> numeric(target.size());
    double scale = opt.floor;
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double saved = target[i];
      target[i] = saved + h;
      const double up = loss_fn();
      target[i] = saved - h;
      const double down = loss_fn();
      target[i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
      scale = std::max({scale, std::abs(numeric[i]), std::abs(grad[i])});
    }
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double err = relative_error(grad[i], numeric[i], scale);
      if (i == 0 || err > g.max_rel_error) {
        g.max_rel_error = err;
        g.worst_index = i;
        g.worst_analytic = grad[i];
        g.worst_numeric = numeric[i];
      }
    }
    report.groups.push_back(g);
  };

  auto params = model.parameters(loss.id);
  for (std::size_t k = 0; k < params.size(); ++k)
    check(params[k].first, *params[k].second, analytic.grads[k].second,
          [&] { return batch_loss(model, input, loss); });

  if (opt.check_input) {
    std::vector<FeatureMap> features;
    for (const FeatureMap* f : input.features) features.push_back(*f);
    BatchInput local = input;
    for (std::size_t i = 0; i < features.size(); ++i) local.features[i] = &features[i];
    for (std::size_t i = 0; i < features.size(); ++i)
      check("input[" + std::to_string(i) + "]", features[i].data, analytic.d_input[i],
            [&] { return batch_loss(model, local, loss); });
  }
  model.touch();
  return report;
}

/// A small random problem at the given dims: a freshly initialised head,
/// random feature maps, labels cycling through the classes, and a fixed
/// dropout mask so the masked path is covered.
struct GradCheckProblem {
  HeadModel model;
  std::vector<FeatureMap> features;
  BatchInput input;
};

struct GradCheckDims {
  std::size_t height = 4, width = 4, channels = 8, dim = 4, out_dim = 4, batch = 4, classes = 3;
};

inline GradCheckProblem make_gradcheck_problem(std::uint64_t seed, LossId loss, Variant variant = Variant::rgm_nau,
                                               EdgeActivation act = EdgeActivation::sigmoid,
                                               const GradCheckDims& d = {}, double dropout = 0.5) {
  if (d.batch == 0) throw ConfigError("gradcheck batch must be >= 1");
  Rng rng(seed, 0x67726164);
  HeadConfig hc;
  hc.variant = variant;
  hc.height = d.height;
  hc.width = d.width;
  hc.channels = d.channels;
  hc.dim = d.dim;
  hc.out_dim = d.out_dim;
  hc.classes = d.classes;
  hc.edge_activation = act;
  GradCheckProblem p;
  p.model = init_head(hc, rng);
  // non-zero biases so every term of the projection is exercised
  p.model.rgm.bfc = rng.normal_tensor(p.model.rgm.bfc.dims(), 0.1);
  p.model.b_cls = rng.normal_tensor(p.model.b_cls.dims(), 0.1);
  p.model.touch();
  for (std::size_t i = 0; i < d.batch; ++i) p.features.emplace_back(rng.normal_tensor({d.channels, d.height, d.width}));
  for (std::size_t i = 0; i < d.batch; ++i) {
    p.input.features.push_back(&p.features[i]);
    // triplets need pairs of the same identity
    p.input.labels.push_back(loss == LossId::triplet_cond ? (i / 2) % d.classes : i % d.classes);
    p.input.domains.push_back(i % 2 ? Domain::nir : Domain::vis);
    if (dropout > 0.0) p.input.dropout_masks.push_back(make_dropout_mask(d.height * d.width * d.channels, dropout, rng));
  }
  if (loss == LossId::triplet_cond) p.input.triplets = form_triplets(p.input.labels, p.input.domains, rng);
  return p;
}

}  // namespace relgraph
