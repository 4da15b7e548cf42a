#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "relgraph/tensor.hpp"

namespace relgraph {

enum class LossId { softmax, nsoftmax, csoftmax, cosface, arcface, triplet_cond };

inline std::string_view to_string(LossId id) {
  switch (id) {
    case LossId::softmax: return "softmax";
    case LossId::nsoftmax: return "nsoftmax";
    case LossId::csoftmax: return "csoftmax";
    case LossId::cosface: return "cosface";
    case LossId::arcface: return "arcface";
    case LossId::triplet_cond: return "triplet-cond";
  }
  return "?";
}

inline LossId parse_loss_id(std::string_view s) {
  for (LossId id : {LossId::softmax, LossId::nsoftmax, LossId::csoftmax, LossId::cosface, LossId::arcface,
                    LossId::triplet_cond})
    if (to_string(id) == s) return id;
  throw ConfigError("unknown loss '" + std::string(s) + "'");
}

/// Conditional margin: the target logit is α(m1·cosθ + m2), all others s·cosθ.
struct MarginConfig {
  double m1 = 0.7;
  double m2 = -0.3;
  double alpha = 24.0;
  double s = 24.0;

  void validate() const {
    if (m1 - m2 < 1.0 - 1e-12)
      throw ConfigError("margin requires m1 - m2 >= 1, got m1=" + std::to_string(m1) + " m2=" + std::to_string(m2));
    if (!(s > 0.0) || !(alpha > 0.0)) throw ConfigError("margin scales must be positive");
  }
};

/// Everything needed to evaluate any of the supported losses.
struct LossConfig {
  LossId id = LossId::csoftmax;
  MarginConfig margin;
  double cosface_margin = 0.35;
  double arcface_margin = 0.5;
  double triplet_margin = 0.7;

  double scale() const { return margin.s; }
};

struct CosineLogits {
  Tensor cos;                       // B×M
  std::vector<std::size_t> labels;  // B
};

struct LossResult {
  double value = 0.0;
  std::vector<double> per_sample;
  Tensor grad;  // gradient w.r.t. the logits / cosines passed in
  std::size_t clamped = 0;
};

inline void check_labels(const std::vector<std::size_t>& labels, const Tensor& logits) {
  require_rank(logits, 2, "loss logits");
  if (labels.size() != logits.rows())
    throw ShapeError("loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(logits.rows()) + " rows");
  for (auto y : labels)
    if (y >= logits.cols())
      throw std::out_of_range("label " + std::to_string(y) + " outside [0, " + std::to_string(logits.cols()) + ")");
}

// ---------------------------------------------------------------------------
// Cosine logits

inline Tensor normalize_rows(const Tensor& x, std::vector<double>* norms = nullptr) {
  Tensor y = x;
  if (norms) norms->resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double n = norm2(x.row(i));
    if (!(n > 0.0)) throw DegenerateInputError("zero-norm row " + std::to_string(i));
    for (auto& v : y.row(i)) v /= n;
    if (norms) (*norms)[i] = n;
  }
  return y;
}

/// Jacobian-transpose of v ↦ v/‖v‖ applied row-wise.
inline Tensor normalize_rows_pullback(const Tensor& unit, const std::vector<double>& norms, const Tensor& d_unit) {
  Tensor dx(unit.dims());
  for (std::size_t i = 0; i < unit.rows(); ++i) {
    const double proj = dot(d_unit.row(i), unit.row(i));
    for (std::size_t j = 0; j < unit.cols(); ++j) dx(i, j) = (d_unit(i, j) - proj * unit(i, j)) / norms[i];
  }
  return dx;
}

/// cos = normalize_rows(x) · normalize_cols(W) for x [B×L], W [L×M].
inline Adjoint<std::pair<Tensor, Tensor>> cosine_logits(const Tensor& x, const Tensor& w) {
  require_rank(x, 2, "cosine_logits x");
  require_rank(w, 2, "cosine_logits W");
  std::vector<double> xn, wn;
  Tensor xu = normalize_rows(x, &xn);
  Tensor wu_t;
  try {
    wu_t = normalize_rows(transpose(w), &wn);  // M×L
  } catch (const DegenerateInputError&) {
    throw DegenerateInputError("cosine_logits: zero-norm class weight column");
  }
  Tensor cos = matmul_nt(xu, wu_t);
  return {cos, [xu, xn, wu_t, wn](const Tensor& d_cos) -> std::pair<Tensor, Tensor> {
            Tensor d_xu = matmul(d_cos, wu_t);        // B×L
            Tensor d_wu_t = matmul_tn(d_cos, xu);     // M×L
            return {normalize_rows_pullback(xu, xn, d_xu),
                    transpose(normalize_rows_pullback(wu_t, wn, d_wu_t))};
          }};
}

// ---------------------------------------------------------------------------
// Cross-entropy family

namespace detail {

/// Mean cross-entropy over rows of `logits`; grad is d loss / d logits.
inline LossResult cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  check_labels(labels, logits);
  const std::size_t b = logits.rows(), m = logits.cols();
  LossResult r;
  r.grad = Tensor(logits.dims());
  r.per_sample.resize(b);
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    auto z = logits.row(i);
    const double mx = *std::max_element(z.begin(), z.end());
    const std::size_t y = labels[i];
    const double t = std::exp(z[y] - mx);
    double others = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      if (j != y) others += std::exp(z[j] - mx);
    // log1p keeps confident samples from rounding to zero loss
    r.per_sample[i] = t > 1e-300 ? std::log1p(others / t) : (mx - z[y]) + std::log(t + others);
    const double sum = t + others;
    for (std::size_t j = 0; j < m; ++j) r.grad(i, j) = std::exp(z[j] - mx) / sum * inv_b;
    r.grad(i, y) = -others / sum * inv_b;
  }
  for (double v : r.per_sample) r.value += v;
  r.value *= inv_b;
  return r;
}

}  // namespace detail

/// Plain softmax cross-entropy over biased, unnormalised logits.
inline LossResult softmax_ce(const Tensor& logits, const std::vector<std::size_t>& labels) {
  return detail::cross_entropy(logits, labels);
}

/// Cross-entropy over s·cosθ.
inline LossResult normalized_softmax(const CosineLogits& cl, double s) {
  LossResult r = detail::cross_entropy(scale(cl.cos, s), cl.labels);
  r.grad = scale(r.grad, s);
  return r;
}

/// Conditional-margin softmax: target logit α(m1·cosθ_t + m2), others s·cosθ_j.
inline LossResult c_softmax(const CosineLogits& cl, const MarginConfig& mc) {
  mc.validate();
  check_labels(cl.labels, cl.cos);
  Tensor z = scale(cl.cos, mc.s);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const std::size_t t = cl.labels[i];
    z(i, t) = mc.alpha * (mc.m1 * cl.cos(i, t) + mc.m2);
  }
  LossResult r = detail::cross_entropy(z, cl.labels);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const std::size_t t = cl.labels[i];
    for (std::size_t j = 0; j < z.cols(); ++j) r.grad(i, j) *= (j == t ? mc.alpha * mc.m1 : mc.s);
  }
  return r;
}

/// Additive cosine margin: target logit s(cosθ_t − m).
inline LossResult cosface(const CosineLogits& cl, double m, double s) {
  return c_softmax(cl, MarginConfig{1.0, -m, s, s});
}

inline constexpr double kArcfaceClamp = 1e-7;

/// Additive angular margin: target logit s·cos(min(θ_t + m, π)). Cosines are
/// clamped to [−1+1e-7, 1−1e-7] before acos; `clamped` counts such entries.
inline LossResult arcface(const CosineLogits& cl, double m, double s) {
  check_labels(cl.labels, cl.cos);
  Tensor z = scale(cl.cos, s);
  Tensor dtarget({cl.cos.rows()});
  std::size_t clamped = 0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const std::size_t t = cl.labels[i];
    const double c = cl.cos(i, t);
    const double cc = std::clamp(c, -1.0 + kArcfaceClamp, 1.0 - kArcfaceClamp);
    const bool was_clamped = cc != c;
    clamped += was_clamped;
    const double theta = std::acos(cc);
    if (theta + m >= std::numbers::pi) {
      z(i, t) = -s;
      dtarget[i] = 0.0;
    } else {
      z(i, t) = s * std::cos(theta + m);
      dtarget[i] = was_clamped ? 0.0 : s * std::sin(theta + m) / std::sin(theta);
    }
  }
  LossResult r = detail::cross_entropy(z, cl.labels);
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j) r.grad(i, j) *= (j == cl.labels[i] ? dtarget[i] : s);
  r.clamped = clamped;
  return r;
}

/// Dispatch over the cosine-logit losses.
inline LossResult angular_loss(const CosineLogits& cl, const LossConfig& cfg) {
  switch (cfg.id) {
    case LossId::nsoftmax: return normalized_softmax(cl, cfg.scale());
    case LossId::csoftmax: return c_softmax(cl, cfg.margin);
    case LossId::cosface: return cosface(cl, cfg.cosface_margin, cfg.scale());
    case LossId::arcface: return arcface(cl, cfg.arcface_margin, cfg.scale());
    default: throw ConfigError("angular_loss: '" + std::string(to_string(cfg.id)) + "' is not a cosine-logit loss");
  }
}

// ---------------------------------------------------------------------------
// Conditional triplet

struct TripletResult {
  double value = 0.0;
  std::vector<double> per_triplet;
  Tensor d_anchor, d_positive, d_negative;
};

namespace detail {

/// cos(a, b) and its gradients with respect to a and b.
inline double cosine_with_grads(std::span<const double> a, std::span<const double> b, std::vector<double>& da,
                                std::vector<double>& db) {
  const double na = norm2(a), nb = norm2(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateInputError("triplet_conditional: zero-norm embedding");
  const double c = dot(a, b) / (na * nb);
  da.resize(a.size());
  db.resize(b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    da[k] = (b[k] / nb - c * a[k] / na) / na;
    db[k] = (a[k] / na - c * b[k] / nb) / nb;
  }
  return c;
}

}  // namespace detail

/// Σ_i [ (s_n + 1)/(s_p + 1) − m ]₊ over rows of the three B×L matrices.
inline TripletResult triplet_conditional(const Tensor& anchor, const Tensor& positive, const Tensor& negative,
                                         double m) {
  require_rank(anchor, 2, "triplet anchor");
  require_same_shape(anchor, positive, "triplet positive");
  require_same_shape(anchor, negative, "triplet negative");
  TripletResult r{0.0, {}, Tensor(anchor.dims()), Tensor(anchor.dims()), Tensor(anchor.dims())};
  std::vector<double> dap, dp, dan, dn;
  for (std::size_t i = 0; i < anchor.rows(); ++i) {
    const double sp = detail::cosine_with_grads(anchor.row(i), positive.row(i), dap, dp);
    const double sn = detail::cosine_with_grads(anchor.row(i), negative.row(i), dan, dn);
    if (!(sp + 1.0 > 1e-12)) throw DegenerateInputError("triplet_conditional: anchor and positive are antiparallel");
    const double ratio = (sn + 1.0) / (sp + 1.0) - m;
    const double loss = std::max(ratio, 0.0);
    r.per_triplet.push_back(loss);
    r.value += loss;
    if (!(ratio > 0.0)) continue;
    const double g_sn = 1.0 / (sp + 1.0);
    const double g_sp = -(sn + 1.0) / ((sp + 1.0) * (sp + 1.0));
    for (std::size_t k = 0; k < anchor.cols(); ++k) {
      r.d_anchor(i, k) = g_sp * dap[k] + g_sn * dan[k];
      r.d_positive(i, k) = g_sp * dp[k];
      r.d_negative(i, k) = g_sn * dn[k];
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Two-class decision geometry

enum class Region : std::uint8_t { band = 0, class1 = 1, class2 = 2 };

/// Target-class score in cosine units after the loss's margin is applied.
inline double margined_cosine(const LossConfig& cfg, double c) {
  switch (cfg.id) {
    case LossId::nsoftmax: return c;
    case LossId::csoftmax: return cfg.margin.m1 * c + cfg.margin.m2;
    case LossId::cosface: return c - cfg.cosface_margin;
    case LossId::arcface: {
      const double theta = std::acos(std::clamp(c, -1.0, 1.0));
      return std::cos(std::min(theta + cfg.arcface_margin, std::numbers::pi));
    }
    case LossId::triplet_cond: return cfg.triplet_margin * c + (cfg.triplet_margin - 1.0);
    default: throw ConfigError("margin_map: loss '" + std::string(to_string(cfg.id)) + "' has no angular decision rule");
  }
}

/// Region of the point (cosθ₁, cosθ₂). A point belongs to a class when that
/// class's margined logit beats the other class's plain logit, both scaled by s.
inline Region classify_point(const LossConfig& cfg, double cos1, double cos2, double s) {
  const bool c1 = s * margined_cosine(cfg, cos1) > s * cos2;
  const bool c2 = s * margined_cosine(cfg, cos2) > s * cos1;
  if (c1 && !c2) return Region::class1;
  if (c2 && !c1) return Region::class2;
  return Region::band;
}

struct MarginGrid {
  std::size_t resolution = 0;
  std::vector<double> axis;     // cosine value of each column / row
  std::vector<Region> regions;  // row-major, row = cosθ₂ index, column = cosθ₁ index

  Region at(std::size_t row, std::size_t col) const { return regions[row * resolution + col]; }
};

/// Label every grid point of [−1, 1]² (endpoints included) by decision region.
inline MarginGrid margin_map(const LossConfig& cfg, std::size_t resolution, double s = 1.0) {
  if (resolution < 2) throw ConfigError("margin_map resolution must be >= 2");
  margined_cosine(cfg, 0.0);  // rejects unsupported losses
  MarginGrid g{resolution, std::vector<double>(resolution), std::vector<Region>(resolution * resolution)};
  for (std::size_t k = 0; k < resolution; ++k)
    g.axis[k] = -1.0 + 2.0 * static_cast<double>(k) / static_cast<double>(resolution - 1);
  for (std::size_t row = 0; row < resolution; ++row)
    for (std::size_t col = 0; col < resolution; ++col)
      g.regions[row * resolution + col] = classify_point(cfg, g.axis[col], g.axis[row], s);
  return g;
}

/// Vertical extent of the margin band at cosθ₁ = c, from the two boundary
/// curves cosθ₂ = margined(c) (class-1 edge) and margined(cosθ₂) = c (class-2 edge).
/// Not clipped to the unit square.
inline double band_width(const LossConfig& cfg, double c) {
  const double lower = margined_cosine(cfg, c);
  double upper;
  switch (cfg.id) {
    case LossId::nsoftmax: upper = c; break;
    case LossId::csoftmax: upper = (c - cfg.margin.m2) / cfg.margin.m1; break;
    case LossId::cosface: upper = c + cfg.cosface_margin; break;
    case LossId::arcface: upper = std::cos(std::max(std::acos(std::clamp(c, -1.0, 1.0)) - cfg.arcface_margin, 0.0)); break;
    case LossId::triplet_cond: upper = (c - (cfg.triplet_margin - 1.0)) / cfg.triplet_margin; break;
    default: throw ConfigError("band_width: unsupported loss");
  }
  return upper - lower;
}

}  // namespace relgraph
