#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "relgraph/losses.hpp"
#include "relgraph/tensor.hpp"

namespace relgraph {

inline const std::vector<double> kDefaultFarLevels{1e-2, 1e-3, 1e-4};

/// Pairwise cosine between probe rows [P×L] and gallery rows [G×L].
inline Tensor cosine_similarity_matrix(const Tensor& probe, const Tensor& gallery) {
  require_rank(probe, 2, "probe embeddings");
  require_rank(gallery, 2, "gallery embeddings");
  if (probe.cols() != gallery.cols())
    throw ShapeError("cosine_similarity_matrix: embedding lengths differ, " + dims_to_string(probe.dims()) + " vs " +
                     dims_to_string(gallery.dims()));
  try {
    return matmul_nt(normalize_rows(probe), normalize_rows(gallery));
  } catch (const DegenerateInputError& e) {
    throw DegenerateInputError(std::string("cosine_similarity_matrix: zero-norm embedding (") + e.what() + ")");
  }
}

/// Fraction of probes whose most similar gallery entry carries the same id.
/// Ties go to the lowest gallery index.
inline double rank1(const Tensor& sim, const std::vector<std::size_t>& probe_ids,
                    const std::vector<std::size_t>& gallery_ids) {
  require_rank(sim, 2, "rank1 similarity");
  if (sim.rows() != probe_ids.size() || sim.cols() != gallery_ids.size())
    throw ShapeError("rank1: similarity " + dims_to_string(sim.dims()) + " vs " + std::to_string(probe_ids.size()) +
                     " probes and " + std::to_string(gallery_ids.size()) + " gallery ids");
  for (auto id : probe_ids)
    if (std::find(gallery_ids.begin(), gallery_ids.end(), id) == gallery_ids.end())
      throw std::out_of_range("rank1: probe identity " + std::to_string(id) + " missing from gallery");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < sim.rows(); ++i) {
    auto row = sim.row(i);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    hits += gallery_ids[best] == probe_ids[i];
  }
  return static_cast<double>(hits) / static_cast<double>(sim.rows());
}

struct VerificationPoint {
  double far_level = 0.0;
  double threshold = 0.0;
  double vr = 0.0;
  double achieved_far = 0.0;
};

struct ScoreSplit {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

inline ScoreSplit split_scores(const Tensor& sim, const std::vector<std::size_t>& probe_ids,
                               const std::vector<std::size_t>& gallery_ids) {
  require_rank(sim, 2, "similarity");
  if (sim.rows() != probe_ids.size() || sim.cols() != gallery_ids.size())
    throw ShapeError("split_scores: similarity " + dims_to_string(sim.dims()) + " does not match id lists");
  ScoreSplit s;
  for (std::size_t i = 0; i < sim.rows(); ++i)
    for (std::size_t j = 0; j < sim.cols(); ++j)
      (probe_ids[i] == gallery_ids[j] ? s.genuine : s.impostor).push_back(sim(i, j));
  return s;
}

/// Verification rate at each false-accept level. Pairs are accepted when
/// score ≥ t; t is the smallest impostor score whose impostor acceptance
/// fraction is ≤ level, or just above the largest impostor score when no
/// impostor score qualifies.
inline std::vector<VerificationPoint> vr_at_far(const ScoreSplit& scores, const std::vector<double>& far_levels) {
  if (scores.genuine.empty()) throw DegenerateInputError("vr_at_far: no genuine pairs");
  if (scores.impostor.empty()) throw DegenerateInputError("vr_at_far: no impostor pairs");
  std::vector<double> imp = scores.impostor, gen = scores.genuine;
  std::sort(imp.begin(), imp.end(), std::greater<>());
  std::sort(gen.begin(), gen.end(), std::greater<>());
  const auto n_imp = static_cast<double>(imp.size());
  auto count_ge = [](const std::vector<double>& desc, double t) {
    return static_cast<std::size_t>(std::partition_point(desc.begin(), desc.end(), [t](double v) { return v >= t; }) -
                                    desc.begin());
  };

  std::vector<VerificationPoint> out;
  for (double level : far_levels) {
    double t = std::nextafter(imp.front(), std::numeric_limits<double>::infinity());
    // descending walk: the last impostor score that still meets the level is the smallest such t
    for (std::size_t k = 0; k < imp.size(); ++k) {
      if (k > 0 && imp[k] == imp[k - 1]) continue;
      if (static_cast<double>(count_ge(imp, imp[k])) / n_imp <= level) t = imp[k];
      else break;
    }
    VerificationPoint p;
    p.far_level = level;
    p.threshold = t;
    p.achieved_far = static_cast<double>(count_ge(imp, t)) / n_imp;
    p.vr = static_cast<double>(count_ge(gen, t)) / static_cast<double>(gen.size());
    out.push_back(p);
  }
  return out;
}

inline std::vector<VerificationPoint> vr_at_far(const Tensor& sim, const std::vector<std::size_t>& probe_ids,
                                                const std::vector<std::size_t>& gallery_ids,
                                                const std::vector<double>& far_levels = kDefaultFarLevels) {
  return vr_at_far(split_scores(sim, probe_ids, gallery_ids), far_levels);
}

struct EvalReport {
  double rank1 = 0.0;
  std::vector<VerificationPoint> verification;
  std::size_t genuine_pairs = 0;
  std::size_t impostor_pairs = 0;
};

inline EvalReport evaluate_embeddings(const Tensor& probe_emb, const Tensor& gallery_emb,
                                      const std::vector<std::size_t>& probe_ids,
                                      const std::vector<std::size_t>& gallery_ids,
                                      const std::vector<double>& far_levels = kDefaultFarLevels) {
  const Tensor sim = cosine_similarity_matrix(probe_emb, gallery_emb);
  EvalReport r;
  r.rank1 = rank1(sim, probe_ids, gallery_ids);
  const ScoreSplit s = split_scores(sim, probe_ids, gallery_ids);
  r.genuine_pairs = s.genuine.size();
  r.impostor_pairs = s.impostor.size();
  r.verification = vr_at_far(s, far_levels);
  return r;
}

}  // namespace relgraph
