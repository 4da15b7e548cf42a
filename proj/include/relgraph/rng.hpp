#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "relgraph/tensor.hpp"

namespace relgraph {

/// Counter-based generator.
///
/// The k-th draw of stream `s` under seed `x` is
///   mix64(key + k * 0x9E3779B97F4A7C15),  key = mix64(x ^ mix64(s + 0xD1B54A32D192ED03))
/// where mix64 is the SplitMix64 finaliser. Output depends only on
/// (seed, stream, counter), so any draw is reproducible on any platform and
/// streams for different samples never need to share state.
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), key_(mix64(seed ^ mix64(stream + 0xD1B54A32D192ED03ULL))) {}

  static constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Independent generator for sub-stream `index` of this one.
  Rng substream(std::uint64_t index) const { return Rng(key_, mix64(index + stream_ * kGamma)); }

  std::uint64_t next_u64() noexcept { return mix64(key_ + (++counter_) * kGamma); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    // rejection removes modulo bias
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do v = next_u64();
    while (v >= limit);
    return v % n;
  }

  /// Standard normal via Box-Muller; one pair of uniforms per draw.
  double normal() noexcept {
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Tensor normal_tensor(Dims dims, double stddev = 1.0) {
    Tensor t(std::move(dims));
    for (auto& v : t.data()) v = stddev * normal();
    return t;
  }

  Tensor uniform_tensor(Dims dims, double lo, double hi) {
    Tensor t(std::move(dims));
    for (auto& v : t.data()) v = lo + (hi - lo) * uniform();
    return t;
  }

  template <class T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace relgraph
