#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace vrcpi {

/// SplitMix64 finalizer; used only to decorrelate seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/**
 * Random source used by every sampler.
 *
 * Wraps std::mt19937_64 and derives doubles from the top 53 bits directly, so
 * a given seed yields the same stream regardless of the standard library's
 * distribution implementations.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n) {
    auto k = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return k < n ? k : n - 1;
  }

  /// Draws an index from an (already validated) probability vector; any
  /// indexable type with size() works (std::span, Eigen row/column blocks).
  template <class Probs>
  std::size_t categorical(const Probs& probs) {
    const double u = uniform();
    double acc = 0.0;
    std::size_t last_positive = 0;
    const auto n = static_cast<std::size_t>(probs.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (probs[i] <= 0.0) continue;
      acc += probs[i];
      last_positive = i;
      if (u < acc) return i;
    }
    // rounding left u above the cumulative sum
    return last_positive;
  }

  /// Standard exponential variate; building block for Dirichlet draws.
  double exponential() { return -std::log1p(-uniform()); }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

/// Dirichlet(1, ..., 1) draw of length n via normalized exponentials.
inline std::vector<double> dirichlet_uniform(Rng& rng, std::size_t n) {
  std::vector<double> w(n);
  double total = 0.0;
  for (auto& x : w) {
    x = rng.exponential();
    total += x;
  }
  if (total <= 0.0) {
    // every exponential came out as exactly zero; fall back to the centre
    for (auto& x : w) x = 1.0 / static_cast<double>(n);
    return w;
  }
  for (auto& x : w) x /= total;
  return w;
}

/// Counter-based substream: the generator for slot `index` of run `master`.
/// Episodes draw from their own slot so results do not depend on scheduling.
inline Rng substream(std::uint64_t master, std::uint64_t index) {
  return Rng(mix64(mix64(master) ^ mix64(index + 0x632be59bd9b4e019ULL)));
}

/// Tags that separate auxiliary streams from episode slots.
enum class StreamTag : std::uint64_t {
  kEpisodes = 0,
  kProbes = 1,
  kMixtures = 2,
  kGenerator = 3,
};

inline std::uint64_t tagged_seed(std::uint64_t master, StreamTag tag) {
  return mix64(master ^ mix64(0xa0761d6478bd642fULL * (static_cast<std::uint64_t>(tag) + 1)));
}

}  // namespace vrcpi
