#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace hgp {

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// Derives an independent stream seed from a user seed and a stream index:
// mix64(seed + 0x9E3779B97F4A7C15 * (stream + 1)).
std::uint64_t hash64(std::uint64_t seed, std::uint64_t stream);

// Fixed stream tags for every consumer of the single user-facing seed.
// Coarsening levels use hash64(seed, level) directly.
namespace seed_stream {
inline constexpr std::uint64_t kInit = 0x1000;
inline constexpr std::uint64_t kSplit = 0x2000;
inline constexpr std::uint64_t kShuffle = 0x3000;
inline constexpr std::uint64_t kDropout = 0x4000;
inline constexpr std::uint64_t kSynth = 0x5000;
inline constexpr std::uint64_t kLaplacian = 0x6000;
}  // namespace seed_stream

// Deterministic generator. std::mt19937_64 output is fixed by the standard;
// the distributions below are implemented here because the std ones are
// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }
  template <typename T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hgp
