#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace himix {

/// SplitMix64 step; used for seeding and for hashing seeds together.
std::uint64_t splitmix64(std::uint64_t& state);

/// Mixes a master seed with a tag (e.g. "corpus", "train") into an independent sub-seed.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

/// xoshiro256** (Blackman & Vigna), state filled from SplitMix64(seed).
/// All distributions below are implemented here rather than taken from
/// <random> so that draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on the open interval (0, 1).
  double uniform_open();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n), n > 0, by rejection (no modulo bias).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via the Box-Muller transform.
  double normal();
  /// log of a Gamma(shape, 1) draw. Marsaglia-Tsang for shape >= 1; for
  /// shape < 1 the boost Gamma(a) = Gamma(a+1) * U^(1/a) is applied in log space.
  double log_gamma_draw(double shape);
  /// Beta(a, b) from two Gamma draws, evaluated as 1/(1+exp(log Y - log X)).
  /// The result can round to exactly 0 or 1 for small shapes.
  double beta(double a, double b);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace himix
