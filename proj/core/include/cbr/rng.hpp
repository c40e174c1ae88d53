#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace cbr {

/// xoshiro256** seeded through SplitMix64.
///
/// Every draw used by corpus generation, splitting, random projections and
/// the synthetic oracle goes through this generator, so outputs are
/// reproducible across platforms and standard libraries. Normal variates use
/// the Box-Muller transform and integers use Lemire's rejection method; none
/// of the <random> distributions are involved because their algorithms are
/// implementation-defined.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "xoshiro256ss-splitmix64/v1";

  explicit Rng(std::uint64_t seed);

  /// Derives an independent stream for a (seed, stream) pair, e.g. one per
  /// sample index, so parallel generation gives identical results.
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer on [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  double normal();

  /// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

/// Stable 64-bit hash (FNV-1a) for deriving seeds from names.
std::uint64_t hash_name(std::string_view name);

}  // namespace cbr
