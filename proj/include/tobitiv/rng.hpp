#ifndef TOBITIV_RNG_HPP
#define TOBITIV_RNG_HPP

#include <cstdint>
#include <limits>

namespace tobitiv {

/// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Key of substream `index` under `seed`: mix64(seed ^ mix64(index)).
///
/// Used for per-individual streams in the simulator and per-replication
/// streams in Monte Carlo runs, so any stream can be regenerated on its own
/// regardless of how work is split across threads.
constexpr std::uint64_t substream(std::uint64_t seed, std::uint64_t index) noexcept {
  return mix64(seed ^ mix64(index + 0x9e3779b97f4a7c15ULL));
}

/// Counter-based generator: the n-th output is mix64(key + n * gamma).
/// Satisfies UniformRandomBitGenerator, so it plugs into <random> distributions.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key) noexcept : key_(mix64(key)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace tobitiv

#endif  // TOBITIV_RNG_HPP
