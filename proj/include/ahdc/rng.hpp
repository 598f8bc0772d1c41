#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace ahdc {

/// 64-bit FNV-1a hash of a component name.
std::uint64_t fnv1a64(std::string_view text) noexcept;

/// SplitMix64 finaliser; a bijection on 64-bit integers.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Seed of the independent stream owned by `component` within an experiment.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view component) noexcept;

/// Seed for the `index`-th item of a derived stream (e.g. sample i of a dataset).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view component, std::uint64_t index) noexcept;

/// Deterministic random stream. The distributions are implemented here rather
/// than taken from <random> so the sequences do not depend on the standard
/// library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view component) : engine_(derive_seed(seed, component)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller.
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ahdc
