#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace fedlora {

/// Mixes a base seed with a list of tags into an independent stream seed.
/// Used to give every (run, client, round, epoch) its own reproducible stream.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

/// Seeded random source with platform-independent sampling routines.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The distribution objects in <random> are implementation-defined,
/// so every distribution used by the simulator is written out here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform double in (0, 1).
  double uniform_open();

  /// Unbiased integer in [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound);

  /// Standard normal via the Marsaglia polar method.
  double normal();

  /// Gamma(shape, 1) via Marsaglia-Tsang; shapes below 1 use the
  /// U^(1/shape) boost.
  double gamma(double shape);

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& values) {
    shuffle(std::span<T>(values));
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fedlora
