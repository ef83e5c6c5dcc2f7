#pragma once

// Seeded randomness. Every consumer draws from a named sub-stream of the run
// seed so components can be re-seeded independently, and the helpers below
// avoid std distributions whose output differs between standard libraries.

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace medagent {

std::uint64_t fnv1a64(std::string_view bytes) noexcept;
std::uint64_t splitmix64(std::uint64_t x) noexcept;
/// 16 lowercase hex digits.
std::string hex64(std::uint64_t v);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  /// Sub-stream derived from a run seed and a component name.
  static Rng stream(std::uint64_t seed, std::string_view name) {
    return Rng(splitmix64(seed ^ fnv1a64(name)));
  }

  std::uint64_t next() { return eng_(); }
  /// Uniform in [0, n) by rejection; n must be > 0.
  std::uint64_t below(std::uint64_t n);
  /// Uniform in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace medagent
