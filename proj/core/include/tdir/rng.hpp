#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace tdir {

/// Seeded random stream. The engine is std::mt19937_64, whose output
/// sequence is fixed by the standard; the distribution transforms below are
/// written out so samples do not depend on the standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double exponential() { return -std::log1p(-uniform()); }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Mixes a base seed with tags into an independent child seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);
std::uint64_t hash_name(std::string_view name);

}  // namespace tdir
