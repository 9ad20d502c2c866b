#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace wamd {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Named sub-seed so each component (data, init, shuffle, ...) draws from an
/// independent, reproducible stream of the single run seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view name) {
  return splitmix64(master ^ fnv1a(name));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view name,
                                 std::uint64_t index) {
  return splitmix64(derive_seed(master, name) ^ splitmix64(index));
}

/// mt19937_64 with hand-rolled distributions. The standard distributions are
/// implementation-defined, so uniform/normal/bounded are written out here to
/// keep every sampled value identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; caches the second variate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 0.0;
    do {
      u = uniform();
    } while (u == 0.0);
    const double r = std::sqrt(-2.0 * std::log(u));
    const double t = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t bounded(std::uint64_t n) {
    for (;;) {
      const std::uint64_t x = engine_();
      const std::uint64_t r = x % n;
      if (x - r <= ~std::uint64_t{0} - (n - 1)) return r;
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Fisher-Yates with the deterministic bounded() draw.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.bounded(i)]);
  }
}

}  // namespace wamd
