// Deterministic random streams.
//
// Every random quantity in the project draws from a stream keyed by a root
// seed plus a string tag (and optional indices). Streams are independent of
// evaluation order, so parallel and serial generation produce identical
// results, and adding a consumer never perturbs existing ones.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace poseadapt {

namespace detail {

// FNV-1a, used only to fold tags into the seed.
inline std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001b3ull;
  }
  return h;
}

// splitmix64 finalizer; decorrelates nearby seeds.
inline std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace detail

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  h = detail::fnv1a(h, root);
  h = detail::fnv1a(h, tag);
  h = detail::fnv1a(h, a);
  h = detail::fnv1a(h, b);
  return detail::mix(h);
}

// mt19937_64 with portable uniform/normal draws (std::normal_distribution is
// implementation-defined, so Box-Muller is spelled out here).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  Rng(std::uint64_t root, std::string_view tag, std::uint64_t a = 0,
      std::uint64_t b = 0)
      : gen_(derive_seed(root, tag, a, b)) {}

  // Uniform in [0, 1).
  double uniform() {
    return double(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    // Rejection-free modulo is fine here; n is tiny relative to 2^64.
    return gen_() % n;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::swap(first[i - 1], first[index(i)]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace poseadapt
