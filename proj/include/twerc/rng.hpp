#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace twerc {

// All randomness in the project flows through the helpers below. The raw
// bit streams come from std::mt19937_64 (sequence fixed by the standard) or
// from the splitmix64 mixer, and every value-level transform (uniform,
// gaussian, ...) is implemented here rather than with std::*_distribution,
// whose output is implementation-defined. Same seed, same bytes, anywhere.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Mix an arbitrary number of 64-bit words into one key. Used to derive
// independent sub-streams, e.g. hash_key(seed, request_id, ad_id).
inline std::uint64_t hash_key(std::uint64_t a) { return splitmix64(a); }
template <typename... Rest>
std::uint64_t hash_key(std::uint64_t a, Rest... rest) {
  return splitmix64(a ^ (hash_key(static_cast<std::uint64_t>(rest)...) +
                         0x9e3779b97f4a7c15ULL));
}

inline double u64_to_unit(std::uint64_t x) {
  return static_cast<double>(x >> 11) * 0x1.0p-53;  // [0, 1)
}

class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  double uniform() { return u64_to_unit(gen_()); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Modulo bias is negligible against 2^64.
  std::uint64_t uniform_index(std::uint64_t n) { return gen_() % n; }

  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double gaussian(double mean, double sigma) {
    return mean + sigma * gaussian();
  }

  // Log-normal parameterized by its actual mean and the sigma of the
  // underlying normal, so E[X] == mean.
  double lognormal_mean(double mean, double sigma) {
    double mu = std::log(mean) - 0.5 * sigma * sigma;
    return std::exp(mu + sigma * gaussian());
  }

  bool bernoulli(double p) { return uniform() < p; }

private:
  std::mt19937_64 gen_;
};

// Stateless counter-based draws: the value depends only on the key words,
// not on evaluation order. The simulator keys these by (seed, request, ad)
// so replays and parallel evaluation agree bit for bit.
inline double hash_uniform(std::uint64_t a, std::uint64_t b,
                           std::uint64_t c, std::uint64_t d = 0) {
  return u64_to_unit(hash_key(a, b, c, d));
}

inline double hash_gaussian(std::uint64_t a, std::uint64_t b,
                            std::uint64_t c, std::uint64_t d = 0) {
  double u1 = u64_to_unit(hash_key(a, b, c, d, 0x67617573ULL));
  double u2 = u64_to_unit(hash_key(a, b, c, d, 0x73696e65ULL));
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace twerc
