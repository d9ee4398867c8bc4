#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace bcsi {

// Counter-based generator: draw i is splitmix64(key + GOLDEN * i), so the
// stream is a pure function of (key, counter) and serializes as two u64.
// Same seed -> same stream on every platform (gaussian additionally depends
// on libm's log/cos/sqrt, identical for a given build).
class Rng {
 public:
  Rng() = default;
  explicit Rng(uint64_t seed) : key_(mix64(seed ^ 0x2545F4914F6CDD1DULL)) {}

  static uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  uint64_t next_u64() { return mix64(key_ + 0x9E3779B97F4A7C15ULL * ++counter_); }

  // [0,1), 53-bit resolution
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("Rng::uniform: lo > hi");
    return lo + next_unit() * (hi - lo);
  }

  // Box-Muller, cosine branch; consumes two draws per sample
  double gaussian(double mu, double sigma) {
    if (sigma < 0.0) throw std::invalid_argument("Rng::gaussian: sigma < 0");
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0,1]
    double u2 = next_unit();
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    return mu + sigma * z;
  }

  // uniform integer in [0, n), multiply-shift reduction
  uint64_t next_below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::next_below: n == 0");
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  bool next_bool() { return (next_u64() & 1ULL) != 0; }

  // independent substream; children of equal (key, id) coincide
  Rng child(uint64_t stream_id) const {
    Rng r;
    r.key_ = mix64(key_ ^ mix64(stream_id ^ 0x8E4CD24BF5A9B1EDULL));
    return r;
  }

  uint64_t key() const { return key_; }
  uint64_t counter() const { return counter_; }
  void restore(uint64_t key, uint64_t counter) {
    key_ = key;
    counter_ = counter;
  }

 private:
  uint64_t key_ = 0x9E3779B97F4A7C15ULL;
  uint64_t counter_ = 0;
};

}  // namespace bcsi
