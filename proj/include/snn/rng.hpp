#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

#include "snn/tensor.hpp"

namespace snn {

/// Counter-based generator: the n-th draw of a stream is
/// splitmix64(key + n * golden), with key = splitmix64(seed ^ splitmix64(stream)).
/// Output depends only on (seed, stream, counter), so streams are
/// reproducible across platforms and split() never perturbs the parent.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), key_(mix(seed ^ mix(stream + kStreamSalt))) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  /// Independent substream; the parent is left untouched.
  SeededRng split(std::uint64_t substream) const {
    return SeededRng(seed_, mix(stream_ + kGolden * (substream + 1)));
  }

  std::uint64_t next_u64() { return mix(key_ + kGolden * counter_++); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("SeededRng::below: n must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do v = next_u64();
    while (v >= limit);
    return v % n;
  }

  /// Standard normal via Box-Muller (two uniforms per draw).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kStreamSalt = 0xD1B54A32D192ED03ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z += kGolden;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Tensor of i.i.d. N(mu, sigma^2) draws; sigma = 0 gives a constant tensor.
inline Tensor sample_gaussian(SeededRng& rng, const Shape& shape, double mu, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("sample_gaussian: sigma must be finite and >= 0");
  }
  Tensor out(shape);
  for (Index i = 0; i < out.size(); ++i) out[i] = sigma == 0.0 ? mu : mu + sigma * rng.normal();
  return out;
}

}  // namespace snn
