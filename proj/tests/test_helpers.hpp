#pragma once

#include <cstdint>

#include "snn/network.hpp"
#include "snn/rng.hpp"

namespace snn::testing {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  SeededRng rng(seed, 99);
  Tensor t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// Brute-force cross-correlation straight from the definition.
inline Tensor naive_conv(const Tensor& in, const Tensor& k, const Tensor& b, Index stride, Index pad) {
  const Index co = k.dim(0), ci = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const Index oh = (in.dim(1) + 2 * pad - kh) / stride + 1, ow = (in.dim(2) + 2 * pad - kw) / stride + 1;
  Tensor out({co, oh, ow});
  for (Index o = 0; o < co; ++o)
    for (Index y = 0; y < oh; ++y)
      for (Index x = 0; x < ow; ++x) {
        double acc = b[o];
        for (Index c = 0; c < ci; ++c)
          for (Index i = 0; i < kh; ++i)
            for (Index j = 0; j < kw; ++j) {
              const Index iy = y * stride + i - pad, ix = x * stride + j - pad;
              if (iy >= 0 && iy < in.dim(1) && ix >= 0 && ix < in.dim(2))
                acc += k[((o * ci + c) * kh + i) * kw + j] * in(c, iy, ix);
            }
        out(o, y, x) = acc;
      }
  return out;
}

}  // namespace snn::testing
