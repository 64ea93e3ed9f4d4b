#pragma once

#include <Eigen/Core>

#include <string>

#include "snn/errors.hpp"
#include "snn/tensor.hpp"

namespace snn {

struct ConvGeometry {
  Index stride = 1;
  Index padding = 0;
};

inline Index conv_output_size(Index in, Index kernel, const ConvGeometry& g) {
  if (g.stride <= 0 || g.padding < 0) throw ShapeError("conv: stride must be positive, padding >= 0");
  const Index span = in + 2 * g.padding - kernel;
  if (span < 0) {
    throw ShapeError("conv: kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * g.padding));
  }
  return span / g.stride + 1;
}

/// Unfolds a (C, H, W) input into a (C*kh*kw, OH*OW) patch matrix. Row
/// (c*kh + i)*kw + j holds the input value under kernel tap (c, i, j) for each
/// output position; padded taps are zero.
template <typename Scalar>
MatrixRM<Scalar> im2col(const BasicTensor<Scalar>& input, Index kh, Index kw, const ConvGeometry& g) {
  if (input.rank() != 3) throw ShapeError("im2col: expected (C,H,W) input, got " + shape_string(input.shape()));
  const Index channels = input.dim(0), height = input.dim(1), width = input.dim(2);
  const Index oh = conv_output_size(height, kh, g), ow = conv_output_size(width, kw, g);
  MatrixRM<Scalar> cols = MatrixRM<Scalar>::Zero(channels * kh * kw, oh * ow);
  for (Index c = 0; c < channels; ++c) {
    for (Index i = 0; i < kh; ++i) {
      for (Index j = 0; j < kw; ++j) {
        auto row = cols.row((c * kh + i) * kw + j);
        for (Index y = 0; y < oh; ++y) {
          const Index iy = y * g.stride + i - g.padding;
          if (iy < 0 || iy >= height) continue;
          for (Index x = 0; x < ow; ++x) {
            const Index ix = x * g.stride + j - g.padding;
            if (ix >= 0 && ix < width) row[y * ow + x] = input(c, iy, ix);
          }
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: scatters patch-matrix entries back onto a (C, H, W) grid,
/// summing overlapping taps.
template <typename Scalar>
BasicTensor<Scalar> col2im(const MatrixRM<Scalar>& cols, const Shape& input_shape, Index kh, Index kw,
                           const ConvGeometry& g) {
  const Index channels = input_shape.at(0), height = input_shape.at(1), width = input_shape.at(2);
  const Index oh = conv_output_size(height, kh, g), ow = conv_output_size(width, kw, g);
  if (cols.rows() != channels * kh * kw || cols.cols() != oh * ow) throw ShapeError("col2im: patch matrix shape mismatch");
  BasicTensor<Scalar> out(input_shape);
  for (Index c = 0; c < channels; ++c) {
    for (Index i = 0; i < kh; ++i) {
      for (Index j = 0; j < kw; ++j) {
        const auto row = cols.row((c * kh + i) * kw + j);
        for (Index y = 0; y < oh; ++y) {
          const Index iy = y * g.stride + i - g.padding;
          if (iy < 0 || iy >= height) continue;
          for (Index x = 0; x < ow; ++x) {
            const Index ix = x * g.stride + j - g.padding;
            if (ix >= 0 && ix < width) out(c, iy, ix) += row[y * ow + x];
          }
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
void check_conv_operands(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& kernel,
                         const BasicTensor<Scalar>& bias) {
  if (input.rank() != 3) throw ShapeError("conv2d: input must be (C,H,W), got " + shape_string(input.shape()));
  if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be (Cout,Cin,kh,kw), got " + shape_string(kernel.shape()));
  if (kernel.dim(1) != input.dim(0)) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, input has " +
                     std::to_string(input.dim(0)));
  }
  if (bias.rank() != 1 || bias.dim(0) != kernel.dim(0)) {
    throw ShapeError("conv2d: bias must have one entry per output channel");
  }
}

/// Row-major (Cout, Cin*kh*kw) view of a kernel tensor.
template <typename Scalar>
auto kernel_matrix(const BasicTensor<Scalar>& kernel) {
  return Eigen::Map<const MatrixRM<Scalar>>(kernel.data().data(), kernel.dim(0),
                                            kernel.size() / kernel.dim(0));
}

/// Multi-channel cross-correlation (the deep-learning "convolution"),
/// output (Cout, OH, OW) with OH = floor((H + 2p - kh) / s) + 1.
template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& input, const BasicTensor<Scalar>& kernel,
                           const BasicTensor<Scalar>& bias, const ConvGeometry& g = {}) {
  check_conv_operands(input, kernel, bias);
  const Index kh = kernel.dim(2), kw = kernel.dim(3);
  const Index oh = conv_output_size(input.dim(1), kh, g), ow = conv_output_size(input.dim(2), kw, g);
  BasicTensor<Scalar> out({kernel.dim(0), oh, ow});
  Eigen::Map<MatrixRM<Scalar>> out_mat(out.data().data(), kernel.dim(0), oh * ow);
  out_mat.noalias() = kernel_matrix(kernel) * im2col(input, kh, kw, g);
  out_mat.colwise() += bias.data();
  return out;
}

}  // namespace snn
