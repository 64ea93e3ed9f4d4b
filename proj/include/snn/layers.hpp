#pragma once

#include <variant>
#include <vector>

#include "snn/conv.hpp"
#include "snn/tensor.hpp"

namespace snn {

struct Conv {
  Index out_channels = 1;
  Index kernel_h = 1;
  Index kernel_w = 1;
  Index stride = 1;
  Index padding = 0;

  ConvGeometry geometry() const { return {stride, padding}; }
  friend bool operator==(const Conv&, const Conv&) = default;
};

struct ReLU {
  friend bool operator==(const ReLU&, const ReLU&) = default;
};

/// Selects, per window, the element with the largest mean.
struct MeanPool {
  Index window = 2;
  Index stride = 2;
  friend bool operator==(const MeanPool&, const MeanPool&) = default;
};

struct Flatten {
  friend bool operator==(const Flatten&, const Flatten&) = default;
};

struct FullyConnected {
  Index out_units = 1;
  friend bool operator==(const FullyConnected&, const FullyConnected&) = default;
};

using LayerSpec = std::variant<Conv, ReLU, MeanPool, Flatten, FullyConnected>;

/// Weights and bias of one layer; both empty for parameter-free layers.
/// Conv: weight (Cout, Cin, kh, kw), bias (Cout). FullyConnected: weight (out, in), bias (out).
struct LayerParams {
  Tensor weight;
  Tensor bias;

  bool empty() const { return weight.empty(); }
  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

inline bool is_affine(const LayerSpec& spec) {
  return std::holds_alternative<Conv>(spec) || std::holds_alternative<FullyConnected>(spec);
}

const char* layer_name(const LayerSpec& spec);

/// Output shape of a layer for a given input shape; throws ShapeError when the
/// layer cannot consume that shape.
Shape layer_output_shape(const LayerSpec& spec, const Shape& input);

/// Weight and bias shapes for an affine layer (empty shapes otherwise).
std::pair<Shape, Shape> layer_param_shapes(const LayerSpec& spec, const Shape& input);

/// Number of inputs feeding one output unit.
Index fan_in(const LayerSpec& spec, const Shape& input);

}  // namespace snn
