#include "snn/layers.hpp"

#include <string>

namespace snn {

namespace {
template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require_rank(const Shape& input, Index rank, const char* layer) {
  if (static_cast<Index>(input.size()) != rank) {
    throw ShapeError(std::string(layer) + ": expected rank-" + std::to_string(rank) + " input, got " +
                     shape_string(input));
  }
}
}  // namespace

const char* layer_name(const LayerSpec& spec) {
  return std::visit(overloaded{[](const Conv&) { return "Conv"; }, [](const ReLU&) { return "ReLU"; },
                               [](const MeanPool&) { return "MeanPool"; }, [](const Flatten&) { return "Flatten"; },
                               [](const FullyConnected&) { return "FullyConnected"; }},
                    spec);
}

Shape layer_output_shape(const LayerSpec& spec, const Shape& input) {
  return std::visit(
      overloaded{
          [&](const Conv& c) -> Shape {
            require_rank(input, 3, "Conv");
            if (c.out_channels <= 0 || c.kernel_h <= 0 || c.kernel_w <= 0) {
              throw ShapeError("Conv: dimensions must be positive");
            }
            return {c.out_channels, conv_output_size(input[1], c.kernel_h, c.geometry()),
                    conv_output_size(input[2], c.kernel_w, c.geometry())};
          },
          [&](const ReLU&) -> Shape { return input; },
          [&](const MeanPool& p) -> Shape {
            require_rank(input, 3, "MeanPool");
            if (p.window <= 0 || p.stride <= 0) throw ShapeError("MeanPool: window and stride must be positive");
            for (int axis = 1; axis <= 2; ++axis) {
              if (p.window > input[axis]) {
                throw ShapeError("MeanPool: window " + std::to_string(p.window) + " larger than input " +
                                 shape_string(input));
              }
              if ((input[axis] - p.window) % p.stride != 0) {
                throw ShapeError("MeanPool: window/stride do not tile input " + shape_string(input));
              }
            }
            return {input[0], (input[1] - p.window) / p.stride + 1, (input[2] - p.window) / p.stride + 1};
          },
          [&](const Flatten&) -> Shape { return {shape_size(input)}; },
          [&](const FullyConnected& f) -> Shape {
            require_rank(input, 1, "FullyConnected");
            if (f.out_units <= 0) throw ShapeError("FullyConnected: out_units must be positive");
            return {f.out_units};
          }},
      spec);
}

std::pair<Shape, Shape> layer_param_shapes(const LayerSpec& spec, const Shape& input) {
  if (const auto* c = std::get_if<Conv>(&spec)) {
    return {{c->out_channels, input.at(0), c->kernel_h, c->kernel_w}, {c->out_channels}};
  }
  if (const auto* f = std::get_if<FullyConnected>(&spec)) {
    return {{f->out_units, input.at(0)}, {f->out_units}};
  }
  return {};
}

Index fan_in(const LayerSpec& spec, const Shape& input) {
  if (const auto* c = std::get_if<Conv>(&spec)) return input.at(0) * c->kernel_h * c->kernel_w;
  if (std::holds_alternative<FullyConnected>(spec)) return input.at(0);
  return 0;
}

}  // namespace snn
