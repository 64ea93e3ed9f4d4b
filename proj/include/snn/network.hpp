#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "snn/layers.hpp"
#include "snn/moments.hpp"
#include "snn/rng.hpp"
#include "snn/tensor.hpp"

namespace snn {

/// Architecture: input shape, layer sequence and class count. Construction
/// validates the whole shape flow, so a ModelConfig in hand always type-checks.
/// Noise enters at the pre-activation of the first affine layer; only Flatten
/// may precede it.
class ModelConfig {
 public:
  ModelConfig(Shape input_shape, std::vector<LayerSpec> layers, Index num_classes, double default_sigma = 0.0);

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  Index num_layers() const { return static_cast<Index>(layers_.size()); }
  Index num_classes() const { return num_classes_; }
  double default_sigma() const { return default_sigma_; }
  Index noise_layer() const { return noise_layer_; }

  /// shapes()[i] is the input of layer i; shapes().back() the logits shape.
  const std::vector<Shape>& shapes() const { return shapes_; }

  friend bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.input_shape_ == b.input_shape_ && a.layers_ == b.layers_ && a.num_classes_ == b.num_classes_ &&
           a.default_sigma_ == b.default_sigma_;
  }

 private:
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  Index num_classes_;
  double default_sigma_;
  Index noise_layer_ = 0;
  std::vector<Shape> shapes_;
};

struct ParameterSet {
  ModelConfig config;
  std::vector<LayerParams> layers;
  double sigma = 0.0;
  bool sigma_learnable = false;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;
};

/// He-normal weights N(0, 2 / fan_in), zero biases, sigma = config default.
ParameterSet init_params(const ModelConfig& config, std::uint64_t seed);

/// Throws ShapeError unless every tensor matches the config.
void check_params(const ParameterSet& params);

/// Intermediate state of one forward pass. mean[i] / var[i] hold the input of
/// layer i (index num_layers is the network output); var is empty for a
/// deterministic pass and for boundaries before the noise injection.
struct ForwardCache {
  bool stochastic = false;
  VarianceMode mode = VarianceMode::DiagonalExact;
  double sigma = 0.0;
  std::vector<Tensor> mean;
  std::vector<Tensor> var;
  std::vector<SelectionMap> selections;
  /// ReLU layers: mean >= 0 (gradient passes to the mean).
  std::vector<std::vector<std::uint8_t>> relu_mask;
  /// ReLU layers: mean >= -3 sd (variance kept rather than floored).
  std::vector<std::vector<std::uint8_t>> var_mask;
};

/// Inference with the expectation model (no noise).
Eigen::VectorXd forward_expectation(const ParameterSet& params, const Tensor& x);

struct DeterministicPass {
  Eigen::VectorXd logits;
  ForwardCache cache;
};

DeterministicPass forward_deterministic(const ParameterSet& params, const Tensor& x);

struct StochasticPass {
  GaussianTensor output;
  ForwardCache cache;
};

/// Moment propagation with N(0, params.sigma^2) added at the first affine pre-activation.
StochasticPass forward_stochastic(const ParameterSet& params, const Tensor& x, VarianceMode mode);

/// Same, at an explicit noise level instead of params.sigma.
StochasticPass forward_stochastic(const ParameterSet& params, const Tensor& x, VarianceMode mode, double sigma);

/// One realisation of the noisy network: sampled noise at the first affine
/// pre-activation, exact ReLU and max pooling on the sampled values.
Eigen::VectorXd forward_noisy(const ParameterSet& params, const Tensor& x, double sigma, SeededRng& rng);

/// Argmax with ties resolved to the lowest class index.
Index argmax_label(const Eigen::VectorXd& logits);

struct PresetConfigs {
  ModelConfig mnist_lenet;
  ModelConfig cifar_cnn;
};

PresetConfigs preset_configs();

/// conv(1->2, 3x3) + ReLU + 2x2 pool + FC(10) on an 8x8 single-channel input.
ModelConfig tiny_config();

/// Resolves "mnist_lenet", "cifar_cnn", "tiny" or "blobs".
ModelConfig config_by_name(const std::string& name);

/// Dense form of a convolution: vect(conv(X)) = A^T vect(X) + b, with A of
/// size (Cin*H*W) x (Cout*OH*OW).
struct AffineMatrix {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
};

AffineMatrix conv_as_matrix(const Conv& layer, const LayerParams& params, const Shape& input_shape);

/// Binary checkpoint ("SNNC" format, see README).
std::vector<std::uint8_t> serialize_checkpoint(const ParameterSet& params);
ParameterSet deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path);
ParameterSet load_checkpoint(const std::filesystem::path& path);

}  // namespace snn
