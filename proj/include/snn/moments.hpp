#pragma once

#include <string>
#include <utility>
#include <vector>

#include "snn/layers.hpp"
#include "snn/tensor.hpp"

namespace snn {

/// Smallest variance carried by a GaussianTensor; stands in for the censored
/// "variance tends to zero" regime of ReLU while keeping erf arguments finite.
inline constexpr double kVarFloor = 1e-12;

/// Half-width, in standard deviations, of the band where ReLU keeps the input variance.
inline constexpr double kReluCensorSigmas = 3.0;

/// Diagonal Gaussian: per-element mean and variance.
class GaussianTensor {
 public:
  GaussianTensor(Tensor mean, Tensor var);

  const Tensor& mean() const { return mean_; }
  const Tensor& var() const { return var_; }
  const Shape& shape() const { return mean_.shape(); }
  Index size() const { return mean_.size(); }

  GaussianTensor reshaped(const Shape& shape) const {
    return GaussianTensor(mean_.reshaped(shape), var_.reshaped(shape));
  }

 private:
  Tensor mean_;
  Tensor var_;
};

enum class VarianceMode {
  /// Every affine output gets variance sigma^2 regardless of weights.
  IdentityVariance,
  /// var_out_i = sum_j a_ji^2 var_in_j (inputs treated as independent).
  DiagonalExact,
};

const char* variance_mode_name(VarianceMode mode);
VarianceMode parse_variance_mode(const std::string& name);

/// For each pooled output, the flat index of the input element it copies.
struct SelectionMap {
  Shape input_shape;
  Shape output_shape;
  Index window = 0;
  Index stride = 0;
  std::vector<Index> source;
};

/// Adds N(0, sigma^2) to every element of a deterministic tensor.
GaussianTensor inject_noise(const Tensor& x, double sigma);

/// Deterministic affine map (Conv or FullyConnected).
Tensor affine_forward(const Tensor& x, const LayerSpec& spec, const LayerParams& params);

/// Transposed affine map: input-space image of an output-space tensor (no bias).
Tensor affine_transpose(const Tensor& grad_out, const LayerSpec& spec, const LayerParams& params,
                        const Shape& input_shape);

/// Weight gradient of sum(grad_out * affine(x)) with respect to the weights.
Tensor affine_weight_grad(const Tensor& x, const Tensor& grad_out, const LayerSpec& spec,
                          const LayerParams& params);

/// Propagates a Gaussian through an affine layer. The mean is mapped exactly;
/// the variance follows `mode`, with sigma_global used by IdentityVariance.
GaussianTensor propagate_affine(const GaussianTensor& gt, const LayerSpec& spec, const LayerParams& params,
                                VarianceMode mode, double sigma_global);

/// Mode-based ReLU rule: mean max(0, mu); variance kept while mu >= -3 sd and
/// floored below that.
GaussianTensor propagate_relu(const GaussianTensor& gt);

struct RectifiedMoments {
  double mean;
  double var;
};

/// Exact mean and variance of max(0, Z) for Z ~ N(mu, sigma^2).
RectifiedMoments exact_rectified_moments(double mu, double sigma);

/// Window-wise argmax (first maximal element in row-major order wins).
std::pair<Tensor, SelectionMap> select_max(const Tensor& values, Index window, Index stride);

/// Pools a Gaussian by copying the element whose mean is largest in each window.
std::pair<GaussianTensor, SelectionMap> propagate_meanpool(const GaussianTensor& gt, Index window, Index stride);

/// Gathers the selected elements of an input-shaped tensor.
Tensor apply_selection(const Tensor& input, const SelectionMap& map);

/// Routes output-shaped values back to their selected inputs; zeros elsewhere.
Tensor scatter_selection(const Tensor& grad_out, const SelectionMap& map);

}  // namespace snn
