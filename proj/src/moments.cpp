#include "snn/moments.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "snn/conv.hpp"
#include "snn/special.hpp"

namespace snn {

GaussianTensor::GaussianTensor(Tensor mean, Tensor var) : mean_(std::move(mean)), var_(std::move(var)) {
  require_same_shape(mean_, var_, "GaussianTensor");
  if (!mean_.all_finite() || !var_.all_finite()) throw std::invalid_argument("GaussianTensor: non-finite moments");
  if (var_.size() > 0 && var_.data().minCoeff() < kVarFloor) {
    throw std::invalid_argument("GaussianTensor: variance below floor");
  }
}

const char* variance_mode_name(VarianceMode mode) {
  return mode == VarianceMode::IdentityVariance ? "identity" : "diagonal";
}

VarianceMode parse_variance_mode(const std::string& name) {
  if (name == "identity") return VarianceMode::IdentityVariance;
  if (name == "diagonal") return VarianceMode::DiagonalExact;
  throw std::invalid_argument("unknown variance mode '" + name + "' (expected identity|diagonal)");
}

GaussianTensor inject_noise(const Tensor& x, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("inject_noise: sigma must be >= 0");
  return GaussianTensor(x, Tensor::full(x.shape(), std::max(sigma * sigma, kVarFloor)));
}

namespace {

void check_affine_params(const LayerSpec& spec, const LayerParams& p, const Shape& input_shape) {
  if (!is_affine(spec)) throw std::invalid_argument(std::string("not an affine layer: ") + layer_name(spec));
  const auto [wshape, bshape] = layer_param_shapes(spec, input_shape);
  if (p.weight.shape() != wshape || p.bias.shape() != bshape) {
    throw ShapeError(std::string(layer_name(spec)) + ": parameters " + shape_string(p.weight.shape()) + "/" +
                     shape_string(p.bias.shape()) + " do not match input " + shape_string(input_shape));
  }
}

auto fc_matrix(const Tensor& weight) {
  return Eigen::Map<const MatrixRM<double>>(weight.data().data(), weight.dim(0), weight.dim(1));
}

}  // namespace

Tensor affine_forward(const Tensor& x, const LayerSpec& spec, const LayerParams& params) {
  check_affine_params(spec, params, x.shape());
  if (const auto* c = std::get_if<Conv>(&spec)) return conv2d(x, params.weight, params.bias, c->geometry());
  Tensor out({params.weight.dim(0)});
  out.data().noalias() = fc_matrix(params.weight) * x.data();
  out.data() += params.bias.data();
  return out;
}

Tensor affine_transpose(const Tensor& grad_out, const LayerSpec& spec, const LayerParams& params,
                        const Shape& input_shape) {
  if (const auto* c = std::get_if<Conv>(&spec)) {
    const Index co = params.weight.dim(0);
    Eigen::Map<const MatrixRM<double>> g(grad_out.data().data(), co, grad_out.size() / co);
    MatrixRM<double> dcols = kernel_matrix(params.weight).transpose() * g;
    return col2im(dcols, input_shape, c->kernel_h, c->kernel_w, c->geometry());
  }
  Tensor out(input_shape);
  out.data().noalias() = fc_matrix(params.weight).transpose() * grad_out.data();
  return out;
}

Tensor affine_weight_grad(const Tensor& x, const Tensor& grad_out, const LayerSpec& spec, const LayerParams& params) {
  Tensor dw(params.weight.shape());
  Eigen::Map<MatrixRM<double>> dw_mat(dw.data().data(), params.weight.dim(0),
                                      params.weight.size() / params.weight.dim(0));
  if (const auto* c = std::get_if<Conv>(&spec)) {
    const Index co = params.weight.dim(0);
    Eigen::Map<const MatrixRM<double>> g(grad_out.data().data(), co, grad_out.size() / co);
    dw_mat.noalias() = g * im2col(x, c->kernel_h, c->kernel_w, c->geometry()).transpose();
  } else {
    dw_mat.noalias() = grad_out.data() * x.data().transpose();
  }
  return dw;
}

GaussianTensor propagate_affine(const GaussianTensor& gt, const LayerSpec& spec, const LayerParams& params,
                                VarianceMode mode, double sigma_global) {
  Tensor mean = affine_forward(gt.mean(), spec, params);
  if (mode == VarianceMode::IdentityVariance) {
    if (!(sigma_global >= 0.0)) throw std::invalid_argument("propagate_affine: sigma must be >= 0");
    Tensor var = Tensor::full(mean.shape(), std::max(sigma_global * sigma_global, kVarFloor));
    return GaussianTensor(std::move(mean), std::move(var));
  }
  LayerParams squared{Tensor(params.weight.shape(), params.weight.data().array().square().matrix()),
                      Tensor(params.bias.shape())};
  Tensor var = affine_forward(gt.var(), spec, squared);
  var.data() = var.data().cwiseMax(kVarFloor);
  return GaussianTensor(std::move(mean), std::move(var));
}

GaussianTensor propagate_relu(const GaussianTensor& gt) {
  Tensor mean(gt.shape()), var(gt.shape());
  for (Index i = 0; i < gt.size(); ++i) {
    const double mu = gt.mean()[i];
    const double v = gt.var()[i];
    mean[i] = mu >= 0.0 ? mu : 0.0;
    var[i] = mu >= -kReluCensorSigmas * std::sqrt(v) ? v : kVarFloor;
  }
  return GaussianTensor(std::move(mean), std::move(var));
}

RectifiedMoments exact_rectified_moments(double mu, double sigma) {
  if (!std::isfinite(mu) || !std::isfinite(sigma) || !(sigma > 0.0)) {
    throw std::invalid_argument("exact_rectified_moments: need finite mu and sigma > 0");
  }
  const double a = mu / sigma;
  const double cdf = std_normal_cdf(a);
  const double pdf = std_normal_pdf(a);
  const double mean = mu * cdf + sigma * pdf;
  const double second = (mu * mu + sigma * sigma) * cdf + mu * sigma * pdf;
  return {mean, std::max(second - mean * mean, 0.0)};
}

std::pair<Tensor, SelectionMap> select_max(const Tensor& values, Index window, Index stride) {
  const Shape out_shape = layer_output_shape(MeanPool{window, stride}, values.shape());
  const Index height = values.dim(1), width = values.dim(2);
  SelectionMap map{values.shape(), out_shape, window, stride, {}};
  map.source.reserve(static_cast<std::size_t>(shape_size(out_shape)));
  Tensor out(out_shape);
  Index o = 0;
  for (Index c = 0; c < out_shape[0]; ++c) {
    for (Index y = 0; y < out_shape[1]; ++y) {
      for (Index x = 0; x < out_shape[2]; ++x, ++o) {
        Index best = (c * height + y * stride) * width + x * stride;
        for (Index i = 0; i < window; ++i) {
          for (Index j = 0; j < window; ++j) {
            const Index idx = (c * height + y * stride + i) * width + x * stride + j;
            if (values[idx] > values[best]) best = idx;
          }
        }
        map.source.push_back(best);
        out[o] = values[best];
      }
    }
  }
  return {std::move(out), std::move(map)};
}

Tensor apply_selection(const Tensor& input, const SelectionMap& map) {
  if (input.shape() != map.input_shape) throw ShapeError("apply_selection: input shape mismatch");
  Tensor out(map.output_shape);
  for (Index o = 0; o < out.size(); ++o) out[o] = input[map.source[static_cast<std::size_t>(o)]];
  return out;
}

Tensor scatter_selection(const Tensor& grad_out, const SelectionMap& map) {
  if (grad_out.size() != shape_size(map.output_shape)) throw ShapeError("scatter_selection: output shape mismatch");
  Tensor out(map.input_shape);
  for (Index o = 0; o < grad_out.size(); ++o) out[map.source[static_cast<std::size_t>(o)]] += grad_out[o];
  return out;
}

std::pair<GaussianTensor, SelectionMap> propagate_meanpool(const GaussianTensor& gt, Index window, Index stride) {
  auto [mean, map] = select_max(gt.mean(), window, stride);
  Tensor var = apply_selection(gt.var(), map);
  return {GaussianTensor(std::move(mean), std::move(var)), std::move(map)};
}

}  // namespace snn
