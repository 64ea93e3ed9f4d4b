#include "snn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "snn/special.hpp"

namespace snn {

LossPolicy LossPolicy::bimodel(double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("Bimodel alpha must be > 0");
  return LossPolicy{alpha};
}

Eigen::VectorXd one_hot(Index k, Index n) {
  if (k < 0 || k >= n) throw std::invalid_argument("one_hot: class index out of range");
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  y[k] = 1.0;
  return y;
}

namespace {

struct PairTerm {
  double probability;
  /// phi(z) / sqrt(var_k + var_i): sensitivity of the probability to mu_k.
  double mean_kernel;
  /// -phi(z) z / (2 (var_k + var_i)): sensitivity to either variance.
  double var_kernel;
};

PairTerm pair_term(double mu_k, double var_k, double mu_i, double var_i) {
  const double s2 = var_k + var_i;
  const double s = std::sqrt(s2);
  const double z = (mu_k - mu_i) / s;
  const double erf_arg = z / std::numbers::sqrt2;
  if (std::abs(erf_arg) > kErfArgClamp) {
    return {0.5 * std::erfc(-std::clamp(erf_arg, -kErfArgClamp, kErfArgClamp)), 0.0, 0.0};
  }
  const double pdf = std_normal_pdf(z);
  return {0.5 * std::erfc(-erf_arg), pdf / s, -pdf * z / (2.0 * s2)};
}

void check_loss_inputs(const GaussianTensor& output, Index k, const Eigen::VectorXd& y) {
  const Index n = output.size();
  if (output.shape().size() != 1 || n < 2) throw std::invalid_argument("stochastic loss: output must be a vector of >= 2 classes");
  if (k < 0 || k >= n) throw std::invalid_argument("stochastic loss: true class index out of range");
  if (y.size() != n) throw std::invalid_argument("stochastic loss: target length mismatch");
  for (Index i = 0; i < n; ++i) {
    if (y[i] != (i == k ? 1.0 : 0.0)) throw std::invalid_argument("stochastic loss: target is not one-hot at k");
  }
}

}  // namespace

double pairwise_win_probability(double mu_k, double var_k, double mu_i, double var_i) {
  if (!std::isfinite(mu_k) || !std::isfinite(var_k) || !std::isfinite(mu_i) || !std::isfinite(var_i)) {
    throw std::invalid_argument("pairwise_win_probability: non-finite input");
  }
  if (!(var_k + var_i > 0.0)) throw std::invalid_argument("pairwise_win_probability: variances must be positive");
  return pair_term(mu_k, var_k, mu_i, var_i).probability;
}

LossBreakdown stochastic_loss(const GaussianTensor& output, Index k, const Eigen::VectorXd& y, const LossPolicy& policy,
                              double sigma) {
  check_loss_inputs(output, k, y);
  const Index n = output.size();
  const Eigen::VectorXd& mu = output.mean().data();
  const Eigen::VectorXd& var = output.var().data();

  LossBreakdown out;
  out.mse = (y - mu).squaredNorm() / static_cast<double>(n);
  out.win_probabilities = Eigen::VectorXd::Constant(n, 0.5);
  for (Index i = 0; i < n; ++i) {
    if (i == k) continue;
    out.win_probabilities[i] = pair_term(mu[k], var[k], mu[i], var[i]).probability;
    out.win_term += out.win_probabilities[i];
  }
  out.win_term /= static_cast<double>(n - 1);
  out.sigma_reg = -policy.alpha() * sigma * sigma;
  out.total = out.mse - out.win_term + out.sigma_reg;
  return out;
}

OutputGradient loss_grad_output(const GaussianTensor& output, Index k, const Eigen::VectorXd& y, bool win_gradient) {
  check_loss_inputs(output, k, y);
  const Index n = output.size();
  const Eigen::VectorXd& mu = output.mean().data();
  const Eigen::VectorXd& var = output.var().data();
  const double inv_pairs = 1.0 / static_cast<double>(n - 1);

  OutputGradient g{2.0 / static_cast<double>(n) * (mu - y), Eigen::VectorXd::Zero(n)};
  if (!win_gradient) return g;
  for (Index i = 0; i < n; ++i) {
    if (i == k) continue;
    const PairTerm t = pair_term(mu[k], var[k], mu[i], var[i]);
    // loss contains -P(Y_k > Y_i) / (n - 1)
    g.dmu[i] += inv_pairs * t.mean_kernel;
    g.dmu[k] -= inv_pairs * t.mean_kernel;
    g.dvar[i] -= inv_pairs * t.var_kernel;
    g.dvar[k] -= inv_pairs * t.var_kernel;
  }
  return g;
}

Gradients Gradients::zeros_like(const ParameterSet& params) {
  Gradients g;
  for (const LayerParams& p : params.layers) {
    g.layers.push_back(p.empty() ? LayerParams{} : LayerParams{Tensor(p.weight.shape()), Tensor(p.bias.shape())});
  }
  g.dx = Tensor(params.config.input_shape());
  g.dmu = Eigen::VectorXd::Zero(params.config.num_classes());
  return g;
}

Gradients& Gradients::operator+=(const Gradients& other) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].empty()) continue;
    layers[i].weight.data() += other.layers[i].weight.data();
    layers[i].bias.data() += other.layers[i].bias.data();
  }
  dsigma += other.dsigma;
  dx.data() += other.dx.data();
  dmu += other.dmu;
  return *this;
}

Gradients& Gradients::operator*=(double scale) {
  for (LayerParams& p : layers) {
    p.weight.data() *= scale;
    p.bias.data() *= scale;
  }
  dsigma *= scale;
  dx.data() *= scale;
  dmu *= scale;
  return *this;
}

double Gradients::parameter_norm() const {
  double sq = dsigma * dsigma;
  for (const LayerParams& p : layers) sq += p.weight.data().squaredNorm() + p.bias.data().squaredNorm();
  return std::sqrt(sq);
}

namespace {

Tensor bias_grad(const LayerSpec& spec, const Tensor& grad_out) {
  if (std::holds_alternative<Conv>(spec)) {
    const Index co = grad_out.dim(0);
    Eigen::Map<const MatrixRM<double>> g(grad_out.data().data(), co, grad_out.size() / co);
    return Tensor({co}, g.rowwise().sum());
  }
  return grad_out;
}

Tensor masked(const Tensor& t, const std::vector<std::uint8_t>& mask) {
  Tensor out(t.shape());
  for (Index i = 0; i < t.size(); ++i) out[i] = mask[static_cast<std::size_t>(i)] ? t[i] : 0.0;
  return out;
}

}  // namespace

Gradients backward(const ParameterSet& params, const ForwardCache& cache, const Eigen::VectorXd& dmu,
                   const Eigen::VectorXd* dvar) {
  const auto& layers = params.config.layers();
  const auto num_layers = layers.size();
  const auto noise_layer = static_cast<std::size_t>(params.config.noise_layer());
  if (cache.mean.size() != num_layers + 1) throw std::invalid_argument("backward: incomplete forward cache");
  if (dmu.size() != cache.mean.back().size()) throw ShapeError("backward: dmu length mismatch");
  bool var_path = cache.stochastic;
  if (var_path && (dvar == nullptr || dvar->size() != dmu.size())) {
    throw std::invalid_argument("backward: stochastic cache needs a matching dvar");
  }

  Gradients grads = Gradients::zeros_like(params);
  grads.dmu = dmu;
  Tensor g_mean(cache.mean.back().shape(), dmu);
  Tensor g_var = var_path ? Tensor(cache.mean.back().shape(), *dvar) : Tensor();
  const double sigma = cache.sigma;
  const bool sigma_active = noise_active(sigma);

  for (std::size_t li = num_layers; li-- > 0;) {
    const LayerSpec& spec = layers[li];
    const Shape& in_shape = cache.mean[li].shape();
    if (is_affine(spec)) {
      const LayerParams& p = params.layers[li];
      LayerParams& dp = grads.layers[li];
      dp.weight = affine_weight_grad(cache.mean[li], g_mean, spec, p);
      dp.bias = bias_grad(spec, g_mean);
      Tensor g_var_in;
      if (var_path) {
        if (li == noise_layer || cache.mode == VarianceMode::IdentityVariance) {
          // output variance is max(sigma^2, floor), independent of weights and inputs
          if (sigma_active) grads.dsigma += 2.0 * sigma * g_var.data().sum();
          g_var_in = Tensor(cache.var[li].empty() ? in_shape : cache.var[li].shape());
        } else {
          const Tensor& var_out = cache.var[li + 1];
          Tensor g = g_var;
          for (Index j = 0; j < g.size(); ++j) {
            if (!(var_out[j] > kVarFloor)) g[j] = 0.0;
          }
          const LayerParams squared{Tensor(p.weight.shape(), p.weight.data().array().square().matrix()),
                                    Tensor(p.bias.shape())};
          Tensor dw_var = affine_weight_grad(cache.var[li], g, spec, squared);
          dp.weight.data().array() += 2.0 * p.weight.data().array() * dw_var.data().array();
          g_var_in = affine_transpose(g, spec, squared, in_shape);
        }
      }
      g_mean = affine_transpose(g_mean, spec, p, in_shape);
      if (var_path) g_var = std::move(g_var_in);
      if (li == noise_layer) var_path = false;
    } else if (std::holds_alternative<ReLU>(spec)) {
      g_mean = masked(g_mean, cache.relu_mask[li]);
      if (var_path) g_var = masked(g_var, cache.var_mask[li]);
    } else if (std::holds_alternative<MeanPool>(spec)) {
      g_mean = scatter_selection(g_mean, cache.selections[li]);
      if (var_path) g_var = scatter_selection(g_var, cache.selections[li]);
    } else {
      g_mean = g_mean.reshaped(in_shape);
      if (var_path) g_var = g_var.reshaped(in_shape);
    }
  }
  grads.dx = std::move(g_mean);
  return grads;
}

std::pair<LossBreakdown, Gradients> backprop(const ParameterSet& params, const Tensor& x, Index k,
                                             const Eigen::VectorXd& y, VarianceMode mode, const LossPolicy& policy) {
  const StochasticPass pass = forward_stochastic(params, x, mode);
  LossBreakdown loss = stochastic_loss(pass.output, k, y, policy, params.sigma);
  const OutputGradient og = loss_grad_output(pass.output, k, y, noise_active(params.sigma));
  Gradients grads = backward(params, pass.cache, og.dmu, &og.dvar);
  grads.dsigma -= 2.0 * policy.alpha() * params.sigma;
  return {std::move(loss), std::move(grads)};
}

CrossEntropy softmax_cross_entropy(const Eigen::VectorXd& logits, Index label) {
  if (label < 0 || label >= logits.size()) throw std::invalid_argument("cross entropy: label out of range");
  const double top = logits.maxCoeff();
  const Eigen::VectorXd e = (logits.array() - top).exp().matrix();
  const double z = e.sum();
  Eigen::VectorXd probs = e / z;
  const double loss = std::log(z) + top - logits[label];
  probs[label] -= 1.0;
  return {loss, std::move(probs)};
}

std::pair<double, Gradients> cross_entropy_backprop(const ParameterSet& params, const Tensor& x, Index label) {
  const DeterministicPass pass = forward_deterministic(params, x);
  const CrossEntropy ce = softmax_cross_entropy(pass.logits, label);
  return {ce.loss, backward(params, pass.cache, ce.dlogits, nullptr)};
}

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kGradScaleFloor});
  return std::abs(analytic - numeric) / scale;
}

double gate_margin(const ForwardCache& cache) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t li = 0; li + 1 < cache.mean.size(); ++li) {
    const Tensor& mu = cache.mean[li];
    if (!cache.relu_mask[li].empty()) {
      for (Index j = 0; j < mu.size(); ++j) {
        margin = std::min(margin, std::abs(mu[j]));
        if (cache.stochastic && !cache.var[li].empty()) {
          margin = std::min(margin, std::abs(mu[j] + kReluCensorSigmas * std::sqrt(cache.var[li][j])));
        }
      }
    }
    const SelectionMap& sel = cache.selections[li];
    if (sel.source.empty()) continue;
    // Compare each selected element against every other candidate in its window.
    // Ties between ReLU-clamped zeros are stable: they stay zero while the
    // ReLU margin above holds, and the tie-break keeps the same winner.
    const Index height = sel.input_shape[1], width = sel.input_shape[2];
    const Index oh = sel.output_shape[1], ow = sel.output_shape[2];
    for (Index o = 0; o < static_cast<Index>(sel.source.size()); ++o) {
      const Index c = o / (oh * ow), y = (o / ow) % oh, x = o % ow;
      const double best = mu[sel.source[static_cast<std::size_t>(o)]];
      for (Index i = 0; i < sel.window; ++i) {
        for (Index j = 0; j < sel.window; ++j) {
          const Index idx = (c * height + y * sel.stride + i) * width + x * sel.stride + j;
          if (idx == sel.source[static_cast<std::size_t>(o)] || (best == 0.0 && mu[idx] == 0.0)) continue;
          margin = std::min(margin, best - mu[idx]);
        }
      }
    }
  }
  return margin;
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& g : groups) m = std::max(m, g.max_rel_error);
  return m;
}

double central_difference(double& slot, double h, const std::function<double()>& f) {
  const double saved = slot;
  slot = saved + h;
  const double up = f();
  slot = saved - h;
  const double down = f();
  slot = saved;
  return (up - down) / (2.0 * h);
}

GradCheckCase gradcheck_case(const ModelConfig& config, std::uint64_t seed, double sigma, VarianceMode mode,
                             double h) {
  ParameterSet p = init_params(config, seed);
  p.sigma = sigma;
  p.sigma_learnable = true;
  SeededRng rng(seed, 1);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    SeededRng pixels(rng.next_u64(), 99);
    Tensor x(config.input_shape());
    for (Index i = 0; i < x.size(); ++i) x[i] = pixels.uniform(0.0, 1.0);
    if (gate_margin(forward_stochastic(p, x, mode).cache) >= 10.0 * h) {
      return {std::move(p), std::move(x), static_cast<Index>(rng.below(static_cast<std::uint64_t>(config.num_classes())))};
    }
  }
  throw std::runtime_error("gradcheck_case: no input with gate margin >= 10 h in 1000 draws");
}

GradCheckReport finite_difference_check(const ParameterSet& params, const Tensor& x, Index k,
                                        const Eigen::VectorXd& y, VarianceMode mode, const LossPolicy& policy,
                                        const GradCheckOptions& options) {
  if (!(options.h > 0.0)) throw std::invalid_argument("finite_difference_check: h must be > 0");
  const double h = options.h;
  const auto [loss0, analytic] = backprop(params, x, k, y, mode, policy);
  (void)loss0;

  ParameterSet probe = params;
  Tensor xp = x;
  auto loss_at = [&]() {
    return stochastic_loss(forward_stochastic(probe, xp, mode).output, k, y, policy, probe.sigma).total;
  };
  auto central = [&](double& slot) { return central_difference(slot, h, loss_at); };

  GradCheckGroup gw{"W"}, gb{"B"}, gs{"sigma"}, gx{"x"};
  auto record = [](GradCheckGroup& g, double a, double f) {
    const double e = relative_error(a, f);
    g.max_rel_error = std::max(g.max_rel_error, e);
    g.mean_rel_error += e;
    ++g.count;
  };

  for (std::size_t li = 0; li < probe.layers.size(); ++li) {
    LayerParams& p = probe.layers[li];
    for (Index j = 0; j < p.weight.size(); ++j) record(gw, analytic.layers[li].weight[j], central(p.weight[j]));
    for (Index j = 0; j < p.bias.size(); ++j) record(gb, analytic.layers[li].bias[j], central(p.bias[j]));
  }

  if (probe.sigma >= h) {
    record(gs, analytic.dsigma, central(probe.sigma));
  } else {
    // one-sided at the sigma >= 0 boundary
    const double base = loss_at();
    probe.sigma += h;
    const double up = loss_at();
    probe.sigma -= h;
    record(gs, analytic.dsigma, (up - base) / h);
  }

  std::vector<Index> pixels;
  if (options.input_samples <= 0 || options.input_samples >= x.size()) {
    for (Index j = 0; j < x.size(); ++j) pixels.push_back(j);
  } else {
    SeededRng rng(options.seed, 0x7069786cULL);
    std::vector<Index> all(static_cast<std::size_t>(x.size()));
    for (Index j = 0; j < x.size(); ++j) all[static_cast<std::size_t>(j)] = j;
    for (Index j = 0; j < options.input_samples; ++j) {
      const auto pick = static_cast<std::size_t>(j) + rng.below(all.size() - static_cast<std::size_t>(j));
      std::swap(all[static_cast<std::size_t>(j)], all[pick]);
      pixels.push_back(all[static_cast<std::size_t>(j)]);
    }
  }
  for (Index j : pixels) record(gx, analytic.dx[j], central(xp[j]));

  GradCheckReport report;
  for (GradCheckGroup* g : {&gw, &gb, &gs, &gx}) {
    if (g->count > 0) g->mean_rel_error /= static_cast<double>(g->count);
    report.groups.push_back(*g);
  }
  return report;
}

}  // namespace snn
