#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "snn/moments.hpp"
#include "snn/network.hpp"

namespace snn {

/// Plain stochastic loss, or the Bimodel variant that also rewards noise via -alpha * sigma^2.
struct LossPolicy {
  std::optional<double> bimodel_alpha;

  static LossPolicy plain() { return {}; }
  static LossPolicy bimodel(double alpha);
  bool is_bimodel() const { return bimodel_alpha.has_value(); }
  double alpha() const { return bimodel_alpha.value_or(0.0); }
};

struct LossBreakdown {
  double mse = 0.0;
  /// (1/(n-1)) * sum_{i != k} P(Y_k > Y_i); subtracted from the loss.
  double win_term = 0.0;
  /// -alpha * sigma^2 for Bimodel, 0 otherwise.
  double sigma_reg = 0.0;
  double total = 0.0;
  /// P(Y_k > Y_i) per class; the true class carries 0.5.
  Eigen::VectorXd win_probabilities;
};

/// Bound on |erf argument| in the win term; beyond it erf is treated as saturated.
inline constexpr double kErfArgClamp = 8.0;

/// P(Y_k > Y_i) for independent Gaussians: Phi((mu_k - mu_i) / sqrt(var_k + var_i)).
double pairwise_win_probability(double mu_k, double var_k, double mu_i, double var_i);

Eigen::VectorXd one_hot(Index k, Index n);

/// MSE(y, mu) - (1/(n-1)) sum_{i != k} P(Y_k > Y_i) [- alpha sigma^2].
LossBreakdown stochastic_loss(const GaussianTensor& output, Index k, const Eigen::VectorXd& y,
                              const LossPolicy& policy = LossPolicy::plain(), double sigma = 0.0);

struct OutputGradient {
  Eigen::VectorXd dmu;
  Eigen::VectorXd dvar;
};

/// Gradient of the (policy-independent part of the) stochastic loss with respect to output moments.
/// With `win_gradient` false only the MSE part is differentiated.
OutputGradient loss_grad_output(const GaussianTensor& output, Index k, const Eigen::VectorXd& y,
                                bool win_gradient = true);

/// Without injected noise the win term is a step function of the means, so its
/// gradient is zero almost everywhere. At floor-level variances the smoothed
/// step is a spike of height ~1/sqrt(kVarFloor) that one near-tie example turns
/// into a destructive update; training and attacks use the a.e. derivative instead.
inline bool noise_active(double sigma) { return sigma * sigma > kVarFloor; }

struct Gradients {
  std::vector<LayerParams> layers;
  double dsigma = 0.0;
  Tensor dx;
  Eigen::VectorXd dmu;

  static Gradients zeros_like(const ParameterSet& params);
  Gradients& operator+=(const Gradients& other);
  Gradients& operator*=(double scale);
  /// L2 norm over weights, biases and dsigma.
  double parameter_norm() const;
};

/// Reverse pass through a cached forward pass. dvar must be supplied for a
/// stochastic cache and is ignored for a deterministic one. Gate masks are
/// treated as constants.
Gradients backward(const ParameterSet& params, const ForwardCache& cache, const Eigen::VectorXd& dmu,
                   const Eigen::VectorXd* dvar);

/// Stochastic loss and all its gradients for one example.
std::pair<LossBreakdown, Gradients> backprop(const ParameterSet& params, const Tensor& x, Index k,
                                             const Eigen::VectorXd& y, VarianceMode mode,
                                             const LossPolicy& policy = LossPolicy::plain());

struct CrossEntropy {
  double loss;
  Eigen::VectorXd dlogits;
};

/// Softmax cross-entropy of logits against a class label.
CrossEntropy softmax_cross_entropy(const Eigen::VectorXd& logits, Index label);

/// Cross-entropy of the expectation model and its gradients.
std::pair<double, Gradients> cross_entropy_backprop(const ParameterSet& params, const Tensor& x, Index label);

/// |analytic - numeric| / max(|analytic|, |numeric|, kGradScaleFloor).
/// The floor keeps near-zero entries, where central differences are dominated
/// by rounding, from inflating the ratio.
inline constexpr double kGradScaleFloor = 1e-6;
double relative_error(double analytic, double numeric);

/// Smallest distance of any gate quantity of a stochastic pass to its switching
/// point (ReLU mean vs 0, mean vs -3 sd, pooling top-two gap). Finite-difference
/// probes are only meaningful when this exceeds the probe step.
double gate_margin(const ForwardCache& cache);

/// (f() at slot + h - f() at slot - h) / 2h, perturbing `slot` in place; the
/// original value is restored before returning.
double central_difference(double& slot, double h, const std::function<double()>& f);

struct GradCheckGroup {
  std::string name;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  Index count = 0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;  // W, B, sigma, x
  double max_rel_error() const;
};

struct GradCheckOptions {
  double h = 1e-5;
  /// Probe every input pixel when 0, else this many pixels chosen with `seed`.
  Index input_samples = 0;
  std::uint64_t seed = 0;
};

struct GradCheckCase {
  ParameterSet params;
  Tensor x;
  Index k = 0;
};

/// He-initialised parameters at `sigma` (marked learnable so dsigma is live)
/// and a uniform [0, 1] input, redrawn until gate_margin >= 10 h.
/// Throws std::runtime_error after 1000 draws.
GradCheckCase gradcheck_case(const ModelConfig& config, std::uint64_t seed, double sigma, VarianceMode mode,
                             double h);

/// Central differences of the stochastic loss against backprop, per group.
GradCheckReport finite_difference_check(const ParameterSet& params, const Tensor& x, Index k,
                                        const Eigen::VectorXd& y, VarianceMode mode, const LossPolicy& policy,
                                        const GradCheckOptions& options = {});

}  // namespace snn
