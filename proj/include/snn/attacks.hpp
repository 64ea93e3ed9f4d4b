#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "snn/data.hpp"
#include "snn/network.hpp"

namespace snn {

struct AttackConfig {
  double eps = 0.0;
  double step_size = 0.0;
  Index iterations = 40;
  bool random_start = true;
  std::uint64_t seed = 0;

  void validate() const;
  /// 40 steps of eps/10 with random start.
  static AttackConfig pgd_default(double eps, std::uint64_t seed = 0);
};

/// Single signed-gradient step of softmax cross-entropy on the expectation model.
Tensor fgsm(const ParameterSet& params, const Tensor& x, Index label, double eps);

/// Iterated signed-gradient ascent, projected onto the eps-ball around x and onto [0, 1].
Tensor pgd(const ParameterSet& params, const Tensor& x, Index label, const AttackConfig& cfg);

struct VoteResult {
  Index label = 0;
  std::vector<Index> histogram;
};

/// Majority vote over m noisy forward passes (ties to the lowest class).
VoteResult randomized_predict(const ParameterSet& params, double sigma, const Tensor& x, Index m,
                              std::uint64_t seed);

/// Noise-aware FGSM: one signed step along the input gradient of the
/// stochastic loss evaluated at noise level sigma.
Tensor adaptive_attack(const ParameterSet& params, double sigma, const Tensor& x, const Eigen::VectorXd& y_onehot,
                       Index k, double eps, VarianceMode mode = VarianceMode::DiagonalExact);

/// Input gradient used by adaptive_attack.
Tensor stochastic_input_gradient(const ParameterSet& params, double sigma, const Tensor& x,
                                 const Eigen::VectorXd& y_onehot, Index k, VarianceMode mode);

struct AttackSpec {
  enum class Kind { Fgsm, Pgd, Adaptive };
  Kind kind = Kind::Pgd;
  Index iterations = 40;
  double step_fraction = 0.1;
  bool random_start = true;
  std::uint64_t seed = 0;
  /// Noise level assumed by the adaptive attack.
  double sigma = 0.0;
  VarianceMode mode = VarianceMode::DiagonalExact;

  std::string name() const;
};

struct InferenceSpec {
  enum class Kind { Expectation, Randomized };
  Kind kind = Kind::Expectation;
  double sigma = 0.0;
  Index votes = 100;
  std::uint64_t seed = 0;

  static InferenceSpec expectation() { return {}; }
  static InferenceSpec randomized(double sigma, Index votes, std::uint64_t seed);
  std::string name() const;
};

struct EvalPoint {
  double eps;
  double accuracy;
};

struct EvalCurve {
  std::vector<EvalPoint> points;
  std::string attack;
  std::string inference;
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Generates one adversarial example according to `spec`.
Tensor run_attack(const ParameterSet& params, const Tensor& x, Index label, double eps, const AttackSpec& spec,
                  Index example_index = 0);

/// Predicted label under the chosen inference mode.
Index infer(const ParameterSet& params, const Tensor& x, const InferenceSpec& inference, Index example_index = 0);

/// Accuracy under attack for every eps of a strictly increasing grid.
EvalCurve robustness_curve(const ParameterSet& params, const Dataset& dataset, const AttackSpec& attack,
                           const std::vector<double>& eps_grid, const InferenceSpec& inference);

/// CSV rows eps,accuracy,attack,inference,sigma,seed.
void write_curve_csv(std::ostream& os, const EvalCurve& curve, bool header = true);

}  // namespace snn
