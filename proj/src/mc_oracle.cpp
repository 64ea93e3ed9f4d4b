#include "snn/mc_oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace snn {

double EmpiricalMoments::mean_stderr(Index i) const {
  return std::sqrt(var[i] / static_cast<double>(samples));
}

double EmpiricalMoments::var_stderr(Index i) const {
  const double n = static_cast<double>(samples);
  return std::sqrt(std::max(fourth_central[i] - var[i] * var[i] * (n - 3.0) / (n - 1.0), 0.0) / n);
}

EmpiricalMoments mc_forward_moments(const ParameterSet& params, const Tensor& x, double sigma, Index n_samples,
                                    std::uint64_t seed) {
  if (n_samples < 2) throw std::invalid_argument("mc_forward_moments: need at least 2 samples");
  SeededRng rng(seed);
  const Index classes = params.config.num_classes();
  Eigen::MatrixXd draws(classes, n_samples);
  for (Index s = 0; s < n_samples; ++s) draws.col(s) = forward_noisy(params, x, sigma, rng);

  // Shifting by the first draw keeps the statistics exact when all draws coincide.
  const Eigen::VectorXd shift = draws.col(0);
  const Eigen::VectorXd mean = shift + (draws.colwise() - shift).rowwise().mean();
  const Eigen::MatrixXd centered = draws.colwise() - mean;
  const double n = static_cast<double>(n_samples);
  EmpiricalMoments m;
  m.samples = n_samples;
  m.mean = Tensor({classes}, mean);
  m.var = Tensor({classes}, centered.array().square().rowwise().sum().matrix() / (n - 1.0));
  m.fourth_central = Tensor({classes}, centered.array().pow(4).rowwise().sum().matrix() / n);
  return m;
}

}  // namespace snn
