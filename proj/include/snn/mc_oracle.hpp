#pragma once

#include <cstdint>

#include "snn/network.hpp"

namespace snn {

/// Sample statistics of the network output over repeated noisy passes.
struct EmpiricalMoments {
  Tensor mean;
  /// Unbiased sample variance.
  Tensor var;
  /// Fourth central moment, for standard errors of `var`.
  Tensor fourth_central;
  Index samples = 0;

  /// Standard error of mean[i].
  double mean_stderr(Index i) const;
  /// Standard error of var[i] (distribution-free estimate).
  double var_stderr(Index i) const;
};

/// Monte-Carlo oracle for forward_stochastic: runs forward_noisy n_samples times.
EmpiricalMoments mc_forward_moments(const ParameterSet& params, const Tensor& x, double sigma, Index n_samples,
                                    std::uint64_t seed);

}  // namespace snn
