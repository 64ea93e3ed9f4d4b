#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "experiment.hpp"

namespace snn::cli {

/// train, eval, attack, sweep-sigma, at-baseline, learn-sigma, gradcheck, mc-validate.
const std::vector<std::string>& command_names();

/// Runs one command, writing artifacts under cfg.out and a short summary to
/// `log`. Returns 0, or 1 when a check command finds a violation. Config
/// problems throw ConfigError; everything else propagates as thrown.
int run_command(const std::string& command, const ExperimentConfig& cfg, std::ostream& log);

/// Train/test split per cfg.data, truncated to the configured limits.
SplitDataset load_data(const ExperimentConfig& cfg);

/// One output unit of an analytic-vs-Monte-Carlo comparison. z-scores are
/// |analytic - mc| / max(standard error, var_floor).
struct MomentRow {
  double sigma = 0.0;
  Index unit = 0;
  double analytic_mean = 0.0;
  double analytic_var = 0.0;
  double mc_mean = 0.0;
  double mc_var = 0.0;
  double mean_z = 0.0;
  double var_z = 0.0;
  /// ReLU probe only: pre-activation mean and the exact rectified moments.
  double pre_mean = 0.0;
  double exact_mean = 0.0;
  double exact_var = 0.0;
};

/// Flatten -> FC(hidden) -> FC(classes) at He init on a seeded uniform input, DiagonalExact.
std::vector<MomentRow> affine_moment_check(const Shape& input, Index hidden, Index classes, double sigma,
                                           Index samples, std::uint64_t seed);

/// Flatten -> FC(units) -> ReLU, so every output is one rectified unit whose
/// pre-activation is N(pre_mean, sigma^2).
std::vector<MomentRow> relu_moment_check(const Shape& input, Index units, double sigma, Index samples,
                                         std::uint64_t seed);

}  // namespace snn::cli
