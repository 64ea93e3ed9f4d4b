#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "snn/attacks.hpp"
#include "snn/train.hpp"

namespace snn::cli {

/// Schema violation in an experiment config; maps to exit status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataSettings {
  std::string format = "mnist";  // mnist | cifar10 | blobs
  std::string path = "data/mnist-subset";
  Index train_limit = 0;  // 0 keeps everything
  Index test_limit = 1000;
  Index blob_count = 200;
};

struct AttackSettings {
  std::string kind = "pgd";  // pgd | fgsm | adaptive
  Index iterations = 40;
  double step_fraction = 0.1;
  bool random_start = true;
};

struct InferenceSettings {
  std::string kind = "expectation";  // expectation | randomized
  Index votes = 100;
};

struct GradcheckSettings {
  Index seeds = 20;
  double h = 1e-5;
  double tolerance = 1e-4;
  Index input_samples = 0;
  std::vector<double> sigmas{0.2, 0.4, 0.6, 0.8, 1.0};
};

struct McSettings {
  Index samples = 100000;
  std::vector<double> sigmas{0.5, 1.0};
  double max_se = 4.0;
  Index hidden = 32;
};

/// Everything a command needs. Keys of the JSON file mirror these fields.
struct ExperimentConfig {
  nlohmann::json model = "mnist_lenet";
  DataSettings data;
  TrainSchedule schedule;
  std::string policy = "fixed";  // fixed | learnable | bimodel
  double sigma = 0.0;
  double alpha = 0.25;
  VarianceMode variance_mode = VarianceMode::DiagonalExact;
  AttackSettings attack;
  std::vector<double> eps_grid{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3};
  InferenceSettings inference;
  std::vector<double> sweep_sigmas{0.0, 0.3, 0.6};
  std::vector<double> at_eps{0.1, 0.3};
  GradcheckSettings gradcheck;
  McSettings mc;
  std::string checkpoint;
  std::string out = "out";
  std::uint64_t seed = 1;

  ModelConfig model_config() const;
  SigmaPolicy sigma_policy() const;
  /// The schedule with the master seed and variance mode filled in.
  TrainSchedule train_schedule() const;
  AttackSpec attack_spec() const;
  InferenceSpec inference_spec() const;
};

/// Overlays the keys present in `j` onto `base`. Unknown keys, wrong types and
/// out-of-range values throw ConfigError naming the offending key.
ExperimentConfig merge_config(ExperimentConfig base, const nlohmann::json& j);

/// Cross-field checks (model resolves, grids sorted, ...); throws ConfigError.
void validate(const ExperimentConfig& cfg);

nlohmann::json to_json(const ExperimentConfig& cfg);

/// FNV-1a 64 of the resolved config serialised without "out".
std::uint64_t config_hash(const ExperimentConfig& cfg);

/// Preset name or inline description {"input": [C,H,W], "classes": n, "layers": [...]}.
ModelConfig parse_model(const nlohmann::json& j);

/// "0,0.05,0.1" -> {0, 0.05, 0.1}; throws ConfigError on junk.
std::vector<double> parse_number_list(const std::string& text);

}  // namespace snn::cli
