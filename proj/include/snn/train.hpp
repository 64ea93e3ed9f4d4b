#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <vector>

#include "snn/data.hpp"
#include "snn/loss.hpp"
#include "snn/network.hpp"

namespace snn {

struct TrainSchedule {
  Index epochs = 5;
  Index batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  VarianceMode variance_mode = VarianceMode::DiagonalExact;
  Index eval_every = 1;
  /// Global gradient-norm clip per batch.
  double grad_clip = 100.0;

  void validate() const;
};

struct SigmaPolicy {
  enum class Kind { Fixed, Learnable, Bimodel };
  Kind kind = Kind::Fixed;
  double sigma0 = 0.0;
  double alpha = 0.0;

  static SigmaPolicy fixed(double sigma);
  static SigmaPolicy learnable(double sigma0);
  static SigmaPolicy bimodel(double sigma0, double alpha);

  bool learns_sigma() const { return kind != Kind::Fixed; }
  LossPolicy loss_policy() const;
};

struct EpochRecord {
  Index epoch = 0;
  double loss = 0.0;
  /// NaN on epochs skipped by eval_every.
  double clean_acc = 0.0;
  double sigma = 0.0;
};

struct History {
  std::vector<EpochRecord> records;
};

/// CSV with columns epoch,loss,clean_acc,sigma (values printed with %.17g).
void write_history_csv(std::ostream& os, const History& history);

struct MomentumState {
  std::vector<LayerParams> velocity;
  double sigma_velocity = 0.0;
};

MomentumState zero_momentum(const ParameterSet& params);

/// v <- momentum * v + g ; p <- p - lr * v. Sigma is updated only when
/// learnable and is projected back onto sigma >= 0.
void sgd_update(ParameterSet& params, const Gradients& grads, double lr, double momentum, MomentumState& state);

struct TrainResult {
  ParameterSet params;
  History history;
};

/// Minimises the stochastic loss with momentum SGD. Clean accuracy in the
/// history is measured on `eval_set` when given, else on the training set.
TrainResult train(const ModelConfig& config, const Dataset& dataset, const TrainSchedule& schedule,
                  const SigmaPolicy& policy, const Dataset* eval_set = nullptr);

struct PgdTrainSettings {
  Index iterations = 40;
  /// Step size as a fraction of eps.
  double step_fraction = 0.1;
  bool random_start = true;
};

/// Min-max training: each batch is replaced by PGD(eps) examples against the
/// current expectation model, then a softmax cross-entropy step is taken.
TrainResult train_adversarial_baseline(const ModelConfig& config, const Dataset& dataset,
                                       const TrainSchedule& schedule, double eps,
                                       const PgdTrainSettings& pgd = {}, const Dataset* eval_set = nullptr);

/// Plain softmax cross-entropy training of the deterministic network.
TrainResult train_cross_entropy(const ModelConfig& config, const Dataset& dataset, const TrainSchedule& schedule,
                                const Dataset* eval_set = nullptr);

/// Fraction of examples whose expectation-model argmax equals the label.
double evaluate(const ParameterSet& params, const Dataset& dataset);

}  // namespace snn
