#include "snn/train.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <stdexcept>

#include "snn/attacks.hpp"

namespace snn {

void TrainSchedule::validate() const {
  if (epochs < 1 || batch_size < 1 || eval_every < 1) throw std::invalid_argument("schedule: epochs, batch_size and eval_every must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("schedule: learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("schedule: momentum must lie in [0, 1)");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("schedule: grad_clip must be > 0");
}

SigmaPolicy SigmaPolicy::fixed(double sigma) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("sigma policy: sigma must be >= 0");
  return {Kind::Fixed, sigma, 0.0};
}

SigmaPolicy SigmaPolicy::learnable(double sigma0) {
  if (!(sigma0 >= 0.0)) throw std::invalid_argument("sigma policy: sigma0 must be >= 0");
  return {Kind::Learnable, sigma0, 0.0};
}

SigmaPolicy SigmaPolicy::bimodel(double sigma0, double alpha) {
  if (!(sigma0 >= 0.0)) throw std::invalid_argument("sigma policy: sigma0 must be >= 0");
  if (!(alpha > 0.0)) throw std::invalid_argument("sigma policy: Bimodel alpha must be > 0");
  return {Kind::Bimodel, sigma0, alpha};
}

LossPolicy SigmaPolicy::loss_policy() const {
  return kind == Kind::Bimodel ? LossPolicy::bimodel(alpha) : LossPolicy::plain();
}

void write_history_csv(std::ostream& os, const History& history) {
  os << "epoch,loss,clean_acc,sigma\n";
  char line[160];
  for (const auto& r : history.records) {
    std::snprintf(line, sizeof line, "%lld,%.17g,%.17g,%.17g\n", static_cast<long long>(r.epoch), r.loss,
                  r.clean_acc, r.sigma);
    os << line;
  }
}

MomentumState zero_momentum(const ParameterSet& params) {
  MomentumState state;
  for (const LayerParams& p : params.layers) {
    state.velocity.push_back(p.empty() ? LayerParams{} : LayerParams{Tensor(p.weight.shape()), Tensor(p.bias.shape())});
  }
  return state;
}

void sgd_update(ParameterSet& params, const Gradients& grads, double lr, double momentum, MomentumState& state) {
  if (grads.layers.size() != params.layers.size() || state.velocity.size() != params.layers.size()) {
    throw ShapeError("sgd_update: layer count mismatch");
  }
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    LayerParams& p = params.layers[i];
    if (p.empty()) continue;
    const LayerParams& g = grads.layers[i];
    LayerParams& v = state.velocity[i];
    if (g.weight.shape() != p.weight.shape() || g.bias.shape() != p.bias.shape() ||
        v.weight.shape() != p.weight.shape() || v.bias.shape() != p.bias.shape()) {
      throw ShapeError("sgd_update: gradient shape mismatch at layer " + std::to_string(i));
    }
    v.weight.data() = momentum * v.weight.data() + g.weight.data();
    v.bias.data() = momentum * v.bias.data() + g.bias.data();
    p.weight.data() -= lr * v.weight.data();
    p.bias.data() -= lr * v.bias.data();
  }
  if (params.sigma_learnable) {
    state.sigma_velocity = momentum * state.sigma_velocity + grads.dsigma;
    params.sigma = std::max(params.sigma - lr * state.sigma_velocity, 0.0);
  }
}

double evaluate(const ParameterSet& params, const Dataset& dataset) {
  if (dataset.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  Index correct = 0;
  for (Index i = 0; i < dataset.size(); ++i) {
    if (argmax_label(forward_expectation(params, dataset.image(i))) == dataset.labels[static_cast<std::size_t>(i)]) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

namespace {

/// Per-example objective: returns (loss, gradients) for example `index` at epoch `epoch`.
using ExampleStep = std::function<std::pair<double, Gradients>(const ParameterSet&, const Tensor&, Index label,
                                                               Index epoch, Index index)>;

TrainResult run_training(ParameterSet params, const Dataset& dataset, const TrainSchedule& schedule,
                         const ExampleStep& step, const Dataset* eval_set) {
  schedule.validate();
  if (dataset.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (dataset.image_shape() != params.config.input_shape()) {
    throw ShapeError("train: dataset images " + shape_string(dataset.image_shape()) + " do not match model input " +
                     shape_string(params.config.input_shape()));
  }
  const Dataset& eval = eval_set != nullptr ? *eval_set : dataset;
  MomentumState state = zero_momentum(params);
  History history;
  const SeededRng shuffle_root(schedule.seed, 0x73687566ULL);

  for (Index epoch = 1; epoch <= schedule.epochs; ++epoch) {
    double loss_sum = 0.0;
    SeededRng epoch_rng = shuffle_root.split(static_cast<std::uint64_t>(epoch));
    for (const auto& batch : batches(dataset.size(), schedule.batch_size, epoch_rng.next_u64())) {
      Gradients grads = Gradients::zeros_like(params);
      for (Index idx : batch) {
        auto [loss, g] = step(params, dataset.image(idx), dataset.labels[static_cast<std::size_t>(idx)], epoch, idx);
        loss_sum += loss;
        grads += g;
      }
      grads *= 1.0 / static_cast<double>(batch.size());
      if (!params.sigma_learnable) grads.dsigma = 0.0;
      if (const double norm = grads.parameter_norm(); norm > schedule.grad_clip) grads *= schedule.grad_clip / norm;
      sgd_update(params, grads, schedule.learning_rate, schedule.momentum, state);
    }
    const double mean_loss = loss_sum / static_cast<double>(dataset.size());
    if (!std::isfinite(mean_loss)) {
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": mean loss is " +
                            std::to_string(mean_loss) + " (sigma " + std::to_string(params.sigma) + ")");
    }
    const bool due = epoch % schedule.eval_every == 0 || epoch == schedule.epochs;
    history.records.push_back(
        {epoch, mean_loss, due ? evaluate(params, eval) : std::numeric_limits<double>::quiet_NaN(), params.sigma});
  }
  return {std::move(params), std::move(history)};
}

}  // namespace

TrainResult train(const ModelConfig& config, const Dataset& dataset, const TrainSchedule& schedule,
                  const SigmaPolicy& policy, const Dataset* eval_set) {
  ParameterSet params = init_params(config, schedule.seed);
  params.sigma = policy.sigma0;
  params.sigma_learnable = policy.learns_sigma();
  const LossPolicy loss_policy = policy.loss_policy();
  const Index classes = config.num_classes();
  ExampleStep step = [&](const ParameterSet& p, const Tensor& x, Index label, Index, Index) {
    auto [loss, grads] = backprop(p, x, label, one_hot(label, classes), schedule.variance_mode, loss_policy);
    return std::pair<double, Gradients>{loss.total, std::move(grads)};
  };
  return run_training(std::move(params), dataset, schedule, step, eval_set);
}

TrainResult train_cross_entropy(const ModelConfig& config, const Dataset& dataset, const TrainSchedule& schedule,
                                const Dataset* eval_set) {
  ExampleStep step = [](const ParameterSet& p, const Tensor& x, Index label, Index, Index) {
    return cross_entropy_backprop(p, x, label);
  };
  return run_training(init_params(config, schedule.seed), dataset, schedule, step, eval_set);
}

TrainResult train_adversarial_baseline(const ModelConfig& config, const Dataset& dataset,
                                       const TrainSchedule& schedule, double eps, const PgdTrainSettings& pgd_settings,
                                       const Dataset* eval_set) {
  if (!(eps >= 0.0)) throw std::invalid_argument("train_adversarial_baseline: eps must be >= 0");
  if (eps == 0.0) return train_cross_entropy(config, dataset, schedule, eval_set);
  const SeededRng attack_root(schedule.seed, 0x61747461ULL);
  ExampleStep step = [&](const ParameterSet& p, const Tensor& x, Index label, Index epoch, Index index) {
    AttackConfig cfg;
    cfg.eps = eps;
    cfg.step_size = eps * pgd_settings.step_fraction;
    cfg.iterations = pgd_settings.iterations;
    cfg.random_start = pgd_settings.random_start;
    cfg.seed = attack_root.split(static_cast<std::uint64_t>(epoch)).split(static_cast<std::uint64_t>(index)).next_u64();
    return cross_entropy_backprop(p, pgd(p, x, label, cfg), label);
  };
  return run_training(init_params(config, schedule.seed), dataset, schedule, step, eval_set);
}

}  // namespace snn
