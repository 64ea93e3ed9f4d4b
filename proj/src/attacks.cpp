#include "snn/attacks.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "snn/loss.hpp"

namespace snn {

void AttackConfig::validate() const {
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw std::invalid_argument("attack: eps must be >= 0");
  if (iterations < 1) throw std::invalid_argument("attack: iterations must be >= 1");
  if (eps > 0.0 && !(step_size > 0.0)) throw std::invalid_argument("attack: step_size must be > 0");
}

AttackConfig AttackConfig::pgd_default(double eps, std::uint64_t seed) {
  return AttackConfig{eps, eps / 10.0, 40, true, seed};
}

namespace {

Tensor signed_step(const Tensor& x, const Tensor& grad, double step) {
  Tensor out = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
    out[i] = x[i] + step * s;
  }
  return out;
}

void clip_unit(Tensor& x) { x.data() = x.data().cwiseMax(0.0).cwiseMin(1.0); }

Tensor ce_input_gradient(const ParameterSet& params, const Tensor& x, Index label) {
  return cross_entropy_backprop(params, x, label).second.dx;
}

}  // namespace

Tensor fgsm(const ParameterSet& params, const Tensor& x, Index label, double eps) {
  if (!(eps >= 0.0)) throw std::invalid_argument("fgsm: eps must be >= 0");
  if (x.shape() != params.config.input_shape()) throw ShapeError("fgsm: input shape mismatch");
  if (eps == 0.0) return x;
  Tensor adv = signed_step(x, ce_input_gradient(params, x, label), eps);
  clip_unit(adv);
  return adv;
}

Tensor pgd(const ParameterSet& params, const Tensor& x, Index label, const AttackConfig& cfg) {
  cfg.validate();
  if (x.shape() != params.config.input_shape()) throw ShapeError("pgd: input shape mismatch");
  if (cfg.eps == 0.0) return x;
  const Eigen::VectorXd lo = x.data().array() - cfg.eps;
  const Eigen::VectorXd hi = x.data().array() + cfg.eps;
  Tensor adv = x;
  if (cfg.random_start) {
    SeededRng rng(cfg.seed, 0x70676473ULL);
    for (Index i = 0; i < adv.size(); ++i) adv[i] += rng.uniform(-cfg.eps, cfg.eps);
    clip_unit(adv);
  }
  for (Index it = 0; it < cfg.iterations; ++it) {
    adv = signed_step(adv, ce_input_gradient(params, adv, label), cfg.step_size);
    adv.data() = adv.data().cwiseMax(lo).cwiseMin(hi);
    clip_unit(adv);
  }
  return adv;
}

VoteResult randomized_predict(const ParameterSet& params, double sigma, const Tensor& x, Index m, std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("randomized_predict: m must be >= 1");
  if (!(sigma >= 0.0)) throw std::invalid_argument("randomized_predict: sigma must be >= 0");
  SeededRng rng(seed, 0x766f7465ULL);
  VoteResult out{0, std::vector<Index>(static_cast<std::size_t>(params.config.num_classes()), 0)};
  for (Index s = 0; s < m; ++s) ++out.histogram[static_cast<std::size_t>(argmax_label(forward_noisy(params, x, sigma, rng)))];
  for (std::size_t c = 1; c < out.histogram.size(); ++c) {
    if (out.histogram[c] > out.histogram[static_cast<std::size_t>(out.label)]) out.label = static_cast<Index>(c);
  }
  return out;
}

Tensor stochastic_input_gradient(const ParameterSet& params, double sigma, const Tensor& x,
                                 const Eigen::VectorXd& y_onehot, Index k, VarianceMode mode) {
  const StochasticPass pass = forward_stochastic(params, x, mode, sigma);
  const OutputGradient og = loss_grad_output(pass.output, k, y_onehot, noise_active(sigma));
  return backward(params, pass.cache, og.dmu, &og.dvar).dx;
}

Tensor adaptive_attack(const ParameterSet& params, double sigma, const Tensor& x, const Eigen::VectorXd& y_onehot,
                       Index k, double eps, VarianceMode mode) {
  if (!(eps >= 0.0)) throw std::invalid_argument("adaptive_attack: eps must be >= 0");
  if (!(sigma >= 0.0)) throw std::invalid_argument("adaptive_attack: sigma must be >= 0");
  if (x.shape() != params.config.input_shape()) throw ShapeError("adaptive_attack: input shape mismatch");
  if (eps == 0.0) return x;
  Tensor adv = signed_step(x, stochastic_input_gradient(params, sigma, x, y_onehot, k, mode), eps);
  clip_unit(adv);
  return adv;
}

std::string AttackSpec::name() const {
  switch (kind) {
    case Kind::Fgsm: return "fgsm";
    case Kind::Pgd: return "pgd";
    case Kind::Adaptive: return "adaptive";
  }
  return "?";
}

InferenceSpec InferenceSpec::randomized(double sigma, Index votes, std::uint64_t seed) {
  if (!(sigma >= 0.0) || votes < 1) throw std::invalid_argument("randomized inference: need sigma >= 0 and votes >= 1");
  return {Kind::Randomized, sigma, votes, seed};
}

std::string InferenceSpec::name() const { return kind == Kind::Expectation ? "expectation" : "randomized"; }

Tensor run_attack(const ParameterSet& params, const Tensor& x, Index label, double eps, const AttackSpec& spec,
                  Index example_index) {
  switch (spec.kind) {
    case AttackSpec::Kind::Fgsm: return fgsm(params, x, label, eps);
    case AttackSpec::Kind::Pgd: {
      AttackConfig cfg{eps, eps * spec.step_fraction, spec.iterations, spec.random_start,
                       SeededRng(spec.seed, 0x61747463ULL).split(static_cast<std::uint64_t>(example_index)).next_u64()};
      return pgd(params, x, label, cfg);
    }
    case AttackSpec::Kind::Adaptive:
      return adaptive_attack(params, spec.sigma, x, one_hot(label, params.config.num_classes()), label, eps, spec.mode);
  }
  throw std::logic_error("unknown attack kind");
}

Index infer(const ParameterSet& params, const Tensor& x, const InferenceSpec& inference, Index example_index) {
  if (inference.kind == InferenceSpec::Kind::Expectation) return argmax_label(forward_expectation(params, x));
  const std::uint64_t seed =
      SeededRng(inference.seed, 0x696e6665ULL).split(static_cast<std::uint64_t>(example_index)).next_u64();
  return randomized_predict(params, inference.sigma, x, inference.votes, seed).label;
}

EvalCurve robustness_curve(const ParameterSet& params, const Dataset& dataset, const AttackSpec& attack,
                           const std::vector<double>& eps_grid, const InferenceSpec& inference) {
  if (dataset.size() == 0) throw std::invalid_argument("robustness_curve: empty dataset");
  if (eps_grid.empty()) throw std::invalid_argument("robustness_curve: empty eps grid");
  for (std::size_t i = 0; i < eps_grid.size(); ++i) {
    if (!(eps_grid[i] >= 0.0) || (i > 0 && !(eps_grid[i] > eps_grid[i - 1]))) {
      throw std::invalid_argument("robustness_curve: eps grid must be non-negative and strictly increasing");
    }
  }
  EvalCurve curve;
  curve.attack = attack.name();
  curve.inference = inference.name();
  curve.sigma = inference.kind == InferenceSpec::Kind::Randomized ? inference.sigma : attack.sigma;
  curve.seed = attack.seed;
  for (double eps : eps_grid) {
    Index correct = 0;
    for (Index i = 0; i < dataset.size(); ++i) {
      const Index label = dataset.labels[static_cast<std::size_t>(i)];
      const Tensor x = dataset.image(i);
      const Tensor adv = eps == 0.0 ? x : run_attack(params, x, label, eps, attack, i);
      if (infer(params, adv, inference, i) == label) ++correct;
    }
    curve.points.push_back({eps, static_cast<double>(correct) / static_cast<double>(dataset.size())});
  }
  return curve;
}

void write_curve_csv(std::ostream& os, const EvalCurve& curve, bool header) {
  if (header) os << "eps,accuracy,attack,inference,sigma,seed\n";
  char line[256];
  for (const auto& p : curve.points) {
    std::snprintf(line, sizeof line, "%.17g,%.17g,%s,%s,%.17g,%llu\n", p.eps, p.accuracy, curve.attack.c_str(),
                  curve.inference.c_str(), curve.sigma, static_cast<unsigned long long>(curve.seed));
    os << line;
  }
}

}  // namespace snn
