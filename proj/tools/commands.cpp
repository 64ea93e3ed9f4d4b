#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>

#include "report.hpp"
#include "snn/mc_oracle.hpp"

namespace snn::cli {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Short form for file names: 0.3 -> "0.3".
std::string tag(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

class Run {
 public:
  Run(const ExperimentConfig& cfg, std::ostream& log) : cfg_(cfg), log_(log), dir_(cfg.out) {
    fs::create_directories(dir_);
    write_file(dir_ / "config.json", to_json(cfg).dump(2) + "\n");
  }

  const ExperimentConfig& cfg() const { return cfg_; }
  std::ostream& log() { return log_; }
  fs::path path(const std::string& name) const { return dir_ / name; }

  /// CSV body prefixed with the provenance row; returns the full text.
  std::string csv(const std::string& name, const std::string& body) {
    const std::string text = provenance_line(cfg_) + body;
    write_file(path(name), text);
    return text;
  }

  void chart(const std::string& name, const std::string& csv_text, const ChartSpec& spec) {
    write_file(path(name), svg_line_chart(csv_text, spec));
  }

 private:
  const ExperimentConfig& cfg_;
  std::ostream& log_;
  fs::path dir_;
};

void require_shape(const ModelConfig& model, const SplitDataset& data) {
  if (data.train.size() > 0 && data.train.image_shape() != model.input_shape()) {
    throw ConfigError("model: input " + shape_string(model.input_shape()) + " does not match data images " +
                      shape_string(data.train.image_shape()));
  }
}

ParameterSet checkpoint_params(const ExperimentConfig& cfg, const char* command) {
  if (cfg.checkpoint.empty()) throw ConfigError(std::string("checkpoint: required by ") + command);
  return load_checkpoint(cfg.checkpoint);
}

std::string history_body(const History& h) {
  std::ostringstream os;
  write_history_csv(os, h);
  return os.str();
}

std::string curve_body(const EvalCurve& c) {
  std::ostringstream os;
  write_curve_csv(os, c);
  return os.str();
}

const ChartSpec kHistoryChart{"Clean accuracy per epoch", "epoch", "clean_acc", "", "epoch", "clean accuracy"};
const ChartSpec kCurveChart{"Accuracy under attack", "eps", "accuracy", "", "eps", "accuracy"};

/// Attack and inference for a model trained at `sigma`: adaptive attacks and
/// randomized inference follow the model's own noise level.
AttackSpec attack_at(const ExperimentConfig& cfg, double sigma) {
  AttackSpec a = cfg.attack_spec();
  a.sigma = sigma;
  return a;
}

InferenceSpec inference_at(const ExperimentConfig& cfg, double sigma) {
  if (cfg.inference.kind == "randomized") return InferenceSpec::randomized(sigma, cfg.inference.votes, cfg.seed);
  return InferenceSpec::expectation();
}

int cmd_train(Run& run) {
  const ExperimentConfig& cfg = run.cfg();
  const ModelConfig model = cfg.model_config();
  const SplitDataset data = load_data(cfg);
  require_shape(model, data);
  const TrainResult r = train(model, data.train, cfg.train_schedule(), cfg.sigma_policy(), &data.test);
  save_checkpoint(r.params, run.path("model.snnc"));
  run.chart("history.svg", run.csv("history.csv", history_body(r.history)), kHistoryChart);
  const EpochRecord& last = r.history.records.back();
  run.log() << "train: " << r.history.records.size() << " epochs, loss " << last.loss << ", clean accuracy "
            << last.clean_acc << ", sigma " << last.sigma << "\n";
  return 0;
}

int cmd_eval(Run& run) {
  const ExperimentConfig& cfg = run.cfg();
  const ParameterSet params = checkpoint_params(cfg, "eval");
  const SplitDataset data = load_data(cfg);
  require_shape(params.config, data);
  // Same code path as the eps = 0 row of an attack curve.
  const EvalCurve c = robustness_curve(params, data.test, cfg.attack_spec(), {0.0}, cfg.inference_spec());
  const double acc = c.points.front().accuracy;
  run.csv("eval.csv", "split,count,accuracy,inference,sigma\ntest," + std::to_string(data.test.size()) + "," +
                          num(acc) + "," + c.inference + "," + num(c.sigma) + "\n");
  run.log() << "eval: accuracy " << acc << " on " << data.test.size() << " test examples (" << c.inference << ")\n";
  return 0;
}

int cmd_attack(Run& run) {
  const ExperimentConfig& cfg = run.cfg();
  const ParameterSet params = checkpoint_params(cfg, "attack");
  const SplitDataset data = load_data(cfg);
  require_shape(params.config, data);
  const EvalCurve c = robustness_curve(params, data.test, cfg.attack_spec(), cfg.eps_grid, cfg.inference_spec());
  run.chart("curve.svg", run.csv("curve.csv", curve_body(c)), kCurveChart);
  run.log() << "attack (" << c.attack << ", " << c.inference << "):";
  for (const EvalPoint& p : c.points) run.log() << " " << p.eps << ":" << p.accuracy;
  run.log() << "\n";
  return 0;
}

int cmd_sweep_sigma(Run& run) {
  const ExperimentConfig& cfg = run.cfg();
  const ModelConfig model = cfg.model_config();
  const SplitDataset data = load_data(cfg);
  require_shape(model, data);
  std::string sweep = "sigma,eps,accuracy,clean_acc,attack,inference\n";
  for (double sigma : cfg.sweep_sigmas) {
    const TrainResult r = train(model, data.train, cfg.train_schedule(), SigmaPolicy::fixed(sigma), &data.test);
    save_checkpoint(r.params, run.path("model_sigma_" + tag(sigma) + ".snnc"));
    run.csv("history_sigma_" + tag(sigma) + ".csv", history_body(r.history));
    const EvalCurve c =
        robustness_curve(r.params, data.test, attack_at(cfg, sigma), cfg.eps_grid, inference_at(cfg, sigma));
    run.chart("curve_sigma_" + tag(sigma) + ".svg", run.csv("curve_sigma_" + tag(sigma) + ".csv", curve_body(c)),
              kCurveChart);
    const double clean = c.points.front().eps == 0.0 ? c.points.front().accuracy : evaluate(r.params, data.test);
    run.log() << "sigma " << sigma << ":";
    for (const EvalPoint& p : c.points) {
      sweep += num(sigma) + "," + num(p.eps) + "," + num(p.accuracy) + "," + num(clean) + "," + c.attack + "," +
               c.inference + "\n";
      run.log() << " " << p.eps << ":" << p.accuracy;
    }
    run.log() << "\n";
  }
  run.chart("sweep.svg", run.csv("sweep.csv", sweep),
            {"Robust accuracy per training noise level", "eps", "accuracy", "sigma", "eps", "accuracy"});
  return 0;
}

int cmd_at_baseline(Run& run) {
  const ExperimentConfig& cfg = run.cfg();
  const ModelConfig model = cfg.model_config();
  const SplitDataset data = load_data(cfg);
  require_shape(model, data);
  const PgdTrainSettings pgd{cfg.attack.iterations, cfg.attack.step_fraction, cfg.attack.random_start};
  std::string table = "train_eps,eps,accuracy,clean_acc\n";
  for (double train_eps : cfg.at_eps) {
    const TrainResult r =
        train_adversarial_baseline(model, data.train, cfg.train_schedule(), train_eps, pgd, &data.test);
    save_checkpoint(r.params, run.path("model_at_" + tag(train_eps) + ".snnc"));
    run.csv("history_at_" + tag(train_eps) + ".csv", history_body(r.history));
    const EvalCurve c = robustness_curve(r.params, data.test, cfg.attack_spec(), cfg.eps_grid, cfg.inference_spec());
    run.csv("curve_at_" + tag(train_eps) + ".csv", curve_body(c));
    const double clean = evaluate(r.params, data.test);
    for (const EvalPoint& p : c.points) {
      table += num(train_eps) + "," + num(p.eps) + "," + num(p.accuracy) + "," + num(clean) + "\n";
    }
    run.log() << "adversarial training eps " << train_eps << ": clean accuracy " << clean << "\n";
  }
  run.chart("at_baseline.svg", run.csv("at_baseline.csv", table),
            {"Adversarial-training baseline", "eps", "accuracy", "train_eps", "eps", "accuracy"});
  return 0;
}

int cmd_learn_sigma(Run& run) {
  const ExperimentConfig& cfg = run.cfg();
  const ModelConfig model = cfg.model_config();
  const SplitDataset data = load_data(cfg);
  require_shape(model, data);
  std::string table = "policy,epoch,loss,clean_acc,sigma\n";
  const std::pair<const char*, SigmaPolicy> runs[] = {{"plain", SigmaPolicy::learnable(cfg.sigma)},
                                                       {"bimodel", SigmaPolicy::bimodel(cfg.sigma, cfg.alpha)}};
  for (const auto& [name, policy] : runs) {
    const TrainResult r = train(model, data.train, cfg.train_schedule(), policy, &data.test);
    save_checkpoint(r.params, run.path(std::string("model_") + name + ".snnc"));
    run.csv(std::string("history_") + name + ".csv", history_body(r.history));
    for (const EpochRecord& e : r.history.records) {
      table += std::string(name) + "," + std::to_string(e.epoch) + "," + num(e.loss) + "," + num(e.clean_acc) + "," +
               num(e.sigma) + "\n";
    }
    run.log() << name << ": sigma " << cfg.sigma << " -> " << r.params.sigma << "\n";
  }
  run.chart("learn_sigma.svg", run.csv("learn_sigma.csv", table),
            {"Learned noise level", "epoch", "sigma", "policy", "epoch", "sigma"});
  return 0;
}

int cmd_gradcheck(Run& run) {
  const ExperimentConfig& cfg = run.cfg();
  const ModelConfig model = cfg.model_config();
  const GradcheckSettings& g = cfg.gradcheck;
  const SeededRng root(cfg.seed, 0x67726164ULL);
  std::string table = "seed,mode,policy,sigma,group,count,max_rel_error,mean_rel_error\n";
  double worst = 0.0;
  for (Index s = 0; s < g.seeds; ++s) {
    const std::uint64_t case_seed = root.split(static_cast<std::uint64_t>(s)).next_u64();
    const double sigma = g.sigmas[static_cast<std::size_t>(s) % g.sigmas.size()];
    for (VarianceMode mode : {VarianceMode::DiagonalExact, VarianceMode::IdentityVariance}) {
      for (const auto& [name, policy] :
           {std::pair{"plain", LossPolicy::plain()}, std::pair{"bimodel", LossPolicy::bimodel(cfg.alpha)}}) {
        const GradCheckCase c = gradcheck_case(model, case_seed, sigma, mode, g.h);
        const GradCheckReport r = finite_difference_check(c.params, c.x, c.k, one_hot(c.k, model.num_classes()),
                                                          mode, policy, {g.h, g.input_samples, case_seed});
        for (const GradCheckGroup& grp : r.groups) {
          table += std::to_string(s) + "," + variance_mode_name(mode) + "," + name + "," + num(sigma) + "," +
                   grp.name + "," + std::to_string(grp.count) + "," + num(grp.max_rel_error) + "," +
                   num(grp.mean_rel_error) + "\n";
        }
        worst = std::max(worst, r.max_rel_error());
      }
    }
  }
  run.csv("gradcheck.csv", table);
  const bool ok = worst <= g.tolerance;
  run.log() << "gradcheck: max relative error " << worst << (ok ? " <= " : " > ") << g.tolerance << "\n";
  return ok ? 0 : 1;
}

int cmd_mc_validate(Run& run) {
  const ExperimentConfig& cfg = run.cfg();
  const ModelConfig model = cfg.model_config();
  const McSettings& m = cfg.mc;
  std::string affine = "sigma,unit,analytic_mean,mc_mean,mean_z,analytic_var,mc_var,var_z,pass\n";
  std::string relu =
      "sigma,unit,pre_mean,regime,analytic_mean,mc_mean,mean_z,analytic_var,mc_var,var_z,exact_mean,exact_var\n";
  Index violations = 0;
  for (std::size_t i = 0; i < m.sigmas.size(); ++i) {
    const double sigma = m.sigmas[i];
    const std::uint64_t seed = SeededRng(cfg.seed, 0x6d63ULL).split(i).next_u64();
    for (const MomentRow& r :
         affine_moment_check(model.input_shape(), m.hidden, model.num_classes(), sigma, m.samples, seed)) {
      const bool pass = r.mean_z <= m.max_se && r.var_z <= m.max_se;
      if (!pass) ++violations;
      affine += num(sigma) + "," + std::to_string(r.unit) + "," + num(r.analytic_mean) + "," + num(r.mc_mean) + "," +
                num(r.mean_z) + "," + num(r.analytic_var) + "," + num(r.mc_var) + "," + num(r.var_z) + "," +
                (pass ? "1" : "0") + "\n";
    }
    for (const MomentRow& r : relu_moment_check(model.input_shape(), m.hidden, sigma, m.samples, seed)) {
      const char* regime = std::abs(r.pre_mean) > 3.0 * sigma ? "outside" : "band";
      relu += num(sigma) + "," + std::to_string(r.unit) + "," + num(r.pre_mean) + "," + regime + "," +
              num(r.analytic_mean) + "," + num(r.mc_mean) + "," + num(r.mean_z) + "," + num(r.analytic_var) + "," +
              num(r.mc_var) + "," + num(r.var_z) + "," + num(r.exact_mean) + "," + num(r.exact_var) + "\n";
    }
  }
  run.csv("mc.csv", affine);
  run.csv("mc_relu.csv", relu);
  run.log() << "mc-validate: " << violations << " affine-regime units beyond " << m.max_se << " standard errors\n";
  return violations == 0 ? 0 : 1;
}

double z_score(double analytic, double mc, double se) { return std::abs(analytic - mc) / std::max(se, kVarFloor); }

std::vector<MomentRow> compare(const ParameterSet& p, double sigma, Index samples, std::uint64_t seed,
                               Tensor* pre_mean) {
  SeededRng rng(seed, 0x696e7075ULL);
  Tensor x(p.config.input_shape());
  for (Index i = 0; i < x.size(); ++i) x[i] = rng.uniform();
  const StochasticPass pass = forward_stochastic(p, x, VarianceMode::DiagonalExact, sigma);
  if (pre_mean != nullptr) *pre_mean = pass.cache.mean[2];
  const EmpiricalMoments mc = mc_forward_moments(p, x, sigma, samples, seed);
  std::vector<MomentRow> rows;
  for (Index u = 0; u < pass.output.size(); ++u) {
    MomentRow r;
    r.sigma = sigma;
    r.unit = u;
    r.analytic_mean = pass.output.mean()[u];
    r.analytic_var = pass.output.var()[u];
    r.mc_mean = mc.mean[u];
    r.mc_var = mc.var[u];
    r.mean_z = z_score(r.analytic_mean, r.mc_mean, mc.mean_stderr(u));
    r.var_z = z_score(r.analytic_var, r.mc_var, mc.var_stderr(u));
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"train",       "eval",        "attack",    "sweep-sigma",
                                              "at-baseline", "learn-sigma", "gradcheck", "mc-validate"};
  return names;
}

int run_command(const std::string& command, const ExperimentConfig& cfg, std::ostream& log) {
  static const std::map<std::string, std::function<int(Run&)>> table{
      {"train", cmd_train},         {"eval", cmd_eval},           {"attack", cmd_attack},
      {"sweep-sigma", cmd_sweep_sigma}, {"at-baseline", cmd_at_baseline}, {"learn-sigma", cmd_learn_sigma},
      {"gradcheck", cmd_gradcheck}, {"mc-validate", cmd_mc_validate}};
  const auto it = table.find(command);
  if (it == table.end()) throw ConfigError("command: unknown '" + command + "'");
  validate(cfg);
  Run run(cfg, log);
  return it->second(run);
}

SplitDataset load_data(const ExperimentConfig& cfg) {
  SplitDataset d;
  if (cfg.data.format == "mnist") {
    d = load_mnist(cfg.data.path);
  } else if (cfg.data.format == "cifar10") {
    d = load_cifar10(cfg.data.path);
  } else {
    d.train = make_blob_dataset(cfg.data.blob_count, cfg.seed);
    d.test = make_blob_dataset(cfg.data.blob_count, cfg.seed + 1);
  }
  if (cfg.data.train_limit > 0 && cfg.data.train_limit < d.train.size()) d.train = head(d.train, cfg.data.train_limit);
  if (cfg.data.test_limit > 0 && cfg.data.test_limit < d.test.size()) d.test = head(d.test, cfg.data.test_limit);
  return d;
}

std::vector<MomentRow> affine_moment_check(const Shape& input, Index hidden, Index classes, double sigma,
                                           Index samples, std::uint64_t seed) {
  const ModelConfig net(input, {Flatten{}, FullyConnected{hidden}, FullyConnected{classes}}, classes);
  return compare(init_params(net, seed), sigma, samples, seed, nullptr);
}

std::vector<MomentRow> relu_moment_check(const Shape& input, Index units, double sigma, Index samples,
                                         std::uint64_t seed) {
  const ModelConfig net(input, {Flatten{}, FullyConnected{units}, ReLU{}}, units);
  Tensor pre;
  std::vector<MomentRow> rows = compare(init_params(net, seed), sigma, samples, seed, &pre);
  for (MomentRow& r : rows) {
    r.pre_mean = pre[r.unit];
    const RectifiedMoments exact = exact_rectified_moments(r.pre_mean, sigma);
    r.exact_mean = exact.mean;
    r.exact_var = exact.var;
  }
  return rows;
}

}  // namespace snn::cli
