#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>

namespace snn::cli {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& key, const std::string& what) { throw ConfigError(key + ": " + what); }

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(path.empty() ? "config" : path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return it.key() == a; });
    if (!known) fail(join(path, it.key()), "unknown key");
  }
}

void read(const json& j, const std::string& path, const char* key, double& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number()) fail(join(path, key), "expected a number");
  out = v.get<double>();
  if (!std::isfinite(out)) fail(join(path, key), "must be finite");
}

void read(const json& j, const std::string& path, const char* key, Index& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_integer()) fail(join(path, key), "expected an integer");
  out = v.get<Index>();
}

void read(const json& j, const std::string& path, const char* key, std::uint64_t& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    fail(join(path, key), "expected a non-negative integer");
  out = v.get<std::uint64_t>();
}

void read(const json& j, const std::string& path, const char* key, bool& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_boolean()) fail(join(path, key), "expected true or false");
  out = v.get<bool>();
}

void read(const json& j, const std::string& path, const char* key, std::string& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_string()) fail(join(path, key), "expected a string");
  out = v.get<std::string>();
}

void read(const json& j, const std::string& path, const char* key, std::vector<double>& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array()) fail(join(path, key), "expected an array of numbers");
  std::vector<double> values;
  for (const json& e : v) {
    if (!e.is_number()) fail(join(path, key), "expected an array of numbers");
    values.push_back(e.get<double>());
  }
  out = std::move(values);
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) fail(key, what);
}

void require_one_of(const std::string& value, const std::string& key, std::initializer_list<const char*> options) {
  std::string list;
  for (const char* o : options) {
    if (value == o) return;
    list += list.empty() ? o : std::string("|") + o;
  }
  fail(key, "'" + value + "' is not one of " + list);
}

void require_grid(const std::vector<double>& grid, const std::string& key, bool increasing) {
  require(!grid.empty(), key, "must not be empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    require(std::isfinite(grid[i]) && grid[i] >= 0.0, key, "entries must be finite and >= 0");
    if (increasing && i > 0) require(grid[i] > grid[i - 1], key, "must be strictly increasing");
  }
}

Index layer_index(const json& layer, const char* key, Index fallback, const std::string& path) {
  Index v = fallback;
  read(layer, path, key, v);
  return v;
}

}  // namespace

ModelConfig parse_model(const json& j) {
  if (j.is_string()) {
    try {
      return config_by_name(j.get<std::string>());
    } catch (const std::exception& e) {
      fail("model", e.what());
    }
  }
  check_keys(j, "model", {"input", "classes", "sigma", "layers"});
  require(j.contains("input") && j.contains("classes") && j.contains("layers"), "model",
          "inline models need input, classes and layers");
  const json& input = j.at("input");
  require(input.is_array() && input.size() == 3, "model.input", "expected [channels, height, width]");
  Shape shape;
  for (const json& d : input) {
    require(d.is_number_integer() && d.get<Index>() > 0, "model.input", "dimensions must be positive integers");
    shape.push_back(d.get<Index>());
  }
  Index classes = 0;
  read(j, "model", "classes", classes);
  double sigma = 0.0;
  read(j, "model", "sigma", sigma);
  require(j.at("layers").is_array(), "model.layers", "expected an array");

  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i < j.at("layers").size(); ++i) {
    const json& l = j.at("layers")[i];
    const std::string path = "model.layers[" + std::to_string(i) + "]";
    require(l.is_object() && l.contains("type") && l.at("type").is_string(), path, "expected an object with a type");
    const std::string type = l.at("type").get<std::string>();
    if (type == "conv") {
      check_keys(l, path, {"type", "out_channels", "kernel", "stride", "padding"});
      const Index k = layer_index(l, "kernel", 3, path);
      layers.push_back(Conv{layer_index(l, "out_channels", 1, path), k, k, layer_index(l, "stride", 1, path),
                            layer_index(l, "padding", 0, path)});
    } else if (type == "relu") {
      check_keys(l, path, {"type"});
      layers.push_back(ReLU{});
    } else if (type == "pool") {
      check_keys(l, path, {"type", "window", "stride"});
      layers.push_back(MeanPool{layer_index(l, "window", 2, path), layer_index(l, "stride", 2, path)});
    } else if (type == "flatten") {
      check_keys(l, path, {"type"});
      layers.push_back(Flatten{});
    } else if (type == "fc") {
      check_keys(l, path, {"type", "units"});
      layers.push_back(FullyConnected{layer_index(l, "units", 1, path)});
    } else {
      fail(path + ".type", "'" + type + "' is not one of conv|relu|pool|flatten|fc");
    }
  }
  try {
    return ModelConfig(shape, layers, classes, sigma);
  } catch (const std::exception& e) {
    fail("model", e.what());
  }
}

ModelConfig ExperimentConfig::model_config() const { return parse_model(model); }

SigmaPolicy ExperimentConfig::sigma_policy() const {
  if (policy == "learnable") return SigmaPolicy::learnable(sigma);
  if (policy == "bimodel") return SigmaPolicy::bimodel(sigma, alpha);
  return SigmaPolicy::fixed(sigma);
}

TrainSchedule ExperimentConfig::train_schedule() const {
  TrainSchedule s = schedule;
  s.seed = seed;
  s.variance_mode = variance_mode;
  return s;
}

AttackSpec ExperimentConfig::attack_spec() const {
  AttackSpec a;
  a.kind = attack.kind == "fgsm" ? AttackSpec::Kind::Fgsm
                                 : (attack.kind == "adaptive" ? AttackSpec::Kind::Adaptive : AttackSpec::Kind::Pgd);
  a.iterations = attack.iterations;
  a.step_fraction = attack.step_fraction;
  a.random_start = attack.random_start;
  a.seed = seed;
  a.sigma = sigma;
  a.mode = variance_mode;
  return a;
}

InferenceSpec ExperimentConfig::inference_spec() const {
  if (inference.kind == "randomized") return InferenceSpec::randomized(sigma, inference.votes, seed);
  return InferenceSpec::expectation();
}

ExperimentConfig merge_config(ExperimentConfig cfg, const json& j) {
  check_keys(j, "", {"model", "data", "schedule", "policy", "sigma", "alpha", "variance_mode", "attack", "eps_grid",
                     "inference", "sweep_sigmas", "at_eps", "gradcheck", "mc", "checkpoint", "out", "seed"});
  if (j.contains("model")) {
    require(j.at("model").is_string() || j.at("model").is_object(), "model", "expected a preset name or an object");
    cfg.model = j.at("model");
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, "data", {"format", "path", "train_limit", "test_limit", "blob_count"});
    read(d, "data", "format", cfg.data.format);
    read(d, "data", "path", cfg.data.path);
    read(d, "data", "train_limit", cfg.data.train_limit);
    read(d, "data", "test_limit", cfg.data.test_limit);
    read(d, "data", "blob_count", cfg.data.blob_count);
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    check_keys(s, "schedule", {"epochs", "batch_size", "learning_rate", "momentum", "grad_clip", "eval_every"});
    read(s, "schedule", "epochs", cfg.schedule.epochs);
    read(s, "schedule", "batch_size", cfg.schedule.batch_size);
    read(s, "schedule", "learning_rate", cfg.schedule.learning_rate);
    read(s, "schedule", "momentum", cfg.schedule.momentum);
    read(s, "schedule", "grad_clip", cfg.schedule.grad_clip);
    read(s, "schedule", "eval_every", cfg.schedule.eval_every);
  }
  read(j, "", "policy", cfg.policy);
  read(j, "", "sigma", cfg.sigma);
  read(j, "", "alpha", cfg.alpha);
  if (j.contains("variance_mode")) {
    std::string mode;
    read(j, "", "variance_mode", mode);
    require_one_of(mode, "variance_mode", {"identity", "diagonal"});
    cfg.variance_mode = parse_variance_mode(mode);
  }
  if (j.contains("attack")) {
    const json& a = j.at("attack");
    check_keys(a, "attack", {"kind", "iterations", "step_fraction", "random_start"});
    read(a, "attack", "kind", cfg.attack.kind);
    read(a, "attack", "iterations", cfg.attack.iterations);
    read(a, "attack", "step_fraction", cfg.attack.step_fraction);
    read(a, "attack", "random_start", cfg.attack.random_start);
  }
  read(j, "", "eps_grid", cfg.eps_grid);
  if (j.contains("inference")) {
    const json& i = j.at("inference");
    check_keys(i, "inference", {"kind", "votes"});
    read(i, "inference", "kind", cfg.inference.kind);
    read(i, "inference", "votes", cfg.inference.votes);
  }
  read(j, "", "sweep_sigmas", cfg.sweep_sigmas);
  read(j, "", "at_eps", cfg.at_eps);
  if (j.contains("gradcheck")) {
    const json& g = j.at("gradcheck");
    check_keys(g, "gradcheck", {"seeds", "h", "tolerance", "input_samples", "sigmas"});
    read(g, "gradcheck", "seeds", cfg.gradcheck.seeds);
    read(g, "gradcheck", "h", cfg.gradcheck.h);
    read(g, "gradcheck", "tolerance", cfg.gradcheck.tolerance);
    read(g, "gradcheck", "input_samples", cfg.gradcheck.input_samples);
    read(g, "gradcheck", "sigmas", cfg.gradcheck.sigmas);
  }
  if (j.contains("mc")) {
    const json& m = j.at("mc");
    check_keys(m, "mc", {"samples", "sigmas", "max_se", "hidden"});
    read(m, "mc", "samples", cfg.mc.samples);
    read(m, "mc", "sigmas", cfg.mc.sigmas);
    read(m, "mc", "max_se", cfg.mc.max_se);
    read(m, "mc", "hidden", cfg.mc.hidden);
  }
  read(j, "", "checkpoint", cfg.checkpoint);
  read(j, "", "out", cfg.out);
  read(j, "", "seed", cfg.seed);
  return cfg;
}

void validate(const ExperimentConfig& cfg) {
  (void)cfg.model_config();
  require_one_of(cfg.data.format, "data.format", {"mnist", "cifar10", "blobs"});
  require(cfg.data.train_limit >= 0, "data.train_limit", "must be >= 0");
  require(cfg.data.test_limit >= 0, "data.test_limit", "must be >= 0");
  require(cfg.data.blob_count >= 2, "data.blob_count", "must be >= 2");
  try {
    cfg.schedule.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require_one_of(cfg.policy, "policy", {"fixed", "learnable", "bimodel"});
  require(cfg.sigma >= 0.0, "sigma", "must be >= 0");
  require(cfg.alpha > 0.0, "alpha", "must be > 0");
  require_one_of(cfg.attack.kind, "attack.kind", {"pgd", "fgsm", "adaptive"});
  require(cfg.attack.iterations >= 1, "attack.iterations", "must be >= 1");
  require(cfg.attack.step_fraction > 0.0, "attack.step_fraction", "must be > 0");
  require_grid(cfg.eps_grid, "eps_grid", true);
  require_one_of(cfg.inference.kind, "inference.kind", {"expectation", "randomized"});
  require(cfg.inference.votes >= 1, "inference.votes", "must be >= 1");
  require_grid(cfg.sweep_sigmas, "sweep_sigmas", false);
  require_grid(cfg.at_eps, "at_eps", false);
  require(cfg.gradcheck.seeds >= 1, "gradcheck.seeds", "must be >= 1");
  require(cfg.gradcheck.h > 0.0, "gradcheck.h", "must be > 0");
  require(cfg.gradcheck.tolerance > 0.0, "gradcheck.tolerance", "must be > 0");
  require(cfg.gradcheck.input_samples >= 0, "gradcheck.input_samples", "must be >= 0");
  require_grid(cfg.gradcheck.sigmas, "gradcheck.sigmas", false);
  require(cfg.mc.samples >= 2, "mc.samples", "must be >= 2");
  require_grid(cfg.mc.sigmas, "mc.sigmas", false);
  require(cfg.mc.max_se > 0.0, "mc.max_se", "must be > 0");
  require(cfg.mc.hidden >= 1, "mc.hidden", "must be >= 1");
  require(!cfg.out.empty(), "out", "must not be empty");
}

json to_json(const ExperimentConfig& cfg) {
  const TrainSchedule& s = cfg.schedule;
  return json{
      {"model", cfg.model},
      {"data",
       {{"format", cfg.data.format},
        {"path", cfg.data.path},
        {"train_limit", cfg.data.train_limit},
        {"test_limit", cfg.data.test_limit},
        {"blob_count", cfg.data.blob_count}}},
      {"schedule",
       {{"epochs", s.epochs},
        {"batch_size", s.batch_size},
        {"learning_rate", s.learning_rate},
        {"momentum", s.momentum},
        {"grad_clip", s.grad_clip},
        {"eval_every", s.eval_every}}},
      {"policy", cfg.policy},
      {"sigma", cfg.sigma},
      {"alpha", cfg.alpha},
      {"variance_mode", variance_mode_name(cfg.variance_mode)},
      {"attack",
       {{"kind", cfg.attack.kind},
        {"iterations", cfg.attack.iterations},
        {"step_fraction", cfg.attack.step_fraction},
        {"random_start", cfg.attack.random_start}}},
      {"eps_grid", cfg.eps_grid},
      {"inference", {{"kind", cfg.inference.kind}, {"votes", cfg.inference.votes}}},
      {"sweep_sigmas", cfg.sweep_sigmas},
      {"at_eps", cfg.at_eps},
      {"gradcheck",
       {{"seeds", cfg.gradcheck.seeds},
        {"h", cfg.gradcheck.h},
        {"tolerance", cfg.gradcheck.tolerance},
        {"input_samples", cfg.gradcheck.input_samples},
        {"sigmas", cfg.gradcheck.sigmas}}},
      {"mc",
       {{"samples", cfg.mc.samples},
        {"sigmas", cfg.mc.sigmas},
        {"max_se", cfg.mc.max_se},
        {"hidden", cfg.mc.hidden}}},
      {"checkpoint", cfg.checkpoint},
      {"out", cfg.out},
      {"seed", cfg.seed},
  };
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  j.erase("out");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (item.empty() || end == item.c_str() || *end != '\0' || !std::isfinite(v)) {
      throw ConfigError("'" + text + "' is not a comma-separated list of numbers");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty number list");
  return out;
}

}  // namespace snn::cli
