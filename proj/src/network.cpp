#include "snn/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "snn/errors.hpp"

namespace snn {

ModelConfig::ModelConfig(Shape input_shape, std::vector<LayerSpec> layers, Index num_classes, double default_sigma)
    : input_shape_(std::move(input_shape)),
      layers_(std::move(layers)),
      num_classes_(num_classes),
      default_sigma_(default_sigma) {
  if (input_shape_.size() != 3 || shape_size(input_shape_) <= 0 ||
      std::any_of(input_shape_.begin(), input_shape_.end(), [](Index d) { return d <= 0; })) {
    throw ShapeError("ModelConfig: input shape must be positive (C,H,W), got " + shape_string(input_shape_));
  }
  if (num_classes_ < 2) throw ShapeError("ModelConfig: need at least two classes");
  if (!(default_sigma_ >= 0.0)) throw std::invalid_argument("ModelConfig: default sigma must be >= 0");
  if (layers_.empty()) throw ShapeError("ModelConfig: no layers");

  const auto first_affine = std::find_if(layers_.begin(), layers_.end(), is_affine);
  if (first_affine == layers_.end()) throw ShapeError("ModelConfig: no Conv or FullyConnected layer for noise injection");
  noise_layer_ = std::distance(layers_.begin(), first_affine);
  for (Index i = 0; i < noise_layer_; ++i) {
    if (!std::holds_alternative<Flatten>(layers_[static_cast<std::size_t>(i)])) {
      throw ShapeError("ModelConfig: only Flatten may precede the first affine layer");
    }
  }

  shapes_.push_back(input_shape_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      shapes_.push_back(layer_output_shape(layers_[i], shapes_.back()));
    } catch (const ShapeError& e) {
      throw ShapeError("ModelConfig: layer " + std::to_string(i) + ": " + e.what());
    }
  }
  if (shapes_.back() != Shape{num_classes_}) {
    throw ShapeError("ModelConfig: network output " + shape_string(shapes_.back()) + " does not match " +
                     std::to_string(num_classes_) + " classes");
  }
}

ParameterSet init_params(const ModelConfig& config, std::uint64_t seed) {
  ParameterSet params{config, {}, config.default_sigma(), false};
  const SeededRng root(seed);
  for (Index i = 0; i < config.num_layers(); ++i) {
    const LayerSpec& spec = config.layers()[static_cast<std::size_t>(i)];
    const Shape& in = config.shapes()[static_cast<std::size_t>(i)];
    if (!is_affine(spec)) {
      params.layers.emplace_back();
      continue;
    }
    const auto [wshape, bshape] = layer_param_shapes(spec, in);
    SeededRng rng = root.split(static_cast<std::uint64_t>(i));
    params.layers.push_back(
        {sample_gaussian(rng, wshape, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in(spec, in)))), Tensor(bshape)});
  }
  return params;
}

void check_params(const ParameterSet& params) {
  const ModelConfig& config = params.config;
  if (params.layers.size() != config.layers().size()) throw ShapeError("ParameterSet: layer count mismatch");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto [wshape, bshape] = layer_param_shapes(config.layers()[i], config.shapes()[i]);
    const LayerParams& p = params.layers[i];
    const bool ok = is_affine(config.layers()[i]) ? (p.weight.shape() == wshape && p.bias.shape() == bshape)
                                                   : p.empty();
    if (!ok) throw ShapeError("ParameterSet: layer " + std::to_string(i) + " parameter shapes do not match config");
  }
  if (!(params.sigma >= 0.0) || !std::isfinite(params.sigma)) throw std::invalid_argument("ParameterSet: sigma < 0");
}

namespace {

void check_input(const ParameterSet& params, const Tensor& x) {
  if (x.shape() != params.config.input_shape()) {
    throw ShapeError("input shape " + shape_string(x.shape()) + " does not match model input " +
                     shape_string(params.config.input_shape()));
  }
}

std::vector<std::uint8_t> mask_where(const Tensor& t, auto pred) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(t.size()));
  for (Index i = 0; i < t.size(); ++i) mask[static_cast<std::size_t>(i)] = pred(i) ? 1 : 0;
  return mask;
}

ForwardCache empty_cache(const ParameterSet& params, bool stochastic, VarianceMode mode) {
  const auto n = params.config.layers().size();
  ForwardCache cache;
  cache.stochastic = stochastic;
  cache.mode = mode;
  cache.sigma = params.sigma;
  cache.mean.reserve(n + 1);
  cache.var.resize(stochastic ? n + 1 : 0);
  cache.selections.resize(n);
  cache.relu_mask.resize(n);
  cache.var_mask.resize(n);
  return cache;
}

}  // namespace

DeterministicPass forward_deterministic(const ParameterSet& params, const Tensor& x) {
  check_input(params, x);
  ForwardCache cache = empty_cache(params, false, VarianceMode::DiagonalExact);
  cache.mean.push_back(x);
  const auto& layers = params.config.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Tensor& in = cache.mean.back();
    const LayerSpec& spec = layers[i];
    Tensor out;
    if (is_affine(spec)) {
      out = affine_forward(in, spec, params.layers[i]);
    } else if (std::holds_alternative<ReLU>(spec)) {
      cache.relu_mask[i] = mask_where(in, [&](Index j) { return in[j] >= 0.0; });
      out = Tensor(in.shape(), in.data().cwiseMax(0.0));
    } else if (const auto* pool = std::get_if<MeanPool>(&spec)) {
      auto [pooled, map] = select_max(in, pool->window, pool->stride);
      out = std::move(pooled);
      cache.selections[i] = std::move(map);
    } else {
      out = in.reshaped({in.size()});
    }
    cache.mean.push_back(std::move(out));
  }
  Eigen::VectorXd logits = cache.mean.back().data();
  return {std::move(logits), std::move(cache)};
}

Eigen::VectorXd forward_expectation(const ParameterSet& params, const Tensor& x) {
  return forward_deterministic(params, x).logits;
}

StochasticPass forward_stochastic(const ParameterSet& params, const Tensor& x, VarianceMode mode) {
  return forward_stochastic(params, x, mode, params.sigma);
}

StochasticPass forward_stochastic(const ParameterSet& params, const Tensor& x, VarianceMode mode, double sigma) {
  check_input(params, x);
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("forward_stochastic: sigma must be >= 0");
  ForwardCache cache = empty_cache(params, true, mode);
  cache.sigma = sigma;
  const auto& layers = params.config.layers();
  const auto noise_layer = static_cast<std::size_t>(params.config.noise_layer());

  cache.mean.push_back(x);
  for (std::size_t i = 0; i < noise_layer; ++i) cache.mean.push_back(cache.mean.back().reshaped({x.size()}));

  GaussianTensor state = inject_noise(affine_forward(cache.mean.back(), layers[noise_layer], params.layers[noise_layer]),
                                      sigma);
  cache.mean.push_back(state.mean());
  cache.var[noise_layer + 1] = state.var();

  for (std::size_t i = noise_layer + 1; i < layers.size(); ++i) {
    const LayerSpec& spec = layers[i];
    if (is_affine(spec)) {
      state = propagate_affine(state, spec, params.layers[i], mode, sigma);
    } else if (std::holds_alternative<ReLU>(spec)) {
      const Tensor& mu = state.mean();
      const Tensor& var = state.var();
      cache.relu_mask[i] = mask_where(mu, [&](Index j) { return mu[j] >= 0.0; });
      cache.var_mask[i] =
          mask_where(mu, [&](Index j) { return mu[j] >= -kReluCensorSigmas * std::sqrt(var[j]); });
      state = propagate_relu(state);
    } else if (const auto* pool = std::get_if<MeanPool>(&spec)) {
      auto [pooled, map] = propagate_meanpool(state, pool->window, pool->stride);
      state = std::move(pooled);
      cache.selections[i] = std::move(map);
    } else {
      state = state.reshaped({state.size()});
    }
    cache.mean.push_back(state.mean());
    cache.var[i + 1] = state.var();
  }
  return {std::move(state), std::move(cache)};
}

Eigen::VectorXd forward_noisy(const ParameterSet& params, const Tensor& x, double sigma, SeededRng& rng) {
  check_input(params, x);
  if (!(sigma >= 0.0)) throw std::invalid_argument("forward_noisy: sigma must be >= 0");
  const auto& layers = params.config.layers();
  const auto noise_layer = static_cast<std::size_t>(params.config.noise_layer());
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& spec = layers[i];
    if (is_affine(spec)) {
      h = affine_forward(h, spec, params.layers[i]);
      if (i == noise_layer && sigma > 0.0) {
        for (Index j = 0; j < h.size(); ++j) h[j] += sigma * rng.normal();
      }
    } else if (std::holds_alternative<ReLU>(spec)) {
      h.data() = h.data().cwiseMax(0.0);
    } else if (const auto* pool = std::get_if<MeanPool>(&spec)) {
      h = select_max(h, pool->window, pool->stride).first;
    } else {
      h = h.reshaped({h.size()});
    }
  }
  return h.data();
}

Index argmax_label(const Eigen::VectorXd& logits) {
  Index best = 0;
  for (Index i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

PresetConfigs preset_configs() {
  // 28 -> conv5 24 -> pool 12 -> conv5 8 -> pool 4 -> conv3(p1) 4 -> pool 2
  ModelConfig mnist({1, 28, 28},
                    {Conv{6, 5, 5, 1, 0}, ReLU{}, MeanPool{2, 2}, Conv{16, 5, 5, 1, 0}, ReLU{}, MeanPool{2, 2},
                     Conv{32, 3, 3, 1, 1}, ReLU{}, MeanPool{2, 2}, Flatten{}, FullyConnected{200}, ReLU{},
                     FullyConnected{200}, ReLU{}, FullyConnected{10}},
                    10);
  // 32 -> 16 -> 8 -> 4 -> 2 -> 1 with same-padded 3x3 convolutions
  std::vector<LayerSpec> cifar_layers;
  for (Index channels : {32, 64, 128, 128, 128}) {
    cifar_layers.insert(cifar_layers.end(), {Conv{channels, 3, 3, 1, 1}, ReLU{}, MeanPool{2, 2}});
  }
  cifar_layers.insert(cifar_layers.end(),
                      {Flatten{}, FullyConnected{256}, ReLU{}, FullyConnected{128}, ReLU{}, FullyConnected{10}});
  return {std::move(mnist), ModelConfig({3, 32, 32}, std::move(cifar_layers), 10)};
}

ModelConfig tiny_config() {
  return ModelConfig({1, 8, 8}, {Conv{2, 3, 3, 1, 0}, ReLU{}, MeanPool{2, 2}, Flatten{}, FullyConnected{10}}, 10);
}

ModelConfig config_by_name(const std::string& name) {
  if (name == "mnist_lenet") return preset_configs().mnist_lenet;
  if (name == "cifar_cnn") return preset_configs().cifar_cnn;
  if (name == "tiny") return tiny_config();
  if (name == "blobs") {
    return ModelConfig({1, 4, 4}, {Flatten{}, FullyConnected{8}, ReLU{}, FullyConnected{2}}, 2);
  }
  throw std::invalid_argument("unknown model preset '" + name + "' (expected mnist_lenet|cifar_cnn|tiny|blobs)");
}

AffineMatrix conv_as_matrix(const Conv& layer, const LayerParams& params, const Shape& input_shape) {
  const Shape out_shape = layer_output_shape(layer, input_shape);
  const auto [wshape, bshape] = layer_param_shapes(layer, input_shape);
  if (params.weight.shape() != wshape || params.bias.shape() != bshape) {
    throw ShapeError("conv_as_matrix: parameters do not match layer and input shape");
  }
  const Index cin = input_shape[0], height = input_shape[1], width = input_shape[2];
  const Index cout = out_shape[0], oh = out_shape[1], ow = out_shape[2];
  AffineMatrix m{Eigen::MatrixXd::Zero(cin * height * width, cout * oh * ow), Eigen::VectorXd(cout * oh * ow)};
  for (Index co = 0; co < cout; ++co) {
    for (Index y = 0; y < oh; ++y) {
      for (Index x = 0; x < ow; ++x) {
        const Index col = (co * oh + y) * ow + x;
        m.b[col] = params.bias[co];
        for (Index ci = 0; ci < cin; ++ci) {
          for (Index i = 0; i < layer.kernel_h; ++i) {
            for (Index j = 0; j < layer.kernel_w; ++j) {
              const Index iy = y * layer.stride + i - layer.padding;
              const Index ix = x * layer.stride + j - layer.padding;
              if (iy < 0 || iy >= height || ix < 0 || ix >= width) continue;
              m.A((ci * height + iy) * width + ix, col) +=
                  params.weight[((co * cin + ci) * layer.kernel_h + i) * layer.kernel_w + j];
            }
          }
        }
      }
    }
  }
  return m;
}

// ---- checkpoint ----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'N', 'N', 'C'};
constexpr std::uint16_t kCheckpointVersion = 1;

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void uint(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v), 8); }
  void index(Index v) { uint(static_cast<std::uint64_t>(v), 8); }
  void tensor(const Tensor& t) {
    for (Index i = 0; i < t.size(); ++i) f64(t[i]);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t n) : data_(data), n_(n) {}

  std::uint64_t uint(int width, const char* field) {
    if (pos_ + static_cast<std::size_t>(width) > n_) {
      throw FormatError(std::string("checkpoint truncated while reading ") + field);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  double f64(const char* field) { return std::bit_cast<double>(uint(8, field)); }
  Index index(const char* field) {
    const std::uint64_t v = uint(8, field);
    if (v > (std::uint64_t{1} << 40)) throw FormatError(std::string("checkpoint field out of range: ") + field);
    return static_cast<Index>(v);
  }
  Tensor tensor(const Shape& shape, const char* field) {
    Tensor t(shape);
    for (Index i = 0; i < t.size(); ++i) t[i] = f64(field);
    return t;
  }
  bool done() const { return pos_ == n_; }

 private:
  const std::uint8_t* data_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

enum LayerTag : std::uint8_t { kConvTag = 0, kReluTag = 1, kPoolTag = 2, kFlattenTag = 3, kFcTag = 4 };

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ParameterSet& params) {
  check_params(params);
  const ModelConfig& config = params.config;
  ByteWriter w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.uint(kCheckpointVersion, 2);
  for (Index d : config.input_shape()) w.index(d);
  w.index(config.num_classes());
  w.f64(config.default_sigma());
  w.uint(config.layers().size(), 4);
  for (const LayerSpec& spec : config.layers()) {
    if (const auto* c = std::get_if<Conv>(&spec)) {
      w.u8(kConvTag);
      for (Index v : {c->out_channels, c->kernel_h, c->kernel_w, c->stride, c->padding}) w.index(v);
    } else if (std::holds_alternative<ReLU>(spec)) {
      w.u8(kReluTag);
    } else if (const auto* p = std::get_if<MeanPool>(&spec)) {
      w.u8(kPoolTag);
      w.index(p->window);
      w.index(p->stride);
    } else if (std::holds_alternative<Flatten>(spec)) {
      w.u8(kFlattenTag);
    } else {
      w.u8(kFcTag);
      w.index(std::get<FullyConnected>(spec).out_units);
    }
  }
  for (const LayerParams& p : params.layers) {
    w.tensor(p.weight);
    w.tensor(p.bias);
  }
  w.f64(params.sigma);
  w.u8(params.sigma_learnable ? 1 : 0);
  auto& bytes = w.bytes();
  const std::uint64_t sum = fnv1a64(bytes.data(), bytes.size());
  w.uint(sum, 8);
  return std::move(bytes);
}

ParameterSet deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 + 2 + 8 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("checkpoint: bad magic (expected \"SNNC\")");
  }
  const std::size_t body = bytes.size() - 8;
  ByteReader tail(bytes.data() + body, 8);
  if (tail.uint(8, "checksum") != fnv1a64(bytes.data(), body)) throw FormatError("checkpoint: checksum mismatch");

  ByteReader r(bytes.data() + 4, body - 4);
  if (const auto version = r.uint(2, "version"); version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  Shape input(3);
  for (Index& d : input) d = r.index("input shape");
  const Index classes = r.index("class count");
  const double default_sigma = r.f64("default sigma");
  const auto layer_count = r.uint(4, "layer count");
  if (layer_count > 4096) throw FormatError("checkpoint: implausible layer count");
  std::vector<LayerSpec> layers;
  for (std::uint64_t i = 0; i < layer_count; ++i) {
    switch (r.uint(1, "layer tag")) {
      case kConvTag: {
        Conv c;
        c.out_channels = r.index("conv");
        c.kernel_h = r.index("conv");
        c.kernel_w = r.index("conv");
        c.stride = r.index("conv");
        c.padding = r.index("conv");
        layers.emplace_back(c);
        break;
      }
      case kReluTag: layers.emplace_back(ReLU{}); break;
      case kPoolTag: {
        MeanPool p;
        p.window = r.index("pool");
        p.stride = r.index("pool");
        layers.emplace_back(p);
        break;
      }
      case kFlattenTag: layers.emplace_back(Flatten{}); break;
      case kFcTag: layers.emplace_back(FullyConnected{r.index("fc")}); break;
      default: throw FormatError("checkpoint: unknown layer tag");
    }
  }
  ParameterSet params = [&] {
    try {
      return ParameterSet{ModelConfig(input, std::move(layers), classes, default_sigma), {}, 0.0, false};
    } catch (const std::invalid_argument& e) {
      throw FormatError(std::string("checkpoint: invalid model config: ") + e.what());
    }
  }();
  const ModelConfig& config = params.config;
  for (std::size_t i = 0; i < config.layers().size(); ++i) {
    const auto [wshape, bshape] = layer_param_shapes(config.layers()[i], config.shapes()[i]);
    if (!is_affine(config.layers()[i])) {
      params.layers.emplace_back();
      continue;
    }
    Tensor weight = r.tensor(wshape, "weights");
    Tensor bias = r.tensor(bshape, "bias");
    params.layers.push_back({std::move(weight), std::move(bias)});
  }
  params.sigma = r.f64("sigma");
  params.sigma_learnable = r.uint(1, "sigma flag") != 0;
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return params;
}

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ParameterSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace snn
