#pragma once

#include "pinlab/checkpoint.hpp"
#include "pinlab/dataset.hpp"
#include "pinlab/dissect.hpp"
#include "pinlab/generator.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pinlab {

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

// fromRGB conv at R, then per resolution r > 4: conv C(r) -> C(r/2), leaky
// ReLU, 2x average pool; at 4x4 one more conv + leaky ReLU, then an affine
// map of the flattened features to a single logit. C(r) comes from the
// generator's channel table.
template <typename T>
struct BasicDiscriminatorParams {
  T rgb_weight, rgb_bias;
  std::vector<T> block_weight, block_bias;
  T final_weight, final_bias;
  T fc_weight, fc_bias;

  template <typename F>
  void visit(F&& f) const {
    f("D/rgb/weight", rgb_weight);
    f("D/rgb/bias", rgb_bias);
    for (std::size_t i = 0; i < block_weight.size(); ++i) {
      f("D/block" + std::to_string(i) + "/weight", block_weight[i]);
      f("D/block" + std::to_string(i) + "/bias", block_bias[i]);
    }
    f("D/final/weight", final_weight);
    f("D/final/bias", final_bias);
    f("D/fc/weight", fc_weight);
    f("D/fc/bias", fc_bias);
  }
  template <typename F>
  void visit(F&& f) {
    std::as_const(*this).visit([&](const std::string& n, const T& t) { f(n, const_cast<T&>(t)); });
  }
};

template <typename Scalar>
using DiscriminatorParams = BasicDiscriminatorParams<Tensor<Scalar>>;
template <typename Scalar>
using DiscriminatorVars = BasicDiscriminatorParams<Var<Scalar>>;

template <typename U, typename T, typename F>
BasicDiscriminatorParams<U> map_params(const BasicDiscriminatorParams<T>& p, F&& f) {
  BasicDiscriminatorParams<U> o;
  o.rgb_weight = f("D/rgb/weight", p.rgb_weight);
  o.rgb_bias = f("D/rgb/bias", p.rgb_bias);
  for (std::size_t i = 0; i < p.block_weight.size(); ++i) {
    o.block_weight.push_back(f("D/block" + std::to_string(i) + "/weight", p.block_weight[i]));
    o.block_bias.push_back(f("D/block" + std::to_string(i) + "/bias", p.block_bias[i]));
  }
  o.final_weight = f("D/final/weight", p.final_weight);
  o.final_bias = f("D/final/bias", p.final_bias);
  o.fc_weight = f("D/fc/weight", p.fc_weight);
  o.fc_bias = f("D/fc/bias", p.fc_bias);
  return o;
}

inline std::map<std::string, Shape> discriminator_param_shapes(const GeneratorConfig& cfg) {
  cfg.validate();
  std::map<std::string, Shape> s;
  const int R = cfg.max_resolution;
  const Index c4 = cfg.channels.at(4);
  s["D/rgb/weight"] = {cfg.channels.at(R), 3, 3, 3};
  s["D/rgb/bias"] = {cfg.channels.at(R)};
  int i = 0;
  for (int r = R; r > 4; r /= 2, ++i) {
    const std::string n = "D/block" + std::to_string(i) + "/";
    s[n + "weight"] = {cfg.channels.at(r / 2), cfg.channels.at(r), 3, 3};
    s[n + "bias"] = {cfg.channels.at(r / 2)};
  }
  s["D/final/weight"] = {c4, c4, 3, 3};
  s["D/final/bias"] = {c4};
  s["D/fc/weight"] = {1, c4 * 16};
  s["D/fc/bias"] = {1};
  return s;
}

template <typename T>
void check_discriminator_params(const GeneratorConfig& cfg, const BasicDiscriminatorParams<T>& p) {
  const auto expected = discriminator_param_shapes(cfg);
  std::size_t seen = 0;
  p.visit([&](const std::string& name, const T& t) {
    auto it = expected.find(name);
    if (it == expected.end()) throw ConfigMismatch("unexpected discriminator parameter " + name);
    if (t.shape() != it->second)
      throw ConfigMismatch("parameter " + name + " has shape " + shape_string(t.shape()) +
                           ", config expects " + shape_string(it->second));
    ++seen;
  });
  if (seen != expected.size()) throw ConfigMismatch("discriminator parameters incomplete");
}

// He-normal kernels, zero biases; each tensor seeded by (seed, name).
template <typename Scalar>
DiscriminatorParams<Scalar> init_discriminator(const GeneratorConfig& cfg, std::uint64_t seed) {
  const auto shapes = discriminator_param_shapes(cfg);
  auto normal = [&](const std::string& name) {
    const Shape& s = shapes.at(name);
    const double fan_in = static_cast<double>(shape_volume(s) / s[0]);
    return normal_tensor<Scalar>(s, mix_seed(seed, fnv1a(name)), std::sqrt(2.0 / fan_in));
  };
  auto zeros = [&](const std::string& name) { return Tensor<Scalar>(shapes.at(name)); };
  DiscriminatorParams<Scalar> p;
  p.rgb_weight = normal("D/rgb/weight");
  p.rgb_bias = zeros("D/rgb/bias");
  for (int i = 0, r = cfg.max_resolution; r > 4; r /= 2, ++i) {
    const std::string n = "D/block" + std::to_string(i) + "/";
    p.block_weight.push_back(normal(n + "weight"));
    p.block_bias.push_back(zeros(n + "bias"));
  }
  p.final_weight = normal("D/final/weight");
  p.final_bias = zeros("D/final/bias");
  p.fc_weight = normal_tensor<Scalar>(shapes.at("D/fc/weight"), mix_seed(seed, fnv1a("D/fc/weight")),
                                      std::sqrt(1.0 / static_cast<double>(shapes.at("D/fc/weight")[1])));
  p.fc_bias = zeros("D/fc/bias");
  return p;
}

template <typename Scalar>
DiscriminatorVars<Scalar> bind(Tape<Scalar>& tape, const DiscriminatorParams<Scalar>& p,
                               bool requires_grad) {
  return map_params<Var<Scalar>>(p, [&](const std::string&, const Tensor<Scalar>& t) {
    return tape.leaf(t, requires_grad);
  });
}

template <typename Scalar>
DiscriminatorParams<Scalar> gradients(const Tape<Scalar>& tape, const DiscriminatorVars<Scalar>& v) {
  return map_params<Tensor<Scalar>>(
      v, [&](const std::string&, const Var<Scalar>& x) { return tape.grad(x); });
}

// Logit of shape [1].
template <typename Scalar>
Var<Scalar> discriminator_forward(const Var<Scalar>& image, const DiscriminatorVars<Scalar>& p) {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != 3 || s[1] != s[2] || s[1] < 4)
    throw DimensionError("discriminator input must be [3, R, R], got " + shape_string(s));
  if (s[1] != Index{4} << p.block_weight.size())
    throw DimensionError("discriminator built for " + std::to_string(4 << p.block_weight.size()) +
                         "x" + std::to_string(4 << p.block_weight.size()) + ", input is " +
                         shape_string(s));
  Var<Scalar> h = leaky_relu(conv3x3(image, p.rgb_weight, p.rgb_bias));
  for (std::size_t i = 0; i < p.block_weight.size(); ++i)
    h = avg_pool2x(leaky_relu(conv3x3(h, p.block_weight[i], p.block_bias[i])));
  h = leaky_relu(conv3x3(h, p.final_weight, p.final_bias));
  h = reshape(h, {h.value().size()});
  return affine(h, p.fc_weight, p.fc_bias);
}

template <typename Scalar>
Scalar discriminator_forward(const Tensor<Scalar>& image, const DiscriminatorParams<Scalar>& p) {
  Tape<Scalar> tape;
  return discriminator_forward(tape.constant(image), bind(tape, p, false)).value()[0];
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

enum class OptimizerKind { SGD, Adam };

struct TrainConfig {
  int steps = 2000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
  int checkpoint_interval = 100;

  void validate() const;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;
inline constexpr int kProbeBatch = 16;

// Adam moments keyed by parameter name; empty for SGD.
struct OptimizerState {
  std::map<std::string, Tensor<float>> m, v;
};

// One update of `param` with gradient `grad`; t is the 1-based step count.
void optimizer_update(const TrainConfig& cfg, OptimizerState& state, const std::string& name,
                      Tensor<float>& param, const Tensor<float>& grad, std::uint64_t t);

// Everything needed to continue training bit-exactly.
struct TrainState {
  GeneratorConfig gcfg;
  GeneratorParams<float> g;
  DiscriminatorParams<float> d;
  OptimizerState opt;
  std::uint64_t step = 0;
};

TrainState init_train_state(const TrainConfig& cfg, const GeneratorConfig& gcfg);

// FNV-1a of the canonical generator config text (see config.hpp).
std::uint64_t generator_config_hash(const GeneratorConfig& gcfg);

TensorList to_checkpoint(const TrainState& state);
// Throws ConfigMismatch when the stored hash or shapes disagree with gcfg.
TrainState from_checkpoint(const TensorList& tensors, const GeneratorConfig& gcfg);
// Only the generator tensors (for synthesis from a training checkpoint).
GeneratorParams<float> generator_from_checkpoint(const TensorList& tensors,
                                                 const GeneratorConfig& gcfg);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct MetricsRow {
  std::uint64_t step = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  std::optional<double> amp_metric;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct TrainingDiverged : std::runtime_error {
  TrainingDiverged(const std::string& what, TrainState s)
      : std::runtime_error(what), state(std::move(s)) {}
  TrainState state;  // parameters before the failing step
};

struct TrainHooks {
  // Called after every completed step.
  std::function<void(const TrainState&, const MetricsRow&)> on_step;
  // Written before TrainingDiverged is thrown, when non-empty.
  std::string diagnostic_path;
};

struct TrainResult {
  TrainState state;
  std::vector<MetricsRow> log;
};

// Runs steps state.step + 1 .. cfg.steps, logging the amplification metric at
// multiples of cfg.checkpoint_interval. Randomness of step s depends only on
// (cfg.seed, s), so a resumed state reproduces the uninterrupted run.
TrainResult train(const TrainConfig& cfg, const DatasetSpec& data, TrainState state,
                  const TrainHooks& hooks = {});

// max / median of the cross-channel mean |post-norm| at the final site,
// averaged over kProbeBatch fixed latents.
double amplification_metric(const GeneratorConfig& gcfg, const GeneratorParams<float>& g,
                            std::uint64_t probe_seed);

// ---------------------------------------------------------------------------
// Analysis
// ---------------------------------------------------------------------------

struct NoPinSites : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RhoHistogram {
  int site = 0;
  int resolution = 0;
  std::vector<Index> counts;  // bins over [0,1]
};

// Bin i covers [i/bins, (i+1)/bins); the last bin also includes 1.
std::vector<RhoHistogram> rho_histogram(const GeneratorConfig& gcfg,
                                        const GeneratorParams<float>& g, int bins);
std::string rho_histogram_csv(const std::vector<RhoHistogram>& h);

struct VariantResult {
  NormKind kind;
  double amp_metric = 0.0;
  double final_d_loss = 0.0;
  double final_g_loss = 0.0;
  Index n_regions = 0;  // detected at the final site, summed over the probe batch
  std::vector<MetricsRow> log;
  TrainState state;
};

std::vector<VariantResult> variant_compare(const std::vector<NormKind>& variants,
                                           const TrainConfig& cfg, const GeneratorConfig& gcfg,
                                           const DatasetSpec& data,
                                           double detect_k = kDefaultDetectK);
// variant,amp_metric,final_d_loss,final_g_loss,n_regions
std::string variant_csv(const std::vector<VariantResult>& rows);

}  // namespace pinlab
