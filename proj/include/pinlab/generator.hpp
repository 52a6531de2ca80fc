#pragma once

#include "pinlab/autodiff.hpp"
#include "pinlab/normalization.hpp"
#include "pinlab/ops.hpp"
#include "pinlab/random.hpp"
#include "pinlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pinlab {

struct ConfigMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct WrongNormKind : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class NormKind { InstanceStyle, PixelStyle, PixelInstanceStyle, AdaIN };

inline std::string_view norm_kind_name(NormKind k) {
  switch (k) {
    case NormKind::InstanceStyle: return "IN";
    case NormKind::PixelStyle: return "PN";
    case NormKind::PixelInstanceStyle: return "PIN";
    case NormKind::AdaIN: return "AdaIN";
  }
  return "?";
}

inline std::optional<NormKind> parse_norm_kind(std::string_view s) {
  if (s == "IN") return NormKind::InstanceStyle;
  if (s == "PN") return NormKind::PixelStyle;
  if (s == "PIN") return NormKind::PixelInstanceStyle;
  if (s == "AdaIN") return NormKind::AdaIN;
  return std::nullopt;
}

struct GeneratorConfig {
  int max_resolution = 32;
  std::map<int, int> channels = {{4, 64}, {8, 64}, {16, 32}, {32, 16}, {64, 8}};
  int latent_dim = 64;
  int mapping_layers = 3;
  // One entry per normalization site, or a single entry applied to every site.
  std::vector<NormKind> norm_kinds = {NormKind::PixelInstanceStyle};
  bool noise_enabled = true;
  std::uint64_t seed = 0;

  // Two sites per resolution, 4x4 up to max_resolution.
  int num_sites() const {
    int n = 0;
    for (int r = 4; r <= max_resolution; r *= 2) n += 2;
    return n;
  }
  int site_resolution(int site) const { return 4 << (site / 2); }
  int site_channels(int site) const { return channels.at(site_resolution(site)); }
  int site_in_channels(int site) const {
    if (site == 0) return channels.at(4);
    return site % 2 == 0 ? channels.at(site_resolution(site) / 2) : site_channels(site);
  }
  int final_site() const { return num_sites() - 1; }
  NormKind norm_at(int site) const {
    return norm_kinds.size() == 1 ? norm_kinds.front()
                                  : norm_kinds.at(static_cast<std::size_t>(site));
  }

  GeneratorConfig with_norm(NormKind k) const {
    GeneratorConfig c = *this;
    c.norm_kinds = {k};
    return c;
  }

  void validate() const {
    if (max_resolution < 8 || max_resolution > 64 || (max_resolution & (max_resolution - 1)))
      throw ConfigMismatch("max_resolution must be a power of two in [8, 64]");
    for (int r = 4; r <= max_resolution; r *= 2) {
      auto it = channels.find(r);
      if (it == channels.end() || it->second < 1)
        throw ConfigMismatch("channels missing for resolution " + std::to_string(r));
    }
    if (latent_dim < 1) throw ConfigMismatch("latent_dim must be positive");
    if (mapping_layers < 1) throw ConfigMismatch("mapping_layers must be >= 1");
    if (norm_kinds.size() != 1 && static_cast<int>(norm_kinds.size()) != num_sites())
      throw ConfigMismatch("norm kinds: expected 1 or " + std::to_string(num_sites()) +
                           " entries, got " + std::to_string(norm_kinds.size()));
  }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
struct BasicSiteParams {
  T conv_weight;                 // [Cout, Cin, 3, 3]
  T conv_bias;                   // [Cout]
  std::optional<T> noise_scale;  // [Cout], present when noise is enabled
  BasicStyleSource<T> style;     // [Cout, D] / [Cout]
  std::optional<T> rho;          // [Cout], PIN sites only
};

template <typename T>
struct BasicGeneratorParams {
  T constant;  // [C4, 4, 4]
  std::vector<T> mapping_weight;
  std::vector<T> mapping_bias;
  std::vector<BasicSiteParams<T>> sites;
  T rgb_weight;  // [3, C_R, 3, 3]
  T rgb_bias;    // [3]

  // Visits every tensor with its checkpoint name, in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    f(std::string("G/const"), self.constant);
    for (std::size_t i = 0; i < self.mapping_weight.size(); ++i) {
      const std::string p = "G/map" + std::to_string(i) + "/";
      f(p + "weight", self.mapping_weight[i]);
      f(p + "bias", self.mapping_bias[i]);
    }
    for (std::size_t i = 0; i < self.sites.size(); ++i) {
      auto& s = self.sites[i];
      const std::string p = "G/site" + std::to_string(i) + "/";
      f(p + "conv/weight", s.conv_weight);
      f(p + "conv/bias", s.conv_bias);
      if (s.noise_scale) f(p + "noise_scale", *s.noise_scale);
      f(p + "style/v_mu", s.style.v_mu);
      f(p + "style/b_mu", s.style.b_mu);
      f(p + "style/v_sigma", s.style.v_sigma);
      f(p + "style/b_sigma", s.style.b_sigma);
      if (s.rho) f(p + "rho", *s.rho);
    }
    f(std::string("G/rgb/weight"), self.rgb_weight);
    f(std::string("G/rgb/bias"), self.rgb_bias);
  }
};

template <typename Scalar>
using GeneratorParams = BasicGeneratorParams<Tensor<Scalar>>;

template <typename Scalar>
using GeneratorVars = BasicGeneratorParams<Var<Scalar>>;

// Rebuilds the same structure with every tensor passed through f(name, t).
template <typename U, typename T, typename F>
BasicGeneratorParams<U> map_params(const BasicGeneratorParams<T>& p, F&& f) {
  BasicGeneratorParams<U> out;
  auto opt = [&](const std::string& name, const std::optional<T>& t) -> std::optional<U> {
    if (!t) return std::nullopt;
    return f(name, *t);
  };
  out.constant = f("G/const", p.constant);
  for (std::size_t i = 0; i < p.mapping_weight.size(); ++i) {
    const std::string n = "G/map" + std::to_string(i) + "/";
    out.mapping_weight.push_back(f(n + "weight", p.mapping_weight[i]));
    out.mapping_bias.push_back(f(n + "bias", p.mapping_bias[i]));
  }
  for (std::size_t i = 0; i < p.sites.size(); ++i) {
    const auto& s = p.sites[i];
    const std::string n = "G/site" + std::to_string(i) + "/";
    BasicSiteParams<U> o;
    o.conv_weight = f(n + "conv/weight", s.conv_weight);
    o.conv_bias = f(n + "conv/bias", s.conv_bias);
    o.noise_scale = opt(n + "noise_scale", s.noise_scale);
    o.style.v_mu = f(n + "style/v_mu", s.style.v_mu);
    o.style.b_mu = f(n + "style/b_mu", s.style.b_mu);
    o.style.v_sigma = f(n + "style/v_sigma", s.style.v_sigma);
    o.style.b_sigma = f(n + "style/b_sigma", s.style.b_sigma);
    o.rho = opt(n + "rho", s.rho);
    out.sites.push_back(std::move(o));
  }
  out.rgb_weight = f("G/rgb/weight", p.rgb_weight);
  out.rgb_bias = f("G/rgb/bias", p.rgb_bias);
  return out;
}

// Shapes every parameter tensor must have for cfg.
inline std::map<std::string, Shape> generator_param_shapes(const GeneratorConfig& cfg) {
  cfg.validate();
  std::map<std::string, Shape> shapes;
  const Index d = cfg.latent_dim;
  shapes["G/const"] = {cfg.channels.at(4), 4, 4};
  for (int i = 0; i < cfg.mapping_layers; ++i) {
    shapes["G/map" + std::to_string(i) + "/weight"] = {d, d};
    shapes["G/map" + std::to_string(i) + "/bias"] = {d};
  }
  for (int s = 0; s < cfg.num_sites(); ++s) {
    const std::string p = "G/site" + std::to_string(s) + "/";
    const Index c = cfg.site_channels(s), cin = cfg.site_in_channels(s);
    shapes[p + "conv/weight"] = {c, cin, 3, 3};
    shapes[p + "conv/bias"] = {c};
    if (cfg.noise_enabled) shapes[p + "noise_scale"] = {c};
    shapes[p + "style/v_mu"] = {c, d};
    shapes[p + "style/b_mu"] = {c};
    shapes[p + "style/v_sigma"] = {c, d};
    shapes[p + "style/b_sigma"] = {c};
    if (cfg.norm_at(s) == NormKind::PixelInstanceStyle) shapes[p + "rho"] = {c};
  }
  shapes["G/rgb/weight"] = {3, cfg.channels.at(cfg.max_resolution), 3, 3};
  shapes["G/rgb/bias"] = {3};
  return shapes;
}

template <typename T>
void check_generator_params(const GeneratorConfig& cfg, const BasicGeneratorParams<T>& p) {
  const auto expected = generator_param_shapes(cfg);
  std::size_t seen = 0;
  p.visit([&](const std::string& name, const T& t) {
    auto it = expected.find(name);
    if (it == expected.end()) throw ConfigMismatch("unexpected generator parameter " + name);
    const Shape& actual = t.shape();
    if (actual != it->second)
      throw ConfigMismatch("parameter " + name + " has shape " + shape_string(actual) +
                           ", config expects " + shape_string(it->second));
    ++seen;
  });
  if (seen != expected.size()) throw ConfigMismatch("generator parameters incomplete for config");
}

// Learned constant = ones, conv kernels He-normal, biases zero, b_sigma = 1,
// rho = 0, noise scales 0.1, style matrices N(0, (0.2/sqrt(D))^2). Each tensor
// draws from its own stream keyed by (cfg.seed, name).
template <typename Scalar>
GeneratorParams<Scalar> init_generator(const GeneratorConfig& cfg) {
  GeneratorParams<Scalar> p;
  const auto shapes = generator_param_shapes(cfg);
  auto normal = [&](const std::string& name, double stdev) {
    return normal_tensor<Scalar>(shapes.at(name), mix_seed(cfg.seed, fnv1a(name)), stdev);
  };
  auto zeros = [&](const std::string& name) { return Tensor<Scalar>(shapes.at(name)); };
  const double d = cfg.latent_dim;

  p.constant = Tensor<Scalar>::constant(shapes.at("G/const"), Scalar(1));
  for (int i = 0; i < cfg.mapping_layers; ++i) {
    const std::string n = "G/map" + std::to_string(i) + "/";
    p.mapping_weight.push_back(normal(n + "weight", std::sqrt(2.0 / d)));
    p.mapping_bias.push_back(zeros(n + "bias"));
  }
  for (int s = 0; s < cfg.num_sites(); ++s) {
    const std::string n = "G/site" + std::to_string(s) + "/";
    BasicSiteParams<Tensor<Scalar>> site;
    site.conv_weight = normal(n + "conv/weight", std::sqrt(2.0 / (9.0 * cfg.site_in_channels(s))));
    site.conv_bias = zeros(n + "conv/bias");
    if (cfg.noise_enabled)
      site.noise_scale = Tensor<Scalar>::constant(shapes.at(n + "noise_scale"), Scalar(0.1));
    site.style.v_mu = normal(n + "style/v_mu", 0.2 / std::sqrt(d));
    site.style.b_mu = zeros(n + "style/b_mu");
    site.style.v_sigma = normal(n + "style/v_sigma", 0.2 / std::sqrt(d));
    site.style.b_sigma = Tensor<Scalar>::constant(shapes.at(n + "style/b_sigma"), Scalar(1));
    if (cfg.norm_at(s) == NormKind::PixelInstanceStyle) site.rho = zeros(n + "rho");
    p.sites.push_back(std::move(site));
  }
  p.rgb_weight = normal("G/rgb/weight", std::sqrt(1.0 / (9.0 * cfg.channels.at(cfg.max_resolution))));
  p.rgb_bias = zeros("G/rgb/bias");
  return p;
}

template <typename Scalar>
GeneratorVars<Scalar> bind(Tape<Scalar>& tape, const GeneratorParams<Scalar>& p,
                           bool requires_grad) {
  return map_params<Var<Scalar>>(p, [&](const std::string&, const Tensor<Scalar>& t) {
    return tape.leaf(t, requires_grad);
  });
}

template <typename Scalar>
GeneratorParams<Scalar> gradients(const Tape<Scalar>& tape, const GeneratorVars<Scalar>& v) {
  return map_params<Tensor<Scalar>>(
      v, [&](const std::string&, const Var<Scalar>& x) { return tape.grad(x); });
}

// ---------------------------------------------------------------------------
// Inputs, ablation hook and trace
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> sample_latent(const GeneratorConfig& cfg, std::uint64_t seed) {
  return normal_tensor<Scalar>({cfg.latent_dim}, mix_seed(seed, 0x7a));
}

// One standard-normal [1,H,W] map per site; empty when noise is disabled.
template <typename Scalar>
struct NoiseInputs {
  std::vector<Tensor<Scalar>> maps;

  static NoiseInputs from_seed(const GeneratorConfig& cfg, std::uint64_t seed) {
    NoiseInputs n;
    if (!cfg.noise_enabled) return n;
    for (int s = 0; s < cfg.num_sites(); ++s) {
      const Index r = cfg.site_resolution(s);
      n.maps.push_back(normal_tensor<Scalar>({1, r, r}, mix_seed(seed, 0x6e6f6973ULL + s)));
    }
    return n;
  }
};

struct UnitRef {
  int site = 0;
  int channel = 0;
  friend bool operator==(const UnitRef&, const UnitRef&) = default;
  friend auto operator<=>(const UnitRef&, const UnitRef&) = default;
};

// Units whose post-conv channel is zeroed before noise and normalization.
struct AblationMask {
  std::vector<UnitRef> units;

  bool contains(UnitRef u) const { return std::find(units.begin(), units.end(), u) != units.end(); }
  bool empty() const { return units.empty(); }
  std::size_t size() const { return units.size(); }

  void add(UnitRef u) {
    if (!contains(u)) units.push_back(u);
  }

  void validate(const GeneratorConfig& cfg) const {
    for (std::size_t i = 0; i < units.size(); ++i) {
      const UnitRef& u = units[i];
      if (u.site < 0 || u.site >= cfg.num_sites() || u.channel < 0 ||
          u.channel >= cfg.site_channels(u.site))
        throw std::out_of_range("unit " + std::to_string(u.site) + ":" +
                                std::to_string(u.channel) + " outside the generator");
      for (std::size_t j = 0; j < i; ++j)
        if (units[j] == u) throw std::invalid_argument("duplicate unit in ablation mask");
    }
  }

  std::vector<bool> keep(const GeneratorConfig& cfg, int site) const {
    std::vector<bool> k(static_cast<std::size_t>(cfg.site_channels(site)), true);
    for (const UnitRef& u : units)
      if (u.site == site) k[static_cast<std::size_t>(u.channel)] = false;
    return k;
  }
};

enum class Stage { PostConv, PostNoise, PostNorm, PostStyle };

inline std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::PostConv: return "post-conv";
    case Stage::PostNoise: return "post-noise";
    case Stage::PostNorm: return "post-norm";
    case Stage::PostStyle: return "post-style";
  }
  return "?";
}

inline constexpr Stage kAllStages[] = {Stage::PostConv, Stage::PostNoise, Stage::PostNorm,
                                       Stage::PostStyle};

template <typename Scalar>
struct TraceRecord {
  int site;
  int resolution;
  Stage stage;
  Tensor<Scalar> value;
};

template <typename Scalar>
struct SynthesisTrace {
  std::vector<TraceRecord<Scalar>> records;

  const Tensor<Scalar>& at(int site, Stage stage) const {
    for (const auto& r : records)
      if (r.site == site && r.stage == stage) return r.value;
    throw std::out_of_range("trace has no record for site " + std::to_string(site) + " stage " +
                            std::string(stage_name(stage)));
  }
  Tensor<Scalar>& at(int site, Stage stage) {
    return const_cast<Tensor<Scalar>&>(std::as_const(*this).at(site, stage));
  }
  int num_sites() const {
    int n = 0;
    for (const auto& r : records) n = std::max(n, r.site + 1);
    return n;
  }
};

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

// mapping_layers affine layers, leaky ReLU between them, final layer linear.
template <typename Scalar>
Var<Scalar> mapping_forward(const Var<Scalar>& z, const GeneratorVars<Scalar>& p) {
  if (z.shape() != Shape{p.mapping_weight.front().value().dim(1)})
    throw ConfigMismatch("latent dimension mismatch: z is " + shape_string(z.shape()));
  Var<Scalar> h = z;
  for (std::size_t i = 0; i < p.mapping_weight.size(); ++i) {
    h = affine(h, p.mapping_weight[i], p.mapping_bias[i]);
    if (i + 1 < p.mapping_weight.size()) h = leaky_relu(h);
  }
  return h;
}

template <typename Scalar>
Tensor<Scalar> mapping_forward(const Tensor<Scalar>& z, const GeneratorParams<Scalar>& p) {
  Tape<Scalar> tape;
  GeneratorVars<Scalar> v;
  v.mapping_weight.clear();
  for (std::size_t i = 0; i < p.mapping_weight.size(); ++i) {
    v.mapping_weight.push_back(tape.constant(p.mapping_weight[i]));
    v.mapping_bias.push_back(tape.constant(p.mapping_bias[i]));
  }
  return mapping_forward(tape.constant(z), v).value();
}

template <typename Scalar>
struct SynthesisVars {
  Var<Scalar> image;
  Var<Scalar> w;
};

// Constant -> per resolution 2x (conv3x3 -> noise -> norm + style -> leaky
// ReLU), nearest upsampling between resolutions, then a 3x3 conv to RGB.
// Records all four stages of every site in trace when given.
template <typename Scalar>
SynthesisVars<Scalar> synthesize(const Var<Scalar>& z, const NoiseInputs<Scalar>& noise,
                                 const GeneratorConfig& cfg, const GeneratorVars<Scalar>& p,
                                 const AblationMask& mask = {},
                                 SynthesisTrace<Scalar>* trace = nullptr) {
  if (static_cast<int>(p.sites.size()) != cfg.num_sites())
    throw ConfigMismatch("parameters have " + std::to_string(p.sites.size()) +
                         " sites, config expects " + std::to_string(cfg.num_sites()));
  if (cfg.noise_enabled && static_cast<int>(noise.maps.size()) != cfg.num_sites())
    throw ConfigMismatch("noise inputs must provide one map per site");
  mask.validate(cfg);

  Tape<Scalar>& tape = z.tape();
  const Scalar eps = Scalar(kNormEpsilon);
  const Var<Scalar> w = mapping_forward(z, p);
  Var<Scalar> h = p.constant;
  auto capture = [&](int site, Stage st, const Var<Scalar>& v) {
    if (trace) trace->records.push_back({site, cfg.site_resolution(site), st, v.value()});
  };

  for (int s = 0; s < cfg.num_sites(); ++s) {
    const auto& sp = p.sites[static_cast<std::size_t>(s)];
    if (s > 0 && s % 2 == 0) h = upsample2x(h);

    Var<Scalar> x = conv3x3(h, sp.conv_weight, sp.conv_bias);
    if (!mask.empty()) {
      auto keep = mask.keep(cfg, s);
      if (std::find(keep.begin(), keep.end(), false) != keep.end()) x = channel_mask(x, keep);
    }
    capture(s, Stage::PostConv, x);

    if (cfg.noise_enabled) {
      if (!sp.noise_scale) throw ConfigMismatch("noise enabled but site has no noise scale");
      x = add_scaled_noise(x, tape.constant(noise.maps[static_cast<std::size_t>(s)]),
                           *sp.noise_scale);
    }
    capture(s, Stage::PostNoise, x);

    Var<Scalar> styled;
    const NormKind kind = cfg.norm_at(s);
    if (kind == NormKind::AdaIN) {
      styled = adain(x, w, sp.style, eps);
      if (trace)
        trace->records.push_back({s, cfg.site_resolution(s), Stage::PostNorm,
                                  instance_norm(x.value(), eps).y});
    } else {
      Var<Scalar> y;
      if (kind == NormKind::InstanceStyle) {
        y = instance_norm(x, eps);
      } else if (kind == NormKind::PixelStyle) {
        y = pixel_norm(x, eps);
      } else {
        if (!sp.rho) throw ConfigMismatch("PIN site without rho");
        y = pin(x, *sp.rho, eps);
      }
      capture(s, Stage::PostNorm, y);
      auto [mu_y, sigma_y] = style_params(w, sp.style);
      styled = style_modulate(y, sigma_y, mu_y);
    }
    capture(s, Stage::PostStyle, styled);
    h = leaky_relu(styled);
  }
  return {conv3x3(h, p.rgb_weight, p.rgb_bias), w};
}

template <typename Scalar>
struct Synthesis {
  Tensor<Scalar> image;  // [3, R, R]
  SynthesisTrace<Scalar> trace;
  Tensor<Scalar> w;
};

template <typename Scalar>
Synthesis<Scalar> synthesize(const Tensor<Scalar>& z, const NoiseInputs<Scalar>& noise,
                             const GeneratorConfig& cfg, const GeneratorParams<Scalar>& params,
                             const AblationMask& mask = {}) {
  check_generator_params(cfg, params);
  Tape<Scalar> tape;
  const GeneratorVars<Scalar> vars = bind(tape, params, false);
  Synthesis<Scalar> out;
  auto r = synthesize(tape.constant(z), noise, cfg, vars, mask, &out.trace);
  out.image = r.image.value();
  out.w = r.w.value();
  return out;
}

// ---------------------------------------------------------------------------
// Inspection
// ---------------------------------------------------------------------------

// (mu_y, sigma_y) at an AdaIN site.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> style_params_at(int site, const Tensor<Scalar>& w,
                                                          const GeneratorConfig& cfg,
                                                          const GeneratorParams<Scalar>& p) {
  if (site < 0 || site >= cfg.num_sites()) throw std::out_of_range("site out of range");
  if (cfg.norm_at(site) != NormKind::AdaIN)
    throw WrongNormKind("site " + std::to_string(site) + " is " +
                        std::string(norm_kind_name(cfg.norm_at(site))) + ", not AdaIN");
  return style_params(w, p.sites[static_cast<std::size_t>(site)].style);
}

struct BiasRow {
  int channel;
  double abs_b_mu;
  double abs_b_sigma;
};

template <typename Scalar>
std::vector<BiasRow> bias_scatter(const GeneratorParams<Scalar>& p, const GeneratorConfig& cfg,
                                  int site) {
  if (site < 0 || site >= cfg.num_sites()) throw std::out_of_range("site out of range");
  if (cfg.norm_at(site) != NormKind::AdaIN)
    throw WrongNormKind("bias scatter needs an AdaIN site");
  const auto& st = p.sites[static_cast<std::size_t>(site)].style;
  std::vector<BiasRow> rows;
  for (Index c = 0; c < st.b_mu.size(); ++c)
    rows.push_back({static_cast<int>(c), std::abs(static_cast<double>(st.b_mu[c])),
                    std::abs(static_cast<double>(st.b_sigma[c]))});
  return rows;
}

// Post-norm activation of every channel at one pixel.
template <typename Scalar>
std::vector<Scalar> channel_profile(const SynthesisTrace<Scalar>& trace, int site, Index h,
                                    Index w) {
  const Tensor<Scalar>& t = trace.at(site, Stage::PostNorm);
  if (h < 0 || h >= t.height() || w < 0 || w >= t.width())
    throw std::out_of_range("pixel (" + std::to_string(h) + "," + std::to_string(w) +
                            ") outside " + shape_string(t.shape()));
  std::vector<Scalar> out;
  for (Index c = 0; c < t.channels(); ++c) out.push_back(t(c, h, w));
  return out;
}

}  // namespace pinlab
