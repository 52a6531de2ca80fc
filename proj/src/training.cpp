#include "pinlab/training.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace pinlab {

namespace {

// Per-step random streams.
enum : std::uint64_t {
  kRealStream = 0x1000,
  kFakeZStream = 0x2000,
  kFakeNoiseStream = 0x3000,
  kGenZStream = 0x4000,
  kGenNoiseStream = 0x5000,
};

constexpr std::uint64_t kProbeStream = 0x70726f6265;  // "probe"
constexpr std::uint64_t kDiscStream = 0x64697363;     // "disc"

Var<float> batch_mean(std::vector<Var<float>> terms) {
  Var<float> acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scale(acc, 1.0f / static_cast<float>(terms.size()));
}

void check_finite_loss(double v, const char* which) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + which);
}

template <typename P>
void apply_updates(const TrainConfig& cfg, OptimizerState& opt, P& params, const P& grads,
                   std::uint64_t t) {
  std::map<std::string, const Tensor<float>*> g;
  grads.visit([&](const std::string& n, const Tensor<float>& x) { g[n] = &x; });
  params.visit([&](const std::string& n, Tensor<float>& x) {
    optimizer_update(cfg, opt, n, x, *g.at(n), t);
  });
}

}  // namespace

void TrainConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("learning rate must be positive");
  if (checkpoint_interval < 1) throw std::invalid_argument("checkpoint interval must be >= 1");
}

void optimizer_update(const TrainConfig& cfg, OptimizerState& state, const std::string& name,
                      Tensor<float>& param, const Tensor<float>& grad, std::uint64_t t) {
  if (grad.shape() != param.shape()) throw DimensionError("gradient shape mismatch for " + name);
  const float lr = static_cast<float>(cfg.learning_rate);
  if (cfg.optimizer == OptimizerKind::SGD) {
    param.array() -= lr * grad.array();
    return;
  }
  auto& m = state.m.try_emplace(name, Tensor<float>::zeros_like(param)).first->second.array();
  auto& v = state.v.try_emplace(name, Tensor<float>::zeros_like(param)).first->second.array();
  const float b1 = static_cast<float>(kAdamBeta1), b2 = static_cast<float>(kAdamBeta2);
  m = b1 * m + (1.0f - b1) * grad.array();
  v = b2 * v + (1.0f - b2) * grad.array().square();
  const float c1 = static_cast<float>(1.0 - std::pow(kAdamBeta1, static_cast<double>(t)));
  const float c2 = static_cast<float>(1.0 - std::pow(kAdamBeta2, static_cast<double>(t)));
  param.array() -= lr * (m / c1) / ((v / c2).sqrt() + static_cast<float>(kAdamEpsilon));
}

TrainState init_train_state(const TrainConfig& cfg, const GeneratorConfig& gcfg) {
  cfg.validate();
  TrainState s;
  s.gcfg = gcfg;
  s.g = init_generator<float>(gcfg);
  s.d = init_discriminator<float>(gcfg, mix_seed(cfg.seed, kDiscStream));
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoint mapping
// ---------------------------------------------------------------------------

TensorList to_checkpoint(const TrainState& s) {
  TensorList out;
  s.g.visit([&](const std::string& n, const Tensor<float>& t) { out.push_back({n, t}); });
  s.d.visit([&](const std::string& n, const Tensor<float>& t) { out.push_back({n, t}); });
  for (const auto& [n, t] : s.opt.m) out.push_back({"opt/m/" + n, t});
  for (const auto& [n, t] : s.opt.v) out.push_back({"opt/v/" + n, t});
  out.push_back({"meta/config_hash", pack_u64(generator_config_hash(s.gcfg))});
  out.push_back({"meta/step", pack_u64(s.step)});
  return out;
}

namespace {

void check_hash(const TensorList& tensors, const GeneratorConfig& gcfg) {
  const std::uint64_t stored = unpack_u64(find_tensor(tensors, "meta/config_hash"), "meta/config_hash");
  const std::uint64_t expected = generator_config_hash(gcfg);
  if (stored != expected) {
    std::ostringstream os;
    os << "checkpoint config hash " << std::hex << stored << " does not match config hash "
       << expected;
    throw ConfigMismatch(os.str());
  }
}

}  // namespace

GeneratorParams<float> generator_from_checkpoint(const TensorList& tensors,
                                                 const GeneratorConfig& gcfg) {
  check_hash(tensors, gcfg);
  GeneratorParams<float> shape_ref = init_generator<float>(gcfg);
  auto g = map_params<Tensor<float>>(shape_ref, [&](const std::string& n, const Tensor<float>&) {
    return find_tensor(tensors, n);
  });
  check_generator_params(gcfg, g);
  return g;
}

TrainState from_checkpoint(const TensorList& tensors, const GeneratorConfig& gcfg) {
  TrainState s;
  s.gcfg = gcfg;
  s.g = generator_from_checkpoint(tensors, gcfg);
  DiscriminatorParams<float> shape_ref = init_discriminator<float>(gcfg, 0);
  s.d = map_params<Tensor<float>>(shape_ref, [&](const std::string& n, const Tensor<float>&) {
    return find_tensor(tensors, n);
  });
  check_discriminator_params(gcfg, s.d);
  s.step = unpack_u64(find_tensor(tensors, "meta/step"), "meta/step");

  std::set<std::string> known;
  s.g.visit([&](const std::string& n, const Tensor<float>&) { known.insert(n); });
  s.d.visit([&](const std::string& n, const Tensor<float>&) { known.insert(n); });
  for (const auto& t : tensors) {
    if (t.name == "meta/step" || t.name == "meta/config_hash") continue;
    if (t.name.rfind("opt/m/", 0) == 0 || t.name.rfind("opt/v/", 0) == 0) {
      const std::string param = t.name.substr(6);
      if (!known.count(param)) throw CheckpointError("optimizer state for unknown tensor " + param);
      (t.name[4] == 'm' ? s.opt.m : s.opt.v)[param] = t.value;
      continue;
    }
    if (!known.count(t.name)) throw CheckpointError("unexpected tensor " + t.name);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

double amplification_metric(const GeneratorConfig& gcfg, const GeneratorParams<float>& g,
                            std::uint64_t probe_seed) {
  double acc = 0.0;
  for (int i = 0; i < kProbeBatch; ++i) {
    const std::uint64_t s = mix_seed(probe_seed, static_cast<std::uint64_t>(i));
    auto out = synthesize(sample_latent<float>(gcfg, s), NoiseInputs<float>::from_seed(gcfg, s),
                          gcfg, g);
    const auto m = magnitude_map(out.trace.at(gcfg.final_site(), Stage::PostNorm));
    const double med = median_of(m);
    const double mx = *std::max_element(m.begin(), m.end());
    acc += med > 0.0 ? mx / med : std::numeric_limits<double>::infinity();
  }
  return acc / kProbeBatch;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os.precision(9);
  os << "step,d_loss,g_loss,amp_metric\n";
  for (const auto& r : rows) {
    os << r.step << ',' << r.d_loss << ',' << r.g_loss << ',';
    if (r.amp_metric) os << *r.amp_metric;
    os << '\n';
  }
  return os.str();
}

namespace {

struct StepLosses {
  double d_loss;
  double g_loss;
};

StepLosses train_step(const TrainConfig& cfg, const DatasetSpec& data, TrainState& s) {
  const GeneratorConfig& gcfg = s.gcfg;
  const std::uint64_t step_seed = mix_seed(cfg.seed, s.step);
  const std::uint64_t t = s.step + 1;
  auto sub = [&](std::uint64_t stream, int b) {
    return mix_seed(step_seed, stream + static_cast<std::uint64_t>(b));
  };
  StepLosses out{};

  {  // discriminator
    Tape<float> tape;
    const auto gv = bind(tape, s.g, false);
    const auto dv = bind(tape, s.d, true);
    std::vector<Var<float>> terms;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Index idx = static_cast<Index>(sub(kRealStream, b) % static_cast<std::uint64_t>(data.n_images));
      const Var<float> real = tape.constant(dataset_image(data, idx));
      const std::uint64_t zs = sub(kFakeZStream, b), ns = sub(kFakeNoiseStream, b);
      const Var<float> fake =
          synthesize(tape.constant(sample_latent<float>(gcfg, zs)),
                     NoiseInputs<float>::from_seed(gcfg, ns), gcfg, gv)
              .image;
      terms.push_back(add(softplus(scale(discriminator_forward(real, dv), -1.0f)),
                          softplus(discriminator_forward(fake, dv))));
    }
    const Var<float> loss = batch_mean(std::move(terms));
    out.d_loss = loss.value()[0];
    check_finite_loss(out.d_loss, "discriminator loss");
    tape.backward(loss);
    apply_updates(cfg, s.opt, s.d, gradients(tape, dv), t);
  }

  {  // generator
    Tape<float> tape;
    const auto gv = bind(tape, s.g, true);
    const auto dv = bind(tape, s.d, false);
    std::vector<Var<float>> terms;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::uint64_t zs = sub(kGenZStream, b), ns = sub(kGenNoiseStream, b);
      const Var<float> fake =
          synthesize(tape.constant(sample_latent<float>(gcfg, zs)),
                     NoiseInputs<float>::from_seed(gcfg, ns), gcfg, gv)
              .image;
      terms.push_back(softplus(scale(discriminator_forward(fake, dv), -1.0f)));
    }
    const Var<float> loss = batch_mean(std::move(terms));
    out.g_loss = loss.value()[0];
    check_finite_loss(out.g_loss, "generator loss");
    tape.backward(loss);
    apply_updates(cfg, s.opt, s.g, gradients(tape, gv), t);
    for (auto& site : s.g.sites)
      if (site.rho) clip_rho_inplace(*site.rho);
  }
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const DatasetSpec& data, TrainState state,
                  const TrainHooks& hooks) {
  cfg.validate();
  data.validate();
  if (data.resolution != state.gcfg.max_resolution)
    throw ConfigMismatch("dataset resolution " + std::to_string(data.resolution) +
                         " != generator resolution " + std::to_string(state.gcfg.max_resolution));
  check_generator_params(state.gcfg, state.g);
  check_discriminator_params(state.gcfg, state.d);
  if (state.step > static_cast<std::uint64_t>(cfg.steps))
    throw std::invalid_argument("checkpoint is at step " + std::to_string(state.step) +
                                ", past the requested " + std::to_string(cfg.steps));

  const std::uint64_t probe_seed = mix_seed(cfg.seed, kProbeStream);
  TrainResult res;
  while (state.step < static_cast<std::uint64_t>(cfg.steps)) {
    TrainState before = state;
    StepLosses l;
    try {
      l = train_step(cfg, data, state);
    } catch (const NumericError& e) {
      if (!hooks.diagnostic_path.empty()) save_checkpoint(hooks.diagnostic_path, to_checkpoint(before));
      throw TrainingDiverged("training diverged at step " + std::to_string(before.step + 1) + ": " +
                                 e.what(),
                             std::move(before));
    }
    ++state.step;
    MetricsRow row{state.step, l.d_loss, l.g_loss, std::nullopt};
    if (state.step % static_cast<std::uint64_t>(cfg.checkpoint_interval) == 0)
      row.amp_metric = amplification_metric(state.gcfg, state.g, probe_seed);
    res.log.push_back(row);
    if (hooks.on_step) hooks.on_step(state, row);
  }
  res.state = std::move(state);
  return res;
}

// ---------------------------------------------------------------------------
// Analysis
// ---------------------------------------------------------------------------

std::vector<RhoHistogram> rho_histogram(const GeneratorConfig& gcfg,
                                        const GeneratorParams<float>& g, int bins) {
  if (bins < 1) throw std::invalid_argument("bins must be >= 1");
  std::vector<RhoHistogram> out;
  for (int s = 0; s < gcfg.num_sites(); ++s) {
    const auto& rho = g.sites.at(static_cast<std::size_t>(s)).rho;
    if (!rho) continue;
    RhoHistogram h{s, gcfg.site_resolution(s), std::vector<Index>(static_cast<std::size_t>(bins), 0)};
    for (Index i = 0; i < rho->size(); ++i) {
      const double v = (*rho)[i];
      if (!(v >= 0.0 && v <= 1.0)) throw std::domain_error("rho outside [0,1] at site " + std::to_string(s));
      const int b = std::min(bins - 1, static_cast<int>(std::floor(v * bins)));
      ++h.counts[static_cast<std::size_t>(b)];
    }
    out.push_back(std::move(h));
  }
  if (out.empty()) throw NoPinSites("rho histogram: generator has no PIN sites");
  return out;
}

std::string rho_histogram_csv(const std::vector<RhoHistogram>& hs) {
  std::ostringstream os;
  os.precision(9);
  os << "site,resolution,bin,bin_lo,bin_hi,count\n";
  for (const auto& h : hs) {
    const double n = static_cast<double>(h.counts.size());
    for (std::size_t b = 0; b < h.counts.size(); ++b)
      os << h.site << ',' << h.resolution << ',' << b << ',' << static_cast<double>(b) / n << ','
         << static_cast<double>(b + 1) / n << ',' << h.counts[b] << '\n';
  }
  return os.str();
}

std::vector<VariantResult> variant_compare(const std::vector<NormKind>& variants,
                                           const TrainConfig& cfg, const GeneratorConfig& gcfg,
                                           const DatasetSpec& data, double detect_k) {
  if (variants.empty()) throw std::invalid_argument("variant_compare needs at least one variant");
  std::vector<VariantResult> out;
  const std::uint64_t probe_seed = mix_seed(cfg.seed, kProbeStream);
  for (NormKind k : variants) {
    if (k == NormKind::AdaIN)
      throw WrongNormKind("variants must be IN, PN or PIN");
    const GeneratorConfig vc = gcfg.with_norm(k);
    TrainResult r = train(cfg, data, init_train_state(cfg, vc));
    VariantResult v;
    v.kind = k;
    v.amp_metric = amplification_metric(vc, r.state.g, probe_seed);
    if (!r.log.empty()) {
      v.final_d_loss = r.log.back().d_loss;
      v.final_g_loss = r.log.back().g_loss;
    }
    for (int i = 0; i < kProbeBatch; ++i) {
      const std::uint64_t s = mix_seed(probe_seed, static_cast<std::uint64_t>(i));
      auto syn = synthesize(sample_latent<float>(vc, s), NoiseInputs<float>::from_seed(vc, s), vc,
                            r.state.g);
      v.n_regions += static_cast<Index>(detect_regions(syn.trace, vc.final_site(), detect_k).regions.size());
    }
    v.log = std::move(r.log);
    v.state = std::move(r.state);
    out.push_back(std::move(v));
  }
  return out;
}

std::string variant_csv(const std::vector<VariantResult>& rows) {
  std::ostringstream os;
  os.precision(9);
  os << "variant,amp_metric,final_d_loss,final_g_loss,n_regions\n";
  for (const auto& r : rows)
    os << norm_kind_name(r.kind) << ',' << r.amp_metric << ',' << r.final_d_loss << ','
       << r.final_g_loss << ',' << r.n_regions << '\n';
  return os.str();
}

}  // namespace pinlab
