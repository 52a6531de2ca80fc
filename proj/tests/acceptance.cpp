// Acceptance suite. Prints one PASS/FAIL line per criterion; exits nonzero if
// any criterion fails.

#include "pinlab/amplification.hpp"
#include "pinlab/checkpoint.hpp"
#include "pinlab/dissect.hpp"
#include "pinlab/generator.hpp"
#include "pinlab/gradcheck.hpp"
#include "pinlab/normalization.hpp"
#include "pinlab/ops.hpp"
#include "pinlab/training.hpp"
#include "scenario.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

using namespace pinlab;
using pinlab::testing::random_tensor;

namespace {

// Collects failed checks for one criterion.
struct Check {
  std::vector<std::string> failures;
  std::ostringstream info;

  void require(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

using Clock = std::chrono::steady_clock;

bool run_criterion(int id, const std::string& name, double budget_s,
                   const std::function<void(Check&)>& body) {
  Check c;
  const auto t0 = Clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.failures.push_back(std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (budget_s > 0 && secs >= budget_s) {
    std::ostringstream os;
    os << "runtime " << secs << " s over budget " << budget_s << " s";
    c.failures.push_back(os.str());
  }
  const bool ok = c.failures.empty();
  std::printf("%s %d %s (%.2f s)%s%s\n", ok ? "PASS" : "FAIL", id, name.c_str(), secs,
              c.info.str().empty() ? "" : " ", c.info.str().c_str());
  for (const auto& f : c.failures) std::printf("    - %s\n", f.c_str());
  std::fflush(stdout);
  return ok;
}

std::vector<double> alpha_grid(int n) {
  std::vector<double> a(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) a[static_cast<std::size_t>(i)] = 0.01 + 0.49 * i / (n - 1);
  return a;
}

Var<double> project(const Var<double>& y, std::uint64_t seed) {
  return sum(mul(y, y.tape().constant(random_tensor<double>(y.shape(), seed))));
}

// 1 ------------------------------------------------------------------------
void closed_form_vs_brute_force(Check& c) {
  // alpha * l^2 integral so the planted S1 fraction is exactly alpha
  std::vector<RegionSpec> specs;
  for (Index k : {41, 123, 287, 512, 819, 1024, 1434, 1638, 1843, 2048})
    specs.push_back({static_cast<double>(k) / 4096.0, 3.0, 0.0, 0.4, 0.0, 64});
  for (Index k : {3, 8, 16, 26, 40, 64, 77, 96, 115, 128})
    specs.push_back({static_cast<double>(k) / 256.0, 1.0, 0.0, 0.02, 0.0, 16});
  double worst = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const RegionSpec& r = specs[i];
    const double exact = post_in_mean_exact(r);
    for (Placement shape : {Placement::Disc, Placement::Scattered}) {
      const double emp = empirical_post_in_mean(plant_map(r, i, shape));
      worst = std::max(worst, std::abs(emp - exact));
    }
  }
  c.info << "specs=" << specs.size() << " max|exact-empirical|=" << worst;
  c.require(worst < 1e-6, "closed form and brute force differ by more than 1e-6");
}

// 2 ------------------------------------------------------------------------
void approximation_regime(Check& c) {
  double worst = 0.0;
  const double mu1 = 50.0;
  for (double mu2_frac : {0.0, 0.001, 0.005, 0.01})
    for (double s1_frac : {0.0, 0.005, 0.01})
      for (double s2_frac : {0.0, 0.01})
        for (double a : alpha_grid(50)) {
          RegionSpec r{a, mu1, s1_frac * mu1, mu2_frac * mu1, s2_frac * mu1, 64};
          const double exact = post_in_mean_exact(r);
          worst = std::max(worst, std::abs(post_in_mean_approx(a) - exact) / exact);
        }
  const double at = post_in_mean_approx(0.01);
  c.info << "max rel err=" << worst << " approx(0.01)=" << at;
  c.require(worst < 0.05, "approximation off by 5% or more");
  c.require(std::abs(at - 9.94987) <= 1e-4, "approx(0.01) != 9.94987");
}

// 3 ------------------------------------------------------------------------
void monotone_amplification(Check& c) {
  int checked = 0;
  for (double s : {0.0, 0.5, 2.0}) {
    const double mu2 = 0.3;
    double prev = std::numeric_limits<double>::infinity();
    for (double a : alpha_grid(50)) {
      const double v = post_in_mean_exact({a, 100.0 * mu2, s, mu2, s, 32});
      c.require(v < prev, "exact not strictly decreasing at alpha=" + std::to_string(a));
      prev = v;
      ++checked;
    }
  }
  c.info << "points=" << checked;
}

// 4 ------------------------------------------------------------------------
void normalization_identities(Check& c) {
  double worst_mean = 0.0, worst_rms = 0.0, worst_scale = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Index ch = 2 + static_cast<Index>(seed % 7);
    const Index h = 2 + static_cast<Index>(seed % 5), w = 3 + static_cast<Index>(seed % 4);
    auto x = random_tensor<float>({ch, h, w}, seed, -5, 5);
    auto yi = instance_norm(x).y;
    auto yp = pixel_norm(x);
    c.require(pin(x, PinParams<float>{Tensor<float>({ch}, 0.0f)}) == yi, "PIN(rho=0) != IN");
    c.require(pin(x, PinParams<float>{Tensor<float>({ch}, 1.0f)}) == yp, "PIN(rho=1) != PN");

    auto s = instance_stats(yi);
    for (Index k = 0; k < ch; ++k) worst_mean = std::max(worst_mean, std::abs(double(s.mu[k])));

    const Index hw = h * w;
    for (Index p = 0; p < hw; ++p) {
      double ms = 0;
      for (Index k = 0; k < ch; ++k) ms += double(yp[k * hw + p]) * yp[k * hw + p];
      worst_rms = std::max(worst_rms, std::sqrt(ms / ch));
    }

    Tensor<float> kx = x;
    kx.array() *= 0.25f + 0.05f * static_cast<float>(seed);
    worst_scale = std::max(worst_scale, double(max_abs_diff(instance_norm(kx).y, yi)));
  }
  c.info << "max|IN mean|=" << worst_mean << " max PN rms=" << worst_rms
         << " max IN scale diff=" << worst_scale;
  c.require(worst_mean < 1e-5, "IN channel mean not below 1e-5");
  c.require(worst_rms <= 1.0 + 1e-6, "PN per-pixel RMS above 1");
  c.require(worst_scale < 1e-5, "IN not scale covariant to 1e-5");
}

// 5 ------------------------------------------------------------------------
GeneratorConfig small_generator(NormKind kind, int res) {
  GeneratorConfig cfg;
  cfg.max_resolution = res;
  cfg.channels = {{4, 4}, {8, 3}, {16, 3}};
  cfg.latent_dim = 5;
  cfg.mapping_layers = 2;
  cfg.norm_kinds = {kind};
  cfg.seed = 7;
  return cfg;
}

void gradient_suite(Check& c) {
  const std::vector<Shape> shapes = {{2, 3, 3}, {3, 4, 5}, {5, 2, 6}};
  double layer_worst = 0.0;
  auto layer = [&](const std::string& name, const GradCheckFn& f, std::vector<Tensor<double>> p) {
    const double e = check_gradients(f, std::move(p)).max_rel_error;
    layer_worst = std::max(layer_worst, e);
    c.require(e < 1e-4, name + " rel err " + std::to_string(e));
  };
  for (std::size_t s = 0; s < shapes.size(); ++s) {
    const Index ch = shapes[s][0];
    auto x = random_tensor<double>(shapes[s], 10 + s, -2, 2);
    const std::string tag = " shape " + std::to_string(s);
    layer("PN" + tag,
          [s](Tape<double>&, const std::vector<Var<double>>& p) {
            return project(pixel_norm(p[0]), 20 + s);
          },
          {x});
    layer("IN" + tag,
          [s](Tape<double>&, const std::vector<Var<double>>& p) {
            return project(instance_norm(p[0]), 30 + s);
          },
          {x});
    layer("PIN (x, rho)" + tag,
          [s](Tape<double>&, const std::vector<Var<double>>& p) {
            return project(pin(p[0], p[1]), 40 + s);
          },
          {x, random_tensor<double>({ch}, 50 + s, 0.1, 0.9)});
    layer("AdaIN (x, w, affine)" + tag,
          [s](Tape<double>&, const std::vector<Var<double>>& p) {
            StyleSourceVars<double> src{p[2], p[3], p[4], p[5]};
            return project(adain(p[0], p[1], src), 100 + s);
          },
          {x, random_tensor<double>({4}, 110 + s), random_tensor<double>({ch, 4}, 120 + s),
           random_tensor<double>({ch}, 130 + s), random_tensor<double>({ch, 4}, 140 + s),
           random_tensor<double>({ch}, 150 + s)});
    layer("conv3x3" + tag,
          [s](Tape<double>&, const std::vector<Var<double>>& p) {
            return project(conv3x3(p[0], p[1], p[2]), 160 + s);
          },
          {x, random_tensor<double>({2, ch, 3, 3}, 170 + s), random_tensor<double>({2}, 180 + s)});
    layer("noise scale" + tag,
          [s](Tape<double>&, const std::vector<Var<double>>& p) {
            return project(add_scaled_noise(p[0], p[1], p[2]), 190 + s);
          },
          {x, random_tensor<double>({1, shapes[s][1], shapes[s][2]}, 200 + s),
           random_tensor<double>({ch}, 210 + s)});
  }

  struct Case {
    NormKind kind;
    int res;
  };
  double e2e_worst = 0.0;
  for (Case k : {Case{NormKind::PixelInstanceStyle, 8}, Case{NormKind::AdaIN, 8},
                 Case{NormKind::InstanceStyle, 16}, Case{NormKind::PixelInstanceStyle, 16}}) {
    auto cfg = small_generator(k.kind, k.res);
    auto params = init_generator<double>(cfg);
    if (k.kind == NormKind::PixelInstanceStyle)
      for (auto& s : params.sites) s.rho = random_tensor<double>(s.rho->shape(), 9, 0.2, 0.8);
    std::vector<Tensor<double>> flat;
    params.visit([&](const std::string&, const Tensor<double>& t) { flat.push_back(t); });
    auto z = sample_latent<double>(cfg, 1);
    auto noise = NoiseInputs<double>::from_seed(cfg, 2);
    auto proj = random_tensor<double>({3, k.res, k.res}, 77);
    auto f = [&](Tape<double>& tape, const std::vector<Var<double>>& vars) {
      std::size_t i = 0;
      auto bound = map_params<Var<double>>(
          params, [&](const std::string&, const Tensor<double>&) { return vars[i++]; });
      auto out = synthesize(tape.constant(z), noise, cfg, bound);
      return scale(sum(mul(out.image, tape.constant(proj))), 1.0 / static_cast<double>(proj.size()));
    };
    GradCheckOptions opts;
    opts.coords_per_tensor = 20;
    opts.seed = 5;
    const double e = check_gradients(f, flat, opts).max_rel_error;
    e2e_worst = std::max(e2e_worst, e);
    c.require(e < 1e-3, "end-to-end generator rel err " + std::to_string(e));
  }
  c.info << "layer max rel err=" << layer_worst << " end-to-end max rel err=" << e2e_worst;
}

// 6 ------------------------------------------------------------------------
void generator_structure(Check& c) {
  for (int r : {8, 16, 32, 64}) {
    auto cfg = small_generator(NormKind::PixelInstanceStyle, r);
    cfg.channels[32] = 2;
    cfg.channels[64] = 2;
    const int expect = 2 * static_cast<int>(std::lround(std::log2(r / 4))) + 2;
    c.require(cfg.num_sites() == expect, "site count at R=" + std::to_string(r));
    auto s = synthesize(sample_latent<float>(cfg, 1), NoiseInputs<float>::from_seed(cfg, 1), cfg,
                        init_generator<float>(cfg));
    c.require(s.trace.records.size() == static_cast<std::size_t>(4 * expect),
              "trace record count at R=" + std::to_string(r));
    for (int site = 0; site < expect; ++site) {
      const Index res = cfg.site_resolution(site);
      for (Stage st : kAllStages)
        c.require(s.trace.at(site, st).shape() == Shape{cfg.site_channels(site), res, res},
                  "trace shape at R=" + std::to_string(r) + " site " + std::to_string(site));
    }
  }

  GeneratorConfig pin_cfg;
  pin_cfg.seed = 21;
  const GeneratorConfig in_cfg = pin_cfg.with_norm(NormKind::InstanceStyle);
  auto pin_params = init_generator<float>(pin_cfg);
  auto in_params = init_generator<float>(in_cfg);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto z = sample_latent<float>(pin_cfg, seed);
    auto n = NoiseInputs<float>::from_seed(pin_cfg, seed);
    c.require(synthesize(z, n, pin_cfg, pin_params).image == synthesize(z, n, in_cfg, in_params).image,
              "PIN(rho=0) generator differs from IN generator");
  }

  GeneratorConfig quiet;
  quiet.noise_enabled = false;
  auto qp = init_generator<float>(quiet);
  auto z = sample_latent<float>(quiet, 4);
  const auto ref = synthesize(z, NoiseInputs<float>::from_seed(quiet, 0), quiet, qp).image;
  for (std::uint64_t seed = 1; seed < 4; ++seed)
    c.require(synthesize(z, NoiseInputs<float>::from_seed(quiet, seed), quiet, qp).image == ref,
              "noiseless generator depends on noise seed");
  c.info << "R in {8,16,32,64}";
}

// 7 ------------------------------------------------------------------------
void artifact_scenario(Check& c) {
  auto sc = pinlab::testing::make_artifact_scenario();
  auto steps = iterative_ablation(sc.z, sc.noise, sc.cfg, sc.params, sc.boosted_site, 1);
  c.require(steps.size() == 2, "expected two ablation entries");
  if (steps.size() != 2 || steps[0].report.empty()) {
    c.require(false, "no region detected in the planted scenario");
    return;
  }
  const Region& before = steps[0].report.regions[0];
  c.info << "contrast=" << before.contrast;
  c.require(before.contrast > 5.0, "top region contrast not above 5");
  c.require(steps[1].mask.units == std::vector<UnitRef>{{sc.boosted_site, sc.boosted_channel}},
            "step 1 did not ablate the boosted unit");
  const auto& after = steps[1].report;
  if (after.empty()) {
    c.info << " after: no regions";
  } else {
    const double d = centroid_distance(before, after.regions[0]);
    c.info << " centroid shift=" << d;
    c.require(d >= 2.0, "region neither moved by 2 px nor removed");
  }

  // determinism
  auto again = iterative_ablation(sc.z, sc.noise, sc.cfg, sc.params, sc.boosted_site, 1);
  c.require(regions_csv({again[0].report, again[1].report}) ==
                regions_csv({steps[0].report, steps[1].report}),
            "scenario not deterministic");
}

// 8 ------------------------------------------------------------------------
void training_mechanics(Check& c) {
  const TrainConfig tc;  // defaults: 2000 steps
  const GeneratorConfig gc;
  const DatasetSpec data;
  const int n = 50, m = 50;

  auto s0 = init_train_state(tc, gc);
  std::string at_n, at_nm;
  bool finite = true, feasible = true;
  TrainHooks hooks;
  hooks.on_step = [&](const TrainState& s, const MetricsRow& row) {
    finite = finite && std::isfinite(row.d_loss) && std::isfinite(row.g_loss) &&
             (!row.amp_metric || std::isfinite(*row.amp_metric));
    for (const auto& site : s.g.sites)
      if (site.rho)
        feasible = feasible && site.rho->array().minCoeff() >= 0.0f &&
                   site.rho->array().maxCoeff() <= 1.0f;
    if (s.step == n) at_n = encode_checkpoint(to_checkpoint(s));
    if (s.step == n + m) at_nm = encode_checkpoint(to_checkpoint(s));
  };
  auto full = train(tc, data, s0, hooks);
  c.require(full.log.size() == static_cast<std::size_t>(tc.steps), "log length");
  c.require(finite, "non-finite loss");
  c.require(feasible, "rho left [0, 1]");

  // resume from the step-n checkpoint bytes and run m more steps
  TrainConfig short_cfg = tc;
  short_cfg.steps = n + m;
  auto resumed = train(short_cfg, data, from_checkpoint(decode_checkpoint(at_n), gc));
  c.require(encode_checkpoint(to_checkpoint(resumed.state)) == at_nm,
            "resumed state differs from uninterrupted run");
  std::vector<MetricsRow> ref(full.log.begin() + n, full.log.begin() + n + m);
  c.require(metrics_csv(resumed.log) == metrics_csv(ref), "resumed metrics differ");

  auto hist = rho_histogram(full.state.gcfg, full.state.g, 10);
  for (const auto& h : hist)
    c.require(std::accumulate(h.counts.begin(), h.counts.end(), Index{0}) == gc.site_channels(h.site),
              "histogram mass at site " + std::to_string(h.site));
  const auto& last = full.log.back();
  c.info << "final d_loss=" << last.d_loss << " g_loss=" << last.g_loss;
  if (last.amp_metric) c.info << " amp=" << *last.amp_metric;
}

// 9 ------------------------------------------------------------------------
void variant_comparison(Check& c) {
  TrainConfig tc;
  tc.steps = 20;
  tc.checkpoint_interval = 10;
  GeneratorConfig gc;
  DatasetSpec data;
  const std::vector<NormKind> kinds = {NormKind::InstanceStyle, NormKind::PixelStyle,
                                       NormKind::PixelInstanceStyle};
  auto a = variant_compare(kinds, tc, gc, data);
  auto b = variant_compare(kinds, tc, gc, data);
  const std::string table = variant_csv(a);
  c.require(table == variant_csv(b), "comparison table not deterministic");
  c.require(std::count(table.begin(), table.end(), '\n') == 4, "comparison table incomplete");
  c.require(table.find(",,") == std::string::npos && table.find(",\n") == std::string::npos,
            "comparison table has empty fields");
  for (std::size_t i = 0; i < a.size(); ++i) {
    c.require(metrics_csv(a[i].log) == metrics_csv(b[i].log), "metrics not deterministic");
    c.require(a[i].log.size() == static_cast<std::size_t>(tc.steps), "metrics log incomplete");
    c.require(std::isfinite(a[i].amp_metric), "non-finite amplification metric");
  }
  const auto& pin_state = a[2].state;
  const std::string hist = rho_histogram_csv(rho_histogram(pin_state.gcfg, pin_state.g, 10));
  c.require(hist == rho_histogram_csv(rho_histogram(b[2].state.gcfg, b[2].state.g, 10)),
            "rho histogram not deterministic");
  c.require(std::count(hist.begin(), hist.end(), '\n') == 1 + 10 * gc.num_sites(),
            "rho histogram incomplete");
  for (const auto& r : a) c.info << norm_kind_name(r.kind) << " amp=" << r.amp_metric << ' ';
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    const char* name;
    double budget_s;
    void (*body)(Check&);
  };
  const Criterion all[] = {
      {"closed form vs brute force", 5, closed_form_vs_brute_force},
      {"approximation regime", 0, approximation_regime},
      {"monotone amplification", 0, monotone_amplification},
      {"normalization identities", 10, normalization_identities},
      {"gradient suite", 0, gradient_suite},
      {"generator structure", 0, generator_structure},
      {"planted artifact scenario", 30, artifact_scenario},
      {"training mechanics", 15 * 60, training_mechanics},
      {"variant comparison", 0, variant_comparison},
  };
  // optional arguments pick criteria by number, e.g. `acceptance 1 7`
  std::vector<int> chosen;
  for (int i = 1; i < argc; ++i) chosen.push_back(std::atoi(argv[i]));
  if (chosen.empty())
    for (int i = 1; i <= 9; ++i) chosen.push_back(i);
  bool ok = true;
  for (int id : chosen) {
    if (id < 1 || id > 9) {
      std::fprintf(stderr, "no criterion %d\n", id);
      return 2;
    }
    const Criterion& cr = all[id - 1];
    ok &= run_criterion(id, cr.name, cr.budget_s, cr.body);
  }
  return ok ? 0 : 1;
}
