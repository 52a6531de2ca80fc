// pinlab: amplification sweeps, synthesis, dissection and training from the
// command line. Exit codes: 0 success, 1 usage, 2 runtime failure.

#include "pinlab/amplification.hpp"
#include "pinlab/config.hpp"
#include "pinlab/image_io.hpp"
#include "pinlab/training.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace pinlab;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& flag) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError(flag + ": not a number: \"" + s + "\"");
}

int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError(what + ": not an integer: \"" + s + "\"");
}

// "site:channel,site:channel"; empty means no ablation.
AblationMask parse_mask(const std::string& text, const GeneratorConfig& cfg) {
  AblationMask m;
  if (text.empty()) return m;
  for (const std::string& item : split(text, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos || item.find(':', colon + 1) != std::string::npos)
      throw UsageError("--mask: expected site:channel, got \"" + item + "\"");
    m.add({parse_int(item.substr(0, colon), "--mask site"),
           parse_int(item.substr(colon + 1), "--mask channel")});
  }
  try {
    m.validate(cfg);
  } catch (const std::exception& e) {
    throw UsageError(std::string("--mask: ") + e.what());
  }
  return m;
}

std::string mask_string(const AblationMask& m) {
  std::string s;
  for (const auto& u : m.units) {
    if (!s.empty()) s += ' ';
    s += std::to_string(u.site) + ":" + std::to_string(u.channel);
  }
  return s;
}

// Options shared by the generator-facing commands.
struct Common {
  std::string config;
  std::string out_dir;
  std::optional<double> detect_k;

  RunConfig load() const {
    RunConfig rc;
    if (!config.empty()) rc = load_run_config(config);
    if (!out_dir.empty()) rc.out_dir = out_dir;
    if (detect_k) {
      if (!(*detect_k > 0.0)) throw UsageError("--detect-k must be positive");
      rc.detect_k = *detect_k;
    }
    return rc;
  }
};

fs::path prepare_out_dir(const RunConfig& rc) {
  fs::path p(rc.out_dir);
  fs::create_directories(p);
  return p;
}

GeneratorParams<float> load_generator(const RunConfig& rc, const std::string& ckpt) {
  if (ckpt.empty()) return init_generator<float>(rc.generator);
  return generator_from_checkpoint(load_checkpoint(ckpt), rc.generator);
}

// image.ppm, per-site/stage panels with min/max sidecars, final-site regions
// and overlay.
void write_synthesis(const fs::path& dir, const std::string& prefix, const RunConfig& rc,
                     const Synthesis<float>& s) {
  write_file((dir / (prefix + "image.ppm")).string(), encode_ppm(s.image));
  for (const auto& rec : s.trace.records) {
    std::string name = prefix + "site" + std::to_string(rec.site) + "_" + std::string(stage_name(rec.stage));
    auto panel = trace_panel(rec.value);
    write_file((dir / (name + ".pgm")).string(), encode_pgm(panel.pixels, panel.height, panel.width));
    write_file((dir / (name + ".csv")).string(), panel_ranges_csv(panel));
  }
  const int fsite = rc.generator.final_site();
  const auto& post = s.trace.at(fsite, Stage::PostNorm);
  auto rep = detect_regions(s.trace, fsite, rc.detect_k);
  write_file((dir / (prefix + "regions.csv")).string(), regions_csv({rep}));
  auto overlay = region_overlay(magnitude_map(post), rep, 4);
  write_file((dir / (prefix + "overlay.pgm")).string(),
             encode_pgm(overlay, rep.height * 4, rep.width * 4));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pinlab: normalization artifacts in style-based generators"};
  app.require_subcommand(1);

  // amplify ------------------------------------------------------------------
  auto* amp = app.add_subcommand("amplify", "Sweep the post-normalization amplification of a planted region");
  std::string alphas_text, amp_out, amp_shape = "scattered";
  RegionSpec tmpl;
  int amp_seeds = 8;
  amp->add_option("--alphas", alphas_text, "Comma-separated alpha values in (0, 0.5]")->required();
  amp->add_option("--mu1", tmpl.mu1, "Mean magnitude of the high set")->capture_default_str();
  amp->add_option("--mu2", tmpl.mu2, "Mean magnitude of the low set")->capture_default_str();
  amp->add_option("--sigma1", tmpl.sigma1, "Std of the high set")->capture_default_str();
  amp->add_option("--sigma2", tmpl.sigma2, "Std of the low set")->capture_default_str();
  amp->add_option("--l", tmpl.l, "Map side length")->required();
  amp->add_option("--seeds", amp_seeds, "Planted maps per alpha")->capture_default_str();
  amp->add_option("--shape", amp_shape, "disc or scattered")->capture_default_str();
  amp->add_option("--out", amp_out, "Output CSV (stdout when omitted)");

  // synth / ablate / dissect ---------------------------------------------------
  Common gen_opts;
  std::string ckpt, mask_text;
  std::uint64_t z_seed = 0, noise_seed = 0;
  int dissect_site = -1, dissect_steps = 3;
  std::string noise_seeds_text;
  auto add_gen = [&](CLI::App* c) {
    c->add_option("--config", gen_opts.config, "JSON run config");
    c->add_option("--ckpt", ckpt, "Checkpoint (default: fresh initialization)");
    c->add_option("--z-seed", z_seed, "Latent seed")->capture_default_str();
    c->add_option("--noise-seed", noise_seed, "Noise seed")->capture_default_str();
    c->add_option("--detect-k", gen_opts.detect_k, "Detector threshold k (median + k MAD)");
    c->add_option("--out-dir", gen_opts.out_dir, "Output directory (default: config out_dir)");
  };
  auto* synth = app.add_subcommand("synth", "Synthesize one image and dump its trace");
  add_gen(synth);
  auto* ablate = app.add_subcommand("ablate", "Synthesize with units zeroed");
  add_gen(ablate);
  ablate->add_option("--mask", mask_text, "Units to zero: site:channel[,site:channel...]");
  auto* dissect = app.add_subcommand("dissect", "Detect artifact regions and ablate their sources");
  add_gen(dissect);
  dissect->add_option("--mask", mask_text, "Units to zero before detection");
  dissect->add_option("--site", dissect_site, "Site for iterative ablation (default: 1)");
  dissect->add_option("--steps", dissect_steps, "Iterative ablation steps")->capture_default_str();
  dissect->add_option("--noise-seeds", noise_seeds_text,
                      "Comma-separated noise seeds for the resampling experiment");

  // train / rho-hist / compare ---------------------------------------------------
  Common train_opts;
  std::optional<int> steps_override;
  std::optional<std::uint64_t> seed_override;
  std::string resume, hist_ckpt, variants_text = "IN,PN,PIN";
  int bins = 10;
  auto add_train = [&](CLI::App* c) {
    c->add_option("--config", train_opts.config, "JSON run config");
    c->add_option("--steps", steps_override, "Override train.steps");
    c->add_option("--seed", seed_override, "Override train.seed");
    c->add_option("--out-dir", train_opts.out_dir, "Output directory (default: config out_dir)");
  };
  auto* trn = app.add_subcommand("train", "Train generator and discriminator");
  add_train(trn);
  trn->add_option("--resume", resume, "Continue from a training checkpoint");
  auto* hist = app.add_subcommand("rho-hist", "Histogram of PIN combination weights");
  hist->add_option("--config", train_opts.config, "JSON run config");
  hist->add_option("--ckpt", hist_ckpt, "Checkpoint (default: fresh initialization)");
  hist->add_option("--bins", bins, "Bins over [0,1]")->capture_default_str();
  hist->add_option("--out-dir", train_opts.out_dir, "Output directory (default: config out_dir)");
  auto* cmp = app.add_subcommand("compare", "Train IN / PN / PIN variants from shared seeds");
  add_train(cmp);
  cmp->add_option("--variants", variants_text, "Comma-separated subset of IN,PN,PIN")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  auto train_config = [&]() {
    RunConfig rc = train_opts.load();
    if (steps_override) rc.train.steps = *steps_override;
    if (seed_override) rc.train.seed = *seed_override;
    try {
      rc.train.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return rc;
  };

  try {
    if (*amp) {
      std::vector<double> alphas;
      for (const auto& a : split(alphas_text, ',')) alphas.push_back(parse_double(a, "--alphas"));
      if (alphas.empty()) throw UsageError("--alphas: no values");
      Placement shape;
      if (amp_shape == "disc") shape = Placement::Disc;
      else if (amp_shape == "scattered") shape = Placement::Scattered;
      else throw UsageError("--shape must be disc or scattered");
      if (amp_seeds < 1) throw UsageError("--seeds must be >= 1");
      try {
        for (double a : alphas) {
          RegionSpec r = tmpl;
          r.alpha = a;
          r.validate();
        }
      } catch (const InvalidRegion& e) {
        throw UsageError(e.what());
      }
      const std::string csv = sweep_csv(amplification_sweep(alphas, tmpl, amp_seeds, shape));
      if (amp_out.empty()) {
        std::cout << csv;
      } else {
        if (fs::path(amp_out).has_parent_path()) fs::create_directories(fs::path(amp_out).parent_path());
        write_file(amp_out, csv);
      }
      return 0;
    }

    if (*synth || *ablate || *dissect) {
      const RunConfig rc = gen_opts.load();
      const GeneratorConfig& cfg = rc.generator;
      const AblationMask mask = parse_mask(mask_text, cfg);
      if (*dissect && (dissect_steps < 1)) throw UsageError("--steps must be >= 1");
      if (*dissect && dissect_site < 0) dissect_site = 1;
      if (*dissect && dissect_site >= cfg.num_sites())
        throw UsageError("--site must be below " + std::to_string(cfg.num_sites()));
      std::vector<std::uint64_t> noise_seeds;
      if (!noise_seeds_text.empty())
        for (const auto& s : split(noise_seeds_text, ','))
          noise_seeds.push_back(static_cast<std::uint64_t>(parse_int(s, "--noise-seeds")));
      if (noise_seeds.size() == 1) throw UsageError("--noise-seeds needs at least two seeds");

      const auto params = load_generator(rc, ckpt);
      const auto z = sample_latent<float>(cfg, z_seed);
      const auto noise = NoiseInputs<float>::from_seed(cfg, noise_seed);
      const fs::path dir = prepare_out_dir(rc);

      if (*synth || *ablate) {
        write_synthesis(dir, "", rc, ablate_synthesize(z, noise, cfg, params, mask));
        return 0;
      }

      // dissect: detection on the (optionally masked) run, then iterative
      // ablation at --site on top of the mask.
      auto base = ablate_synthesize(z, noise, cfg, params, mask);
      write_synthesis(dir, "", rc, base);
      auto steps = iterative_ablation(z, noise, cfg, params, dissect_site, dissect_steps,
                                      rc.detect_k, mask);
      std::ostringstream os;
      os.precision(10);
      os << "step,ablated,n_regions,centroid_h,centroid_w,contrast\n";
      std::vector<ArtifactReport> reports;
      for (std::size_t i = 0; i < steps.size(); ++i) {
        const auto& rep = steps[i].report;
        os << i << ',' << mask_string(steps[i].mask) << ',' << rep.regions.size() << ',';
        if (!rep.empty())
          os << rep.regions[0].centroid_h << ',' << rep.regions[0].centroid_w << ',' << rep.regions[0].contrast;
        else
          os << ",,";
        os << '\n';
        reports.push_back(rep);
      }
      write_file((dir / "ablation.csv").string(), os.str());
      const auto last = ablate_synthesize(z, noise, cfg, params, steps.back().mask);
      write_file((dir / "ablated_image.ppm").string(), encode_ppm(last.image));
      if (!noise_seeds.empty()) {
        auto res = noise_resample_experiment(z, cfg, params, noise_seeds, rc.detect_k);
        write_file((dir / "noise_pairs.csv").string(), pair_distances_csv(res));
        write_file((dir / "noise_regions.csv").string(), regions_csv(res.reports));
      }
      return 0;
    }

    if (*trn) {
      const RunConfig rc = train_config();
      const fs::path dir = prepare_out_dir(rc);
      TrainState state = resume.empty() ? init_train_state(rc.train, rc.generator)
                                        : from_checkpoint(load_checkpoint(resume), rc.generator);
      write_file((dir / "config.json").string(), run_config_json(rc));
      TrainHooks hooks;
      hooks.diagnostic_path = (dir / "diagnostic.spck").string();
      hooks.on_step = [&](const TrainState& s, const MetricsRow& row) {
        if (row.amp_metric) {
          char name[32];
          std::snprintf(name, sizeof name, "ckpt_%06llu.spck", static_cast<unsigned long long>(s.step));
          save_checkpoint((dir / name).string(), to_checkpoint(s));
        }
      };
      TrainResult r;
      try {
        r = train(rc.train, rc.dataset, std::move(state), hooks);
      } catch (const TrainingDiverged& e) {
        std::cerr << "pinlab: " << e.what() << "\npinlab: diagnostic checkpoint written to "
                  << hooks.diagnostic_path << "\n";
        return 2;
      }
      write_file((dir / "metrics.csv").string(), metrics_csv(r.log));
      save_checkpoint((dir / "final.spck").string(), to_checkpoint(r.state));
      return 0;
    }

    if (*hist) {
      const RunConfig rc = train_opts.load();
      if (bins < 1) throw UsageError("--bins must be >= 1");
      const auto g = load_generator(rc, hist_ckpt);
      const fs::path dir = prepare_out_dir(rc);
      write_file((dir / "rho_hist.csv").string(), rho_histogram_csv(rho_histogram(rc.generator, g, bins)));
      return 0;
    }

    if (*cmp) {
      const RunConfig rc = train_config();
      std::vector<NormKind> variants;
      for (const auto& v : split(variants_text, ',')) {
        auto k = parse_norm_kind(v);
        if (!k || *k == NormKind::AdaIN) throw UsageError("--variants: expected IN, PN or PIN, got \"" + v + "\"");
        variants.push_back(*k);
      }
      if (variants.empty()) throw UsageError("--variants: no values");
      const fs::path dir = prepare_out_dir(rc);
      auto rows = variant_compare(variants, rc.train, rc.generator, rc.dataset, rc.detect_k);
      write_file((dir / "compare.csv").string(), variant_csv(rows));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::string tag = std::to_string(i) + "_" + std::string(norm_kind_name(rows[i].kind));
        write_file((dir / ("metrics_" + tag + ".csv")).string(), metrics_csv(rows[i].log));
        if (rows[i].kind == NormKind::PixelInstanceStyle)
          write_file((dir / ("rho_hist_" + tag + ".csv")).string(),
                     rho_histogram_csv(rho_histogram(rows[i].state.gcfg, rows[i].state.g, 10)));
      }
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "pinlab: " << e.what() << "\n" << app.help() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "pinlab: config: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "pinlab: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
