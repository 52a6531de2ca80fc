#pragma once

#include "pinlab/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace pinlab {

inline constexpr double kDefaultDetectK = 8.0;

struct Region {
  double centroid_h = 0.0;
  double centroid_w = 0.0;
  std::vector<Index> pixels;  // row-major indices into the H x W map
  double peak = 0.0;
  double mean = 0.0;
  double contrast = 0.0;  // region mean / mean over unflagged pixels
};

struct ArtifactReport {
  int site = 0;
  Index height = 0;
  Index width = 0;
  double threshold = 0.0;
  std::vector<Region> regions;  // ranked by peak, highest first

  bool empty() const { return regions.empty(); }
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Cross-channel mean |activation| per pixel, as an H x W row-major map.
template <typename Scalar>
std::vector<double> magnitude_map(const Tensor<Scalar>& t) {
  const Index c = t.channels(), hw = t.height() * t.width();
  std::vector<double> m(static_cast<std::size_t>(hw), 0.0);
  for (Index k = 0; k < c; ++k)
    for (Index i = 0; i < hw; ++i) m[static_cast<std::size_t>(i)] += std::abs(double(t[k * hw + i]));
  for (double& v : m) v /= static_cast<double>(c);
  return m;
}

// Flags pixels above median + k * MAD and groups them into 4-connected
// components.
inline ArtifactReport detect_regions_in_map(const std::vector<double>& mag, Index h, Index w,
                                            double k = kDefaultDetectK) {
  ArtifactReport rep;
  rep.height = h;
  rep.width = w;
  const double med = median_of(mag);
  std::vector<double> dev(mag.size());
  for (std::size_t i = 0; i < mag.size(); ++i) dev[i] = std::abs(mag[i] - med);
  const double mad = median_of(dev);
  rep.threshold = med + k * mad;

  std::vector<int> label(mag.size(), -1);
  std::vector<bool> flagged(mag.size());
  double rest_sum = 0.0;
  Index rest_n = 0;
  for (std::size_t i = 0; i < mag.size(); ++i) {
    flagged[i] = mag[i] > rep.threshold;
    if (!flagged[i]) {
      rest_sum += mag[i];
      ++rest_n;
    }
  }
  const double rest_mean = rest_n ? rest_sum / static_cast<double>(rest_n) : 0.0;

  for (Index start = 0; start < h * w; ++start) {
    const auto s = static_cast<std::size_t>(start);
    if (!flagged[s] || label[s] >= 0) continue;
    Region r;
    std::vector<Index> stack{start};
    label[s] = static_cast<int>(rep.regions.size());
    while (!stack.empty()) {
      const Index p = stack.back();
      stack.pop_back();
      r.pixels.push_back(p);
      const Index y = p / w, x = p % w;
      const Index nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : nb) {
        if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
        const auto q = static_cast<std::size_t>(n[0] * w + n[1]);
        if (flagged[q] && label[q] < 0) {
          label[q] = label[s];
          stack.push_back(static_cast<Index>(q));
        }
      }
    }
    std::sort(r.pixels.begin(), r.pixels.end());
    double sum = 0.0, sh = 0.0, sw = 0.0;
    for (Index p : r.pixels) {
      const double v = mag[static_cast<std::size_t>(p)];
      sum += v;
      r.peak = std::max(r.peak, v);
      sh += static_cast<double>(p / w);
      sw += static_cast<double>(p % w);
    }
    const double n = static_cast<double>(r.pixels.size());
    r.mean = sum / n;
    r.centroid_h = sh / n;
    r.centroid_w = sw / n;
    r.contrast = rest_mean > 0.0 ? r.mean / rest_mean : std::numeric_limits<double>::infinity();
    rep.regions.push_back(std::move(r));
  }
  std::stable_sort(rep.regions.begin(), rep.regions.end(),
                   [](const Region& a, const Region& b) { return a.peak > b.peak; });
  return rep;
}

// Runs the detector on the post-norm stage of a traced site.
template <typename Scalar>
ArtifactReport detect_regions(const SynthesisTrace<Scalar>& trace, int site,
                              double k = kDefaultDetectK) {
  const Tensor<Scalar>& t = trace.at(site, Stage::PostNorm);
  ArtifactReport rep = detect_regions_in_map(magnitude_map(t), t.height(), t.width(), k);
  rep.site = site;
  return rep;
}

inline double centroid_distance(const Region& a, const Region& b) {
  return std::hypot(a.centroid_h - b.centroid_h, a.centroid_w - b.centroid_w);
}

// site,region_id,centroid_h,centroid_w,n_pixels,peak,mean,contrast
inline std::string regions_csv(const std::vector<ArtifactReport>& reports) {
  std::ostringstream os;
  os.precision(10);
  os << "site,region_id,centroid_h,centroid_w,n_pixels,peak,mean,contrast\n";
  for (const auto& rep : reports)
    for (std::size_t i = 0; i < rep.regions.size(); ++i) {
      const Region& r = rep.regions[i];
      os << rep.site << ',' << i << ',' << r.centroid_h << ',' << r.centroid_w << ','
         << r.pixels.size() << ',' << r.peak << ',' << r.mean << ',' << r.contrast << '\n';
    }
  return os.str();
}

// ---------------------------------------------------------------------------
// Ablation procedures
// ---------------------------------------------------------------------------

template <typename Scalar>
Synthesis<Scalar> ablate_synthesize(const Tensor<Scalar>& z, const NoiseInputs<Scalar>& noise,
                                    const GeneratorConfig& cfg,
                                    const GeneratorParams<Scalar>& params,
                                    const AblationMask& mask) {
  return synthesize(z, noise, cfg, params, mask);
}

struct AblationStep {
  AblationMask mask;
  ArtifactReport report;  // at the final site, after applying mask
};

// Entry 0 is the run with only `initial` ablated. Each further step takes the top region at the
// final site (the whole map when nothing is detected), scores every
// not-yet-ablated unit at `site` by mean |post-conv| over that region mapped to
// the site's resolution, ablates the best (lowest channel wins ties) and
// re-synthesizes.
template <typename Scalar>
std::vector<AblationStep> iterative_ablation(const Tensor<Scalar>& z,
                                             const NoiseInputs<Scalar>& noise,
                                             const GeneratorConfig& cfg,
                                             const GeneratorParams<Scalar>& params, int site,
                                             int steps, double k = kDefaultDetectK,
                                             const AblationMask& initial = {}) {
  if (steps < 1) throw std::invalid_argument("iterative_ablation needs steps >= 1");
  if (site < 0 || site >= cfg.num_sites()) throw std::out_of_range("site out of range");
  const int final_site = cfg.final_site();
  const Index rf = cfg.site_resolution(final_site), rs = cfg.site_resolution(site);

  std::vector<AblationStep> out;
  AblationMask mask = initial;
  Synthesis<Scalar> run = synthesize(z, noise, cfg, params, mask);
  out.push_back({mask, detect_regions(run.trace, final_site, k)});

  for (int step = 0; step < steps; ++step) {
    const ArtifactReport& last = out.back().report;
    std::set<Index> px;
    if (last.empty()) {
      for (Index i = 0; i < rs * rs; ++i) px.insert(i);
    } else {
      for (Index p : last.regions.front().pixels)
        px.insert(((p / rf) * rs / rf) * rs + (p % rf) * rs / rf);
    }
    const Tensor<Scalar>& conv = run.trace.at(site, Stage::PostConv);
    int best = -1;
    double best_score = -1.0;
    for (int c = 0; c < cfg.site_channels(site); ++c) {
      if (mask.contains({site, c})) continue;
      double acc = 0.0;
      for (Index p : px) acc += std::abs(double(conv[c * rs * rs + p]));
      const double score = acc / static_cast<double>(px.size());
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    if (best < 0) break;  // every unit at the site is already ablated
    mask.add({site, best});
    run = synthesize(z, noise, cfg, params, mask);
    out.push_back({mask, detect_regions(run.trace, final_site, k)});
  }
  return out;
}

// Ablates every unit at `site` except `channel`.
template <typename Scalar>
Synthesis<Scalar> keep_one_unit(const Tensor<Scalar>& z, const NoiseInputs<Scalar>& noise,
                                const GeneratorConfig& cfg, const GeneratorParams<Scalar>& params,
                                int site, int channel) {
  if (site < 0 || site >= cfg.num_sites() || channel < 0 || channel >= cfg.site_channels(site))
    throw std::out_of_range("unit outside the generator");
  AblationMask mask;
  for (int c = 0; c < cfg.site_channels(site); ++c)
    if (c != channel) mask.add({site, c});
  return synthesize(z, noise, cfg, params, mask);
}

struct PairDistance {
  std::size_t a;
  std::size_t b;
  // Distance between the top-region centroids; 0 when both runs report no
  // region, empty when only one does.
  std::optional<double> distance;
};

struct NoiseResampleResult {
  std::vector<std::uint64_t> seeds;
  std::vector<ArtifactReport> reports;
  std::vector<PairDistance> pairs;
};

// Same z, one synthesis per noise seed; regions at the final post-norm site.
template <typename Scalar>
NoiseResampleResult noise_resample_experiment(const Tensor<Scalar>& z, const GeneratorConfig& cfg,
                                              const GeneratorParams<Scalar>& params,
                                              const std::vector<std::uint64_t>& noise_seeds,
                                              double k = kDefaultDetectK) {
  if (noise_seeds.size() < 2) throw std::invalid_argument("noise resampling needs >= 2 seeds");
  NoiseResampleResult res;
  res.seeds = noise_seeds;
  for (std::uint64_t s : noise_seeds) {
    auto run = synthesize(z, NoiseInputs<Scalar>::from_seed(cfg, s), cfg, params);
    res.reports.push_back(detect_regions(run.trace, cfg.final_site(), k));
  }
  for (std::size_t i = 0; i < res.reports.size(); ++i)
    for (std::size_t j = i + 1; j < res.reports.size(); ++j) {
      const auto& ri = res.reports[i];
      const auto& rj = res.reports[j];
      PairDistance d{i, j, std::nullopt};
      if (ri.empty() && rj.empty())
        d.distance = 0.0;
      else if (!ri.empty() && !rj.empty())
        d.distance = centroid_distance(ri.regions.front(), rj.regions.front());
      res.pairs.push_back(d);
    }
  return res;
}

// seed_a,seed_b,distance (empty when undefined)
inline std::string pair_distances_csv(const NoiseResampleResult& r) {
  std::ostringstream os;
  os.precision(10);
  os << "seed_a,seed_b,distance\n";
  for (const auto& p : r.pairs) {
    os << r.seeds[p.a] << ',' << r.seeds[p.b] << ',';
    if (p.distance) os << *p.distance;
    os << '\n';
  }
  return os.str();
}

}  // namespace pinlab
