#include "pinlab/amplification.hpp"

#include "pinlab/normalization.hpp"
#include "pinlab/random.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace pinlab {

Index RegionSpec::high_count() const {
  return static_cast<Index>(std::llround(alpha * static_cast<double>(l * l)));
}

void RegionSpec::validate() const {
  if (!(alpha > 0.0 && alpha <= 0.5)) throw InvalidRegion("alpha must lie in (0, 0.5]");
  if (!(mu1 > 0.0) || !(mu2 >= 0.0)) throw InvalidRegion("mu1 must be positive and mu2 non-negative");
  if (!(sigma1 >= 0.0) || !(sigma2 >= 0.0)) throw InvalidRegion("sigma1, sigma2 must be >= 0");
  if (l < 1) throw InvalidRegion("l must be positive");
  if (high_count() < 1) throw InvalidRegion("alpha * l^2 rounds to zero pixels");
}

MixtureStats mixture_stats(const RegionSpec& r) {
  r.validate();
  const double a = r.alpha, d = r.mu1 - r.mu2;
  return {a * r.mu1 + (1.0 - a) * r.mu2,
          r.sigma1 * r.sigma1 * a + r.sigma2 * r.sigma2 * (1.0 - a) + a * (1.0 - a) * d * d};
}

double post_in_mean_exact(const RegionSpec& r) {
  const MixtureStats s = mixture_stats(r);
  if (!(s.sigma2 > 0.0)) throw DegenerateMixture("mixture variance is zero");
  return (1.0 - r.alpha) * (r.mu1 - r.mu2) / std::sqrt(s.sigma2);
}

double post_in_mean_approx(double alpha) {
  if (!(alpha > 0.0 && alpha <= 0.5)) throw InvalidRegion("alpha must lie in (0, 0.5]");
  return std::sqrt((1.0 - alpha) / alpha);
}

namespace {

double positive_normal(std::mt19937_64& rng, double mean, double stdev) {
  if (stdev == 0.0) return mean;
  std::normal_distribution<double> dist(mean, stdev);
  for (;;) {
    const double v = dist(rng);
    if (v > 0.0) return v;
  }
}

}  // namespace

PlantedMap plant_map(const RegionSpec& r, std::uint64_t seed, Placement shape) {
  r.validate();
  const Index n = r.l * r.l, n1 = r.high_count();
  if (n1 > n) throw InvalidRegion("high-magnitude region larger than the map");

  std::mt19937_64 values(mix_seed(seed, 0x616d70));
  std::vector<double> high(static_cast<std::size_t>(n1)), low(static_cast<std::size_t>(n - n1));
  for (double& v : high) v = positive_normal(values, r.mu1, r.sigma1);
  for (double& v : low) v = positive_normal(values, r.mu2, r.sigma2);

  std::mt19937_64 place(mix_seed(seed, 0x706c61));
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  if (shape == Placement::Scattered) {
    std::shuffle(order.begin(), order.end(), place);
  } else {
    std::uniform_real_distribution<double> pos(0.0, static_cast<double>(r.l));
    const double cy = pos(place), cx = pos(place);
    auto dist2 = [&](Index i) {
      const double dy = static_cast<double>(i / r.l) + 0.5 - cy;
      const double dx = static_cast<double>(i % r.l) + 0.5 - cx;
      return dy * dy + dx * dx;
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return dist2(a) < dist2(b); });
  }

  PlantedMap m{Tensor<double>({1, r.l, r.l}), std::vector<bool>(static_cast<std::size_t>(n))};
  for (Index k = 0; k < n; ++k) {
    const Index px = order[static_cast<std::size_t>(k)];
    if (k < n1) {
      m.map[px] = high[static_cast<std::size_t>(k)];
      m.mask1[static_cast<std::size_t>(px)] = true;
    } else {
      m.map[px] = low[static_cast<std::size_t>(k - n1)];
    }
  }
  return m;
}

MixtureStats map_stats(const PlantedMap& m) {
  const InstanceStats<double> s = instance_stats(m.map);
  return {s.mu[0], s.sigma2[0]};
}

double empirical_post_in_mean(const PlantedMap& m, double eps) {
  const Tensor<double> y = instance_norm(m.map, eps).y;
  double acc = 0.0;
  Index count = 0;
  for (Index i = 0; i < y.size(); ++i)
    if (m.mask1[static_cast<std::size_t>(i)]) {
      acc += y[i];
      ++count;
    }
  return count ? acc / static_cast<double>(count) : 0.0;
}

std::vector<SweepRow> amplification_sweep(std::span<const double> alphas, const RegionSpec& tmpl,
                                          int seeds, Placement shape) {
  if (seeds < 1) throw InvalidRegion("sweep needs at least one seed");
  std::vector<SweepRow> rows;
  for (double a : alphas) {
    RegionSpec r = tmpl;
    r.alpha = a;
    SweepRow row{a, post_in_mean_exact(r), post_in_mean_approx(a), 0.0, 0.0, seeds};
    std::vector<double> samples;
    for (int s = 0; s < seeds; ++s)
      samples.push_back(empirical_post_in_mean(plant_map(r, static_cast<std::uint64_t>(s), shape)));
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / seeds;
    double ss = 0.0;
    for (double v : samples) ss += (v - mean) * (v - mean);
    row.empirical_mean = mean;
    row.empirical_stderr = seeds > 1 ? std::sqrt(ss / (seeds - 1)) / std::sqrt(double(seeds)) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream os;
  os << "alpha,exact,approx,empirical_mean,empirical_stderr,n_seeds\n";
  os << std::setprecision(10);
  for (const SweepRow& r : rows)
    os << r.alpha << ',' << r.exact << ',' << r.approx << ',' << r.empirical_mean << ','
       << r.empirical_stderr << ',' << r.n_seeds << '\n';
  return os.str();
}

}  // namespace pinlab
