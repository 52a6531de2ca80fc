#pragma once

#include "pinlab/tensor.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pinlab {

struct InvalidRegion : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DegenerateMixture : std::domain_error {
  using std::domain_error::domain_error;
};

// An l x l magnitude map split into a high-magnitude set S1 holding a fraction
// alpha of the pixels and the low-magnitude remainder S2.
struct RegionSpec {
  double alpha = 0.5;
  double mu1 = 1.0;
  double sigma1 = 0.0;
  double mu2 = 0.1;
  double sigma2 = 0.0;
  Index l = 16;

  Index high_count() const;  // round(alpha * l^2)
  void validate() const;
};

struct MixtureStats {
  double mu = 0.0;
  double sigma2 = 0.0;
};

enum class Placement { Disc, Scattered };

struct PlantedMap {
  Tensor<double> map;        // [1, l, l]
  std::vector<bool> mask1;   // row-major, true for S1 pixels
};

// Overall mean and variance of the two-set mixture.
MixtureStats mixture_stats(const RegionSpec& r);

// Mean post-IN value of S1: (1-alpha)(mu1-mu2)/sigma. Throws DegenerateMixture
// when sigma == 0.
double post_in_mean_exact(const RegionSpec& r);

// sqrt((1-alpha)/alpha), the |mu2| << |mu1|, sigma1,sigma2 << |mu1| limit.
double post_in_mean_approx(double alpha);

// Deterministic per seed. S1 magnitudes ~ N(mu1, sigma1), S2 ~ N(mu2, sigma2),
// both resampled until positive. S1 and S2 values are drawn from one stream
// and placement from another, so Disc and Scattered maps for the same seed
// hold identical value multisets.
PlantedMap plant_map(const RegionSpec& r, std::uint64_t seed, Placement shape);

// Population mean and variance over all pixels of the map.
MixtureStats map_stats(const PlantedMap& m);

// Instance-normalizes the map and averages the result over S1.
double empirical_post_in_mean(const PlantedMap& m, double eps = 1e-12);

struct SweepRow {
  double alpha = 0.0;
  double exact = 0.0;
  double approx = 0.0;
  double empirical_mean = 0.0;
  double empirical_stderr = 0.0;
  int n_seeds = 0;
};

// One row per alpha; the empirical column averages empirical_post_in_mean over
// seeds 0..seeds-1.
std::vector<SweepRow> amplification_sweep(std::span<const double> alphas, const RegionSpec& tmpl,
                                          int seeds, Placement shape = Placement::Scattered);

// alpha,exact,approx,empirical_mean,empirical_stderr,n_seeds
std::string sweep_csv(std::span<const SweepRow> rows);

}  // namespace pinlab
