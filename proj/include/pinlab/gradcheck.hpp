#pragma once

#include "pinlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace pinlab {

// A scalar-valued composite built on a fresh tape from leaf variables bound to
// the supplied parameter tensors (same order).
using GradCheckFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  // 0 checks every coordinate; otherwise at most this many per tensor,
  // sampled without replacement.
  Index coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  Index worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

namespace detail {

inline double eval_scalar(const GradCheckFn& f, const std::vector<Tensor<double>>& params) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.leaf(p, false));
  const Var<double> out = f(tape, vars);
  if (out.value().size() != 1) throw DimensionError("check_gradients: f must be scalar-valued");
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw NumericError("check_gradients: non-finite f");
  return v;
}

}  // namespace detail

// Compares the recorded gradient of f against central differences
// (f(p+h) - f(p-h)) / 2h, coordinate by coordinate. Relative error uses the
// denominator max(|analytic|, |numeric|, 1e-8).
inline GradCheckResult check_gradients(const GradCheckFn& f, std::vector<Tensor<double>> params,
                                       const GradCheckOptions& opts = {}) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& p : params) vars.push_back(tape.leaf(p, true));
    const Var<double> out = f(tape, vars);
    if (out.value().size() != 1) throw DimensionError("check_gradients: f must be scalar-valued");
    if (!std::isfinite(out.value()[0])) throw NumericError("check_gradients: non-finite f");
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  std::mt19937_64 rng(opts.seed);
  GradCheckResult result;
  for (std::size_t t = 0; t < params.size(); ++t) {
    std::vector<Index> coords(static_cast<std::size_t>(params[t].size()));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (opts.coords_per_tensor > 0 && static_cast<Index>(coords.size()) > opts.coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(opts.coords_per_tensor));
      std::sort(coords.begin(), coords.end());
    }
    for (Index i : coords) {
      const double saved = params[t][i];
      params[t][i] = saved + opts.step;
      const double up = detail::eval_scalar(f, params);
      params[t][i] = saved - opts.step;
      const double down = detail::eval_scalar(f, params);
      params[t][i] = saved;

      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++result.coords_checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_tensor = t;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace pinlab
