#pragma once

#include "pinlab/autodiff.hpp"
#include "pinlab/ops.hpp"
#include "pinlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace pinlab {

inline constexpr double kNormEpsilon = 1e-8;

// Per-channel blend weights between pixel norm (rho=1) and instance norm
// (rho=0). Kept in [0,1] by clip_rho after every update.
template <typename Scalar>
struct PinParams {
  Tensor<Scalar> rho;
  Scalar epsilon = Scalar(kNormEpsilon);
};

// y' = gamma * y + beta, per channel.
template <typename Scalar>
struct StyleAffineParams {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
};

// Learned maps from the intermediate latent w to the per-channel shift
// mu_y = v_mu w + b_mu and scale sigma_y = v_sigma w + b_sigma. T is either a
// Tensor (stored parameters) or a Var (parameters bound to a tape).
template <typename T>
struct BasicStyleSource {
  T v_mu;
  T b_mu;
  T v_sigma;
  T b_sigma;
};

template <typename Scalar>
using StyleSource = BasicStyleSource<Tensor<Scalar>>;

template <typename Scalar>
using StyleSourceVars = BasicStyleSource<Var<Scalar>>;

template <typename Scalar>
struct InstanceStats {
  Tensor<Scalar> mu;
  Tensor<Scalar> sigma2;  // population variance
};

template <typename Scalar>
struct InstanceNormResult {
  Tensor<Scalar> y;
  InstanceStats<Scalar> stats;
};

// ---------------------------------------------------------------------------
// Forward kernels
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> pixel_norm(const Tensor<Scalar>& x, Scalar eps = Scalar(kNormEpsilon)) {
  detail::require_rank(x.shape(), 3, "pixel_norm");
  const Index c = x.channels(), hw = x.height() * x.width();
  Tensor<Scalar> y(x.shape());
  for (Index p = 0; p < hw; ++p) {
    Scalar ss(0);
    for (Index k = 0; k < c; ++k) ss += x[k * hw + p] * x[k * hw + p];
    const Scalar r = std::sqrt(ss / Scalar(c) + eps);
    for (Index k = 0; k < c; ++k) y[k * hw + p] = x[k * hw + p] / r;
  }
  return y;
}

template <typename Scalar>
InstanceStats<Scalar> instance_stats(const Tensor<Scalar>& x) {
  detail::require_rank(x.shape(), 3, "instance_stats");
  const Index c = x.channels(), hw = x.height() * x.width();
  InstanceStats<Scalar> s{Tensor<Scalar>({c}), Tensor<Scalar>({c})};
  for (Index k = 0; k < c; ++k) {
    const Scalar* ch = x.data() + k * hw;
    Scalar mean(0);
    for (Index i = 0; i < hw; ++i) mean += ch[i];
    mean /= Scalar(hw);
    Scalar var(0);
    for (Index i = 0; i < hw; ++i) var += (ch[i] - mean) * (ch[i] - mean);
    s.mu[k] = mean;
    s.sigma2[k] = var / Scalar(hw);
  }
  return s;
}

template <typename Scalar>
InstanceNormResult<Scalar> instance_norm(const Tensor<Scalar>& x,
                                         Scalar eps = Scalar(kNormEpsilon)) {
  InstanceNormResult<Scalar> r{Tensor<Scalar>(x.shape()), instance_stats(x)};
  const Index hw = x.height() * x.width();
  for (Index k = 0; k < x.channels(); ++k) {
    const Scalar denom = std::sqrt(r.stats.sigma2[k] + eps);
    for (Index i = 0; i < hw; ++i) r.y[k * hw + i] = (x[k * hw + i] - r.stats.mu[k]) / denom;
  }
  return r;
}

// y = rho[c] * a + (1 - rho[c]) * b
template <typename Scalar>
Tensor<Scalar> channel_blend(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                             const Tensor<Scalar>& rho) {
  if (a.shape() != b.shape() || rho.shape() != Shape{a.channels()})
    throw DimensionError("channel_blend: shape mismatch");
  const Index hw = a.height() * a.width();
  Tensor<Scalar> y(a.shape());
  for (Index k = 0; k < a.channels(); ++k) {
    const Scalar r = rho[k], s = Scalar(1) - rho[k];
    for (Index i = 0; i < hw; ++i) y[k * hw + i] = r * a[k * hw + i] + s * b[k * hw + i];
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> pin(const Tensor<Scalar>& x, const PinParams<Scalar>& p) {
  return channel_blend(pixel_norm(x, p.epsilon), instance_norm(x, p.epsilon).y, p.rho);
}

template <typename Scalar>
Tensor<Scalar> style_modulate(const Tensor<Scalar>& y, const StyleAffineParams<Scalar>& s) {
  detail::require_rank(y.shape(), 3, "style_modulate");
  if (s.gamma.shape() != Shape{y.channels()} || s.beta.shape() != Shape{y.channels()})
    throw DimensionError("style_modulate: gamma/beta length != channels");
  const Index hw = y.height() * y.width();
  Tensor<Scalar> out(y.shape());
  for (Index k = 0; k < y.channels(); ++k)
    for (Index i = 0; i < hw; ++i) out[k * hw + i] = s.gamma[k] * y[k * hw + i] + s.beta[k];
  return out;
}

// Returns (mu_y, sigma_y).
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> style_params(const Tensor<Scalar>& w,
                                                       const StyleSource<Scalar>& src) {
  return {affine(w, src.v_mu, src.b_mu), affine(w, src.v_sigma, src.b_sigma)};
}

template <typename Scalar>
Tensor<Scalar> adain(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                     const StyleSource<Scalar>& src, Scalar eps = Scalar(kNormEpsilon)) {
  auto [mu_y, sigma_y] = style_params(w, src);
  return style_modulate(instance_norm(x, eps).y, StyleAffineParams<Scalar>{sigma_y, mu_y});
}

template <typename Scalar>
void clip_rho_inplace(Tensor<Scalar>& rho) {
  rho.array() = rho.array().max(Scalar(0)).min(Scalar(1));
}

template <typename Scalar>
PinParams<Scalar> clip_rho(PinParams<Scalar> p) {
  clip_rho_inplace(p.rho);
  return p;
}

// ---------------------------------------------------------------------------
// Recorded ops
// ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> pixel_norm(const Var<Scalar>& x, Scalar eps = Scalar(kNormEpsilon)) {
  return x.tape().record(
      pixel_norm(x.value(), eps), {x},
      [x, eps](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        // dx_k = g_k / r - x_k / (C r^3) * sum_c g_c x_c
        const Tensor<Scalar>& xv = x.value();
        const Index c = xv.channels(), hw = xv.height() * xv.width();
        Tensor<Scalar> gx(xv.shape());
        for (Index p = 0; p < hw; ++p) {
          Scalar ss(0), gdotx(0);
          for (Index k = 0; k < c; ++k) {
            ss += xv[k * hw + p] * xv[k * hw + p];
            gdotx += g[k * hw + p] * xv[k * hw + p];
          }
          const Scalar r2 = ss / Scalar(c) + eps;
          const Scalar r = std::sqrt(r2);
          const Scalar coef = gdotx / (Scalar(c) * r2 * r);
          for (Index k = 0; k < c; ++k) gx[k * hw + p] = g[k * hw + p] / r - xv[k * hw + p] * coef;
        }
        t.accumulate(x, gx);
      },
      "pixel_norm");
}

template <typename Scalar>
Var<Scalar> instance_norm(const Var<Scalar>& x, Scalar eps = Scalar(kNormEpsilon)) {
  InstanceNormResult<Scalar> r = instance_norm(x.value(), eps);
  Tensor<Scalar> y = r.y;
  return x.tape().record(
      std::move(y), {x},
      [x, eps, r = std::move(r)](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        // dx = (g - mean(g) - y * mean(g * y)) / sqrt(sigma^2 + eps), per channel
        const Index hw = g.height() * g.width();
        Tensor<Scalar> gx(g.shape());
        for (Index k = 0; k < g.channels(); ++k) {
          Scalar gm(0), gym(0);
          for (Index i = 0; i < hw; ++i) {
            gm += g[k * hw + i];
            gym += g[k * hw + i] * r.y[k * hw + i];
          }
          gm /= Scalar(hw);
          gym /= Scalar(hw);
          const Scalar s = std::sqrt(r.stats.sigma2[k] + eps);
          for (Index i = 0; i < hw; ++i)
            gx[k * hw + i] = (g[k * hw + i] - gm - r.y[k * hw + i] * gym) / s;
        }
        t.accumulate(x, gx);
      },
      "instance_norm");
}

template <typename Scalar>
Var<Scalar> channel_blend(const Var<Scalar>& a, const Var<Scalar>& b, const Var<Scalar>& rho) {
  return a.tape().record(
      channel_blend(a.value(), b.value(), rho.value()), {a, b, rho},
      [a, b, rho](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        const Index c = g.channels(), hw = g.height() * g.width();
        const Tensor<Scalar>& rv = rho.value();
        if (a.requires_grad() || b.requires_grad()) {
          Tensor<Scalar> ga(g.shape()), gb(g.shape());
          for (Index k = 0; k < c; ++k)
            for (Index i = 0; i < hw; ++i) {
              ga[k * hw + i] = rv[k] * g[k * hw + i];
              gb[k * hw + i] = (Scalar(1) - rv[k]) * g[k * hw + i];
            }
          t.accumulate(a, ga);
          t.accumulate(b, gb);
        }
        if (rho.requires_grad()) {
          Tensor<Scalar> gr({c});
          for (Index k = 0; k < c; ++k) {
            Scalar acc(0);
            for (Index i = 0; i < hw; ++i)
              acc += (a.value()[k * hw + i] - b.value()[k * hw + i]) * g[k * hw + i];
            gr[k] = acc;
          }
          t.accumulate(rho, gr);
        }
      },
      "channel_blend");
}

template <typename Scalar>
Var<Scalar> pin(const Var<Scalar>& x, const Var<Scalar>& rho, Scalar eps = Scalar(kNormEpsilon)) {
  return channel_blend(pixel_norm(x, eps), instance_norm(x, eps), rho);
}

template <typename Scalar>
Var<Scalar> style_modulate(const Var<Scalar>& y, const Var<Scalar>& gamma,
                           const Var<Scalar>& beta) {
  return y.tape().record(
      style_modulate(y.value(), StyleAffineParams<Scalar>{gamma.value(), beta.value()}),
      {y, gamma, beta},
      [y, gamma, beta](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        const Index c = g.channels(), hw = g.height() * g.width();
        if (y.requires_grad()) {
          Tensor<Scalar> gy(g.shape());
          for (Index k = 0; k < c; ++k)
            for (Index i = 0; i < hw; ++i) gy[k * hw + i] = gamma.value()[k] * g[k * hw + i];
          t.accumulate(y, gy);
        }
        if (gamma.requires_grad() || beta.requires_grad()) {
          Tensor<Scalar> gg({c}), gb({c});
          for (Index k = 0; k < c; ++k) {
            Scalar sg(0), sb(0);
            for (Index i = 0; i < hw; ++i) {
              sg += g[k * hw + i] * y.value()[k * hw + i];
              sb += g[k * hw + i];
            }
            gg[k] = sg;
            gb[k] = sb;
          }
          t.accumulate(gamma, gg);
          t.accumulate(beta, gb);
        }
      },
      "style_modulate");
}

template <typename Scalar>
std::pair<Var<Scalar>, Var<Scalar>> style_params(const Var<Scalar>& w,
                                                 const StyleSourceVars<Scalar>& src) {
  return {affine(w, src.v_mu, src.b_mu), affine(w, src.v_sigma, src.b_sigma)};
}

template <typename Scalar>
Var<Scalar> adain(const Var<Scalar>& x, const Var<Scalar>& w, const StyleSourceVars<Scalar>& src,
                  Scalar eps = Scalar(kNormEpsilon)) {
  auto [mu_y, sigma_y] = style_params(w, src);
  return style_modulate(instance_norm(x, eps), sigma_y, mu_y);
}

}  // namespace pinlab
