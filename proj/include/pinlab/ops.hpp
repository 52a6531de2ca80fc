#pragma once

#include "pinlab/autodiff.hpp"
#include "pinlab/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <vector>

namespace pinlab {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

inline constexpr double kDefaultLeakySlope = 0.2;

namespace detail {

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(s));
}

// im2col for a 3x3 window with zero padding 1: rows are (cin, ky, kx), columns
// are output pixels.
template <typename Scalar>
RowMatrix<Scalar> im2col3x3(const Tensor<Scalar>& x) {
  const Index cin = x.channels(), h = x.height(), w = x.width();
  RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(cin * 9, h * w);
  for (Index c = 0; c < cin; ++c)
    for (Index ky = 0; ky < 3; ++ky)
      for (Index kx = 0; kx < 3; ++kx) {
        Scalar* row = cols.row((c * 3 + ky) * 3 + kx).data();
        for (Index oy = 0; oy < h; ++oy) {
          const Index iy = oy + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (Index ox = 0; ox < w; ++ox) {
            const Index ix = ox + kx - 1;
            if (ix < 0 || ix >= w) continue;
            row[oy * w + ox] = x(c, iy, ix);
          }
        }
      }
  return cols;
}

template <typename Scalar>
Tensor<Scalar> col2im3x3(const RowMatrix<Scalar>& cols, Index cin, Index h, Index w) {
  Tensor<Scalar> x({cin, h, w});
  for (Index c = 0; c < cin; ++c)
    for (Index ky = 0; ky < 3; ++ky)
      for (Index kx = 0; kx < 3; ++kx) {
        const Scalar* row = cols.row((c * 3 + ky) * 3 + kx).data();
        for (Index oy = 0; oy < h; ++oy) {
          const Index iy = oy + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (Index ox = 0; ox < w; ++ox) {
            const Index ix = ox + kx - 1;
            if (ix < 0 || ix >= w) continue;
            x(c, iy, ix) += row[oy * w + ox];
          }
        }
      }
  return x;
}

template <typename Scalar>
void check_conv_shapes(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel,
                       const Tensor<Scalar>& bias) {
  require_rank(x.shape(), 3, "conv3x3 input");
  require_rank(kernel.shape(), 4, "conv3x3 kernel");
  require_rank(bias.shape(), 1, "conv3x3 bias");
  if (kernel.dim(1) != x.channels() || kernel.dim(2) != 3 || kernel.dim(3) != 3 ||
      bias.dim(0) != kernel.dim(0))
    throw DimensionError("conv3x3: input " + shape_string(x.shape()) + ", kernel " +
                         shape_string(kernel.shape()) + ", bias " + shape_string(bias.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Plain tensor kernels
// ---------------------------------------------------------------------------

// Stride-1, zero-padded 3x3 cross-correlation.
template <typename Scalar>
Tensor<Scalar> conv3x3(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel,
                       const Tensor<Scalar>& bias) {
  detail::check_conv_shapes(x, kernel, bias);
  const Index cout = kernel.dim(0), hw = x.height() * x.width();
  const RowMatrix<Scalar> cols = detail::im2col3x3(x);
  Tensor<Scalar> y({cout, x.height(), x.width()});
  MatrixMap<Scalar> out(y.data(), cout, hw);
  out.noalias() = ConstMatrixMap<Scalar>(kernel.data(), cout, x.channels() * 9) * cols;
  for (Index c = 0; c < cout; ++c) out.row(c).array() += bias[c];
  return y;
}

template <typename Scalar>
Tensor<Scalar> upsample2x(const Tensor<Scalar>& x) {
  detail::require_rank(x.shape(), 3, "upsample2x");
  const Index c = x.channels(), h = x.height(), w = x.width();
  Tensor<Scalar> y({c, 2 * h, 2 * w});
  for (Index k = 0; k < c; ++k)
    for (Index i = 0; i < 2 * h; ++i)
      for (Index j = 0; j < 2 * w; ++j) y(k, i, j) = x(k, i / 2, j / 2);
  return y;
}

template <typename Scalar>
Tensor<Scalar> avg_pool2x(const Tensor<Scalar>& x) {
  detail::require_rank(x.shape(), 3, "avg_pool2x");
  if (x.height() % 2 || x.width() % 2) throw DimensionError("avg_pool2x: odd spatial size");
  const Index c = x.channels(), h = x.height() / 2, w = x.width() / 2;
  Tensor<Scalar> y({c, h, w});
  for (Index k = 0; k < c; ++k)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j)
        y(k, i, j) = (x(k, 2 * i, 2 * j) + x(k, 2 * i, 2 * j + 1) + x(k, 2 * i + 1, 2 * j) +
                      x(k, 2 * i + 1, 2 * j + 1)) *
                     Scalar(0.25);
  return y;
}

template <typename Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& x, Scalar slope = Scalar(kDefaultLeakySlope)) {
  Tensor<Scalar> y = x;
  y.array() = (x.array() >= Scalar(0)).select(x.array(), slope * x.array());
  return y;
}

// y[c,h,w] = x[c,h,w] + scale[c] * noise[0,h,w]
template <typename Scalar>
Tensor<Scalar> add_scaled_noise(const Tensor<Scalar>& x, const Tensor<Scalar>& noise,
                                const Tensor<Scalar>& scale) {
  detail::require_rank(x.shape(), 3, "add_scaled_noise input");
  if (noise.shape() != Shape{1, x.height(), x.width()} || scale.shape() != Shape{x.channels()})
    throw DimensionError("add_scaled_noise: input " + shape_string(x.shape()) + ", noise " +
                         shape_string(noise.shape()) + ", scale " + shape_string(scale.shape()));
  const Index hw = x.height() * x.width();
  Tensor<Scalar> y = x;
  for (Index c = 0; c < x.channels(); ++c)
    y.array().segment(c * hw, hw) += scale[c] * noise.array();
  return y;
}

// y = W x + b
template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias) {
  detail::require_rank(x.shape(), 1, "affine input");
  detail::require_rank(weight.shape(), 2, "affine weight");
  if (weight.dim(1) != x.dim(0) || bias.shape() != Shape{weight.dim(0)})
    throw DimensionError("affine: input " + shape_string(x.shape()) + ", weight " +
                         shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()));
  Tensor<Scalar> y = bias;
  for (Index r = 0; r < weight.dim(0); ++r) {
    Scalar acc(0);
    for (Index k = 0; k < weight.dim(1); ++k) acc += weight(r, k) * x[k];
    y[r] += acc;
  }
  return y;
}

// Multiplies each channel by keep[c] (0 or 1).
template <typename Scalar>
Tensor<Scalar> channel_mask(const Tensor<Scalar>& x, const std::vector<bool>& keep) {
  detail::require_rank(x.shape(), 3, "channel_mask");
  if (static_cast<Index>(keep.size()) != x.channels())
    throw DimensionError("channel_mask: mask length != channels");
  Tensor<Scalar> y = x;
  const Index hw = x.height() * x.width();
  for (Index c = 0; c < x.channels(); ++c)
    if (!keep[static_cast<std::size_t>(c)]) y.array().segment(c * hw, hw).setZero();
  return y;
}

template <typename Scalar>
Scalar softplus(Scalar v) {
  // log(1 + e^v), stable for large |v|
  return v > Scalar(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

template <typename Scalar>
Scalar sigmoid(Scalar v) {
  return v >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-v))
                        : std::exp(v) / (Scalar(1) + std::exp(v));
}

// Index-ascending sum.
template <typename Scalar>
Scalar ordered_sum(std::span<const Scalar> v) {
  Scalar acc(0);
  for (Scalar e : v) acc += e;
  return acc;
}

// ---------------------------------------------------------------------------
// Recorded (differentiable) ops
// ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> conv3x3(const Var<Scalar>& x, const Var<Scalar>& kernel, const Var<Scalar>& bias) {
  const Tensor<Scalar>& xv = x.value();
  detail::check_conv_shapes(xv, kernel.value(), bias.value());
  const Index cin = xv.channels(), h = xv.height(), w = xv.width(), cout = kernel.value().dim(0);
  RowMatrix<Scalar> cols = detail::im2col3x3(xv);
  Tensor<Scalar> y({cout, h, w});
  MatrixMap<Scalar> out(y.data(), cout, h * w);
  out.noalias() = ConstMatrixMap<Scalar>(kernel.value().data(), cout, cin * 9) * cols;
  for (Index c = 0; c < cout; ++c) out.row(c).array() += bias.value()[c];
  return x.tape().record(
      std::move(y), {x, kernel, bias},
      [x, kernel, bias, cols = std::move(cols), cin, h, w, cout](Tape<Scalar>& t,
                                                                 const Tensor<Scalar>& g) {
        ConstMatrixMap<Scalar> gout(g.data(), cout, h * w);
        if (kernel.requires_grad()) {
          Tensor<Scalar> gk(kernel.shape());
          MatrixMap<Scalar>(gk.data(), cout, cin * 9).noalias() = gout * cols.transpose();
          t.accumulate(kernel, gk);
        }
        if (bias.requires_grad()) {
          Tensor<Scalar> gb({cout});
          for (Index c = 0; c < cout; ++c) {
            Scalar acc(0);
            for (Index i = 0; i < h * w; ++i) acc += gout(c, i);
            gb[c] = acc;
          }
          t.accumulate(bias, gb);
        }
        if (x.requires_grad()) {
          RowMatrix<Scalar> gcols =
              ConstMatrixMap<Scalar>(kernel.value().data(), cout, cin * 9).transpose() * gout;
          t.accumulate(x, detail::col2im3x3(gcols, cin, h, w));
        }
      },
      "conv3x3");
}

template <typename Scalar>
Var<Scalar> upsample2x(const Var<Scalar>& x) {
  return x.tape().record(
      upsample2x(x.value()), {x},
      [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        const Tensor<Scalar>& xv = x.value();
        Tensor<Scalar> gx(xv.shape());
        for (Index k = 0; k < g.channels(); ++k)
          for (Index i = 0; i < g.height(); ++i)
            for (Index j = 0; j < g.width(); ++j) gx(k, i / 2, j / 2) += g(k, i, j);
        t.accumulate(x, gx);
      },
      "upsample2x");
}

template <typename Scalar>
Var<Scalar> avg_pool2x(const Var<Scalar>& x) {
  return x.tape().record(
      avg_pool2x(x.value()), {x},
      [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        Tensor<Scalar> gx(x.shape());
        for (Index k = 0; k < gx.channels(); ++k)
          for (Index i = 0; i < gx.height(); ++i)
            for (Index j = 0; j < gx.width(); ++j) gx(k, i, j) = Scalar(0.25) * g(k, i / 2, j / 2);
        t.accumulate(x, gx);
      },
      "avg_pool2x");
}

template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& x, Scalar slope = Scalar(kDefaultLeakySlope)) {
  return x.tape().record(
      leaky_relu(x.value(), slope), {x},
      [x, slope](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        Tensor<Scalar> gx = g;
        gx.array() = (x.value().array() > Scalar(0)).select(g.array(), slope * g.array());
        t.accumulate(x, gx);
      },
      "leaky_relu");
}

template <typename Scalar>
Var<Scalar> add_scaled_noise(const Var<Scalar>& x, const Var<Scalar>& noise,
                             const Var<Scalar>& scale) {
  return x.tape().record(
      add_scaled_noise(x.value(), noise.value(), scale.value()), {x, noise, scale},
      [x, noise, scale](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        const Index c = g.channels(), hw = g.height() * g.width();
        t.accumulate(x, g);
        if (scale.requires_grad()) {
          Tensor<Scalar> gs({c});
          for (Index k = 0; k < c; ++k) {
            Scalar acc(0);
            for (Index i = 0; i < hw; ++i) acc += noise.value()[i] * g[k * hw + i];
            gs[k] = acc;
          }
          t.accumulate(scale, gs);
        }
        if (noise.requires_grad()) {
          Tensor<Scalar> gn(noise.shape());
          for (Index k = 0; k < c; ++k)
            for (Index i = 0; i < hw; ++i) gn[i] += scale.value()[k] * g[k * hw + i];
          t.accumulate(noise, gn);
        }
      },
      "add_scaled_noise");
}

template <typename Scalar>
Var<Scalar> affine(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  return x.tape().record(
      affine(x.value(), weight.value(), bias.value()), {x, weight, bias},
      [x, weight, bias](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        const Tensor<Scalar>& wv = weight.value();
        const Index rows = wv.dim(0), cols = wv.dim(1);
        t.accumulate(bias, g);
        if (weight.requires_grad()) {
          Tensor<Scalar> gw(wv.shape());
          for (Index r = 0; r < rows; ++r)
            for (Index k = 0; k < cols; ++k) gw(r, k) = g[r] * x.value()[k];
          t.accumulate(weight, gw);
        }
        if (x.requires_grad()) {
          Tensor<Scalar> gx(x.shape());
          for (Index r = 0; r < rows; ++r)
            for (Index k = 0; k < cols; ++k) gx[k] += wv(r, k) * g[r];
          t.accumulate(x, gx);
        }
      },
      "affine");
}

template <typename Scalar>
Var<Scalar> channel_mask(const Var<Scalar>& x, std::vector<bool> keep) {
  Tensor<Scalar> y = channel_mask(x.value(), keep);
  return x.tape().record(
      std::move(y), {x},
      [x, keep = std::move(keep)](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        t.accumulate(x, channel_mask(g, keep));
      },
      "channel_mask");
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.shape() != b.shape()) throw DimensionError("add: shape mismatch");
  Tensor<Scalar> y = a.value();
  y.array() += b.value().array();
  return a.tape().record(
      std::move(y), {a, b},
      [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
      },
      "add");
}

// Elementwise product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.shape() != b.shape()) throw DimensionError("mul: shape mismatch");
  Tensor<Scalar> y = a.value();
  y.array() *= b.value().array();
  return a.tape().record(
      std::move(y), {a, b},
      [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        if (a.requires_grad()) {
          Tensor<Scalar> ga = g;
          ga.array() *= b.value().array();
          t.accumulate(a, ga);
        }
        if (b.requires_grad()) {
          Tensor<Scalar> gb = g;
          gb.array() *= a.value().array();
          t.accumulate(b, gb);
        }
      },
      "mul");
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar k) {
  Tensor<Scalar> y = x.value();
  y.array() *= k;
  return x.tape().record(
      std::move(y), {x},
      [x, k](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        Tensor<Scalar> gx = g;
        gx.array() *= k;
        t.accumulate(x, gx);
      },
      "scale");
}

// Sum of all elements as a [1] tensor.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  Tensor<Scalar> y({1}, ordered_sum(x.value().span()));
  return x.tape().record(
      std::move(y), {x},
      [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        t.accumulate(x, Tensor<Scalar>::constant(x.shape(), g[0]));
      },
      "sum");
}

template <typename Scalar>
Var<Scalar> softplus(const Var<Scalar>& x) {
  Tensor<Scalar> y = x.value();
  for (Index i = 0; i < y.size(); ++i) y[i] = softplus(y[i]);
  return x.tape().record(
      std::move(y), {x},
      [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        Tensor<Scalar> gx = g;
        for (Index i = 0; i < gx.size(); ++i) gx[i] *= sigmoid(x.value()[i]);
        t.accumulate(x, gx);
      },
      "softplus");
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  return x.tape().record(
      x.value().reshaped(std::move(shape)), {x},
      [x](Tape<Scalar>& t, const Tensor<Scalar>& g) { t.accumulate(x, g.reshaped(x.shape())); },
      "reshape");
}

}  // namespace pinlab
