#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pinlab/gradcheck.hpp"
#include "pinlab/normalization.hpp"
#include "pinlab/ops.hpp"
#include "test_util.hpp"

using namespace pinlab;
using pinlab::testing::naive_conv3x3;
using pinlab::testing::random_tensor;

TEST_CASE("tensor layout is row-major c,h,w") {
  Tensor<float> t({2, 3, 4});
  t(1, 2, 3) = 7.0f;
  CHECK(t[1 * 12 + 2 * 4 + 3] == 7.0f);
  CHECK_THROWS_AS(Tensor<float>({2, 3}, Tensor<float>::Storage::Zero(5)), DimensionError);
  CHECK_THROWS_AS(Tensor<float>(Shape{}), DimensionError);
}

TEST_CASE("conv3x3 identity kernel and bias-only output") {
  auto x = random_tensor<double>({1, 5, 4}, 1);
  Tensor<double> k({1, 1, 3, 3});
  k[4] = 1.0;
  CHECK(conv3x3(x, k, Tensor<double>({1})) == x);

  Tensor<double> zeros({2, 4, 4});
  Tensor<double> k2 = random_tensor<double>({3, 2, 3, 3}, 2);
  Tensor<double> b({3}, {0.5, -1.0, 2.0});
  auto y = conv3x3(zeros, k2, b);
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < 16; ++i) CHECK(y[c * 16 + i] == b[c]);
}

TEST_CASE("conv3x3 matches nested-loop reference") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Index cin = 1 + s % 3, cout = 1 + (s / 3) % 4, h = 2 + s % 5, w = 3 + s % 4;
    auto xd = random_tensor<double>({cin, h, w}, 100 + s);
    auto kd = random_tensor<double>({cout, cin, 3, 3}, 200 + s);
    auto bd = random_tensor<double>({cout}, 300 + s);
    CHECK(max_abs_diff(conv3x3(xd, kd, bd), naive_conv3x3(xd, kd, bd)) < 1e-12);
    auto xf = xd.cast<float>(), kf = kd.cast<float>(), bf = bd.cast<float>();
    CHECK(max_abs_diff(conv3x3(xf, kf, bf), naive_conv3x3(xf, kf, bf)) < 1e-6f);
  }
  auto x = random_tensor<float>({2, 4, 4}, 9);
  auto k = random_tensor<float>({3, 2, 3, 3}, 10);
  auto b = random_tensor<float>({3}, 11);
  CHECK(max_abs_diff(conv3x3(x, k, b), naive_conv3x3(x, k, b)) < 1e-6f);
}

TEST_CASE("conv3x3 rejects inconsistent shapes") {
  Tensor<float> x({2, 4, 4});
  CHECK_THROWS_AS(conv3x3(x, Tensor<float>({3, 1, 3, 3}), Tensor<float>({3})), DimensionError);
  CHECK_THROWS_AS(conv3x3(x, Tensor<float>({3, 2, 3, 3}), Tensor<float>({2})), DimensionError);
  CHECK_THROWS_AS(conv3x3(x, Tensor<float>({3, 2, 5, 5}), Tensor<float>({3})), DimensionError);
}

TEST_CASE("upsample2x replicates pixels") {
  Tensor<float> one({1, 1, 1}, 3.5f);
  CHECK(upsample2x(one) == Tensor<float>({1, 2, 2}, 3.5f));
  CHECK(upsample2x(Tensor<float>({2, 3, 5}, -1.0f)) == Tensor<float>({2, 6, 10}, -1.0f));
  auto x = random_tensor<double>({3, 4, 5}, 4);
  CHECK(upsample2x(x).array().sum() == doctest::Approx(4.0 * x.array().sum()).epsilon(1e-12));
}

TEST_CASE("leaky_relu") {
  Tensor<double> pos({4}, {0.0, 1.0, 2.5, 9.0});
  CHECK(leaky_relu(pos) == pos);
  Tensor<double> neg({1}, {-1.0});
  CHECK(leaky_relu(neg)[0] == doctest::Approx(-0.2));
}

TEST_CASE("add_scaled_noise broadcasting") {
  auto x = random_tensor<float>({3, 4, 4}, 5);
  auto noise = random_tensor<float>({1, 4, 4}, 6);
  CHECK(add_scaled_noise(x, noise, Tensor<float>({3})) == x);
  auto y = add_scaled_noise(Tensor<float>({3, 4, 4}), noise, Tensor<float>({3}, 1.0f));
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < 16; ++i) CHECK(y[c * 16 + i] == noise[i]);
  CHECK_THROWS_AS(add_scaled_noise(x, Tensor<float>({1, 4, 5}), Tensor<float>({3})),
                  DimensionError);
}

TEST_CASE("affine") {
  auto x = random_tensor<double>({4}, 7);
  auto b = random_tensor<double>({3}, 8);
  CHECK(affine(x, Tensor<double>({3, 4}), b) == b);
  Tensor<double> eye({4, 4});
  for (Index i = 0; i < 4; ++i) eye(i, i) = 1.0;
  CHECK(affine(x, eye, Tensor<double>({4})) == x);

  auto w = random_tensor<double>({3, 4}, 9);
  auto y = affine(x, w, b);
  for (Index r = 0; r < 3; ++r) {
    double acc = b[r];
    for (Index c = 0; c < 4; ++c) acc += w(r, c) * x[c];
    CHECK(y[r] == doctest::Approx(acc).epsilon(1e-12));
  }
  CHECK_THROWS_AS(affine(x, Tensor<double>({3, 5}), b), DimensionError);
}

// Projects an op output onto a fixed random tensor so the loss has
// nontrivial gradients everywhere.
static Var<double> project(const Var<double>& y, std::uint64_t seed) {
  auto r = random_tensor<double>(y.shape(), seed);
  return sum(mul(y, y.tape().constant(r)));
}

TEST_CASE("check_gradients on sum is exact") {
  auto res = check_gradients([](Tape<double>&, const std::vector<Var<double>>& p) { return sum(p[0]); },
                             {random_tensor<double>({2, 3, 3}, 1)});
  CHECK(res.max_rel_error < 1e-8);
}

TEST_CASE("check_gradients reports non-finite f") {
  CHECK_THROWS_AS(check_gradients(
                      [](Tape<double>& t, const std::vector<Var<double>>& p) {
                        return sum(mul(p[0], t.constant(Tensor<double>({2}, 1e308))));
                      },
                      {Tensor<double>({2}, 10.0)}),
                  NumericError);
}

TEST_CASE("gradients of tensor ops match central differences") {
  const std::vector<Shape> shapes = {{1, 3, 3}, {2, 4, 5}, {3, 6, 4}};
  for (std::size_t s = 0; s < shapes.size(); ++s) {
    const Shape& sh = shapes[s];
    const Index c = sh[0];
    CAPTURE(s);
    auto x = random_tensor<double>(sh, 10 + s);
    // keep values away from the kink
    for (Index i = 0; i < x.size(); ++i)
      if (std::abs(x[i]) < 0.05) x[i] += 0.1;

    auto conv = check_gradients(
        [s](Tape<double>&, const std::vector<Var<double>>& p) {
          return project(conv3x3(p[0], p[1], p[2]), 50 + s);
        },
        {x, random_tensor<double>({2, c, 3, 3}, 20 + s), random_tensor<double>({2}, 30 + s)});
    CHECK(conv.max_rel_error < 1e-4);

    auto lrelu = check_gradients(
        [s](Tape<double>&, const std::vector<Var<double>>& p) {
          return project(leaky_relu(p[0], 0.2), 60 + s);
        },
        {x});
    CHECK(lrelu.max_rel_error < 1e-4);

    auto noise = check_gradients(
        [s](Tape<double>&, const std::vector<Var<double>>& p) {
          return project(add_scaled_noise(p[0], p[1], p[2]), 70 + s);
        },
        {x, random_tensor<double>({1, sh[1], sh[2]}, 80 + s), random_tensor<double>({c}, 90 + s)});
    CHECK(noise.max_rel_error < 1e-4);

    auto up = check_gradients(
        [s](Tape<double>&, const std::vector<Var<double>>& p) {
          return project(upsample2x(p[0]), 100 + s);
        },
        {x});
    CHECK(up.max_rel_error < 1e-4);

    auto aff = check_gradients(
        [s](Tape<double>&, const std::vector<Var<double>>& p) {
          return project(affine(p[0], p[1], p[2]), 110 + s);
        },
        {random_tensor<double>({c + 2}, 120 + s), random_tensor<double>({3, c + 2}, 130 + s),
         random_tensor<double>({3}, 140 + s)});
    CHECK(aff.max_rel_error < 1e-4);

    auto sp = check_gradients(
        [s](Tape<double>&, const std::vector<Var<double>>& p) {
          return project(softplus(p[0]), 150 + s);
        },
        {x});
    CHECK(sp.max_rel_error < 1e-4);
  }
  auto pool = check_gradients(
      [](Tape<double>&, const std::vector<Var<double>>& p) { return project(avg_pool2x(p[0]), 7); },
      {random_tensor<double>({2, 4, 6}, 3)});
  CHECK(pool.max_rel_error < 1e-4);
}

TEST_CASE("noise-scale gradient equals noise-weighted upstream sum") {
  auto noise = random_tensor<double>({1, 3, 3}, 1);
  auto up = random_tensor<double>({2, 3, 3}, 2);
  Tape<double> tape;
  auto x = tape.constant(random_tensor<double>({2, 3, 3}, 3));
  auto sc = tape.leaf(Tensor<double>({2}, {0.3, -0.7}));
  auto loss = sum(mul(add_scaled_noise(x, tape.constant(noise), sc), tape.constant(up)));
  tape.backward(loss);
  auto g = tape.grad(sc);
  for (Index c = 0; c < 2; ++c) {
    double expect = 0;
    for (Index i = 0; i < 9; ++i) expect += noise[i] * up[c * 9 + i];
    CHECK(g[c] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("backward is deterministic and additive") {
  auto run = [] {
    Tape<float> tape;
    auto x = tape.leaf(random_tensor<float>({3, 8, 8}, 1));
    auto k = tape.leaf(random_tensor<float>({4, 3, 3, 3}, 2));
    auto b = tape.leaf(random_tensor<float>({4}, 3));
    auto y = conv3x3(x, k, b);
    // x used twice: gradients must add
    auto loss = add(sum(leaky_relu(y)), sum(x));
    tape.backward(loss);
    return std::make_pair(tape.grad(x), tape.grad(k));
  };
  auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("non-finite results are rejected") {
  Tape<float> tape;
  auto x = tape.leaf(Tensor<float>({1}, 1e30f));
  CHECK_THROWS_AS(mul(x, x), NumericError);
}
