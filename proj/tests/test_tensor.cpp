#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "gres2net/gradcheck.hpp"
#include "gres2net/ops.hpp"
#include "gres2net/rng.hpp"
#include "oracles.hpp"

using namespace gres2net;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, bool requires_grad = false,
                             double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("add: values and identity") {
  Tensor<double> a({2}, {1.0, 2.0});
  Tensor<double> b({2}, {3.0, 4.0});
  auto c = add(a, b);
  CHECK(c.data()[0] == doctest::Approx(4.0));
  CHECK(c.data()[1] == doctest::Approx(6.0));

  auto z = Tensor<double>::zeros({2});
  auto same = add(a, z);
  CHECK(same.data()[0] == 1.0);
  CHECK(same.data()[1] == 2.0);
}

TEST_CASE("add: gradient of sum(a+b) is all-ones, against finite differences") {
  Rng rng(7);
  for (int seed = 0; seed < 5; ++seed) {
    auto a = random_tensor({2, 3}, rng, true);
    auto b = random_tensor({2, 3}, rng, true);
    const double err = grad_check<double>(
        [&]() { return sum_all(add(a, b)); }, {a, b});
    CHECK(err <= 1e-5);
    for (auto g : a.grad()) CHECK(g == doctest::Approx(1.0));
  }
}

TEST_CASE("add: trailing-dimension broadcast and gradient mass conservation") {
  Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor<double> b({3}, {10, 20, 30}, true);
  auto out = add(a, b);
  CHECK(out.data()[0] == 11.0);
  CHECK(out.data()[5] == 36.0);

  Rng rng(3);
  auto w = random_tensor({2, 3}, rng);
  {
    Tape<double> tape;
    auto loss = sum_all(mul(add(a, b), w));
    tape.backward(loss);
  }
  // d(loss)/d(out) = w; b collects the column sums of w.
  for (int j = 0; j < 3; ++j) {
    const double expect = w.data()[j] + w.data()[3 + j];
    CHECK(b.grad()[j] == doctest::Approx(expect).epsilon(1e-12));
  }
  for (int i = 0; i < 6; ++i)
    CHECK(a.grad()[i] == doctest::Approx(w.data()[i]).epsilon(1e-12));
}

TEST_CASE("add: unresolvable shape mismatch throws") {
  Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> b({2}, {1, 2});
  CHECK_THROWS_AS((void)add(a, b), ShapeError);
}

TEST_CASE("channel_mul: identity, zero and finite-difference gradients") {
  Rng rng(11);
  auto y = random_tensor({2, 2, 2}, rng, true);

  auto ones = Tensor<double>::full({2}, 1.0);
  auto same = channel_mul(y, ones);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(same.data()[i] == y.data()[i]);

  auto zeros = Tensor<double>::zeros({2});
  auto zeroed = channel_mul(y, zeros);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(zeroed.data()[i] == 0.0);

  for (int seed = 0; seed < 5; ++seed) {
    auto yy = random_tensor({2, 2, 2}, rng, true);
    auto a = random_tensor({2}, rng, true);
    const double err = grad_check<double>(
        [&]() { return sum_all(mul(channel_mul(yy, a), yy)); }, {yy, a});
    CHECK(err <= 1e-5);
  }

  auto bad = Tensor<double>::full({3}, 1.0);
  CHECK_THROWS_AS((void)channel_mul(y, bad), ShapeError);
}

TEST_CASE("channel_mul: per-sample gates on batched maps") {
  Tensor<double> y({2, 2, 1, 1}, {1, 2, 3, 4});
  Tensor<double> a({2, 2}, {1, 0, 0.5, 2});
  auto out = channel_mul(y, a);
  CHECK(out.data()[0] == 1.0);
  CHECK(out.data()[1] == 0.0);
  CHECK(out.data()[2] == 1.5);
  CHECK(out.data()[3] == 8.0);
}

TEST_CASE("split/concat: grouping, round trip and gradient routing") {
  Tensor<double> x({8, 1, 1}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto parts = split_channels(x, 4);
  REQUIRE(parts.size() == 4);
  for (const auto& p : parts) CHECK(p.shape() == Shape{2, 1, 1});
  CHECK(parts[0].data()[0] == 1.0);
  CHECK(parts[0].data()[1] == 2.0);
  CHECK(parts[3].data()[0] == 7.0);
  CHECK(parts[3].data()[1] == 8.0);

  Rng rng(5);
  auto r = random_tensor({8, 3, 2}, rng);
  auto back = concat_channels(split_channels(r, 4));
  REQUIRE(back.shape() == r.shape());
  for (int64_t i = 0; i < r.numel(); ++i) CHECK(back.data()[i] == r.data()[i]);

  CHECK_THROWS_AS((void)split_channels(x, 3), ShapeError);

  // Gradients flow back to the originating slice only.
  auto xr = random_tensor({4, 2, 2}, rng, true);
  {
    Tape<double> tape;
    auto p = split_channels(xr, 2);
    tape.backward(sum_all(p[1]));
  }
  for (int64_t i = 0; i < xr.numel(); ++i)
    CHECK(xr.grad()[i] == (i >= 8 ? 1.0 : 0.0));
}

TEST_CASE("linear: identity, zero, and naive oracle") {
  Tensor<double> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<double> x({3}, {0.5, -1.0, 2.0});
  auto same = matvec(eye, x);
  for (int i = 0; i < 3; ++i) CHECK(same.data()[i] == x.data()[i]);

  auto zero_w = Tensor<double>::zeros({3, 3});
  auto zero_out = matvec(zero_w, x);
  for (int i = 0; i < 3; ++i) CHECK(zero_out.data()[i] == 0.0);

  Rng rng(17);
  auto w = random_tensor({3, 3}, rng, true);
  auto xx = random_tensor({3}, rng, true);
  auto got = matvec(w, xx);
  auto expect = oracles::matvec({w.data().begin(), w.data().end()}, 3, 3,
                                {xx.data().begin(), xx.data().end()});
  for (int i = 0; i < 3; ++i)
    CHECK(got.data()[i] == doctest::Approx(expect[static_cast<size_t>(i)]).epsilon(1e-14));

  const double err = grad_check<double>(
      [&]() { return sum_all(mul(linear(xx, w), linear(xx, w))); }, {w, xx});
  CHECK(err <= 1e-5);

  Tensor<double> wrong({2}, {1.0, 2.0});
  CHECK_THROWS_AS((void)matvec(w, wrong), ShapeError);
}

TEST_CASE("conv2d: identity kernel under same padding") {
  Rng rng(23);
  auto x = random_tensor({1, 5, 4}, rng);
  Tensor<double> k({1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
  auto out = conv2d(x, k);
  REQUIRE(out.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(out.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d: 1x1 kernel scales the input") {
  Rng rng(29);
  auto x = random_tensor({1, 3, 3}, rng);
  Tensor<double> k({1, 1, 1, 1}, {2.5});
  auto out = conv2d(x, k);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(out.data()[i] == doctest::Approx(2.5 * x.data()[i]).epsilon(1e-15));
}

TEST_CASE("conv2d: random case matches the naive six-loop oracle exactly") {
  Rng rng(31);
  auto x = random_tensor({2, 4, 4}, rng, true);
  auto k = random_tensor({3, 2, 3, 3}, rng, true);
  auto out = conv2d(x, k);
  REQUIRE(out.shape() == Shape{3, 4, 4});
  auto expect = oracles::conv2d({x.data().begin(), x.data().end()}, 2, 4, 4,
                                {k.data().begin(), k.data().end()}, 3, 3, 1, 1);
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.data()[i] == expect[static_cast<size_t>(i)]);

  for (int seed = 0; seed < 5; ++seed) {
    auto xi = random_tensor({2, 4, 4}, rng, true);
    auto ki = random_tensor({3, 2, 3, 3}, rng, true);
    auto bi = random_tensor({3}, rng, true);
    const double err = grad_check<double>(
        [&]() {
          auto y = conv2d(xi, ki, {}, &bi);
          return sum_all(mul(y, y));
        },
        {xi, ki, bi});
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("conv2d: stride-2 output extents and batch handling") {
  Rng rng(37);
  auto x = random_tensor({2, 3, 8, 6}, rng);
  auto k = random_tensor({4, 3, 1, 1}, rng);
  auto out = conv2d(x, k, {.stride = 2});
  CHECK(out.shape() == Shape{2, 4, 4, 3});

  Tensor<double> bad_k({4, 2, 1, 1}, std::vector<double>(8, 0.0));
  CHECK_THROWS_AS((void)conv2d(x, bad_k), ShapeError);
}

TEST_CASE("relu and sigmoid: values, range, gradients") {
  Tensor<double> x({4}, {-1.0, 2.0, 0.0, -3.5});
  auto r = relu(x);
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 2.0);
  CHECK(r.data()[2] == 0.0);
  CHECK(r.data()[3] == 0.0);

  auto s = sigmoid(Tensor<double>({1}, {0.0}));
  CHECK(s.data()[0] == doctest::Approx(0.5));

  // Strictly inside (0,1) even for saturating and extreme finite inputs.
  Tensor<double> extreme({6}, {40.0, -40.0, 1000.0, -1000.0, 1e308, -1e308});
  auto se = sigmoid(extreme);
  for (auto v : se.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  Tensor<double> one({1}, {1.0}, true);
  one.zero_grad();
  {
    Tape<double> tape;
    tape.backward(sum_all(sigmoid(one)));
  }
  const double sig1 = 1.0 / (1.0 + std::exp(-1.0));
  CHECK(one.grad()[0] == doctest::Approx(sig1 * (1.0 - sig1)).epsilon(1e-12));

  Rng rng(41);
  auto xr = random_tensor({3, 3}, rng, true, -2.0, 2.0);
  CHECK(grad_check<double>([&]() { return sum_all(sigmoid(xr)); }, {xr}) <= 1e-5);
  auto xr2 = random_tensor({3, 3}, rng, true, 0.5, 2.0);
  CHECK(grad_check<double>([&]() { return sum_all(relu(xr2)); }, {xr2}) <= 1e-5);
}

TEST_CASE("mean_over: values, identity and loop oracle") {
  Tensor<double> v({4}, {1, 2, 3, 4});
  auto m = mean_over(v, {0});
  CHECK(m.rank() == 0);
  CHECK(m.item() == doctest::Approx(2.5));

  auto ident = mean_over(v, {});
  REQUIRE(ident.shape() == v.shape());
  for (int i = 0; i < 4; ++i) CHECK(ident.data()[i] == v.data()[i]);

  Rng rng(43);
  auto x = random_tensor({3, 4, 5}, rng, true);
  auto spatial = mean_over(x, {1, 2});
  REQUIRE(spatial.shape() == Shape{3});
  auto expect = oracles::spatial_mean({x.data().begin(), x.data().end()}, 3, 4, 5);
  for (int c = 0; c < 3; ++c)
    CHECK(spatial.data()[c] ==
          doctest::Approx(expect[static_cast<size_t>(c)]).epsilon(1e-13));

  CHECK(grad_check<double>(
            [&]() { return sum_all(mul(mean_over(x, {0, 2}), mean_over(x, {0, 2}))); },
            {x}) <= 1e-5);
  CHECK_THROWS_AS((void)mean_over(x, {3}), ShapeError);
}

TEST_CASE("avg_pool2d: exact block means and gradients") {
  Tensor<double> x({1, 2, 2}, {1, 2, 3, 4});
  auto out = avg_pool2d(x, 2);
  REQUIRE(out.shape() == Shape{1, 1, 1});
  CHECK(out.data()[0] == doctest::Approx(2.5));

  Rng rng(47);
  auto xr = random_tensor({2, 4, 4}, rng, true);
  CHECK(grad_check<double>(
            [&]() { return sum_all(mul(avg_pool2d(xr, 2), avg_pool2d(xr, 2))); },
            {xr}) <= 1e-5);
  CHECK_THROWS_AS((void)avg_pool2d(xr, 3), ShapeError);
}

TEST_CASE("backward: sum seeds all-ones; untouched tensors get no gradient") {
  Tensor<double> x({2, 2}, {1, 2, 3, 4}, true);
  Tensor<double> unused({2}, {5, 6}, true);
  {
    Tape<double> tape;
    tape.backward(sum_all(x));
  }
  for (auto g : x.grad()) CHECK(g == 1.0);
  CHECK(!unused.has_grad());
}

TEST_CASE("backward: composite conv -> relu -> dense graph passes grad check") {
  Rng rng(53);
  for (int seed = 0; seed < 5; ++seed) {
    auto x = random_tensor({2, 3, 3}, rng, true);
    auto k = random_tensor({2, 2, 3, 3}, rng, true);
    auto w = random_tensor({2, 4}, rng, true);
    const double err = grad_check<double>(
        [&]() {
          auto h = relu(conv2d(x, k));
          auto pooled = mean_over(h, {1, 2});
          return sum_all(linear(pooled, w));
        },
        {x, k, w});
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("backward: accumulation is additive, zero_grad resets deterministically") {
  Rng rng(59);
  auto x = random_tensor({3}, rng, true);
  auto once = [&]() {
    Tape<double> tape;
    tape.backward(sum_all(mul(x, x)));
  };
  x.zero_grad();
  once();
  std::vector<double> g1(x.grad().begin(), x.grad().end());
  once();  // no zero_grad in between: doubles up
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(2 * g1[i]));
  x.zero_grad();
  once();
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == g1[i]);  // bitwise identical
}

TEST_CASE("backward: non-scalar loss is rejected") {
  Tensor<double> x({2}, {1, 2}, true);
  Tape<double> tape;
  auto y = add(x, x);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("grad_check: closed-form quadratic and constant maps") {
  Tensor<double> x({2}, {1.0, 2.0}, true);
  const double err =
      grad_check<double>([&]() { return sum_all(mul(x, x)); }, {x});
  CHECK(err <= 1e-7);
  CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-9));

  Tensor<double> y({3}, {1, 2, 3}, true);
  const double cerr = grad_check<double>(
      [&]() { return Tensor<double>::scalar(7.0); }, {y});
  CHECK(cerr == 0.0);
}

TEST_CASE("log_softmax and cross_entropy: uniform case and gradients") {
  Tensor<double> logits({2}, {0.3, 0.3});
  auto lp = log_softmax(logits);
  CHECK(lp.data()[0] == doctest::Approx(-std::log(2.0)));

  auto loss = cross_entropy(logits, {1});
  CHECK(loss.item() == doctest::Approx(std::log(2.0)));

  Rng rng(61);
  for (int seed = 0; seed < 5; ++seed) {
    auto z = random_tensor({3, 2}, rng, true);
    CHECK(grad_check<double>([&]() { return cross_entropy(z, {0, 1, 1}); }, {z}) <=
          1e-5);
    CHECK(grad_check<double>(
              [&]() { return sum_all(mul(log_softmax(z), log_softmax(z))); },
              {z}) <= 1e-5);
  }
}

TEST_CASE("tape: ops recorded only while a tape is active") {
  Tensor<double> x({2}, {1, 2}, true);
  auto y = add(x, x);  // no tape
  CHECK(!y.requires_grad());
  Tape<double> tape;
  auto z = add(x, x);
  CHECK(z.requires_grad());
  CHECK(tape.num_ops() == 1);
}
