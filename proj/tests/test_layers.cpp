#include <doctest.h>

#include <limits>

#include "aflow/errors.hpp"
#include "aflow/layers.hpp"
#include "aflow/rng.hpp"
#include "test_support.hpp"

using namespace aflow;
using testsup::bitwise_equal;
using testsup::fd_derivative;
using testsup::fill_uniform;
using testsup::rel_error;
using testsup::weighted_sum;

namespace {

LayerParams make_conv_params(const std::string& id, std::vector<int> wshape, Rng& rng) {
  LayerParams p;
  p.id = id;
  p.weight = Tensor(std::move(wshape));
  p.bias = Tensor({p.weight.dim(0)});
  fill_uniform(p.weight, rng, -0.8, 0.8);
  fill_uniform(p.bias, rng, -0.8, 0.8);
  return p;
}

LayerParams make_upconv_params(const std::string& id, std::vector<int> wshape, Rng& rng) {
  LayerParams p;
  p.id = id;
  p.weight = Tensor(std::move(wshape));
  p.bias = Tensor({p.weight.dim(1)});
  fill_uniform(p.weight, rng, -0.8, 0.8);
  fill_uniform(p.bias, rng, -0.8, 0.8);
  return p;
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
  Rng rng(11);
  Tensor x({2, 3, 5, 5});
  fill_uniform(x, rng, -1.0, 1.0);
  LayerParams p;
  p.id = "id";
  p.weight = Tensor({3, 3, 1, 1});
  p.bias = Tensor({3});
  for (int c = 0; c < 3; ++c) {
    p.weight[c * 3 + c] = 1.0;
  }
  const Tensor y = conv2d(x, p, 1, 0);
  CHECK(bitwise_equal(x, y));
}

TEST_CASE("conv2d hand-evaluated cross-correlation") {
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  LayerParams p{"sum", Tensor({1, 1, 2, 2}, {1, 1, 1, 1}), Tensor({1})};
  const Tensor y = conv2d(x, p, 1, 0);
  CHECK(y.shape() == std::vector<int>{1, 1, 1, 1});
  CHECK(y[0] == doctest::Approx(10.0).epsilon(1e-14));
}

TEST_CASE("conv2d output size formula") {
  Rng rng(5);
  Tensor x({1, 2, 6, 6});
  fill_uniform(x, rng, -1.0, 1.0);
  LayerParams p = make_conv_params("c", {4, 2, 3, 3}, rng);
  const Tensor y = conv2d(x, p, 2, 1);
  CHECK(y.shape() == std::vector<int>{1, 4, 3, 3});
}

TEST_CASE("conv2d rejects channel mismatch") {
  Tensor x({1, 2, 4, 4});
  LayerParams p{"bad", Tensor({1, 3, 3, 3}), Tensor({1})};
  CHECK_THROWS_AS(conv2d(x, p, 1, 1), ConfigError);
}

TEST_CASE("conv2d is deterministic") {
  Rng rng(17);
  Tensor x({2, 3, 8, 8});
  fill_uniform(x, rng, -1.0, 1.0);
  LayerParams p = make_conv_params("c", {5, 3, 3, 3}, rng);
  CHECK(bitwise_equal(conv2d(x, p, 2, 1), conv2d(x, p, 2, 1)));
}

TEST_CASE("conv2d_backward zero grad gives zero gradients") {
  Rng rng(3);
  Tensor x({1, 2, 4, 4});
  fill_uniform(x, rng, -1.0, 1.0);
  LayerParams p = make_conv_params("c", {3, 2, 3, 3}, rng);
  const Tensor y = conv2d(x, p, 1, 1);
  const ConvGrads g = conv2d_backward(x, p, 1, 1, Tensor(y.shape()));
  CHECK(bitwise_equal(g.input, Tensor(x.shape())));
  CHECK(bitwise_equal(g.weight, Tensor(p.weight.shape())));
  CHECK(bitwise_equal(g.bias, Tensor(p.bias.shape())));
}

TEST_CASE("conv2d_backward identity kernel passes grad through") {
  Rng rng(29);
  Tensor x({1, 2, 4, 4});
  fill_uniform(x, rng, -1.0, 1.0);
  LayerParams p;
  p.id = "id";
  p.weight = Tensor({2, 2, 1, 1});
  p.bias = Tensor({2});
  p.weight[0] = 1.0;
  p.weight[3] = 1.0;
  Tensor gy(x.shape());
  fill_uniform(gy, rng, -1.0, 1.0);
  const ConvGrads g = conv2d_backward(x, p, 1, 0, gy);
  CHECK(bitwise_equal(g.input, gy));
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(101);
  for (int trial = 0; trial < 6; ++trial) {
    const int stride = 1 + static_cast<int>(rng.uniform_int(2));
    const int pad = static_cast<int>(rng.uniform_int(2));
    Tensor x({2, 2, 5, 6});
    fill_uniform(x, rng, -1.0, 1.0);
    LayerParams p = make_conv_params("c", {3, 2, 3, 3}, rng);
    const Tensor y0 = conv2d(x, p, stride, pad);
    Tensor proj(y0.shape());
    fill_uniform(proj, rng, -1.0, 1.0);
    const ConvGrads g = conv2d_backward(x, p, stride, pad, proj);

    auto eval = [&] { return weighted_sum(conv2d(x, p, stride, pad), proj); };
    for (int probe = 0; probe < 40; ++probe) {
      const std::int64_t i = rng.uniform_int(x.size());
      CHECK(rel_error(g.input[i], fd_derivative(x, i, eval)) < 1e-4);
    }
    for (int probe = 0; probe < 40; ++probe) {
      const std::int64_t i = rng.uniform_int(p.weight.size());
      CHECK(rel_error(g.weight[i], fd_derivative(p.weight, i, eval)) < 1e-4);
    }
    for (std::int64_t i = 0; i < p.bias.size(); ++i) {
      CHECK(rel_error(g.bias[i], fd_derivative(p.bias, i, eval)) < 1e-4);
    }
  }
}

TEST_CASE("fully_connected identity and hand example") {
  LayerParams id{"id", Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2})};
  Tensor x({1, 2}, {3.5, -2.0});
  CHECK(bitwise_equal(fully_connected(x, id), x));

  LayerParams p{"fc", Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2}, {1, 1})};
  Tensor ones({1, 2}, {1, 1});
  const Tensor y = fully_connected(ones, p);
  CHECK(y[0] == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(8.0).epsilon(1e-14));
}

TEST_CASE("fully_connected gradients match finite differences") {
  Rng rng(202);
  Tensor x({3, 5});
  fill_uniform(x, rng, -1.0, 1.0);
  LayerParams p = make_conv_params("fc", {4, 5}, rng);
  const Tensor y0 = fully_connected(x, p);
  Tensor proj(y0.shape());
  fill_uniform(proj, rng, -1.0, 1.0);
  const FcGrads g = fully_connected_backward(x, p, proj);

  auto eval = [&] { return weighted_sum(fully_connected(x, p), proj); };
  for (std::int64_t i = 0; i < x.size(); ++i) {
    CHECK(rel_error(g.input[i], fd_derivative(x, i, eval)) < 1e-4);
  }
  for (std::int64_t i = 0; i < p.weight.size(); ++i) {
    CHECK(rel_error(g.weight[i], fd_derivative(p.weight, i, eval)) < 1e-4);
  }
  for (std::int64_t i = 0; i < p.bias.size(); ++i) {
    CHECK(rel_error(g.bias[i], fd_derivative(p.bias, i, eval)) < 1e-4);
  }
}

TEST_CASE("relu forward and subgradient rule") {
  Tensor all_neg({4}, {-3, -2, -1, -0.5});
  CHECK(bitwise_equal(relu(all_neg), Tensor({4})));

  Tensor x({3}, {-1, 0, 2});
  const Tensor y = relu(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);

  Tensor x2({2}, {-1, 2});
  Tensor gy({2}, {5, 7});
  const Tensor gx = relu_backward(x2, gy);
  CHECK(gx[0] == 0.0);
  CHECK(gx[1] == 7.0);

  // Subgradient at exactly 0 is 0.
  Tensor x3({1}, {0.0});
  Tensor gy3({1}, {9.0});
  CHECK(relu_backward(x3, gy3)[0] == 0.0);
}

TEST_CASE("upconv2d hand-expanded scatter") {
  Tensor x({1, 1, 1, 1}, {2.0});
  LayerParams p{"up", Tensor({1, 1, 2, 2}, {1, 1, 1, 1}), Tensor({1})};
  const Tensor y = upconv2d(x, p, 2, 0);
  CHECK(y.shape() == std::vector<int>{1, 1, 2, 2});
  for (int i = 0; i < 4; ++i) {
    CHECK(y[i] == doctest::Approx(2.0).epsilon(1e-14));
  }
}

TEST_CASE("upconv2d is the adjoint of conv2d") {
  // Exact geometries only: the stride must divide H + 2p - k, as it does for
  // every layer the network builds; otherwise conv discards border rows and
  // the minimal-size transpose cannot recover them.
  Rng rng(303);
  for (int trial = 0; trial < 10; ++trial) {
    const int stride = 1 + static_cast<int>(rng.uniform_int(2));
    const int pad = static_cast<int>(rng.uniform_int(2));
    const int k = std::max(2 * pad + 1, 2 + static_cast<int>(rng.uniform_int(3)));
    const int h = stride * (1 + static_cast<int>(rng.uniform_int(3))) + k - 2 * pad;
    const int w_sz = stride * (1 + static_cast<int>(rng.uniform_int(3))) + k - 2 * pad;
    const int a = 3;  // conv output channels
    const int b = 2;  // conv input channels
    Tensor x({2, b, h, w_sz});
    fill_uniform(x, rng, -1.0, 1.0);
    Tensor w({a, b, k, k});
    fill_uniform(w, rng, -1.0, 1.0);

    LayerParams conv_p{"c", w, Tensor({a})};
    const Tensor y = conv2d(x, conv_p, stride, pad);
    Tensor u(y.shape());
    fill_uniform(u, rng, -1.0, 1.0);

    LayerParams up_p{"up", w, Tensor({b})};
    const Tensor back = upconv2d(u, up_p, stride, pad);
    REQUIRE(back.shape() == x.shape());

    double lhs = 0.0;
    for (std::int64_t i = 0; i < y.size(); ++i) {
      lhs += y[i] * u[i];
    }
    double rhs = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) {
      rhs += x[i] * back[i];
    }
    CHECK(std::abs(lhs - rhs) < 1e-10);
  }
}

TEST_CASE("upconv2d gradients match finite differences") {
  Rng rng(404);
  Tensor x({2, 3, 3, 3});
  fill_uniform(x, rng, -1.0, 1.0);
  LayerParams p = make_upconv_params("up", {3, 2, 4, 4}, rng);
  const Tensor y0 = upconv2d(x, p, 2, 1);
  Tensor proj(y0.shape());
  fill_uniform(proj, rng, -1.0, 1.0);
  const ConvGrads g = upconv2d_backward(x, p, 2, 1, proj);

  auto eval = [&] { return weighted_sum(upconv2d(x, p, 2, 1), proj); };
  for (int probe = 0; probe < 60; ++probe) {
    const std::int64_t i = rng.uniform_int(x.size());
    CHECK(rel_error(g.input[i], fd_derivative(x, i, eval)) < 1e-4);
  }
  for (int probe = 0; probe < 60; ++probe) {
    const std::int64_t i = rng.uniform_int(p.weight.size());
    CHECK(rel_error(g.weight[i], fd_derivative(p.weight, i, eval)) < 1e-4);
  }
  for (std::int64_t i = 0; i < p.bias.size(); ++i) {
    CHECK(rel_error(g.bias[i], fd_derivative(p.bias, i, eval)) < 1e-4);
  }
}

TEST_CASE("concat basics and empty input") {
  Tensor a({1, 2}, {1, 2});
  Tensor b({1, 1}, {3});
  const Tensor y = concat(a, b, 1);
  CHECK(y.shape() == std::vector<int>{1, 3});
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);
  CHECK(y[2] == 3.0);

  Tensor empty({1, 0});
  CHECK(bitwise_equal(concat(a, empty, 1), a));

  Tensor c({1, 3}, {7, 8, 9});
  CHECK_THROWS_AS(concat(Tensor({2, 2}), c, 1), ConfigError);
}

TEST_CASE("non-finite values are a hard error, not a silent state") {
  Tensor x({1, 1, 2, 2}, {1.0, std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0});
  LayerParams p{"c", Tensor({1, 1, 1, 1}, {1.0}), Tensor({1})};
  CHECK_THROWS_AS(conv2d(x, p, 1, 0), NumericError);

  Tensor inf_in({1, 2}, {std::numeric_limits<double>::infinity(), 0.0});
  LayerParams fc{"f", Tensor({1, 2}, {1.0, 1.0}), Tensor({1})};
  CHECK_THROWS_AS(fully_connected(inf_in, fc), NumericError);
}

TEST_CASE("fully_connected rejects a width mismatch") {
  Tensor x({1, 3});
  LayerParams p{"f", Tensor({2, 4}), Tensor({2})};
  CHECK_THROWS_AS(fully_connected(x, p), ConfigError);
}

TEST_CASE("split of concat recovers both inputs exactly") {
  Rng rng(505);
  Tensor a({2, 3, 2, 2});
  Tensor b({2, 5, 2, 2});
  fill_uniform(a, rng, -1.0, 1.0);
  fill_uniform(b, rng, -1.0, 1.0);
  const Tensor y = concat(a, b, 1);
  auto [ga, gb] = concat_backward(y, a.shape(), b.shape(), 1);
  CHECK(bitwise_equal(ga, a));
  CHECK(bitwise_equal(gb, b));
}
