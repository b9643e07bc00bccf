#include <doctest.h>

#include <cmath>

#include "aflow/errors.hpp"
#include "aflow/rng.hpp"
#include "aflow/sampler.hpp"
#include "test_support.hpp"

using namespace aflow;
using testsup::bitwise_equal;
using testsup::fd_derivative;
using testsup::fill_uniform;
using testsup::rel_error;
using testsup::weighted_sum;

namespace {

// Independent scalar evaluation of the four-neighbor bilinear sum, written
// pixel by pixel with no shared code with the library sampler.
double reference_sample_at(const Tensor& src, int n, int c, double x, double y) {
  const int h = src.dim(2);
  const int w = src.dim(3);
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  double acc = 0.0;
  for (int dy = 0; dy <= 1; ++dy) {
    for (int dx = 0; dx <= 1; ++dx) {
      const int qx = x0 + dx;
      const int qy = y0 + dy;
      if (qx < 0 || qx >= w || qy < 0 || qy >= h) {
        continue;
      }
      const double wx = 1.0 - std::abs(x - qx);
      const double wy = 1.0 - std::abs(y - qy);
      if (wx <= 0.0 || wy <= 0.0) {
        continue;
      }
      acc += src.at(n, c, qy, qx) * wx * wy;
    }
  }
  return acc;
}

Tensor reference_sample(const Tensor& src, const FlowField& flow) {
  Tensor out(src.shape());
  for (int n = 0; n < src.dim(0); ++n) {
    for (int c = 0; c < src.dim(1); ++c) {
      for (int v = 0; v < src.dim(2); ++v) {
        for (int u = 0; u < src.dim(3); ++u) {
          const double x = u + flow.offsets.at(n, 0, v, u);
          const double y = v + flow.offsets.at(n, 1, v, u);
          out.at(n, c, v, u) = reference_sample_at(src, n, c, x, y);
        }
      }
    }
  }
  return out;
}

// Keeps sampling coordinates at least `margin` away from the integer grid.
void fill_flow_off_grid(FlowField& flow, Rng& rng, double lo, double hi, double margin) {
  for (int n = 0; n < flow.batch(); ++n) {
    for (int ch = 0; ch < 2; ++ch) {
      for (int v = 0; v < flow.height(); ++v) {
        for (int u = 0; u < flow.width(); ++u) {
          const int base = ch == 0 ? u : v;
          double off = 0.0;
          for (;;) {
            off = rng.uniform(lo, hi);
            const double coord = base + off;
            if (std::abs(coord - std::round(coord)) >= margin) {
              break;
            }
          }
          flow.offsets.at(n, ch, v, u) = off;
        }
      }
    }
  }
}

}  // namespace

TEST_CASE("identity_grid definition") {
  const Tensor g1 = identity_grid(1, 1);
  CHECK(g1.at3(0, 0, 0) == 0.0);
  CHECK(g1.at3(1, 0, 0) == 0.0);

  const Tensor g = identity_grid(2, 3);
  for (int v = 0; v < 2; ++v) {
    for (int u = 0; u < 3; ++u) {
      CHECK(g.at3(0, v, u) == static_cast<double>(u));
      CHECK(g.at3(1, v, u) == static_cast<double>(v));
    }
  }
}

TEST_CASE("flow derived from the identity grid reproduces any image exactly") {
  Rng rng(19);
  Tensor src({1, 3, 5, 6});
  fill_uniform(src, rng, 0.0, 1.0);
  const Tensor grid = identity_grid(5, 6);
  // Absolute coordinates = identity grid -> offsets = absolute - grid = 0.
  FlowField flow = FlowField::zero(1, 5, 6);
  for (int ch = 0; ch < 2; ++ch) {
    for (int v = 0; v < 5; ++v) {
      for (int u = 0; u < 6; ++u) {
        flow.offsets.at(0, ch, v, u) = grid.at3(ch, v, u) - grid.at3(ch, v, u);
      }
    }
  }
  CHECK(bitwise_equal(bilinear_sample(src, flow), src));
}

TEST_CASE("zero-offset flow reproduces the source bit-exactly") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 1 + static_cast<int>(rng.uniform_int(9));
    const int w = 1 + static_cast<int>(rng.uniform_int(9));
    Tensor src({2, 3, h, w});
    fill_uniform(src, rng, -2.0, 2.0);
    const Tensor out = bilinear_sample(src, FlowField::zero(2, h, w));
    CHECK(bitwise_equal(out, src));
  }
}

TEST_CASE("hand-expanded four-term sum at (0.5, 0.5)") {
  Tensor src({1, 1, 2, 2}, {0, 4, 8, 12});
  FlowField flow = FlowField::zero(1, 2, 2);
  flow.offsets.at(0, 0, 0, 0) = 0.5;
  flow.offsets.at(0, 1, 0, 0) = 0.5;
  const Tensor out = bilinear_sample(src, flow);
  CHECK(out.at(0, 0, 0, 0) == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("constant (+1, 0) offset shifts the image left with a zero right column") {
  Rng rng(31);
  Tensor src({1, 3, 5, 7});
  fill_uniform(src, rng, 0.0, 1.0);
  FlowField flow = FlowField::zero(1, 5, 7);
  for (int v = 0; v < 5; ++v) {
    for (int u = 0; u < 7; ++u) {
      flow.offsets.at(0, 0, v, u) = 1.0;
    }
  }
  const Tensor out = bilinear_sample(src, flow);
  for (int c = 0; c < 3; ++c) {
    for (int v = 0; v < 5; ++v) {
      for (int u = 0; u < 6; ++u) {
        CHECK(out.at(0, c, v, u) == src.at(0, c, v, u + 1));
      }
      CHECK(out.at(0, c, v, 6) == 0.0);
    }
  }
}

TEST_CASE("vectorized sampler equals the scalar reference on random instances") {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 2 + static_cast<int>(rng.uniform_int(7));
    const int w = 2 + static_cast<int>(rng.uniform_int(7));
    Tensor src({1, 2, h, w});
    fill_uniform(src, rng, -1.0, 1.0);
    FlowField flow = FlowField::zero(1, h, w);
    fill_uniform(flow.offsets, rng, -3.0, 3.0);
    const Tensor got = bilinear_sample(src, flow);
    const Tensor want = reference_sample(src, flow);
    for (std::int64_t i = 0; i < got.size(); ++i) {
      CHECK(std::abs(got[i] - want[i]) < 1e-12);
    }
  }
}

TEST_CASE("locality: a source pixel only influences outputs sampling near it") {
  Rng rng(51);
  const int h = 6;
  const int w = 6;
  Tensor src({1, 1, h, w});
  fill_uniform(src, rng, 0.0, 1.0);
  FlowField flow = FlowField::zero(1, h, w);
  fill_uniform(flow.offsets, rng, -2.0, 2.0);
  const Tensor base = bilinear_sample(src, flow);

  const int py = 2;
  const int px = 3;
  Tensor bumped = src;
  bumped.at(0, 0, py, px) += 0.5;
  const Tensor after = bilinear_sample(bumped, flow);

  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (after.at(0, 0, v, u) != base.at(0, 0, v, u)) {
        const double x = u + flow.offsets.at(0, 0, v, u);
        const double y = v + flow.offsets.at(0, 1, v, u);
        CHECK(std::abs(x - px) < 1.0);
        CHECK(std::abs(y - py) < 1.0);
      }
    }
  }
}

TEST_CASE("output values stay within the source neighborhood range") {
  Rng rng(61);
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 3 + static_cast<int>(rng.uniform_int(5));
    const int w = 3 + static_cast<int>(rng.uniform_int(5));
    Tensor src({1, 1, h, w});
    fill_uniform(src, rng, -1.0, 1.0);
    FlowField flow = FlowField::zero(1, h, w);
    fill_uniform(flow.offsets, rng, -4.0, 4.0);
    const Tensor out = bilinear_sample(src, flow);
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        const double x = u + flow.offsets.at(0, 0, v, u);
        const double y = v + flow.offsets.at(0, 1, v, u);
        const int x0 = static_cast<int>(std::floor(x));
        const int y0 = static_cast<int>(std::floor(y));
        double lo = 0.0;  // the zero border participates in the hull
        double hi = 0.0;
        for (int dy = 0; dy <= 1; ++dy) {
          for (int dx = 0; dx <= 1; ++dx) {
            const int qx = x0 + dx;
            const int qy = y0 + dy;
            if (qx >= 0 && qx < w && qy >= 0 && qy < h) {
              lo = std::min(lo, src.at(0, 0, qy, qx));
              hi = std::max(hi, src.at(0, 0, qy, qx));
            }
          }
        }
        CHECK(out.at(0, 0, v, u) >= lo - 1e-12);
        CHECK(out.at(0, 0, v, u) <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("backward: zero grad_out gives zero gradients") {
  Rng rng(71);
  Tensor src({1, 2, 4, 4});
  fill_uniform(src, rng, 0.0, 1.0);
  FlowField flow = FlowField::zero(1, 4, 4);
  fill_uniform(flow.offsets, rng, -1.0, 1.0);
  const SampleGrads g = bilinear_sample_backward(src, flow, Tensor(src.shape()));
  CHECK(bitwise_equal(g.source, Tensor(src.shape())));
  CHECK(bitwise_equal(g.flow.offsets, Tensor(flow.offsets.shape())));
}

TEST_CASE("backward: identity flow passes grad_source through exactly") {
  Rng rng(81);
  Tensor src({1, 3, 4, 5});
  fill_uniform(src, rng, 0.0, 1.0);
  Tensor gy(src.shape());
  fill_uniform(gy, rng, 0.0, 1.0);
  const SampleGrads g = bilinear_sample_backward(src, FlowField::zero(1, 4, 5), gy);
  CHECK(bitwise_equal(g.source, gy));
}

TEST_CASE("backward: coordinate subgradient is zero on the integer grid") {
  Rng rng(91);
  Tensor src({1, 1, 4, 4});
  fill_uniform(src, rng, 0.0, 1.0);
  FlowField flow = FlowField::zero(1, 4, 4);
  flow.offsets.at(0, 0, 1, 1) = 1.0;  // exactly integer coordinates
  flow.offsets.at(0, 1, 1, 1) = -1.0;
  Tensor gy(src.shape());
  gy.fill(1.0);
  const SampleGrads g = bilinear_sample_backward(src, flow, gy);
  CHECK(g.flow.offsets.at(0, 0, 1, 1) == 0.0);
  CHECK(g.flow.offsets.at(0, 1, 1, 1) == 0.0);
}

TEST_CASE("backward gradients match finite differences at off-grid points") {
  Rng rng(111);
  int probes = 0;
  while (probes < 1000) {
    const int h = 3 + static_cast<int>(rng.uniform_int(4));
    const int w = 3 + static_cast<int>(rng.uniform_int(4));
    Tensor src({1, 2, h, w});
    fill_uniform(src, rng, -1.0, 1.0);
    FlowField flow = FlowField::zero(1, h, w);
    fill_flow_off_grid(flow, rng, -2.0, 2.0, 1e-3);
    Tensor proj({1, 2, h, w});
    fill_uniform(proj, rng, -1.0, 1.0);

    const SampleGrads g = bilinear_sample_backward(src, flow, proj);
    auto eval_src = [&] { return weighted_sum(bilinear_sample(src, flow), proj); };
    auto eval_flow = [&] { return weighted_sum(bilinear_sample(src, flow), proj); };

    for (int p = 0; p < 12; ++p) {
      const std::int64_t i = rng.uniform_int(src.size());
      CHECK(rel_error(g.source[i], fd_derivative(src, i, eval_src)) < 1e-4);
      const std::int64_t j = rng.uniform_int(flow.offsets.size());
      CHECK(rel_error(g.flow.offsets[j], fd_derivative(flow.offsets, j, eval_flow)) < 1e-4);
      probes += 2;
    }
  }
}

TEST_CASE("flow/source spatial mismatch is a configuration error") {
  Tensor src({1, 3, 4, 4});
  CHECK_THROWS_AS(bilinear_sample(src, FlowField::zero(1, 3, 4)), ConfigError);
  CHECK_THROWS_AS(bilinear_sample(src, FlowField::zero(2, 4, 4)), ConfigError);
}
