#include <doctest.h>

#include <cmath>

#include "aflow/errors.hpp"
#include "aflow/losses.hpp"
#include "aflow/network.hpp"
#include "aflow/rng.hpp"
#include "test_support.hpp"

using namespace aflow;
using testsup::bitwise_equal;
using testsup::fill_uniform;
using testsup::rel_error;

namespace {

bool params_equal(const NetworkParams& a, const NetworkParams& b) {
  if (a.layers.size() != b.layers.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].id != b.layers[i].id || !bitwise_equal(a.layers[i].weight, b.layers[i].weight) ||
        !bitwise_equal(a.layers[i].bias, b.layers[i].bias)) {
      return false;
    }
  }
  return true;
}

NetworkConfig tiny(OutputMode mode) {
  NetworkConfig c = NetworkConfig::preset("tiny");
  c.mode = mode;
  return c;
}

Tensor random_image(Rng& rng, int n, int size) {
  Tensor t({n, 3, size, size});
  fill_uniform(t, rng, 0.0, 1.0);
  return t;
}

ViewTransform one_hot(int index, int dim = 19) {
  ViewTransform t;
  t.vec.assign(static_cast<std::size_t>(dim), 0.0);
  t.vec[static_cast<std::size_t>(index)] = 1.0;
  return t;
}

}  // namespace

TEST_CASE("build_network is deterministic and mode-shaped") {
  const NetworkConfig flow_cfg = NetworkConfig::preset("desk32");
  const NetworkParams a = build_network(flow_cfg, 77);
  const NetworkParams b = build_network(flow_cfg, 77);
  CHECK(params_equal(a, b));
  const NetworkParams c = build_network(flow_cfg, 78);
  CHECK_FALSE(params_equal(a, c));

  // FLOW: final decoder layer has 2 output channels.
  CHECK(a.layer("dec_uconv5").weight.dim(1) == 2);

  NetworkConfig conf_cfg = flow_cfg;
  conf_cfg.mode = OutputMode::kFlowWithConfidence;
  const NetworkParams d = build_network(conf_cfg, 77);
  CHECK(d.layer("dec_uconv5").weight.dim(1) == 3);

  NetworkConfig mask_cfg = flow_cfg;
  mask_cfg.mode = OutputMode::kMask;
  CHECK(build_network(mask_cfg, 1).layer("dec_uconv5").weight.dim(1) == 1);
}

TEST_CASE("default desk64 config has 6 levels reaching 1x1") {
  const NetworkConfig c;
  c.validate();
  CHECK(c.levels() == 6);
  CHECK(c.image_size == 64);
}

TEST_CASE("invalid configs are rejected") {
  NetworkConfig c = NetworkConfig::preset("tiny");
  c.image_size = 6;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  NetworkConfig d = NetworkConfig::preset("tiny");
  d.decoder_channels = {4, 4};
  CHECK_THROWS_AS(build_network(d, 0), ConfigError);
}

TEST_CASE("FLOW prediction has image channels and matches shape contract") {
  Rng rng(1);
  const NetworkConfig cfg = tiny(OutputMode::kFlow);
  const NetworkParams params = build_network(cfg, 5);
  const Tensor src = random_image(rng, 2, cfg.image_size);
  const SingleViewResult r = forward_single(cfg, params, src, one_hot(9), OutputMode::kFlow);
  CHECK(r.prediction.shape() == std::vector<int>{2, 3, 4, 4});
  CHECK(r.flow.has_value());
  CHECK(r.flow->offsets.shape() == std::vector<int>{2, 2, 4, 4});
  CHECK_FALSE(r.confidence.has_value());
}

TEST_CASE("zero final layer in FLOW mode yields the identity warp") {
  Rng rng(2);
  const NetworkConfig cfg = tiny(OutputMode::kFlow);
  NetworkParams params = build_network(cfg, 6);
  LayerParams& last = params.layer("dec_uconv2");
  last.weight.fill(0.0);
  last.bias.fill(0.0);
  const Tensor src = random_image(rng, 1, cfg.image_size);
  const SingleViewResult r = forward_single(cfg, params, src, one_hot(0), OutputMode::kFlow);
  CHECK(bitwise_equal(r.prediction, src));
  CHECK(bitwise_equal(r.flow->offsets, Tensor({1, 2, 4, 4})));
}

TEST_CASE("full-network gradient check through the FLOW head") {
  Rng rng(3);
  NetworkConfig cfg = tiny(OutputMode::kFlow);
  NetworkParams params = build_network(cfg, 7);
  const Tensor src = random_image(rng, 2, cfg.image_size);
  Tensor target = random_image(rng, 2, cfg.image_size);
  const Tensor rows = transform_batch({one_hot(4), one_hot(12)});

  auto loss_of = [&] {
    const SingleViewResult r = forward_single(cfg, params, src, rows, cfg.mode);
    return l1_loss(r.prediction, target).value;
  };

  const SingleViewResult r = forward_single(cfg, params, src, rows, cfg.mode);
  const LossResult lr = l1_loss(r.prediction, target);
  const NetworkParams grads = backward_single(cfg, params, r, lr.grad);

  int checked = 0;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Tensor& w = params.layers[l].weight;
    for (int probe = 0; probe < 5; ++probe) {
      const std::int64_t i = rng.uniform_int(w.size());
      const double fd = testsup::fd_derivative(w, i, loss_of);
      CHECK(rel_error(grads.layers[l].weight[i], fd) < 1e-3);
      ++checked;
    }
    Tensor& bias = params.layers[l].bias;
    const std::int64_t bi = rng.uniform_int(bias.size());
    CHECK(rel_error(grads.layers[l].bias[bi], testsup::fd_derivative(bias, bi, loss_of)) < 1e-3);
  }
  CHECK(checked >= 50);
}

TEST_CASE("normalize_confidence basics") {
  Tensor m1({1, 1, 2, 2});
  m1.fill(0.7);
  const auto single = normalize_confidence({m1});
  for (std::int64_t i = 0; i < single[0].size(); ++i) {
    CHECK(single[0][i] == 1.0);
  }

  Tensor a({1, 1, 1, 1}, {3.0});
  Tensor b({1, 1, 1, 1}, {1.0});
  const auto two = normalize_confidence({a, b});
  CHECK(two[0][0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(two[1][0] == doctest::Approx(0.25).epsilon(1e-15));

  Tensor z1({1, 1, 2, 2});
  Tensor z2({1, 1, 2, 2});
  const auto degen = normalize_confidence({z1, z2});
  for (std::int64_t i = 0; i < degen[0].size(); ++i) {
    CHECK(degen[0][i] == 0.5);
    CHECK(degen[1][i] == 0.5);
  }

  CHECK_THROWS_AS(normalize_confidence({}), UsageError);
  Tensor neg({1, 1, 1, 1}, {-0.25});
  CHECK_THROWS_AS(normalize_confidence({neg}), DataError);
}

TEST_CASE("normalized confidences sum to one at every pixel") {
  Rng rng(4);
  std::vector<Tensor> raw;
  for (int j = 0; j < 3; ++j) {
    Tensor m({2, 1, 5, 5});
    fill_uniform(m, rng, 0.0, 2.0);
    raw.push_back(std::move(m));
  }
  raw[1][7] = 0.0;
  raw[0][7] = 0.0;
  raw[2][7] = 0.0;  // a degenerate pixel
  const auto norm = normalize_confidence(raw);
  for (std::int64_t i = 0; i < norm[0].size(); ++i) {
    double sum = 0.0;
    for (const Tensor& t : norm) {
      sum += t[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("fuse_predictions basics and convexity") {
  Rng rng(5);
  Tensor p({1, 3, 2, 2});
  fill_uniform(p, rng, 0.0, 1.0);
  Tensor ones({1, 1, 2, 2});
  ones.fill(1.0);
  CHECK(bitwise_equal(fuse_predictions({p}, {ones}), p));

  // Identical predictions fuse to themselves for any valid masks.
  Tensor m0({1, 1, 2, 2});
  fill_uniform(m0, rng, 0.0, 1.0);
  Tensor m1(m0.shape());
  for (std::int64_t i = 0; i < m0.size(); ++i) {
    m1[i] = 1.0 - m0[i];
  }
  const Tensor fused = fuse_predictions({p, p}, {m0, m1});
  for (std::int64_t i = 0; i < fused.size(); ++i) {
    CHECK(fused[i] == doctest::Approx(p[i]).epsilon(1e-14));
  }

  Tensor zero({1, 3, 1, 1});
  Tensor one({1, 3, 1, 1});
  one.fill(1.0);
  Tensor w0({1, 1, 1, 1}, {0.25});
  Tensor w1({1, 1, 1, 1}, {0.75});
  const Tensor f = fuse_predictions({zero, one}, {w0, w1});
  for (int c = 0; c < 3; ++c) {
    CHECK(f[c] == doctest::Approx(0.75).epsilon(1e-15));
  }

  // Pixelwise within [min_j, max_j].
  Tensor q({1, 3, 2, 2});
  fill_uniform(q, rng, 0.0, 1.0);
  const auto norm = normalize_confidence({m0, m1});
  const Tensor f2 = fuse_predictions({p, q}, norm);
  for (int n = 0; n < 1; ++n) {
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 2; ++x) {
          const double lo = std::min(p.at(n, c, y, x), q.at(n, c, y, x));
          const double hi = std::max(p.at(n, c, y, x), q.at(n, c, y, x));
          CHECK(f2.at(n, c, y, x) >= lo - 1e-12);
          CHECK(f2.at(n, c, y, x) <= hi + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("forward_multi with one view equals the single-view prediction bit-exactly") {
  Rng rng(6);
  const NetworkConfig cfg = tiny(OutputMode::kFlowWithConfidence);
  const NetworkParams params = build_network(cfg, 8);
  const Tensor src = random_image(rng, 1, cfg.image_size);
  const Tensor rows = transform_batch({one_hot(9)});

  const SingleViewResult single = forward_single(cfg, params, src, rows, cfg.mode);
  const MultiViewResult multi = forward_multi(cfg, params, {src}, std::vector<Tensor>{rows});
  CHECK(bitwise_equal(multi.fused, single.prediction));
  for (std::int64_t i = 0; i < multi.normalized_masks[0].size(); ++i) {
    CHECK(multi.normalized_masks[0][i] == 1.0);
  }
}

TEST_CASE("duplicated identical views fuse to the single-view output bit-exactly") {
  Rng rng(7);
  const NetworkConfig cfg = tiny(OutputMode::kFlowWithConfidence);
  const NetworkParams params = build_network(cfg, 9);
  const Tensor src = random_image(rng, 2, cfg.image_size);
  const Tensor rows = transform_batch({one_hot(3), one_hot(3)});

  const SingleViewResult single = forward_single(cfg, params, src, rows, cfg.mode);
  const MultiViewResult multi = forward_multi(cfg, params, {src, src}, std::vector<Tensor>{rows, rows});
  CHECK(bitwise_equal(multi.fused, single.prediction));
}

TEST_CASE("gradient through fusion reaches both branches") {
  Rng rng(8);
  NetworkConfig cfg = tiny(OutputMode::kFlowWithConfidence);
  NetworkParams params = build_network(cfg, 10);
  const Tensor src_a = random_image(rng, 1, cfg.image_size);
  const Tensor src_b = random_image(rng, 1, cfg.image_size);
  Tensor target = random_image(rng, 1, cfg.image_size);
  const std::vector<Tensor> sources{src_a, src_b};
  const std::vector<Tensor> rows{transform_batch({one_hot(2)}), transform_batch({one_hot(16)})};

  auto loss_of = [&] {
    const MultiViewResult r = forward_multi(cfg, params, sources, rows);
    return l1_loss(r.fused, target).value;
  };

  const MultiViewResult r = forward_multi(cfg, params, sources, rows);
  const LossResult lr = l1_loss(r.fused, target);
  const NetworkParams grads = backward_multi(cfg, params, r, lr.grad);

  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Tensor& w = params.layers[l].weight;
    for (int probe = 0; probe < 4; ++probe) {
      const std::int64_t i = rng.uniform_int(w.size());
      CHECK(rel_error(grads.layers[l].weight[i], testsup::fd_derivative(w, i, loss_of)) < 1e-3);
    }
  }
}

TEST_CASE("forward_multi rejects an empty view list") {
  const NetworkConfig cfg = tiny(OutputMode::kFlowWithConfidence);
  const NetworkParams params = build_network(cfg, 11);
  CHECK_THROWS_AS(forward_multi(cfg, params, std::vector<Tensor>{}, std::vector<Tensor>{}), UsageError);
}

TEST_CASE("apply_foreground_mask thresholding") {
  Rng rng(9);
  Tensor pred({1, 3, 2, 2});
  fill_uniform(pred, rng, 0.0, 0.9);

  Tensor strong_pos({1, 1, 2, 2});
  strong_pos.fill(30.0);
  CHECK(bitwise_equal(apply_foreground_mask(pred, strong_pos), pred));

  Tensor strong_neg({1, 1, 2, 2});
  strong_neg.fill(-30.0);
  const Tensor bg = apply_foreground_mask(pred, strong_neg);
  for (std::int64_t i = 0; i < bg.size(); ++i) {
    CHECK(bg[i] == 1.0);
  }

  // Logit exactly 0 at threshold 0.5 counts as foreground.
  Tensor zero_logit({1, 1, 2, 2});
  CHECK(bitwise_equal(apply_foreground_mask(pred, zero_logit), pred));
}

TEST_CASE("forward rejects shape and mode inconsistencies") {
  Rng rng(10);
  const NetworkConfig cfg = tiny(OutputMode::kFlow);
  const NetworkParams params = build_network(cfg, 12);
  const Tensor bad_size({1, 3, 8, 8});
  CHECK_THROWS_AS(forward_single(cfg, params, bad_size, one_hot(0), cfg.mode), ConfigError);
  const Tensor src = random_image(rng, 1, cfg.image_size);
  ViewTransform short_t;
  short_t.vec.assign(7, 0.0);
  CHECK_THROWS_AS(forward_single(cfg, params, src, short_t, cfg.mode), ConfigError);
  // A FLOW-built network cannot run a 3-channel mode.
  CHECK_THROWS_AS(forward_single(cfg, params, src, one_hot(0), OutputMode::kPixels), ConfigError);
}
