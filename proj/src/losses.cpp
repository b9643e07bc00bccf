#include "aflow/losses.hpp"

#include <cmath>
#include <vector>

#include "aflow/errors.hpp"

namespace aflow {
namespace {

double stable_sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

LossResult l1_loss(const Tensor& prediction, const Tensor& target, const Tensor* weight_mask) {
  require_same_shape(prediction, target, "l1_loss");
  const std::int64_t n = prediction.size();
  if (n == 0) {
    throw ConfigError("l1_loss: empty tensors");
  }

  LossResult res;
  res.grad = Tensor(prediction.shape());

  if (weight_mask == nullptr) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      acc += std::abs(prediction[i] - target[i]);
    }
    res.value = acc / static_cast<double>(n);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = prediction[i] - target[i];
      res.grad[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
    }
    return res;
  }

  // Mask is either the prediction's shape or single-channel broadcast over
  // the prediction's channels.
  const Tensor& m = *weight_mask;
  bool broadcast = false;
  if (m.same_shape(prediction)) {
    broadcast = false;
  } else if (prediction.rank() == 4 && m.rank() == 4 && m.dim(0) == prediction.dim(0) && m.dim(1) == 1 &&
             m.dim(2) == prediction.dim(2) && m.dim(3) == prediction.dim(3)) {
    broadcast = true;
  } else {
    throw ConfigError("l1_loss: weight mask shape " + m.shape_str() + " incompatible with " + prediction.shape_str());
  }

  std::vector<double> weights(static_cast<std::size_t>(n));
  if (!broadcast) {
    for (std::int64_t i = 0; i < n; ++i) {
      weights[static_cast<std::size_t>(i)] = m[i];
    }
  } else {
    const int batches = prediction.dim(0);
    const int channels = prediction.dim(1);
    const std::int64_t px = static_cast<std::int64_t>(prediction.dim(2)) * prediction.dim(3);
    std::int64_t i = 0;
    for (int b = 0; b < batches; ++b) {
      for (int c = 0; c < channels; ++c) {
        const double* mrow = m.data() + b * px;
        for (std::int64_t p = 0; p < px; ++p) {
          weights[static_cast<std::size_t>(i++)] = mrow[p];
        }
      }
    }
  }

  double wsum = 0.0;
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    wsum += weights[static_cast<std::size_t>(i)];
    acc += weights[static_cast<std::size_t>(i)] * std::abs(prediction[i] - target[i]);
  }
  if (wsum <= 0.0) {
    throw DataError("l1_loss: weight mask sums to zero");
  }
  res.value = acc / wsum;
  for (std::int64_t i = 0; i < n; ++i) {
    const double w = weights[static_cast<std::size_t>(i)];
    const double d = prediction[i] - target[i];
    res.grad[i] = w == 0.0 ? 0.0 : (d > 0.0 ? w / wsum : (d < 0.0 ? -w / wsum : 0.0));
  }
  return res;
}

LossResult cross_entropy_loss(const Tensor& logits, const Tensor& labels) {
  require_same_shape(logits, labels, "cross_entropy_loss");
  const std::int64_t n = logits.size();
  if (n == 0) {
    throw ConfigError("cross_entropy_loss: empty tensors");
  }
  for (std::int64_t i = 0; i < n; ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) {
      throw DataError("cross_entropy_loss: labels must be exactly 0 or 1");
    }
  }

  LossResult res;
  res.grad = Tensor(logits.shape());
  double acc = 0.0;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const double z = logits[i];
    const double y = labels[i];
    acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    res.grad[i] = (stable_sigmoid(z) - y) * inv;
  }
  res.value = acc * inv;
  if (!std::isfinite(res.value)) {
    throw NumericError("cross_entropy_loss produced a non-finite value");
  }
  return res;
}

}  // namespace aflow
