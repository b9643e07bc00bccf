#ifndef AFLOW_LOSSES_HPP_
#define AFLOW_LOSSES_HPP_

#include "aflow/tensor.hpp"

namespace aflow {

struct LossResult {
  double value = 0.0;
  Tensor grad;
};

// Mean absolute error over all elements, or over mask-weighted elements when
// `weight_mask` is given (mask is broadcast across channels if it has one
// channel and the prediction several). Subgradient at zero residual is 0.
LossResult l1_loss(const Tensor& prediction, const Tensor& target, const Tensor* weight_mask = nullptr);

// Mean binary cross-entropy on sigmoid(logits) against {0,1} labels,
// evaluated in log-sum-exp form so large logits cannot overflow.
LossResult cross_entropy_loss(const Tensor& logits, const Tensor& labels);

}  // namespace aflow

#endif  // AFLOW_LOSSES_HPP_
