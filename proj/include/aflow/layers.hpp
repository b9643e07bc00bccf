#ifndef AFLOW_LAYERS_HPP_
#define AFLOW_LAYERS_HPP_

#include <string>
#include <utility>

#include "aflow/tensor.hpp"

namespace aflow {

// Learnable parameters of one layer. Weight layouts:
//   conv2d           (C_out, C_in, k, k)
//   upconv2d         (C_in, C_out, k, k)
//   fully_connected  (D_out, D_in)
// Bias is always (C_out) / (D_out). Shapes are fixed at construction.
struct LayerParams {
  std::string id;
  Tensor weight;
  Tensor bias;
};

struct ConvGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

struct FcGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

// Cross-correlation with zero padding. Input (N,C,H,W) -> output
// (N, C_out, (H+2p-k)/s+1, (W+2p-k)/s+1).
Tensor conv2d(const Tensor& input, const LayerParams& params, int stride, int pad);
ConvGrads conv2d_backward(const Tensor& input, const LayerParams& params, int stride, int pad, const Tensor& grad_out);

// Transposed convolution, the exact adjoint of conv2d with the same
// stride/pad: <conv2d(x), y> == <x, upconv2d(y)> for shared weights.
// Input (N,C,H,W) -> output (N, C_out, (H-1)s-2p+k, (W-1)s-2p+k).
Tensor upconv2d(const Tensor& input, const LayerParams& params, int stride, int pad);
ConvGrads upconv2d_backward(const Tensor& input, const LayerParams& params, int stride, int pad, const Tensor& grad_out);

// Affine map per batch row: input (N,D_in) -> (N,D_out).
Tensor fully_connected(const Tensor& input, const LayerParams& params);
FcGrads fully_connected_backward(const Tensor& input, const LayerParams& params, const Tensor& grad_out);

// Elementwise max(0, x). The subgradient at exactly 0 is 0.
Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

// Concatenation along `axis`; all other dimensions must match.
Tensor concat(const Tensor& a, const Tensor& b, int axis);
// Splits grad_out back into the two inputs' shapes.
std::pair<Tensor, Tensor> concat_backward(const Tensor& grad_out, const std::vector<int>& a_shape, const std::vector<int>& b_shape,
                                          int axis);

}  // namespace aflow

#endif  // AFLOW_LAYERS_HPP_
