#ifndef AFLOW_SAMPLER_HPP_
#define AFLOW_SAMPLER_HPP_

#include "aflow/tensor.hpp"

namespace aflow {

// Per-target-pixel sampling displacements, shape (N, 2, H, W); channel 0 is
// the x offset and channel 1 the y offset, both in source-pixel units. The
// absolute sampling coordinate for target pixel (u, v) is
// (u + dx, v + dy) in the source frame. Zero offsets are the identity warp.
struct FlowField {
  Tensor offsets;

  static FlowField zero(int n, int h, int w) { return FlowField{Tensor({n, 2, h, w})}; }
  int batch() const { return offsets.dim(0); }
  int height() const { return offsets.dim(2); }
  int width() const { return offsets.dim(3); }
};

// (2, H, W) with coords[0][v][u] = u and coords[1][v][u] = v.
Tensor identity_grid(int h, int w);

// Bilinear warp of `source` (N,C,H,W) by `flow`. A target pixel takes the
// bilinear interpolation of the four source pixels around its sampling
// coordinate; neighbors outside the source contribute zero.
Tensor bilinear_sample(const Tensor& source, const FlowField& flow);

struct SampleGrads {
  Tensor source;
  FlowField flow;
};

// Exact gradients of the warp. The kernel's coordinate derivative uses
// subgradient 0 at exactly-integer sampling coordinates.
SampleGrads bilinear_sample_backward(const Tensor& source, const FlowField& flow, const Tensor& grad_out);

}  // namespace aflow

#endif  // AFLOW_SAMPLER_HPP_
