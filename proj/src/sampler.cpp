#include "aflow/sampler.hpp"

#include <cmath>

#include "aflow/errors.hpp"

namespace aflow {
namespace {

void check_flow(const Tensor& source, const FlowField& flow, const char* what) {
  if (source.rank() != 4) {
    throw ConfigError(std::string(what) + ": source must be (N,C,H,W)");
  }
  const Tensor& f = flow.offsets;
  if (f.rank() != 4 || f.dim(1) != 2) {
    throw ConfigError(std::string(what) + ": flow must be (N,2,H,W)");
  }
  if (f.dim(0) != source.dim(0) || f.dim(2) != source.dim(2) || f.dim(3) != source.dim(3)) {
    throw ConfigError(std::string(what) + ": flow " + f.shape_str() + " does not match source " + source.shape_str());
  }
  require_finite(f, "sampling flow field");
}

// True when every bilinear neighbor of the coordinate is outside the image;
// also shields the int conversion from coordinates beyond int range.
bool far_outside(double coord, int extent) { return !(coord > -1.0 && coord < static_cast<double>(extent)); }

}  // namespace

Tensor identity_grid(int h, int w) {
  if (h < 1 || w < 1) {
    throw ConfigError("identity_grid: H and W must be >= 1");
  }
  Tensor grid({2, h, w});
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      grid.at3(0, v, u) = u;
      grid.at3(1, v, u) = v;
    }
  }
  return grid;
}

Tensor bilinear_sample(const Tensor& source, const FlowField& flow) {
  check_flow(source, flow, "bilinear_sample");
  const int n = source.dim(0);
  const int c = source.dim(1);
  const int h = source.dim(2);
  const int w = source.dim(3);
  Tensor out({n, c, h, w});

  for (int nn = 0; nn < n; ++nn) {
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        const double x = u + flow.offsets.at(nn, 0, v, u);
        const double y = v + flow.offsets.at(nn, 1, v, u);
        if (far_outside(x, w) || far_outside(y, h)) {
          for (int cc = 0; cc < c; ++cc) {
            out.at(nn, cc, v, u) = 0.0;
          }
          continue;
        }
        const int x0 = static_cast<int>(std::floor(x));
        const int y0 = static_cast<int>(std::floor(y));
        const double wx1 = x - x0;
        const double wx0 = 1.0 - wx1;
        const double wy1 = y - y0;
        const double wy0 = 1.0 - wy1;
        for (int cc = 0; cc < c; ++cc) {
          double acc = 0.0;
          if (wy0 != 0.0 && y0 >= 0 && y0 < h) {
            if (wx0 != 0.0 && x0 >= 0 && x0 < w) {
              acc += source.at(nn, cc, y0, x0) * wx0 * wy0;
            }
            if (wx1 != 0.0 && x0 + 1 >= 0 && x0 + 1 < w) {
              acc += source.at(nn, cc, y0, x0 + 1) * wx1 * wy0;
            }
          }
          if (wy1 != 0.0 && y0 + 1 >= 0 && y0 + 1 < h) {
            if (wx0 != 0.0 && x0 >= 0 && x0 < w) {
              acc += source.at(nn, cc, y0 + 1, x0) * wx0 * wy1;
            }
            if (wx1 != 0.0 && x0 + 1 >= 0 && x0 + 1 < w) {
              acc += source.at(nn, cc, y0 + 1, x0 + 1) * wx1 * wy1;
            }
          }
          out.at(nn, cc, v, u) = acc;
        }
      }
    }
  }
  require_finite(out, "bilinear_sample output");
  return out;
}

SampleGrads bilinear_sample_backward(const Tensor& source, const FlowField& flow, const Tensor& grad_out) {
  check_flow(source, flow, "bilinear_sample_backward");
  require_same_shape(grad_out, source, "bilinear_sample_backward grad_out");
  const int n = source.dim(0);
  const int c = source.dim(1);
  const int h = source.dim(2);
  const int w = source.dim(3);

  SampleGrads grads;
  grads.source = Tensor({n, c, h, w});
  grads.flow = FlowField::zero(n, h, w);

  for (int nn = 0; nn < n; ++nn) {
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        const double x = u + flow.offsets.at(nn, 0, v, u);
        const double y = v + flow.offsets.at(nn, 1, v, u);
        if (far_outside(x, w) || far_outside(y, h)) {
          continue;  // both gradients stay zero
        }
        const int x0 = static_cast<int>(std::floor(x));
        const int y0 = static_cast<int>(std::floor(y));
        const double wx1 = x - x0;
        const double wx0 = 1.0 - wx1;
        const double wy1 = y - y0;
        const double wy0 = 1.0 - wy1;
        const bool x_on_grid = wx1 == 0.0;
        const bool y_on_grid = wy1 == 0.0;
        const bool in_x0 = x0 >= 0 && x0 < w;
        const bool in_x1 = x0 + 1 >= 0 && x0 + 1 < w;
        const bool in_y0 = y0 >= 0 && y0 < h;
        const bool in_y1 = y0 + 1 >= 0 && y0 + 1 < h;

        double dx = 0.0;
        double dy = 0.0;
        for (int cc = 0; cc < c; ++cc) {
          const double g = grad_out.at(nn, cc, v, u);
          const double s00 = (in_y0 && in_x0) ? source.at(nn, cc, y0, x0) : 0.0;
          const double s10 = (in_y0 && in_x1) ? source.at(nn, cc, y0, x0 + 1) : 0.0;
          const double s01 = (in_y1 && in_x0) ? source.at(nn, cc, y0 + 1, x0) : 0.0;
          const double s11 = (in_y1 && in_x1) ? source.at(nn, cc, y0 + 1, x0 + 1) : 0.0;

          if (g != 0.0) {
            if (in_y0 && in_x0 && wx0 * wy0 != 0.0) {
              grads.source.at(nn, cc, y0, x0) += g * wx0 * wy0;
            }
            if (in_y0 && in_x1 && wx1 * wy0 != 0.0) {
              grads.source.at(nn, cc, y0, x0 + 1) += g * wx1 * wy0;
            }
            if (in_y1 && in_x0 && wx0 * wy1 != 0.0) {
              grads.source.at(nn, cc, y0 + 1, x0) += g * wx0 * wy1;
            }
            if (in_y1 && in_x1 && wx1 * wy1 != 0.0) {
              grads.source.at(nn, cc, y0 + 1, x0 + 1) += g * wx1 * wy1;
            }
          }

          if (!x_on_grid) {
            dx += g * ((s10 - s00) * wy0 + (s11 - s01) * wy1);
          }
          if (!y_on_grid) {
            dy += g * ((s01 - s00) * wx0 + (s11 - s10) * wx1);
          }
        }
        grads.flow.offsets.at(nn, 0, v, u) = dx;
        grads.flow.offsets.at(nn, 1, v, u) = dy;
      }
    }
  }
  require_finite(grads.source, "bilinear_sample_backward grad_source");
  require_finite(grads.flow.offsets, "bilinear_sample_backward grad_flow");
  return grads;
}

}  // namespace aflow
