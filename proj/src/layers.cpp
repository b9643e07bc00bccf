#include "aflow/layers.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include "aflow/errors.hpp"
#include "aflow/parallel.hpp"

namespace aflow {
namespace {

std::int64_t min_rows_for(std::int64_t work_per_row) {
  // Split only when a chunk carries a meaningful amount of arithmetic.
  return std::max<std::int64_t>(1, 16384 / std::max<std::int64_t>(1, work_per_row));
}

// C(M,P) = A(M,K) * B(K,P), row-major contiguous.
void gemm_ab(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t p) {
  parallel_for(m, min_rows_for(k * p), [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      double* crow = c + r * p;
      std::fill(crow, crow + p, 0.0);
      const double* arow = a + r * k;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        const double* brow = b + kk * p;
        for (std::int64_t j = 0; j < p; ++j) {
          crow[j] += av * brow[j];
        }
      }
    }
  });
}

// C(M,K) = A(M,P) * B(K,P)^T.
void gemm_abt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t p) {
  parallel_for(m, min_rows_for(k * p), [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      const double* arow = a + r * p;
      double* crow = c + r * k;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const double* brow = b + kk * p;
        double acc = 0.0;
        for (std::int64_t j = 0; j < p; ++j) {
          acc += arow[j] * brow[j];
        }
        crow[kk] = acc;
      }
    }
  });
}

// C(K,P) = A(M,K)^T * B(M,P).
void gemm_atb(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k, std::int64_t p) {
  parallel_for(k, min_rows_for(m * p), [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      double* crow = c + r * p;
      std::fill(crow, crow + p, 0.0);
      for (std::int64_t mm = 0; mm < m; ++mm) {
        const double av = a[mm * k + r];
        const double* brow = b + mm * p;
        for (std::int64_t j = 0; j < p; ++j) {
          crow[j] += av * brow[j];
        }
      }
    }
  });
}

struct ConvGeom {
  int n, c_in, h, w;    // conv input
  int c_out, k, s, p;   // kernel geometry
  int ho, wo;           // conv output

  std::int64_t cols_rows() const { return static_cast<std::int64_t>(c_in) * k * k; }
  std::int64_t out_px() const { return static_cast<std::int64_t>(ho) * wo; }
};

ConvGeom conv_geom(const Tensor& input, int c_out, int k, int stride, int pad, const char* what) {
  if (input.rank() != 4) {
    throw ConfigError(std::string(what) + ": input must be (N,C,H,W), got " + input.shape_str());
  }
  if (stride < 1 || pad < 0) {
    throw ConfigError(std::string(what) + ": stride must be >= 1 and pad >= 0");
  }
  ConvGeom g;
  g.n = input.dim(0);
  g.c_in = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.c_out = c_out;
  g.k = k;
  g.s = stride;
  g.p = pad;
  g.ho = (g.h + 2 * pad - k) / stride + 1;
  g.wo = (g.w + 2 * pad - k) / stride + 1;
  if (g.h + 2 * pad < k || g.w + 2 * pad < k || g.ho < 1 || g.wo < 1) {
    throw ConfigError(std::string(what) + ": output spatial size would be empty");
  }
  return g;
}

// cols(K = C_in*k*k, N*P) from zero-padded input patches.
void im2col(const Tensor& input, const ConvGeom& g, std::vector<double>& cols) {
  const std::int64_t rows = g.cols_rows();
  const std::int64_t px = g.out_px();
  const std::int64_t np = static_cast<std::int64_t>(g.n) * px;
  cols.assign(static_cast<std::size_t>(rows * np), 0.0);
  const double* x = input.data();
  const std::int64_t xs_c = static_cast<std::int64_t>(g.h) * g.w;
  const std::int64_t xs_n = xs_c * g.c_in;

  parallel_for(rows, min_rows_for(np), [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t r = r0; r < r1; ++r) {
      const int c = static_cast<int>(r / (g.k * g.k));
      const int kh = static_cast<int>((r / g.k) % g.k);
      const int kw = static_cast<int>(r % g.k);
      double* crow = cols.data() + r * np;
      for (int n = 0; n < g.n; ++n) {
        const double* xc = x + n * xs_n + c * xs_c;
        double* cblock = crow + static_cast<std::int64_t>(n) * px;
        for (int ho = 0; ho < g.ho; ++ho) {
          const int hi = ho * g.s - g.p + kh;
          double* cdst = cblock + static_cast<std::int64_t>(ho) * g.wo;
          if (hi < 0 || hi >= g.h) {
            continue;  // stays zero
          }
          const double* xrow = xc + static_cast<std::int64_t>(hi) * g.w;
          for (int wo = 0; wo < g.wo; ++wo) {
            const int wi = wo * g.s - g.p + kw;
            if (wi >= 0 && wi < g.w) {
              cdst[wo] = xrow[wi];
            }
          }
        }
      }
    }
  });
}

// Adjoint of im2col: scatter-adds cols back into an (N,C,H,W) tensor.
Tensor col2im(const std::vector<double>& cols, const ConvGeom& g) {
  Tensor out({g.n, g.c_in, g.h, g.w});
  const std::int64_t rows = g.cols_rows();
  const std::int64_t px = g.out_px();
  const std::int64_t np = static_cast<std::int64_t>(g.n) * px;
  const std::int64_t xs_c = static_cast<std::int64_t>(g.h) * g.w;
  const std::int64_t xs_n = xs_c * g.c_in;

  parallel_for(g.n, min_rows_for(rows * px), [&](std::int64_t n0, std::int64_t n1) {
    for (std::int64_t n = n0; n < n1; ++n) {
      double* xn = out.data() + n * xs_n;
      for (std::int64_t r = 0; r < rows; ++r) {
        const int c = static_cast<int>(r / (g.k * g.k));
        const int kh = static_cast<int>((r / g.k) % g.k);
        const int kw = static_cast<int>(r % g.k);
        const double* cblock = cols.data() + r * np + n * px;
        double* xc = xn + c * xs_c;
        for (int ho = 0; ho < g.ho; ++ho) {
          const int hi = ho * g.s - g.p + kh;
          if (hi < 0 || hi >= g.h) {
            continue;
          }
          const double* csrc = cblock + static_cast<std::int64_t>(ho) * g.wo;
          double* xrow = xc + static_cast<std::int64_t>(hi) * g.w;
          for (int wo = 0; wo < g.wo; ++wo) {
            const int wi = wo * g.s - g.p + kw;
            if (wi >= 0 && wi < g.w) {
              xrow[wi] += csrc[wo];
            }
          }
        }
      }
    }
  });
  return out;
}

// (N,M,Ho,Wo) -> (M, N*P) gather so GEMMs see contiguous rows per channel.
void to_channel_major(const Tensor& t, std::vector<double>& out) {
  const int n = t.dim(0);
  const int m = t.dim(1);
  const std::int64_t px = static_cast<std::int64_t>(t.dim(2)) * t.dim(3);
  out.resize(static_cast<std::size_t>(t.size()));
  const double* src = t.data();
  for (int nn = 0; nn < n; ++nn) {
    for (int mm = 0; mm < m; ++mm) {
      const double* s = src + (static_cast<std::int64_t>(nn) * m + mm) * px;
      double* d = out.data() + (static_cast<std::int64_t>(mm) * n + nn) * px;
      std::memcpy(d, s, static_cast<std::size_t>(px) * sizeof(double));
    }
  }
}

// (M, N*P) + bias -> (N,M,Ho,Wo)
Tensor from_channel_major(const std::vector<double>& cmat, int n, int m, int ho, int wo, const double* bias) {
  Tensor out({n, m, ho, wo});
  const std::int64_t px = static_cast<std::int64_t>(ho) * wo;
  double* dst = out.data();
  for (int nn = 0; nn < n; ++nn) {
    for (int mm = 0; mm < m; ++mm) {
      const double* s = cmat.data() + (static_cast<std::int64_t>(mm) * n + nn) * px;
      double* d = dst + (static_cast<std::int64_t>(nn) * m + mm) * px;
      const double b = bias ? bias[mm] : 0.0;
      for (std::int64_t i = 0; i < px; ++i) {
        d[i] = s[i] + b;
      }
    }
  }
  return out;
}

Tensor channel_bias_grad(const std::vector<double>& gy_cm, int m, std::int64_t np) {
  Tensor gb({m});
  for (int mm = 0; mm < m; ++mm) {
    const double* row = gy_cm.data() + static_cast<std::int64_t>(mm) * np;
    double acc = 0.0;
    for (std::int64_t j = 0; j < np; ++j) {
      acc += row[j];
    }
    gb[mm] = acc;
  }
  return gb;
}

}  // namespace

Tensor conv2d(const Tensor& input, const LayerParams& params, int stride, int pad) {
  if (params.weight.rank() != 4 || params.weight.dim(2) != params.weight.dim(3)) {
    throw ConfigError("conv2d [" + params.id + "]: weight must be (C_out, C_in, k, k)");
  }
  const int c_out = params.weight.dim(0);
  const int k = params.weight.dim(2);
  const ConvGeom g = conv_geom(input, c_out, k, stride, pad, "conv2d");
  if (params.weight.dim(1) != g.c_in) {
    throw ConfigError("conv2d [" + params.id + "]: weight expects " + std::to_string(params.weight.dim(1)) +
                      " input channels, input has " + std::to_string(g.c_in));
  }
  if (params.bias.shape() != std::vector<int>{c_out}) {
    throw ConfigError("conv2d [" + params.id + "]: bias must be (C_out)");
  }

  std::vector<double> cols;
  im2col(input, g, cols);
  const std::int64_t np = static_cast<std::int64_t>(g.n) * g.out_px();
  std::vector<double> cmat(static_cast<std::size_t>(c_out * np));
  gemm_ab(params.weight.data(), cols.data(), cmat.data(), c_out, g.cols_rows(), np);
  Tensor out = from_channel_major(cmat, g.n, c_out, g.ho, g.wo, params.bias.data());
  require_finite(out, "conv2d output");
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const LayerParams& params, int stride, int pad, const Tensor& grad_out) {
  const int c_out = params.weight.dim(0);
  const int k = params.weight.dim(2);
  const ConvGeom g = conv_geom(input, c_out, k, stride, pad, "conv2d_backward");
  if (grad_out.shape() != std::vector<int>{g.n, c_out, g.ho, g.wo}) {
    throw ConfigError("conv2d_backward [" + params.id + "]: grad_out shape " + grad_out.shape_str() + " does not match output");
  }

  const std::int64_t np = static_cast<std::int64_t>(g.n) * g.out_px();
  const std::int64_t kk = g.cols_rows();

  std::vector<double> gy_cm;
  to_channel_major(grad_out, gy_cm);

  ConvGrads grads;
  grads.bias = channel_bias_grad(gy_cm, c_out, np);

  std::vector<double> cols;
  im2col(input, g, cols);
  grads.weight = Tensor(params.weight.shape());
  gemm_abt(gy_cm.data(), cols.data(), grads.weight.data(), c_out, kk, np);

  std::vector<double> dcols(static_cast<std::size_t>(kk * np));
  gemm_atb(params.weight.data(), gy_cm.data(), dcols.data(), c_out, kk, np);
  grads.input = col2im(dcols, g);

  require_finite(grads.input, "conv2d_backward grad_input");
  require_finite(grads.weight, "conv2d_backward grad_weight");
  require_finite(grads.bias, "conv2d_backward grad_bias");
  return grads;
}

Tensor upconv2d(const Tensor& input, const LayerParams& params, int stride, int pad) {
  if (params.weight.rank() != 4 || params.weight.dim(2) != params.weight.dim(3)) {
    throw ConfigError("upconv2d [" + params.id + "]: weight must be (C_in, C_out, k, k)");
  }
  if (input.rank() != 4) {
    throw ConfigError("upconv2d [" + params.id + "]: input must be (N,C,H,W)");
  }
  const int c_in = params.weight.dim(0);
  const int c_out = params.weight.dim(1);
  const int k = params.weight.dim(2);
  if (input.dim(1) != c_in) {
    throw ConfigError("upconv2d [" + params.id + "]: channel mismatch");
  }
  if (params.bias.shape() != std::vector<int>{c_out}) {
    throw ConfigError("upconv2d [" + params.id + "]: bias must be (C_out)");
  }
  const int n = input.dim(0);
  const int h = input.dim(2);
  const int w = input.dim(3);
  const int ho = (h - 1) * stride - 2 * pad + k;
  const int wo = (w - 1) * stride - 2 * pad + k;
  if (ho < 1 || wo < 1) {
    throw ConfigError("upconv2d [" + params.id + "]: output spatial size would be empty");
  }

  // The adjoint of a conv whose input is this op's output.
  Tensor virtual_in({n, c_out, ho, wo});
  const ConvGeom g = conv_geom(virtual_in, c_in, k, stride, pad, "upconv2d");

  std::vector<double> x_cm;
  to_channel_major(input, x_cm);
  const std::int64_t np = static_cast<std::int64_t>(n) * h * w;
  const std::int64_t kk = g.cols_rows();
  std::vector<double> dcols(static_cast<std::size_t>(kk * np));
  gemm_atb(params.weight.data(), x_cm.data(), dcols.data(), c_in, kk, np);
  Tensor out = col2im(dcols, g);

  double* od = out.data();
  const std::int64_t opx = static_cast<std::int64_t>(ho) * wo;
  for (int nn = 0; nn < n; ++nn) {
    for (int cc = 0; cc < c_out; ++cc) {
      const double b = params.bias[cc];
      double* d = od + (static_cast<std::int64_t>(nn) * c_out + cc) * opx;
      for (std::int64_t i = 0; i < opx; ++i) {
        d[i] += b;
      }
    }
  }
  require_finite(out, "upconv2d output");
  return out;
}

ConvGrads upconv2d_backward(const Tensor& input, const LayerParams& params, int stride, int pad, const Tensor& grad_out) {
  const int c_in = params.weight.dim(0);
  const int c_out = params.weight.dim(1);
  const int k = params.weight.dim(2);
  const int n = input.dim(0);
  const int h = input.dim(2);
  const int w = input.dim(3);
  const int ho = (h - 1) * stride - 2 * pad + k;
  const int wo = (w - 1) * stride - 2 * pad + k;
  if (grad_out.shape() != std::vector<int>{n, c_out, ho, wo}) {
    throw ConfigError("upconv2d_backward [" + params.id + "]: grad_out shape " + grad_out.shape_str() + " does not match output");
  }

  const ConvGeom g = conv_geom(grad_out, c_in, k, stride, pad, "upconv2d_backward");
  const std::int64_t np = static_cast<std::int64_t>(n) * h * w;
  const std::int64_t kk = g.cols_rows();

  std::vector<double> cols;
  im2col(grad_out, g, cols);

  ConvGrads grads;
  // grad wrt input: the virtual conv applied forward to grad_out.
  std::vector<double> gx_cm(static_cast<std::size_t>(c_in * np));
  gemm_ab(params.weight.data(), cols.data(), gx_cm.data(), c_in, kk, np);
  grads.input = from_channel_major(gx_cm, n, c_in, h, w, nullptr);

  std::vector<double> x_cm;
  to_channel_major(input, x_cm);
  grads.weight = Tensor(params.weight.shape());
  gemm_abt(x_cm.data(), cols.data(), grads.weight.data(), c_in, kk, np);

  std::vector<double> gy_cm;
  to_channel_major(grad_out, gy_cm);
  grads.bias = channel_bias_grad(gy_cm, c_out, static_cast<std::int64_t>(n) * ho * wo);

  require_finite(grads.input, "upconv2d_backward grad_input");
  require_finite(grads.weight, "upconv2d_backward grad_weight");
  require_finite(grads.bias, "upconv2d_backward grad_bias");
  return grads;
}

Tensor fully_connected(const Tensor& input, const LayerParams& params) {
  if (input.rank() != 2 || params.weight.rank() != 2) {
    throw ConfigError("fully_connected [" + params.id + "]: input and weight must be rank 2");
  }
  const int n = input.dim(0);
  const int d_in = input.dim(1);
  const int d_out = params.weight.dim(0);
  if (params.weight.dim(1) != d_in) {
    throw ConfigError("fully_connected [" + params.id + "]: weight expects D_in=" + std::to_string(params.weight.dim(1)) +
                      ", input has " + std::to_string(d_in));
  }
  if (params.bias.shape() != std::vector<int>{d_out}) {
    throw ConfigError("fully_connected [" + params.id + "]: bias must be (D_out)");
  }
  Tensor out({n, d_out});
  gemm_abt(input.data(), params.weight.data(), out.data(), n, d_out, d_in);
  for (int r = 0; r < n; ++r) {
    double* row = out.data() + static_cast<std::int64_t>(r) * d_out;
    for (int c = 0; c < d_out; ++c) {
      row[c] += params.bias[c];
    }
  }
  require_finite(out, "fully_connected output");
  return out;
}

FcGrads fully_connected_backward(const Tensor& input, const LayerParams& params, const Tensor& grad_out) {
  const int n = input.dim(0);
  const int d_in = input.dim(1);
  const int d_out = params.weight.dim(0);
  if (grad_out.shape() != std::vector<int>{n, d_out}) {
    throw ConfigError("fully_connected_backward [" + params.id + "]: grad_out shape mismatch");
  }
  FcGrads grads;
  grads.input = Tensor({n, d_in});
  gemm_ab(grad_out.data(), params.weight.data(), grads.input.data(), n, d_out, d_in);
  grads.weight = Tensor({d_out, d_in});
  gemm_atb(grad_out.data(), input.data(), grads.weight.data(), n, d_out, d_in);
  grads.bias = Tensor({d_out});
  for (int r = 0; r < n; ++r) {
    const double* row = grad_out.data() + static_cast<std::int64_t>(r) * d_out;
    for (int c = 0; c < d_out; ++c) {
      grads.bias[c] += row[c];
    }
  }
  require_finite(grads.input, "fully_connected_backward grad_input");
  require_finite(grads.weight, "fully_connected_backward grad_weight");
  require_finite(grads.bias, "fully_connected_backward grad_bias");
  return grads;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  const double* x = input.data();
  double* y = out.data();
  const std::int64_t n = input.size();
  for (std::int64_t i = 0; i < n; ++i) {
    y[i] = x[i] > 0.0 ? x[i] : 0.0;
  }
  require_finite(out, "relu output");
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  require_same_shape(input, grad_out, "relu_backward");
  Tensor gx(input.shape());
  const double* x = input.data();
  const double* gy = grad_out.data();
  double* g = gx.data();
  const std::int64_t n = input.size();
  for (std::int64_t i = 0; i < n; ++i) {
    g[i] = x[i] > 0.0 ? gy[i] : 0.0;
  }
  require_finite(gx, "relu_backward grad_input");
  return gx;
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.rank() != b.rank()) {
    throw ConfigError("concat: rank mismatch");
  }
  if (axis < 0 || axis >= a.rank()) {
    throw ConfigError("concat: axis out of range");
  }
  for (int i = 0; i < a.rank(); ++i) {
    if (i != axis && a.dim(i) != b.dim(i)) {
      throw ConfigError("concat: non-axis dimension mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
  }
  std::vector<int> shape = a.shape();
  shape[static_cast<std::size_t>(axis)] += b.dim(axis);
  Tensor out(shape);

  std::int64_t outer = 1;
  for (int i = 0; i < axis; ++i) {
    outer *= a.dim(i);
  }
  std::int64_t inner = 1;
  for (int i = axis + 1; i < a.rank(); ++i) {
    inner *= a.dim(i);
  }
  const std::int64_t a_block = a.dim(axis) * inner;
  const std::int64_t b_block = b.dim(axis) * inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * (a_block + b_block), a.data() + o * a_block, static_cast<std::size_t>(a_block) * sizeof(double));
    std::memcpy(out.data() + o * (a_block + b_block) + a_block, b.data() + o * b_block,
                static_cast<std::size_t>(b_block) * sizeof(double));
  }
  return out;
}

std::pair<Tensor, Tensor> concat_backward(const Tensor& grad_out, const std::vector<int>& a_shape, const std::vector<int>& b_shape,
                                          int axis) {
  Tensor ga(a_shape);
  Tensor gb(b_shape);
  if (axis < 0 || axis >= grad_out.rank()) {
    throw ConfigError("concat_backward: axis out of range");
  }
  if (grad_out.dim(axis) != ga.dim(axis) + gb.dim(axis)) {
    throw ConfigError("concat_backward: grad_out does not split into the given shapes");
  }
  std::int64_t outer = 1;
  for (int i = 0; i < axis; ++i) {
    outer *= grad_out.dim(i);
  }
  std::int64_t inner = 1;
  for (int i = axis + 1; i < grad_out.rank(); ++i) {
    inner *= grad_out.dim(i);
  }
  const std::int64_t a_block = ga.dim(axis) * inner;
  const std::int64_t b_block = gb.dim(axis) * inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    std::memcpy(ga.data() + o * a_block, grad_out.data() + o * (a_block + b_block), static_cast<std::size_t>(a_block) * sizeof(double));
    std::memcpy(gb.data() + o * b_block, grad_out.data() + o * (a_block + b_block) + a_block,
                static_cast<std::size_t>(b_block) * sizeof(double));
  }
  return {std::move(ga), std::move(gb)};
}

}  // namespace aflow
