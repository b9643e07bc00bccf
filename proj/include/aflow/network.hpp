#ifndef AFLOW_NETWORK_HPP_
#define AFLOW_NETWORK_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aflow/layers.hpp"
#include "aflow/sampler.hpp"
#include "aflow/tensor.hpp"

namespace aflow {

// What the final decoder layer emits.
//   kFlow               2 channels: sampling offsets; prediction is the warp.
//   kPixels             3 channels: RGB decoded directly (the baseline).
//   kMask               1 channel: foreground logits.
//   kFlowWithConfidence 3 channels: offsets + a confidence channel.
enum class OutputMode { kFlow, kPixels, kMask, kFlowWithConfidence };

int mode_channels(OutputMode mode);
std::string mode_name(OutputMode mode);
OutputMode parse_mode(const std::string& name);

// Relative viewpoint transformation as a fixed-length real vector; in the
// default world a 19-entry one-hot over azimuth deltas.
struct ViewTransform {
  std::vector<double> vec;
};

struct NetworkConfig {
  int image_size = 64;
  int image_channels = 3;
  int transform_dim = 19;
  std::vector<int> encoder_channels{16, 32, 64, 128, 256, 256};
  std::vector<int> encoder_fc{512, 512};
  std::vector<int> transform_fc{64, 64};
  std::vector<int> decoder_fc{512, 256};
  std::vector<int> decoder_channels{256, 128, 64, 32, 16};  // final mode layer appended
  int conv_kernel = 3;  // odd; stride 2, pad (k-1)/2 halves each level
  int up_kernel = 4;    // even; stride 2, pad (k-2)/2 doubles each level
  OutputMode mode = OutputMode::kFlow;

  int levels() const { return static_cast<int>(encoder_channels.size()); }
  int output_channels() const { return mode_channels(mode); }
  void validate() const;

  // "desk64" (default), "desk32" (5 levels at 32 px), "tiny" (4 px, for
  // numerical checks).
  static NetworkConfig preset(const std::string& name);
};

// Ordered, named set of all learnable layers. Order is a pure function of
// the config and is the serialization order.
struct NetworkParams {
  std::vector<LayerParams> layers;

  LayerParams& layer(const std::string& id);
  const LayerParams& layer(const std::string& id) const;
  std::int64_t total_parameters() const;
};

// He-style initialization: weights ~ N(0, sqrt(2/fan_in)), biases zero.
NetworkParams build_network(const NetworkConfig& config, std::uint64_t seed);

// Zero tensors shaped like `params`, for gradient accumulation.
NetworkParams zeros_like(const NetworkParams& params);

// Everything backward needs from a forward pass. Opaque to callers.
struct ForwardActivations {
  Tensor source;
  Tensor transform;
  std::vector<Tensor> conv_in;    // input to each encoder conv
  std::vector<Tensor> conv_pre;   // pre-ReLU conv outputs
  std::vector<Tensor> fc_in;      // enc_fc1, enc_fc2, tf_fc1, tf_fc2, dec_fc1, dec_fc2 inputs
  std::vector<Tensor> fc_pre;     // matching pre-ReLU outputs
  std::vector<Tensor> uconv_in;   // input to each decoder uconv
  std::vector<Tensor> uconv_pre;  // pre-ReLU outputs (last layer has no ReLU)
  Tensor raw_output;              // final decoder output
  OutputMode mode = OutputMode::kFlow;
};

struct SingleViewResult {
  Tensor prediction;                   // (N, C, H, W); sampled view, RGB, or logits
  std::optional<FlowField> flow;       // flow modes only
  std::optional<Tensor> confidence;    // raw nonnegative confidence (N,1,H,W)
  ForwardActivations acts;
};

// Stacks per-sample transforms into the (N, transform_dim) matrix the
// network consumes.
Tensor transform_batch(const std::vector<ViewTransform>& transforms);

SingleViewResult forward_single(const NetworkConfig& config, const NetworkParams& params, const Tensor& source,
                                const Tensor& transform_rows, OutputMode mode);
SingleViewResult forward_single(const NetworkConfig& config, const NetworkParams& params, const Tensor& source,
                                const ViewTransform& transform, OutputMode mode);

// Gradients of a scalar loss w.r.t. every parameter, given gradients w.r.t.
// the mode outputs. `grad_confidence` is required exactly when the forward
// mode produced a confidence channel.
NetworkParams backward_single(const NetworkConfig& config, const NetworkParams& params, const SingleViewResult& result,
                              const Tensor& grad_prediction, const Tensor* grad_confidence = nullptr);

// Per-pixel normalization of raw confidences to sum to one across views; if
// the raw sum at a pixel falls below 1e-8 every view gets 1/N there.
std::vector<Tensor> normalize_confidence(const std::vector<Tensor>& raw_masks);

// Backward of normalize_confidence; returns gradients w.r.t. the raw masks
// (zero at degenerate pixels).
std::vector<Tensor> normalize_confidence_backward(const std::vector<Tensor>& raw_masks, const std::vector<Tensor>& grad_normalized);

// Per-pixel convex combination of per-view predictions.
Tensor fuse_predictions(const std::vector<Tensor>& predictions, const std::vector<Tensor>& normalized_masks);

struct FuseGrads {
  std::vector<Tensor> predictions;
  std::vector<Tensor> masks;
};
FuseGrads fuse_predictions_backward(const std::vector<Tensor>& predictions, const std::vector<Tensor>& normalized_masks,
                                    const Tensor& grad_fused);

struct MultiViewResult {
  Tensor fused;
  std::vector<SingleViewResult> views;
  std::vector<Tensor> normalized_masks;
};

// Shared-weight per-view prediction (confidence mode) + normalization +
// fusion. Accepts any number of views >= 1; each view is a (N,C,H,W) source
// batch with its own (N, transform_dim) transform rows.
MultiViewResult forward_multi(const NetworkConfig& config, const NetworkParams& params, const std::vector<Tensor>& sources,
                              const std::vector<Tensor>& transform_rows);
MultiViewResult forward_multi(const NetworkConfig& config, const NetworkParams& params, const std::vector<Tensor>& sources,
                              const std::vector<ViewTransform>& transforms);

NetworkParams backward_multi(const NetworkConfig& config, const NetworkParams& params, const MultiViewResult& result,
                             const Tensor& grad_fused);

// Sets pixels whose sigmoid(logit) falls below `threshold` to the background
// color; exactly-at-threshold pixels count as foreground.
Tensor apply_foreground_mask(const Tensor& prediction, const Tensor& mask_logits, double threshold = 0.5,
                             double background = 1.0);

}  // namespace aflow

#endif  // AFLOW_NETWORK_HPP_
