#include "aflow/network.hpp"

#include <algorithm>
#include <cmath>

#include "aflow/errors.hpp"
#include "aflow/rng.hpp"

namespace aflow {
namespace {

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Tensor reshape(const Tensor& t, std::vector<int> shape) {
  if (shape_size(shape) != t.size()) {
    throw ConfigError("reshape: element count mismatch");
  }
  return Tensor(std::move(shape), t.vec());
}

constexpr double kConfidenceEps = 1e-8;

}  // namespace

int mode_channels(OutputMode mode) {
  switch (mode) {
    case OutputMode::kFlow:
      return 2;
    case OutputMode::kPixels:
      return 3;
    case OutputMode::kMask:
      return 1;
    case OutputMode::kFlowWithConfidence:
      return 3;
  }
  throw ConfigError("unknown output mode");
}

std::string mode_name(OutputMode mode) {
  switch (mode) {
    case OutputMode::kFlow:
      return "flow";
    case OutputMode::kPixels:
      return "pixels";
    case OutputMode::kMask:
      return "mask";
    case OutputMode::kFlowWithConfidence:
      return "flow_confidence";
  }
  throw ConfigError("unknown output mode");
}

OutputMode parse_mode(const std::string& name) {
  if (name == "flow") {
    return OutputMode::kFlow;
  }
  if (name == "pixels") {
    return OutputMode::kPixels;
  }
  if (name == "mask") {
    return OutputMode::kMask;
  }
  if (name == "flow_confidence") {
    return OutputMode::kFlowWithConfidence;
  }
  throw ConfigError("unknown output mode name: " + name);
}

void NetworkConfig::validate() const {
  if (levels() < 1) {
    throw ConfigError("config: need at least one encoder level");
  }
  int s = image_size;
  for (int i = 0; i < levels(); ++i) {
    if (s % 2 != 0) {
      throw ConfigError("config: image_size must be 2^levels");
    }
    s /= 2;
  }
  if (s != 1) {
    throw ConfigError("config: image_size " + std::to_string(image_size) + " does not reduce to 1x1 over " +
                      std::to_string(levels()) + " stride-2 convs");
  }
  if (conv_kernel < 1 || conv_kernel % 2 == 0) {
    throw ConfigError("config: conv_kernel must be odd");
  }
  if (up_kernel < 2 || up_kernel % 2 != 0) {
    throw ConfigError("config: up_kernel must be even");
  }
  if (encoder_fc.size() != 2 || transform_fc.size() != 2 || decoder_fc.size() != 2) {
    throw ConfigError("config: fc stages each take exactly two widths");
  }
  if (static_cast<int>(decoder_channels.size()) != levels() - 1) {
    throw ConfigError("config: decoder_channels must have levels-1 entries (the final layer is mode-determined)");
  }
  if (transform_dim < 1) {
    throw ConfigError("config: transform_dim must be >= 1");
  }
  for (int c : encoder_channels) {
    if (c < 1) {
      throw ConfigError("config: channel widths must be positive");
    }
  }
  for (int c : decoder_channels) {
    if (c < 1) {
      throw ConfigError("config: channel widths must be positive");
    }
  }
}

NetworkConfig NetworkConfig::preset(const std::string& name) {
  NetworkConfig c;
  if (name == "desk64") {
    return c;
  }
  if (name == "desk32") {
    c.image_size = 32;
    c.encoder_channels = {16, 32, 64, 128, 256};
    c.encoder_fc = {256, 256};
    c.transform_fc = {64, 64};
    c.decoder_fc = {256, 128};
    c.decoder_channels = {128, 64, 32, 16};
    return c;
  }
  if (name == "tiny") {
    c.image_size = 4;
    c.encoder_channels = {6, 8};
    c.encoder_fc = {10, 10};
    c.transform_fc = {6, 6};
    c.decoder_fc = {10, 8};
    c.decoder_channels = {6};
    return c;
  }
  throw ConfigError("unknown preset: " + name);
}

LayerParams& NetworkParams::layer(const std::string& id) {
  for (auto& l : layers) {
    if (l.id == id) {
      return l;
    }
  }
  throw ConfigError("no layer named " + id);
}

const LayerParams& NetworkParams::layer(const std::string& id) const {
  for (const auto& l : layers) {
    if (l.id == id) {
      return l;
    }
  }
  throw ConfigError("no layer named " + id);
}

std::int64_t NetworkParams::total_parameters() const {
  std::int64_t n = 0;
  for (const auto& l : layers) {
    n += l.weight.size() + l.bias.size();
  }
  return n;
}

namespace {

// Canonical layer list: shapes and order derive from the config alone.
struct LayerSpec {
  std::string id;
  std::vector<int> weight_shape;
  int bias_size;
};

std::vector<LayerSpec> layer_specs(const NetworkConfig& cfg) {
  std::vector<LayerSpec> specs;
  int in_ch = cfg.image_channels;
  for (int i = 0; i < cfg.levels(); ++i) {
    const int out_ch = cfg.encoder_channels[static_cast<std::size_t>(i)];
    specs.push_back({"enc_conv" + std::to_string(i + 1), {out_ch, in_ch, cfg.conv_kernel, cfg.conv_kernel}, out_ch});
    in_ch = out_ch;
  }
  specs.push_back({"enc_fc1", {cfg.encoder_fc[0], in_ch}, cfg.encoder_fc[0]});
  specs.push_back({"enc_fc2", {cfg.encoder_fc[1], cfg.encoder_fc[0]}, cfg.encoder_fc[1]});
  specs.push_back({"tf_fc1", {cfg.transform_fc[0], cfg.transform_dim}, cfg.transform_fc[0]});
  specs.push_back({"tf_fc2", {cfg.transform_fc[1], cfg.transform_fc[0]}, cfg.transform_fc[1]});
  const int joint = cfg.encoder_fc[1] + cfg.transform_fc[1];
  specs.push_back({"dec_fc1", {cfg.decoder_fc[0], joint}, cfg.decoder_fc[0]});
  specs.push_back({"dec_fc2", {cfg.decoder_fc[1], cfg.decoder_fc[0]}, cfg.decoder_fc[1]});
  int up_in = cfg.decoder_fc[1];
  for (int i = 0; i < cfg.levels(); ++i) {
    const bool last = i == cfg.levels() - 1;
    const int out_ch = last ? cfg.output_channels() : cfg.decoder_channels[static_cast<std::size_t>(i)];
    specs.push_back({"dec_uconv" + std::to_string(i + 1), {up_in, out_ch, cfg.up_kernel, cfg.up_kernel}, out_ch});
    up_in = out_ch;
  }
  return specs;
}

}  // namespace

NetworkParams build_network(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(Rng::derive_seed(seed, 0x1a7e5));
  NetworkParams params;
  for (const LayerSpec& spec : layer_specs(config)) {
    LayerParams lp;
    lp.id = spec.id;
    lp.weight = Tensor(spec.weight_shape);
    lp.bias = Tensor({spec.bias_size});
    std::int64_t fan_in = 1;
    for (std::size_t i = 1; i < spec.weight_shape.size(); ++i) {
      fan_in *= spec.weight_shape[i];
    }
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::int64_t i = 0; i < lp.weight.size(); ++i) {
      lp.weight[i] = rng.normal() * scale;
    }
    params.layers.push_back(std::move(lp));
  }
  return params;
}

NetworkParams zeros_like(const NetworkParams& params) {
  NetworkParams out;
  out.layers.reserve(params.layers.size());
  for (const auto& l : params.layers) {
    out.layers.push_back({l.id, Tensor(l.weight.shape()), Tensor(l.bias.shape())});
  }
  return out;
}

namespace {

struct SplitRaw {
  FlowField flow;
  Tensor conf_pre;  // pre-softplus confidence channel (N,1,H,W)
};

SplitRaw split_flow_confidence(const Tensor& raw) {
  const int n = raw.dim(0);
  const int h = raw.dim(2);
  const int w = raw.dim(3);
  SplitRaw s{FlowField::zero(n, h, w), Tensor({n, 1, h, w})};
  for (int nn = 0; nn < n; ++nn) {
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        s.flow.offsets.at(nn, 0, v, u) = raw.at(nn, 0, v, u);
        s.flow.offsets.at(nn, 1, v, u) = raw.at(nn, 1, v, u);
        s.conf_pre.at(nn, 0, v, u) = raw.at(nn, 2, v, u);
      }
    }
  }
  return s;
}

constexpr int kFcEnc1 = 0;
constexpr int kFcEnc2 = 1;
constexpr int kFcTf1 = 2;
constexpr int kFcTf2 = 3;
constexpr int kFcDec1 = 4;
constexpr int kFcDec2 = 5;

}  // namespace

Tensor transform_batch(const std::vector<ViewTransform>& transforms) {
  if (transforms.empty()) {
    throw UsageError("transform_batch: empty transform list");
  }
  const int d = static_cast<int>(transforms.front().vec.size());
  Tensor rows({static_cast<int>(transforms.size()), d});
  for (std::size_t b = 0; b < transforms.size(); ++b) {
    if (static_cast<int>(transforms[b].vec.size()) != d) {
      throw ConfigError("transform_batch: inconsistent transform lengths");
    }
    for (int i = 0; i < d; ++i) {
      rows.at2(static_cast<int>(b), i) = transforms[b].vec[static_cast<std::size_t>(i)];
    }
  }
  return rows;
}

SingleViewResult forward_single(const NetworkConfig& config, const NetworkParams& params, const Tensor& source,
                                const ViewTransform& transform, OutputMode mode) {
  Tensor rows({source.rank() == 4 ? source.dim(0) : 1, static_cast<int>(transform.vec.size())});
  for (int b = 0; b < rows.dim(0); ++b) {
    for (int i = 0; i < rows.dim(1); ++i) {
      rows.at2(b, i) = transform.vec[static_cast<std::size_t>(i)];
    }
  }
  return forward_single(config, params, source, rows, mode);
}

SingleViewResult forward_single(const NetworkConfig& config, const NetworkParams& params, const Tensor& source,
                                const Tensor& transform_rows, OutputMode mode) {
  config.validate();
  if (source.rank() != 4 || source.dim(1) != config.image_channels || source.dim(2) != config.image_size ||
      source.dim(3) != config.image_size) {
    throw ConfigError("forward_single: source " + source.shape_str() + " does not match configured size");
  }
  if (transform_rows.rank() != 2 || transform_rows.dim(0) != source.dim(0) || transform_rows.dim(1) != config.transform_dim) {
    throw ConfigError("forward_single: transform rows " + transform_rows.shape_str() + " must be (N, " +
                      std::to_string(config.transform_dim) + ")");
  }
  const LayerParams& final_layer = params.layer("dec_uconv" + std::to_string(config.levels()));
  if (final_layer.weight.dim(1) != mode_channels(mode)) {
    throw ConfigError("forward_single: network was built with " + std::to_string(final_layer.weight.dim(1)) +
                      " output channels but mode '" + mode_name(mode) + "' needs " + std::to_string(mode_channels(mode)));
  }

  const int n = source.dim(0);
  const int conv_pad = (config.conv_kernel - 1) / 2;
  const int up_pad = (config.up_kernel - 2) / 2;

  SingleViewResult res;
  ForwardActivations& A = res.acts;
  A.mode = mode;
  A.source = source;

  // Input view encoder.
  Tensor x = source;
  for (int i = 0; i < config.levels(); ++i) {
    const LayerParams& lp = params.layer("enc_conv" + std::to_string(i + 1));
    A.conv_in.push_back(x);
    Tensor pre = conv2d(x, lp, 2, conv_pad);
    A.conv_pre.push_back(pre);
    x = relu(pre);
  }
  Tensor feat = reshape(x, {n, x.dim(1)});

  A.fc_in.resize(6);
  A.fc_pre.resize(6);
  A.fc_in[kFcEnc1] = feat;
  A.fc_pre[kFcEnc1] = fully_connected(feat, params.layer("enc_fc1"));
  A.fc_in[kFcEnc2] = relu(A.fc_pre[kFcEnc1]);
  A.fc_pre[kFcEnc2] = fully_connected(A.fc_in[kFcEnc2], params.layer("enc_fc2"));
  Tensor enc_out = relu(A.fc_pre[kFcEnc2]);

  // Viewpoint transformation encoder.
  A.transform = transform_rows;
  A.fc_in[kFcTf1] = transform_rows;
  A.fc_pre[kFcTf1] = fully_connected(transform_rows, params.layer("tf_fc1"));
  A.fc_in[kFcTf2] = relu(A.fc_pre[kFcTf1]);
  A.fc_pre[kFcTf2] = fully_connected(A.fc_in[kFcTf2], params.layer("tf_fc2"));
  Tensor tf_out = relu(A.fc_pre[kFcTf2]);

  // Synthesis decoder.
  Tensor joint = concat(enc_out, tf_out, 1);
  A.fc_in[kFcDec1] = joint;
  A.fc_pre[kFcDec1] = fully_connected(joint, params.layer("dec_fc1"));
  A.fc_in[kFcDec2] = relu(A.fc_pre[kFcDec1]);
  A.fc_pre[kFcDec2] = fully_connected(A.fc_in[kFcDec2], params.layer("dec_fc2"));
  Tensor dec = relu(A.fc_pre[kFcDec2]);

  Tensor up = reshape(dec, {n, config.decoder_fc[1], 1, 1});
  for (int i = 0; i < config.levels(); ++i) {
    const LayerParams& lp = params.layer("dec_uconv" + std::to_string(i + 1));
    A.uconv_in.push_back(up);
    Tensor pre = upconv2d(up, lp, 2, up_pad);
    A.uconv_pre.push_back(pre);
    up = (i == config.levels() - 1) ? pre : relu(pre);  // no ReLU on the last decoder layer
  }
  A.raw_output = up;

  switch (mode) {
    case OutputMode::kFlow: {
      FlowField flow{up};
      res.prediction = bilinear_sample(source, flow);
      res.flow = std::move(flow);
      break;
    }
    case OutputMode::kPixels:
    case OutputMode::kMask:
      res.prediction = up;
      break;
    case OutputMode::kFlowWithConfidence: {
      SplitRaw s = split_flow_confidence(up);
      Tensor conf(s.conf_pre.shape());
      for (std::int64_t i = 0; i < conf.size(); ++i) {
        conf[i] = softplus(s.conf_pre[i]);
      }
      res.prediction = bilinear_sample(source, s.flow);
      res.flow = std::move(s.flow);
      res.confidence = std::move(conf);
      break;
    }
  }
  return res;
}

NetworkParams backward_single(const NetworkConfig& config, const NetworkParams& params, const SingleViewResult& result,
                              const Tensor& grad_prediction, const Tensor* grad_confidence) {
  const ForwardActivations& A = result.acts;
  const int n = A.source.dim(0);
  const int conv_pad = (config.conv_kernel - 1) / 2;
  const int up_pad = (config.up_kernel - 2) / 2;

  NetworkParams grads = zeros_like(params);

  // Gradient w.r.t. the raw decoder output.
  Tensor grad_raw;
  switch (A.mode) {
    case OutputMode::kFlow: {
      SampleGrads sg = bilinear_sample_backward(A.source, *result.flow, grad_prediction);
      grad_raw = sg.flow.offsets;
      break;
    }
    case OutputMode::kPixels:
    case OutputMode::kMask:
      require_same_shape(grad_prediction, A.raw_output, "backward_single grad_prediction");
      grad_raw = grad_prediction;
      break;
    case OutputMode::kFlowWithConfidence: {
      if (grad_confidence == nullptr) {
        throw ConfigError("backward_single: confidence mode needs grad_confidence");
      }
      SampleGrads sg = bilinear_sample_backward(A.source, *result.flow, grad_prediction);
      grad_raw = Tensor(A.raw_output.shape());
      const int h = grad_raw.dim(2);
      const int w = grad_raw.dim(3);
      for (int nn = 0; nn < n; ++nn) {
        for (int v = 0; v < h; ++v) {
          for (int u = 0; u < w; ++u) {
            grad_raw.at(nn, 0, v, u) = sg.flow.offsets.at(nn, 0, v, u);
            grad_raw.at(nn, 1, v, u) = sg.flow.offsets.at(nn, 1, v, u);
            // softplus'(z) = sigmoid(z); pre-activation is raw channel 2
            grad_raw.at(nn, 2, v, u) = grad_confidence->at(nn, 0, v, u) * sigmoid(A.raw_output.at(nn, 2, v, u));
          }
        }
      }
      break;
    }
  }

  // Decoder uconv chain.
  Tensor g = grad_raw;
  for (int i = config.levels() - 1; i >= 0; --i) {
    const LayerParams& lp = params.layer("dec_uconv" + std::to_string(i + 1));
    if (i != config.levels() - 1) {
      g = relu_backward(A.uconv_pre[static_cast<std::size_t>(i)], g);
    }
    ConvGrads cg = upconv2d_backward(A.uconv_in[static_cast<std::size_t>(i)], lp, 2, up_pad, g);
    LayerParams& dst = grads.layer(lp.id);
    dst.weight = std::move(cg.weight);
    dst.bias = std::move(cg.bias);
    g = std::move(cg.input);
  }

  // Decoder fc chain.
  Tensor gdec = reshape(g, {n, config.decoder_fc[1]});
  gdec = relu_backward(A.fc_pre[kFcDec2], gdec);
  {
    FcGrads fg = fully_connected_backward(A.fc_in[kFcDec2], params.layer("dec_fc2"), gdec);
    grads.layer("dec_fc2").weight = std::move(fg.weight);
    grads.layer("dec_fc2").bias = std::move(fg.bias);
    gdec = relu_backward(A.fc_pre[kFcDec1], fg.input);
  }
  Tensor gjoint;
  {
    FcGrads fg = fully_connected_backward(A.fc_in[kFcDec1], params.layer("dec_fc1"), gdec);
    grads.layer("dec_fc1").weight = std::move(fg.weight);
    grads.layer("dec_fc1").bias = std::move(fg.bias);
    gjoint = std::move(fg.input);
  }

  auto [g_enc, g_tf] = concat_backward(gjoint, {n, config.encoder_fc[1]}, {n, config.transform_fc[1]}, 1);

  // Transform encoder chain.
  {
    Tensor gt = relu_backward(A.fc_pre[kFcTf2], g_tf);
    FcGrads fg = fully_connected_backward(A.fc_in[kFcTf2], params.layer("tf_fc2"), gt);
    grads.layer("tf_fc2").weight = std::move(fg.weight);
    grads.layer("tf_fc2").bias = std::move(fg.bias);
    gt = relu_backward(A.fc_pre[kFcTf1], fg.input);
    FcGrads fg1 = fully_connected_backward(A.fc_in[kFcTf1], params.layer("tf_fc1"), gt);
    grads.layer("tf_fc1").weight = std::move(fg1.weight);
    grads.layer("tf_fc1").bias = std::move(fg1.bias);
  }

  // Input encoder chain.
  Tensor ge = relu_backward(A.fc_pre[kFcEnc2], g_enc);
  {
    FcGrads fg = fully_connected_backward(A.fc_in[kFcEnc2], params.layer("enc_fc2"), ge);
    grads.layer("enc_fc2").weight = std::move(fg.weight);
    grads.layer("enc_fc2").bias = std::move(fg.bias);
    ge = relu_backward(A.fc_pre[kFcEnc1], fg.input);
    FcGrads fg1 = fully_connected_backward(A.fc_in[kFcEnc1], params.layer("enc_fc1"), ge);
    grads.layer("enc_fc1").weight = std::move(fg1.weight);
    grads.layer("enc_fc1").bias = std::move(fg1.bias);
    ge = std::move(fg1.input);
  }
  Tensor gconv = reshape(ge, {n, config.encoder_channels.back(), 1, 1});
  for (int i = config.levels() - 1; i >= 0; --i) {
    const LayerParams& lp = params.layer("enc_conv" + std::to_string(i + 1));
    gconv = relu_backward(A.conv_pre[static_cast<std::size_t>(i)], gconv);
    ConvGrads cg = conv2d_backward(A.conv_in[static_cast<std::size_t>(i)], lp, 2, conv_pad, gconv);
    LayerParams& dst = grads.layer(lp.id);
    dst.weight = std::move(cg.weight);
    dst.bias = std::move(cg.bias);
    gconv = std::move(cg.input);
  }

  return grads;
}

std::vector<Tensor> normalize_confidence(const std::vector<Tensor>& raw_masks) {
  if (raw_masks.empty()) {
    throw UsageError("normalize_confidence: need at least one mask");
  }
  const Tensor& first = raw_masks.front();
  for (const Tensor& m : raw_masks) {
    require_same_shape(m, first, "normalize_confidence");
    for (std::int64_t i = 0; i < m.size(); ++i) {
      if (!(m[i] >= 0.0)) {
        throw DataError("normalize_confidence: raw confidences must be nonnegative and finite");
      }
    }
  }
  const std::size_t views = raw_masks.size();
  const double uniform = 1.0 / static_cast<double>(views);
  std::vector<Tensor> out(views, Tensor(first.shape()));
  for (std::int64_t i = 0; i < first.size(); ++i) {
    double sum = 0.0;
    for (const Tensor& m : raw_masks) {
      sum += m[i];
    }
    if (sum < kConfidenceEps) {
      for (std::size_t j = 0; j < views; ++j) {
        out[j][i] = uniform;
      }
    } else {
      for (std::size_t j = 0; j < views; ++j) {
        out[j][i] = raw_masks[j][i] / sum;
      }
    }
  }
  return out;
}

std::vector<Tensor> normalize_confidence_backward(const std::vector<Tensor>& raw_masks,
                                                  const std::vector<Tensor>& grad_normalized) {
  const std::size_t views = raw_masks.size();
  if (grad_normalized.size() != views) {
    throw ConfigError("normalize_confidence_backward: view count mismatch");
  }
  const Tensor& first = raw_masks.front();
  std::vector<Tensor> out(views, Tensor(first.shape()));
  for (std::int64_t i = 0; i < first.size(); ++i) {
    double sum = 0.0;
    for (const Tensor& m : raw_masks) {
      sum += m[i];
    }
    if (sum < kConfidenceEps) {
      continue;  // constant 1/N region: zero gradient
    }
    double weighted = 0.0;
    for (std::size_t j = 0; j < views; ++j) {
      weighted += grad_normalized[j][i] * (raw_masks[j][i] / sum);
    }
    for (std::size_t j = 0; j < views; ++j) {
      out[j][i] = (grad_normalized[j][i] - weighted) / sum;
    }
  }
  return out;
}

Tensor fuse_predictions(const std::vector<Tensor>& predictions, const std::vector<Tensor>& normalized_masks) {
  if (predictions.empty() || predictions.size() != normalized_masks.size()) {
    throw ConfigError("fuse_predictions: need matching non-empty prediction and mask lists");
  }
  const Tensor& p0 = predictions.front();
  const int n = p0.dim(0);
  const int c = p0.dim(1);
  const std::int64_t px = static_cast<std::int64_t>(p0.dim(2)) * p0.dim(3);
  for (const Tensor& p : predictions) {
    require_same_shape(p, p0, "fuse_predictions");
  }
  for (const Tensor& m : normalized_masks) {
    if (m.dim(0) != n || m.dim(1) != 1 || m.dim(2) != p0.dim(2) || m.dim(3) != p0.dim(3)) {
      throw ConfigError("fuse_predictions: mask shape " + m.shape_str() + " incompatible with predictions");
    }
  }

  Tensor fused(p0.shape());
  for (std::size_t j = 0; j < predictions.size(); ++j) {
    const Tensor& p = predictions[j];
    const Tensor& m = normalized_masks[j];
    for (int nn = 0; nn < n; ++nn) {
      const double* mrow = m.data() + nn * px;
      for (int cc = 0; cc < c; ++cc) {
        const double* prow = p.data() + (static_cast<std::int64_t>(nn) * c + cc) * px;
        double* frow = fused.data() + (static_cast<std::int64_t>(nn) * c + cc) * px;
        if (j == 0) {
          for (std::int64_t i = 0; i < px; ++i) {
            frow[i] = mrow[i] * prow[i];
          }
        } else {
          for (std::int64_t i = 0; i < px; ++i) {
            frow[i] += mrow[i] * prow[i];
          }
        }
      }
    }
  }
  return fused;
}

FuseGrads fuse_predictions_backward(const std::vector<Tensor>& predictions, const std::vector<Tensor>& normalized_masks,
                                    const Tensor& grad_fused) {
  const Tensor& p0 = predictions.front();
  require_same_shape(grad_fused, p0, "fuse_predictions_backward");
  const int n = p0.dim(0);
  const int c = p0.dim(1);
  const std::int64_t px = static_cast<std::int64_t>(p0.dim(2)) * p0.dim(3);

  FuseGrads grads;
  for (std::size_t j = 0; j < predictions.size(); ++j) {
    Tensor gp(p0.shape());
    Tensor gm(normalized_masks[j].shape());
    const Tensor& p = predictions[j];
    const Tensor& m = normalized_masks[j];
    for (int nn = 0; nn < n; ++nn) {
      const double* mrow = m.data() + nn * px;
      double* gmrow = gm.data() + nn * px;
      for (int cc = 0; cc < c; ++cc) {
        const std::int64_t off = (static_cast<std::int64_t>(nn) * c + cc) * px;
        const double* grow = grad_fused.data() + off;
        const double* prow = p.data() + off;
        double* gprow = gp.data() + off;
        for (std::int64_t i = 0; i < px; ++i) {
          gprow[i] = grow[i] * mrow[i];
          gmrow[i] += grow[i] * prow[i];
        }
      }
    }
    grads.predictions.push_back(std::move(gp));
    grads.masks.push_back(std::move(gm));
  }
  return grads;
}

MultiViewResult forward_multi(const NetworkConfig& config, const NetworkParams& params, const std::vector<Tensor>& sources,
                              const std::vector<Tensor>& transform_rows) {
  if (sources.empty()) {
    throw UsageError("forward_multi: need at least one input view");
  }
  if (sources.size() != transform_rows.size()) {
    throw ConfigError("forward_multi: view/transform count mismatch");
  }

  MultiViewResult res;
  std::vector<Tensor> raw_conf;
  std::vector<Tensor> preds;
  for (std::size_t j = 0; j < sources.size(); ++j) {
    SingleViewResult v = forward_single(config, params, sources[j], transform_rows[j], OutputMode::kFlowWithConfidence);
    raw_conf.push_back(*v.confidence);
    preds.push_back(v.prediction);
    res.views.push_back(std::move(v));
  }
  res.normalized_masks = normalize_confidence(raw_conf);
  res.fused = fuse_predictions(preds, res.normalized_masks);
  return res;
}

MultiViewResult forward_multi(const NetworkConfig& config, const NetworkParams& params, const std::vector<Tensor>& sources,
                              const std::vector<ViewTransform>& transforms) {
  std::vector<Tensor> rows;
  rows.reserve(transforms.size());
  for (const ViewTransform& t : transforms) {
    rows.push_back(transform_batch({t}));
  }
  return forward_multi(config, params, sources, rows);
}

NetworkParams backward_multi(const NetworkConfig& config, const NetworkParams& params, const MultiViewResult& result,
                             const Tensor& grad_fused) {
  std::vector<Tensor> preds;
  std::vector<Tensor> raw_conf;
  for (const auto& v : result.views) {
    preds.push_back(v.prediction);
    raw_conf.push_back(*v.confidence);
  }
  FuseGrads fg = fuse_predictions_backward(preds, result.normalized_masks, grad_fused);
  std::vector<Tensor> grad_raw_conf = normalize_confidence_backward(raw_conf, fg.masks);

  NetworkParams total = zeros_like(params);
  for (std::size_t j = 0; j < result.views.size(); ++j) {
    NetworkParams g = backward_single(config, params, result.views[j], fg.predictions[j], &grad_raw_conf[j]);
    for (std::size_t l = 0; l < total.layers.size(); ++l) {
      for (std::int64_t i = 0; i < total.layers[l].weight.size(); ++i) {
        total.layers[l].weight[i] += g.layers[l].weight[i];
      }
      for (std::int64_t i = 0; i < total.layers[l].bias.size(); ++i) {
        total.layers[l].bias[i] += g.layers[l].bias[i];
      }
    }
  }
  return total;
}

Tensor apply_foreground_mask(const Tensor& prediction, const Tensor& mask_logits, double threshold, double background) {
  if (prediction.rank() != 4 || mask_logits.rank() != 4 || mask_logits.dim(1) != 1 ||
      mask_logits.dim(0) != prediction.dim(0) || mask_logits.dim(2) != prediction.dim(2) ||
      mask_logits.dim(3) != prediction.dim(3)) {
    throw ConfigError("apply_foreground_mask: logits " + mask_logits.shape_str() + " incompatible with prediction " +
                      prediction.shape_str());
  }
  Tensor out = prediction;
  const int n = prediction.dim(0);
  const int c = prediction.dim(1);
  const int h = prediction.dim(2);
  const int w = prediction.dim(3);
  for (int nn = 0; nn < n; ++nn) {
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        if (sigmoid(mask_logits.at(nn, 0, v, u)) < threshold) {
          for (int cc = 0; cc < c; ++cc) {
            out.at(nn, cc, v, u) = background;
          }
        }
      }
    }
  }
  return out;
}

}  // namespace aflow
