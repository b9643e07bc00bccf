#include "aflow/eval.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <map>

#include "aflow/errors.hpp"
#include "aflow/sampler.hpp"

namespace aflow {
namespace {

using Json = nlohmann::ordered_json;

Tensor unsqueeze(const Tensor& chw) { return Tensor({1, chw.dim(0), chw.dim(1), chw.dim(2)}, chw.vec()); }

Tensor squeeze(const Tensor& nchw) { return Tensor({nchw.dim(1), nchw.dim(2), nchw.dim(3)}, nchw.vec()); }

double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// value in [0,1] -> blue-to-red; both endpoints' channels are monotone.
void heat_color(double v, std::uint8_t* rgb) {
  const double t = std::clamp(v, 0.0, 1.0);
  rgb[0] = static_cast<std::uint8_t>(std::lround(255.0 * t));
  rgb[1] = static_cast<std::uint8_t>(std::lround(64.0 * (1.0 - std::abs(2.0 * t - 1.0))));
  rgb[2] = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - t)));
}

// 3x5 digit glyphs, row-major bit masks (msb = left column).
constexpr std::uint8_t kDigits[10][5] = {
    {0b111, 0b101, 0b101, 0b101, 0b111},  // 0
    {0b010, 0b110, 0b010, 0b010, 0b111},  // 1
    {0b111, 0b001, 0b111, 0b100, 0b111},  // 2
    {0b111, 0b001, 0b111, 0b001, 0b111},  // 3
    {0b101, 0b101, 0b111, 0b001, 0b001},  // 4
    {0b111, 0b100, 0b111, 0b001, 0b111},  // 5
    {0b111, 0b100, 0b111, 0b101, 0b111},  // 6
    {0b111, 0b001, 0b010, 0b010, 0b010},  // 7
    {0b111, 0b101, 0b111, 0b101, 0b111},  // 8
    {0b111, 0b101, 0b111, 0b001, 0b111},  // 9
};

void draw_digits(ImageU8& img, int y, int x, int value) {
  const std::string s = std::to_string(value);
  for (char ch : s) {
    if (ch < '0' || ch > '9') {
      x += 4;
      continue;
    }
    const std::uint8_t* glyph = kDigits[ch - '0'];
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 3; ++c) {
        if ((glyph[r] >> (2 - c)) & 1) {
          const int yy = y + r;
          const int xx = x + c;
          if (yy >= 0 && yy < img.height && xx >= 0 && xx < img.width) {
            for (int k = 0; k < img.channels; ++k) {
              img.at(yy, xx, k) = 0;
            }
          }
        }
      }
    }
    x += 4;
  }
}

void draw_line(ImageU8& img, double x0, double y0, double x1, double y1, const std::uint8_t rgb[3]) {
  const int steps = std::max(2, static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1);
  for (int i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) / (steps - 1);
    const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
    const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
    if (x >= 0 && x < img.width && y >= 0 && y < img.height) {
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = rgb[c];
      }
    }
  }
}

}  // namespace

std::optional<double> mean_foreground_l1(const Tensor& prediction, const Tensor& target, const Tensor& target_mask) {
  require_same_shape(prediction, target, "mean_foreground_l1");
  if (target_mask.rank() != 3 || target_mask.dim(0) != 1 || prediction.rank() != 3 || target_mask.dim(1) != prediction.dim(1) ||
      target_mask.dim(2) != prediction.dim(2)) {
    throw ConfigError("mean_foreground_l1: mask " + target_mask.shape_str() + " incompatible with prediction " +
                      prediction.shape_str());
  }
  const int ch = prediction.dim(0);
  const int h = prediction.dim(1);
  const int w = prediction.dim(2);
  double acc = 0.0;
  std::int64_t count = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double mv = target_mask.at3(0, y, x);
      if (mv != 0.0 && mv != 1.0) {
        throw DataError("mean_foreground_l1: mask must be binary");
      }
      if (mv == 1.0) {
        for (int c = 0; c < ch; ++c) {
          acc += std::abs(prediction.at3(c, y, x) - target.at3(c, y, x));
        }
        count += ch;
      }
    }
  }
  if (count == 0) {
    return std::nullopt;
  }
  return acc / static_cast<double>(count);
}

Predictor make_oracle_predictor() {
  return [](const TrainingTuple& tuple) {
    const int h = tuple.target.dim(1);
    const int w = tuple.target.dim(2);
    const FlowField flow =
        analytic_flow(tuple.source_bins.at(0) * kAzimuthStepDeg, tuple.target_bin * kAzimuthStepDeg, h, w);
    return squeeze(bilinear_sample(unsqueeze(tuple.sources.at(0)), flow));
  };
}

Predictor make_network_predictor(const NetworkConfig& config, const NetworkParams& params, bool multi_view) {
  if (multi_view) {
    return [config, &params](const TrainingTuple& tuple) {
      std::vector<Tensor> sources;
      std::vector<Tensor> rows;
      for (std::size_t j = 0; j < tuple.sources.size(); ++j) {
        sources.push_back(unsqueeze(tuple.sources[j]));
        rows.push_back(transform_batch({tuple.transforms[j]}));
      }
      return squeeze(forward_multi(config, params, sources, rows).fused);
    };
  }
  return [config, &params](const TrainingTuple& tuple) {
    SingleViewResult r =
        forward_single(config, params, unsqueeze(tuple.sources.at(0)), transform_batch({tuple.transforms.at(0)}), config.mode);
    return squeeze(r.prediction);
  };
}

EvalReport evaluate(DatasetReader& reader, const Predictor& predict, const EvalOptions& options) {
  if (options.tuples < 1) {
    throw UsageError("evaluate: tuple count must be >= 1");
  }
  Rng rng(Rng::derive_seed(options.seed, 0xe7a1));

  EvalReport report;
  report.tuples_requested = options.tuples;
  double total = 0.0;
  std::map<int, std::pair<double, std::int64_t>> per_delta;
  for (std::int64_t i = 0; i < options.tuples; ++i) {
    const TrainingTuple tuple =
        options.views == 1 ? reader.sample_single(options.split, rng) : reader.sample_multi(options.split, rng, options.views);
    const Tensor pred = predict(tuple);
    const std::optional<double> l1 = mean_foreground_l1(pred, tuple.target, tuple.target_mask);
    if (!l1.has_value()) {
      ++report.excluded_empty_foreground;
      continue;
    }
    total += *l1;
    ++report.tuples_evaluated;
    auto& slot = per_delta[tuple.deltas.at(0)];
    slot.first += *l1;
    slot.second += 1;
  }
  if (report.tuples_evaluated == 0) {
    throw DataError("evaluate: every sampled tuple had an empty foreground");
  }
  report.overall_l1 = total / static_cast<double>(report.tuples_evaluated);
  for (const auto& [delta, stat] : per_delta) {
    report.per_delta.push_back({delta, stat.first / static_cast<double>(stat.second), stat.second});
  }
  return report;
}

std::string report_to_json(const EvalReport& report) {
  Json j;
  j["format_version"] = 1;
  j["tuples_requested"] = report.tuples_requested;
  j["tuples_evaluated"] = report.tuples_evaluated;
  j["excluded_empty_foreground"] = report.excluded_empty_foreground;
  j["overall_l1"] = report.overall_l1;
  Json rows = Json::array();
  for (const DeltaStat& d : report.per_delta) {
    Json row;
    row["delta_deg"] = d.delta;
    row["mean_l1"] = d.mean_l1;
    row["count"] = d.count;
    rows.push_back(row);
  }
  j["per_delta"] = rows;
  return j.dump(2) + "\n";
}

double ConfusionMatrix::cell(int r, int c) const {
  const std::size_t i = static_cast<std::size_t>(r * bins + c);
  if (count[i] == 0) {
    throw DataError("confusion cell has no samples");
  }
  return sum[i] / static_cast<double>(count[i]);
}

int ConfusionMatrix::cell_delta_deg(int r, int c) const { return wrap_delta_deg((c - r) * kDeltaStepDeg); }

double ConfusionMatrix::mean_over(const std::function<bool(int, int)>& select) const {
  double acc = 0.0;
  std::int64_t n = 0;
  for (int r = 0; r < bins; ++r) {
    for (int c = 0; c < bins; ++c) {
      if (has(r, c) && select(r, c)) {
        acc += cell(r, c);
        ++n;
      }
    }
  }
  if (n == 0) {
    throw DataError("confusion: selection matched no populated cells");
  }
  return acc / static_cast<double>(n);
}

ConfusionMatrix confusion_matrix(DatasetReader& reader, const Predictor& predict, int samples_per_cell, std::uint64_t seed,
                                 Split split) {
  if (samples_per_cell < 1) {
    throw UsageError("confusion_matrix: samples_per_cell must be >= 1");
  }
  const int bins = 360 / kDeltaStepDeg;  // 18 coarse azimuth bins
  const int fine_per_coarse = kDeltaStepDeg / kAzimuthStepDeg;
  ConfusionMatrix m;
  m.bins = bins;
  m.sum.assign(static_cast<std::size_t>(bins) * bins, 0.0);
  m.count.assign(static_cast<std::size_t>(bins) * bins, 0);

  Rng rng(Rng::derive_seed(seed, 0xc0f));
  const std::vector<int> ids = reader.manifest().instance_ids(split);
  if (ids.empty()) {
    throw DataError("confusion_matrix: split is empty");
  }

  for (int r = 0; r < bins; ++r) {
    for (int c = 0; c < bins; ++c) {
      const int delta = wrap_delta_deg((c - r) * kDeltaStepDeg);
      for (int s = 0; s < samples_per_cell; ++s) {
        TrainingTuple tuple;
        tuple.instance = ids[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(ids.size())))];
        const int fine = static_cast<int>(rng.uniform_int(fine_per_coarse));
        const int src_deg = r * kDeltaStepDeg + fine * kAzimuthStepDeg;
        const int tgt_deg = (src_deg + delta + 360) % 360;
        tuple.target_bin = tgt_deg / kAzimuthStepDeg;
        tuple.source_bins = {src_deg / kAzimuthStepDeg};
        tuple.deltas = {delta};
        tuple.sources = {reader.view(tuple.instance, tuple.source_bins[0])};
        tuple.transforms = {encode_transform(delta)};
        tuple.target = reader.view(tuple.instance, tuple.target_bin);
        tuple.target_mask = reader.mask(tuple.instance, tuple.target_bin);

        const Tensor pred = predict(tuple);
        const std::optional<double> l1 = mean_foreground_l1(pred, tuple.target, tuple.target_mask);
        if (!l1.has_value()) {
          continue;  // flagged by a zero count, never zero-filled
        }
        const std::size_t i = static_cast<std::size_t>(r * bins + c);
        m.sum[i] += *l1;
        m.count[i] += 1;
      }
    }
  }
  return m;
}

std::string confusion_to_json(const ConfusionMatrix& m) {
  Json j;
  j["format_version"] = 1;
  j["bins"] = m.bins;
  j["bin_step_deg"] = kDeltaStepDeg;
  Json cells = Json::array();
  for (int r = 0; r < m.bins; ++r) {
    Json row = Json::array();
    for (int c = 0; c < m.bins; ++c) {
      Json cell;
      cell["count"] = m.count[static_cast<std::size_t>(r * m.bins + c)];
      if (m.has(r, c)) {
        cell["mean_l1"] = m.cell(r, c);
      } else {
        cell["mean_l1"] = nullptr;
      }
      row.push_back(cell);
    }
    cells.push_back(row);
  }
  j["cells"] = cells;
  return j.dump(2) + "\n";
}

ImageU8 render_confusion_heatmap(const ConfusionMatrix& m) {
  constexpr int kCell = 14;
  constexpr int kMargin = 24;
  ImageU8 img;
  img.channels = 3;
  img.width = kMargin + m.bins * kCell;
  img.height = kMargin + m.bins * kCell;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * 3, 255);

  double max_val = 0.0;
  for (int r = 0; r < m.bins; ++r) {
    for (int c = 0; c < m.bins; ++c) {
      if (m.has(r, c)) {
        max_val = std::max(max_val, m.cell(r, c));
      }
    }
  }
  if (max_val <= 0.0) {
    max_val = 1.0;
  }

  for (int r = 0; r < m.bins; ++r) {
    for (int c = 0; c < m.bins; ++c) {
      std::uint8_t rgb[3] = {160, 160, 160};  // cells with no samples stay gray
      if (m.has(r, c)) {
        heat_color(m.cell(r, c) / max_val, rgb);
      }
      for (int y = 0; y < kCell - 1; ++y) {
        for (int x = 0; x < kCell - 1; ++x) {
          for (int k = 0; k < 3; ++k) {
            img.at(kMargin + r * kCell + y, kMargin + c * kCell + x, k) = rgb[k];
          }
        }
      }
    }
  }
  for (int b = 0; b < m.bins; ++b) {
    draw_digits(img, kMargin + b * kCell + 4, 2, b * kDeltaStepDeg);             // row labels: input azimuth
    draw_digits(img, 2, kMargin + b * kCell + 1, b * kDeltaStepDeg);             // column labels: target azimuth
  }
  return img;
}

ImageU8 render_flow_overlay(const Tensor& prediction, const Tensor& source, const FlowField& flow, int sample_count, Rng& rng) {
  if (prediction.rank() != 3 || source.rank() != 3) {
    throw ConfigError("render_flow_overlay: prediction and source must be (C,H,W)");
  }
  const int h = source.dim(1);
  const int w = source.dim(2);
  constexpr int kGutter = 8;
  ImageU8 img;
  img.channels = 3;
  img.width = 2 * w + kGutter;
  img.height = h;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * 3, 255);

  auto blit = [&](const Tensor& t, int x_off) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) {
          const double v = std::clamp(t.dim(0) == 3 ? t.at3(c, y, x) : t.at3(0, y, x), 0.0, 1.0);
          img.at(y, x_off + x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
      }
    }
  };
  blit(prediction, 0);
  blit(source, w + kGutter);

  constexpr std::uint8_t kPalette[6][3] = {{230, 40, 40}, {40, 160, 40},  {40, 70, 230},
                                           {220, 160, 0}, {170, 40, 200}, {0, 170, 170}};
  for (int s = 0; s < sample_count; ++s) {
    const int u = static_cast<int>(rng.uniform_int(w));
    const int v = static_cast<int>(rng.uniform_int(h));
    const double sx = u + flow.offsets.at(0, 0, v, u);
    const double sy = v + flow.offsets.at(0, 1, v, u);
    const double tx = std::clamp(sx, 0.0, w - 1.0) + w + kGutter;
    const double ty = std::clamp(sy, 0.0, h - 1.0);
    draw_line(img, u, v, tx, ty, kPalette[s % 6]);
  }
  return img;
}

std::vector<ImageU8> render_confidence_heatmaps(const std::vector<Tensor>& normalized_masks) {
  std::vector<ImageU8> out;
  for (const Tensor& m : normalized_masks) {
    if (m.rank() != 4 || m.dim(0) != 1 || m.dim(1) != 1) {
      throw ConfigError("render_confidence_heatmaps: masks must be (1,1,H,W)");
    }
    ImageU8 img;
    img.channels = 3;
    img.height = m.dim(2);
    img.width = m.dim(3);
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        std::uint8_t rgb[3];
        heat_color(m.at(0, 0, y, x), rgb);
        for (int c = 0; c < 3; ++c) {
          img.at(y, x, c) = rgb[c];
        }
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

double mask_pixel_accuracy(DatasetReader& reader, const NetworkConfig& config, const NetworkParams& params, std::int64_t tuples,
                           std::uint64_t seed, Split split) {
  if (tuples < 1) {
    throw UsageError("mask_pixel_accuracy: tuple count must be >= 1");
  }
  Rng rng(Rng::derive_seed(seed, 0x3a5c));
  std::int64_t correct = 0;
  std::int64_t total = 0;
  for (std::int64_t i = 0; i < tuples; ++i) {
    const TrainingTuple tuple = reader.sample_single(split, rng);
    SingleViewResult r =
        forward_single(config, params, unsqueeze(tuple.sources[0]), transform_batch({tuple.transforms[0]}), OutputMode::kMask);
    const Tensor logits = r.prediction;  // (1,1,H,W)
    const int h = logits.dim(2);
    const int w = logits.dim(3);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double predicted = sigmoid(logits.at(0, 0, y, x)) >= 0.5 ? 1.0 : 0.0;
        correct += predicted == tuple.target_mask.at3(0, y, x) ? 1 : 0;
        ++total;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace aflow
