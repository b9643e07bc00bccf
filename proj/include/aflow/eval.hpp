#ifndef AFLOW_EVAL_HPP_
#define AFLOW_EVAL_HPP_

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "aflow/dataset.hpp"
#include "aflow/image.hpp"
#include "aflow/network.hpp"
#include "aflow/tensor.hpp"

namespace aflow {

// Mean |pred - target| over foreground pixels and channels; nullopt when the
// mask selects nothing (the caller excludes such tuples from aggregates).
std::optional<double> mean_foreground_l1(const Tensor& prediction, const Tensor& target, const Tensor& target_mask);

// Produces a (3,H,W) prediction of the tuple's target view.
using Predictor = std::function<Tensor(const TrainingTuple&)>;

// Warps the first source by the exact analytic flow — the non-learned upper
// bound any trained model is compared against.
Predictor make_oracle_predictor();
Predictor make_network_predictor(const NetworkConfig& config, const NetworkParams& params, bool multi_view);

struct EvalOptions {
  std::int64_t tuples = 20000;
  std::uint64_t seed = 0;
  Split split = Split::kTest;
  int views = 1;  // sources per tuple
};

struct DeltaStat {
  int delta = 0;
  double mean_l1 = 0.0;
  std::int64_t count = 0;
};

struct EvalReport {
  std::int64_t tuples_requested = 0;
  std::int64_t tuples_evaluated = 0;
  std::int64_t excluded_empty_foreground = 0;
  double overall_l1 = 0.0;
  std::vector<DeltaStat> per_delta;  // keyed by the first source's delta
};

EvalReport evaluate(DatasetReader& reader, const Predictor& predict, const EvalOptions& options);
std::string report_to_json(const EvalReport& report);

// Mean foreground L1 for synthesizing target azimuth bin (column) from
// input azimuth bin (row), both coarsened to the 20-degree vocabulary grid
// (18 bins; +180 and -180 land in the same cell).
struct ConfusionMatrix {
  int bins = 0;
  std::vector<double> sum;
  std::vector<std::int64_t> count;

  bool has(int r, int c) const { return count[static_cast<std::size_t>(r * bins + c)] > 0; }
  double cell(int r, int c) const;
  int cell_delta_deg(int r, int c) const;
  double mean_over(const std::function<bool(int, int)>& select) const;
};

ConfusionMatrix confusion_matrix(DatasetReader& reader, const Predictor& predict, int samples_per_cell, std::uint64_t seed,
                                 Split split);
std::string confusion_to_json(const ConfusionMatrix& m);
ImageU8 render_confusion_heatmap(const ConfusionMatrix& m);

// Side-by-side (prediction | source) canvas with lines from sampled target
// points to their absolute sampling coordinates. Output is (H, 2W + gutter).
ImageU8 render_flow_overlay(const Tensor& prediction, const Tensor& source, const FlowField& flow, int sample_count, Rng& rng);

// One blue-to-red heatmap per normalized mask.
std::vector<ImageU8> render_confidence_heatmaps(const std::vector<Tensor>& normalized_masks);

// Fraction of pixels where thresholded sigmoid(logits) matches the target
// mask, averaged over sampled test tuples.
double mask_pixel_accuracy(DatasetReader& reader, const NetworkConfig& config, const NetworkParams& params, std::int64_t tuples,
                           std::uint64_t seed, Split split);

}  // namespace aflow

#endif  // AFLOW_EVAL_HPP_
