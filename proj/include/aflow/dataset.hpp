#ifndef AFLOW_DATASET_HPP_
#define AFLOW_DATASET_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "aflow/network.hpp"
#include "aflow/rng.hpp"
#include "aflow/sampler.hpp"
#include "aflow/tensor.hpp"

namespace aflow {

// 72 azimuth bins at 5 degrees; transform vocabulary of 19 deltas at 20
// degrees from -180 to +180.
constexpr int kAzimuthBins = 72;
constexpr int kAzimuthStepDeg = 5;
constexpr int kDeltaStepDeg = 20;
constexpr int kDeltaCount = 19;
constexpr int kDeltaMinDeg = -180;

enum class Split { kTrain, kTest };

struct DatasetManifest {
  int format_version = 1;
  std::uint64_t seed = 0;
  int instance_count = 0;
  int image_size = 0;
  double train_fraction = 0.8;
  std::vector<int> azimuth_bins;  // normally all 72
  std::filesystem::path root;     // directory holding the manifest (not serialized)

  std::vector<int> instance_ids(Split split) const;
  bool is_test_instance(int id) const;
  std::filesystem::path view_path(int id, int bin) const;
  std::filesystem::path mask_path(int id, int bin) const;
};

// Renders `instances` sprite instances at all 72 azimuths and writes the
// view/mask PNGs plus a JSON `manifest` file. Deterministic given seed.
DatasetManifest generate_dataset(std::uint64_t seed, int instances, int size, const std::filesystem::path& out_dir);

DatasetManifest load_manifest(const std::filesystem::path& dir);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& dir);

// Exact in-plane warp between two azimuths: the source coordinate for target
// pixel p is R(theta_source - theta_target) * (p - c) + c with c the canvas
// center ((W-1)/2, (H-1)/2), returned as offsets from the identity grid.
FlowField analytic_flow(double theta_source_deg, double theta_target_deg, int h, int w);

// One-hot over the 19-delta vocabulary; delta must be a multiple of 20 in
// [-180, 180].
ViewTransform encode_transform(int delta_deg);
int decode_transform(const ViewTransform& t);

struct TrainingTuple {
  int instance = 0;
  int target_bin = 0;
  std::vector<int> source_bins;
  std::vector<int> deltas;  // degrees, target azimuth minus source azimuth (wrapped)
  std::vector<Tensor> sources;              // (3,H,W) each
  std::vector<ViewTransform> transforms;
  Tensor target;       // (3,H,W)
  Tensor target_mask;  // (1,H,W), values exactly 0 or 1
};

// Loads views on demand and keeps the decoded 8-bit images cached. Not
// thread-safe; use one reader per thread.
class DatasetReader {
 public:
  explicit DatasetReader(DatasetManifest manifest);

  const DatasetManifest& manifest() const { return manifest_; }
  Tensor view(int instance, int bin);
  Tensor mask(int instance, int bin);

  // Samples an instance from the split, a target view, and source view(s)
  // whose azimuth delta to the target is in the vocabulary.
  TrainingTuple sample_single(Split split, Rng& rng);
  TrainingTuple sample_multi(Split split, Rng& rng, int views = 2);

 private:
  struct CachedView {
    std::vector<std::uint8_t> view;  // RGB8
    std::vector<std::uint8_t> mask;  // gray8
  };
  const CachedView& cached(int instance, int bin);
  TrainingTuple sample(Split split, Rng& rng, int views);

  DatasetManifest manifest_;
  std::map<std::pair<int, int>, CachedView> cache_;
};

// Wraps an angle to (-180, 180].
int wrap_delta_deg(int delta);

}  // namespace aflow

#endif  // AFLOW_DATASET_HPP_
