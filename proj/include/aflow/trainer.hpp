#ifndef AFLOW_TRAINER_HPP_
#define AFLOW_TRAINER_HPP_

#include <filesystem>
#include <string>

#include "aflow/adam.hpp"
#include "aflow/checkpoint.hpp"
#include "aflow/dataset.hpp"
#include "aflow/network.hpp"

namespace aflow {

enum class TrainMode { kSingleFlow, kSinglePixels, kMask, kMultiFlow };

std::string train_mode_name(TrainMode mode);
TrainMode parse_train_mode(const std::string& name);
OutputMode output_mode_for(TrainMode mode);

struct TrainOptions {
  std::int64_t iterations = 0;
  int batch = 16;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kSingleFlow;
  std::int64_t ckpt_every = 0;  // 0 = final checkpoint only
  std::filesystem::path out_dir;
  std::filesystem::path resume;  // optional checkpoint to continue from
};

// Runs sample -> forward -> loss -> backward -> adam_step for the requested
// iterations, appending one "iter<TAB>loss" line per iteration to
// out_dir/loss_log.tsv and writing checkpoints at the configured cadence plus
// out_dir/final.ckpt. Fully deterministic given the seed. A non-finite loss
// aborts after writing out_dir/diagnostic.ckpt.
Checkpoint train(const NetworkConfig& config, const AdamConfig& adam_config, DatasetReader& reader, const TrainOptions& options);

}  // namespace aflow

#endif  // AFLOW_TRAINER_HPP_
