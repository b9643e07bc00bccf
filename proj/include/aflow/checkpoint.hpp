#ifndef AFLOW_CHECKPOINT_HPP_
#define AFLOW_CHECKPOINT_HPP_

#include <filesystem>
#include <string>

#include "aflow/adam.hpp"
#include "aflow/config_io.hpp"
#include "aflow/network.hpp"

namespace aflow {

// Full training state. File layout (little-endian):
//   magic "AFLOWCKP" (8 bytes)
//   u32 format version
//   u64 metadata length + UTF-8 JSON metadata
//   u64 tensor count
//   per tensor: u32 name length, name, u32 rank, u64 dims..., f32 data
//   u32 CRC32 of all preceding bytes
// Tensor data is stored in single precision; sync_storage_precision() rounds
// the live doubles through f32 so that a run that wrote a checkpoint and a
// run resumed from it continue from identical state.
struct Checkpoint {
  CheckpointMeta meta;
  NetworkParams params;
  AdamState adam;

  void sync_storage_precision();
};

// Rounds live training state through f32, matching what a save/load
// round-trip would produce.
void sync_storage_precision(NetworkParams& params, AdamState& adam);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace aflow

#endif  // AFLOW_CHECKPOINT_HPP_
