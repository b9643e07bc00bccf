#ifndef AFLOW_CONFIG_IO_HPP_
#define AFLOW_CONFIG_IO_HPP_

#include <string>

#include "aflow/adam.hpp"
#include "aflow/network.hpp"

namespace aflow {

// JSON helpers for the structured-text surfaces (checkpoint header, run
// config echo, manifests, reports). Keys are emitted in a fixed order so
// identical inputs serialize to identical bytes.

std::string network_config_to_json(const NetworkConfig& config);
NetworkConfig network_config_from_json(const std::string& text);

struct CheckpointMeta {
  NetworkConfig network;
  AdamConfig adam;
  std::string train_mode;  // single-flow | single-pixels | mask | multi-flow
  std::int64_t iteration = 0;
  std::int64_t adam_t = 0;
  std::string rng_state;
};

std::string checkpoint_meta_to_json(const CheckpointMeta& meta);
CheckpointMeta checkpoint_meta_from_json(const std::string& text);

}  // namespace aflow

#endif  // AFLOW_CONFIG_IO_HPP_
