#include "aflow/config_io.hpp"

#include <json.hpp>

#include "aflow/errors.hpp"

namespace aflow {
namespace {

using Json = nlohmann::ordered_json;

Json network_config_json(const NetworkConfig& c) {
  Json j;
  j["image_size"] = c.image_size;
  j["image_channels"] = c.image_channels;
  j["transform_dim"] = c.transform_dim;
  j["encoder_channels"] = c.encoder_channels;
  j["encoder_fc"] = c.encoder_fc;
  j["transform_fc"] = c.transform_fc;
  j["decoder_fc"] = c.decoder_fc;
  j["decoder_channels"] = c.decoder_channels;
  j["conv_kernel"] = c.conv_kernel;
  j["up_kernel"] = c.up_kernel;
  j["mode"] = mode_name(c.mode);
  return j;
}

NetworkConfig network_config_parse(const Json& j) {
  NetworkConfig c;
  try {
    c.image_size = j.at("image_size").get<int>();
    c.image_channels = j.at("image_channels").get<int>();
    c.transform_dim = j.at("transform_dim").get<int>();
    c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
    c.encoder_fc = j.at("encoder_fc").get<std::vector<int>>();
    c.transform_fc = j.at("transform_fc").get<std::vector<int>>();
    c.decoder_fc = j.at("decoder_fc").get<std::vector<int>>();
    c.decoder_channels = j.at("decoder_channels").get<std::vector<int>>();
    c.conv_kernel = j.at("conv_kernel").get<int>();
    c.up_kernel = j.at("up_kernel").get<int>();
    c.mode = parse_mode(j.at("mode").get<std::string>());
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed network config: ") + e.what());
  }
  c.validate();
  return c;
}

Json adam_config_json(const AdamConfig& a) {
  Json j;
  j["beta1"] = a.beta1;
  j["beta2"] = a.beta2;
  j["eps"] = a.eps;
  j["lr"] = a.lr;
  j["step_size"] = a.step_size;
  j["gamma"] = a.gamma;
  return j;
}

AdamConfig adam_config_parse(const Json& j) {
  AdamConfig a;
  try {
    a.beta1 = j.at("beta1").get<double>();
    a.beta2 = j.at("beta2").get<double>();
    a.eps = j.at("eps").get<double>();
    a.lr = j.at("lr").get<double>();
    a.step_size = j.at("step_size").get<std::int64_t>();
    a.gamma = j.at("gamma").get<double>();
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed adam config: ") + e.what());
  }
  return a;
}

}  // namespace

std::string network_config_to_json(const NetworkConfig& config) { return network_config_json(config).dump(2); }

NetworkConfig network_config_from_json(const std::string& text) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    throw DataError("network config is not valid JSON");
  }
  return network_config_parse(j);
}

std::string checkpoint_meta_to_json(const CheckpointMeta& meta) {
  Json j;
  j["network"] = network_config_json(meta.network);
  j["adam"] = adam_config_json(meta.adam);
  j["train_mode"] = meta.train_mode;
  j["iteration"] = meta.iteration;
  j["adam_t"] = meta.adam_t;
  j["rng_state"] = meta.rng_state;
  return j.dump(2);
}

CheckpointMeta checkpoint_meta_from_json(const std::string& text) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    throw DataError("checkpoint metadata is not valid JSON");
  }
  CheckpointMeta meta;
  try {
    meta.network = network_config_parse(j.at("network"));
    meta.adam = adam_config_parse(j.at("adam"));
    meta.train_mode = j.at("train_mode").get<std::string>();
    meta.iteration = j.at("iteration").get<std::int64_t>();
    meta.adam_t = j.at("adam_t").get<std::int64_t>();
    meta.rng_state = j.at("rng_state").get<std::string>();
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed checkpoint metadata: ") + e.what());
  }
  return meta;
}

}  // namespace aflow
