#include "aflow/trainer.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <vector>

#include "aflow/errors.hpp"
#include "aflow/losses.hpp"

namespace aflow {

std::string train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::kSingleFlow:
      return "single-flow";
    case TrainMode::kSinglePixels:
      return "single-pixels";
    case TrainMode::kMask:
      return "mask";
    case TrainMode::kMultiFlow:
      return "multi-flow";
  }
  throw ConfigError("unknown train mode");
}

TrainMode parse_train_mode(const std::string& name) {
  if (name == "single-flow") {
    return TrainMode::kSingleFlow;
  }
  if (name == "single-pixels") {
    return TrainMode::kSinglePixels;
  }
  if (name == "mask") {
    return TrainMode::kMask;
  }
  if (name == "multi-flow") {
    return TrainMode::kMultiFlow;
  }
  throw UsageError("unknown train mode: " + name);
}

OutputMode output_mode_for(TrainMode mode) {
  switch (mode) {
    case TrainMode::kSingleFlow:
      return OutputMode::kFlow;
    case TrainMode::kSinglePixels:
      return OutputMode::kPixels;
    case TrainMode::kMask:
      return OutputMode::kMask;
    case TrainMode::kMultiFlow:
      return OutputMode::kFlowWithConfidence;
  }
  throw ConfigError("unknown train mode");
}

namespace {

struct Batch {
  std::vector<Tensor> sources;         // one (B,C,H,W) per view
  std::vector<Tensor> transform_rows;  // one (B,D) per view
  Tensor targets;                      // (B,C,H,W)
  Tensor masks;                        // (B,1,H,W)
};

Batch assemble_batch(DatasetReader& reader, Rng& rng, int batch, int views) {
  const int s = reader.manifest().image_size;
  Batch b;
  b.targets = Tensor({batch, 3, s, s});
  b.masks = Tensor({batch, 1, s, s});
  for (int j = 0; j < views; ++j) {
    b.sources.emplace_back(std::vector<int>{batch, 3, s, s});
    b.transform_rows.emplace_back(std::vector<int>{batch, kDeltaCount});
  }
  const std::int64_t img = static_cast<std::int64_t>(3) * s * s;
  const std::int64_t msk = static_cast<std::int64_t>(s) * s;
  for (int i = 0; i < batch; ++i) {
    const TrainingTuple tuple = views == 1 ? reader.sample_single(Split::kTrain, rng) : reader.sample_multi(Split::kTrain, rng, views);
    std::copy(tuple.target.data(), tuple.target.data() + img, b.targets.data() + i * img);
    std::copy(tuple.target_mask.data(), tuple.target_mask.data() + msk, b.masks.data() + i * msk);
    for (int j = 0; j < views; ++j) {
      std::copy(tuple.sources[static_cast<std::size_t>(j)].data(), tuple.sources[static_cast<std::size_t>(j)].data() + img,
                b.sources[static_cast<std::size_t>(j)].data() + i * img);
      for (int d = 0; d < kDeltaCount; ++d) {
        b.transform_rows[static_cast<std::size_t>(j)].at2(i, d) =
            tuple.transforms[static_cast<std::size_t>(j)].vec[static_cast<std::size_t>(d)];
      }
    }
  }
  return b;
}

Checkpoint make_checkpoint(const NetworkConfig& config, const AdamConfig& adam_config, TrainMode mode, std::int64_t iteration,
                           const Rng& rng, const NetworkParams& params, const AdamState& adam) {
  Checkpoint ckpt;
  ckpt.meta.network = config;
  ckpt.meta.adam = adam_config;
  ckpt.meta.train_mode = train_mode_name(mode);
  ckpt.meta.iteration = iteration;
  ckpt.meta.adam_t = adam.t;
  ckpt.meta.rng_state = rng.state_string();
  ckpt.params = params;
  ckpt.adam = adam;
  return ckpt;
}

std::string checkpoint_name(std::int64_t iter) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06" PRId64 ".ckpt", iter);
  return buf;
}

}  // namespace

Checkpoint train(const NetworkConfig& base_config, const AdamConfig& adam_config, DatasetReader& reader,
                 const TrainOptions& options) {
  if (options.iterations < 0 || options.batch < 1) {
    throw UsageError("train: iterations must be >= 0 and batch >= 1");
  }
  if (reader.manifest().image_size != base_config.image_size) {
    throw ConfigError("train: dataset size " + std::to_string(reader.manifest().image_size) + " != network size " +
                      std::to_string(base_config.image_size));
  }

  std::error_code ec;
  std::filesystem::create_directories(options.out_dir, ec);
  if (ec) {
    throw IoError("train: cannot create " + options.out_dir.string());
  }

  NetworkConfig config = base_config;
  config.mode = output_mode_for(options.mode);

  NetworkParams params;
  AdamState adam;
  Rng rng(0);
  std::int64_t start_iter = 0;

  if (!options.resume.empty()) {
    Checkpoint ckpt = load_checkpoint(options.resume);
    if (network_config_to_json(ckpt.meta.network) != network_config_to_json(config)) {
      throw ConfigError("train: resume checkpoint config does not match the requested config");
    }
    if (ckpt.meta.train_mode != train_mode_name(options.mode)) {
      throw ConfigError("train: resume checkpoint was trained in mode " + ckpt.meta.train_mode);
    }
    params = std::move(ckpt.params);
    adam = std::move(ckpt.adam);
    rng.set_state(ckpt.meta.rng_state);
    start_iter = ckpt.meta.iteration;
  } else {
    params = build_network(config, Rng::derive_seed(options.seed, 0x9e7));
    adam = AdamState::init(adam_config, params);
    rng = Rng(Rng::derive_seed(options.seed, 0xda7a));
  }

  const std::filesystem::path log_path = options.out_dir / "loss_log.tsv";
  std::ofstream log(log_path, options.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) {
    throw IoError("train: cannot open " + log_path.string());
  }

  const int views = options.mode == TrainMode::kMultiFlow ? 2 : 1;

  for (std::int64_t iter = start_iter + 1; iter <= options.iterations; ++iter) {
    const Batch batch = assemble_batch(reader, rng, options.batch, views);

    double loss = 0.0;
    NetworkParams grads;
    try {
      switch (options.mode) {
        case TrainMode::kSingleFlow:
        case TrainMode::kSinglePixels: {
          SingleViewResult r = forward_single(config, params, batch.sources[0], batch.transform_rows[0], config.mode);
          LossResult lr = l1_loss(r.prediction, batch.targets);
          loss = lr.value;
          grads = backward_single(config, params, r, lr.grad);
          break;
        }
        case TrainMode::kMask: {
          SingleViewResult r = forward_single(config, params, batch.sources[0], batch.transform_rows[0], config.mode);
          LossResult lr = cross_entropy_loss(r.prediction, batch.masks);
          loss = lr.value;
          grads = backward_single(config, params, r, lr.grad);
          break;
        }
        case TrainMode::kMultiFlow: {
          MultiViewResult r = forward_multi(config, params, batch.sources, batch.transform_rows);
          LossResult lr = l1_loss(r.fused, batch.targets);
          loss = lr.value;
          grads = backward_multi(config, params, r, lr.grad);
          break;
        }
      }
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite loss");
      }
      adam_step(params, grads, adam);
    } catch (const NumericError& e) {
      // Preserve the last usable state for inspection before aborting.
      save_checkpoint(make_checkpoint(config, adam_config, options.mode, iter - 1, rng, params, adam),
                      options.out_dir / "diagnostic.ckpt");
      throw NumericError("train: " + std::string(e.what()) + " at iteration " + std::to_string(iter) +
                         "; diagnostic checkpoint written");
    }

    char line[64];
    std::snprintf(line, sizeof(line), "%" PRId64 "\t%.9g\n", iter, loss);
    log << line;

    if ((iter % 500 == 0 || iter == options.iterations) && iter > 0) {
      std::cerr << "[train " << train_mode_name(options.mode) << "] iter " << iter << "/" << options.iterations
                << " loss " << loss << "\n";
    }

    if (options.ckpt_every > 0 && iter % options.ckpt_every == 0 && iter != options.iterations) {
      save_checkpoint(make_checkpoint(config, adam_config, options.mode, iter, rng, params, adam),
                      options.out_dir / checkpoint_name(iter));
      sync_storage_precision(params, adam);
    }
  }
  log.flush();

  Checkpoint final_ckpt = make_checkpoint(config, adam_config, options.mode, options.iterations, rng, params, adam);
  save_checkpoint(final_ckpt, options.out_dir / "final.ckpt");
  final_ckpt.sync_storage_precision();
  return final_ckpt;
}

}  // namespace aflow
