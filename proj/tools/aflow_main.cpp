// Command-line front end: dataset generation, training, evaluation,
// synthesis, and visualization. Every command is deterministic given its
// flags; all randomness flows from --seed.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "aflow/checkpoint.hpp"
#include "aflow/config_io.hpp"
#include "aflow/dataset.hpp"
#include "aflow/errors.hpp"
#include "aflow/eval.hpp"
#include "aflow/image.hpp"
#include "aflow/parallel.hpp"
#include "aflow/trainer.hpp"

namespace {

using aflow::Split;
using Json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(item);
  }
  return out;
}

Split parse_split(const std::string& s) {
  if (s == "train") {
    return Split::kTrain;
  }
  if (s == "test") {
    return Split::kTest;
  }
  throw aflow::UsageError("--split must be train or test");
}

struct RunConfig {
  aflow::NetworkConfig network;
  aflow::AdamConfig adam;
  std::int64_t iterations = 0;
  int batch = 16;
  std::uint64_t seed = 0;
  std::string mode = "single-flow";
  std::int64_t ckpt_every = 0;
  int threads = 1;
};

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw aflow::IoError("cannot open config file " + path.string());
  }
  std::stringstream buf;
  buf << is.rdbuf();
  Json j = Json::parse(buf.str(), nullptr, false);
  if (j.is_discarded()) {
    throw aflow::DataError("config file is not valid JSON: " + path.string());
  }
  static const std::vector<std::string> kKnown = {"network", "adam", "train"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(kKnown.begin(), kKnown.end(), key) == kKnown.end()) {
      throw aflow::DataError("config file has unknown key '" + key + "'");
    }
  }
  RunConfig rc;
  if (j.contains("network")) {
    rc.network = aflow::network_config_from_json(j.at("network").dump());
  }
  if (j.contains("adam")) {
    const Json& a = j.at("adam");
    static const std::vector<std::string> kAdamKeys = {"beta1", "beta2", "eps", "lr", "step_size", "gamma"};
    for (const auto& [key, value] : a.items()) {
      if (std::find(kAdamKeys.begin(), kAdamKeys.end(), key) == kAdamKeys.end()) {
        throw aflow::DataError("config file has unknown adam key '" + key + "'");
      }
    }
    if (a.contains("beta1")) rc.adam.beta1 = a.at("beta1").get<double>();
    if (a.contains("beta2")) rc.adam.beta2 = a.at("beta2").get<double>();
    if (a.contains("eps")) rc.adam.eps = a.at("eps").get<double>();
    if (a.contains("lr")) rc.adam.lr = a.at("lr").get<double>();
    if (a.contains("step_size")) rc.adam.step_size = a.at("step_size").get<std::int64_t>();
    if (a.contains("gamma")) rc.adam.gamma = a.at("gamma").get<double>();
  }
  if (j.contains("train")) {
    const Json& t = j.at("train");
    static const std::vector<std::string> kTrainKeys = {"iterations", "batch", "seed", "mode", "ckpt_every", "threads"};
    for (const auto& [key, value] : t.items()) {
      if (std::find(kTrainKeys.begin(), kTrainKeys.end(), key) == kTrainKeys.end()) {
        throw aflow::DataError("config file has unknown train key '" + key + "'");
      }
    }
    if (t.contains("iterations")) rc.iterations = t.at("iterations").get<std::int64_t>();
    if (t.contains("batch")) rc.batch = t.at("batch").get<int>();
    if (t.contains("seed")) rc.seed = t.at("seed").get<std::uint64_t>();
    if (t.contains("mode")) rc.mode = t.at("mode").get<std::string>();
    if (t.contains("ckpt_every")) rc.ckpt_every = t.at("ckpt_every").get<std::int64_t>();
    if (t.contains("threads")) rc.threads = t.at("threads").get<int>();
  }
  return rc;
}

void write_run_config(const RunConfig& rc, const std::filesystem::path& path) {
  Json j;
  j["network"] = Json::parse(aflow::network_config_to_json(rc.network));
  Json a;
  a["beta1"] = rc.adam.beta1;
  a["beta2"] = rc.adam.beta2;
  a["eps"] = rc.adam.eps;
  a["lr"] = rc.adam.lr;
  a["step_size"] = rc.adam.step_size;
  a["gamma"] = rc.adam.gamma;
  j["adam"] = a;
  Json t;
  t["iterations"] = rc.iterations;
  t["batch"] = rc.batch;
  t["seed"] = rc.seed;
  t["mode"] = rc.mode;
  t["ckpt_every"] = rc.ckpt_every;
  t["threads"] = rc.threads;
  j["train"] = t;
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw aflow::IoError("cannot write " + path.string());
  }
  os << j.dump(2) << "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw aflow::IoError("cannot write " + path.string());
  }
  os << text;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw aflow::IoError("cannot create directory " + dir.string());
  }
}

int run(int argc, char** argv) {
  CLI::App app{"View synthesis by predicted appearance flow"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a procedural sprite dataset");
  std::uint64_t gen_seed = 0;
  int gen_instances = 20;
  int gen_size = 64;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "Dataset seed");
  gen->add_option("--instances", gen_instances, "Instance count (>= 5)");
  gen->add_option("--size", gen_size, "Image size (32 or 64)");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a synthesis network");
  std::string tr_config;
  std::string tr_preset;
  std::string tr_data;
  std::string tr_mode;
  std::int64_t tr_iters = -1;
  int tr_batch = -1;
  std::int64_t tr_seed = -1;
  std::string tr_out;
  std::string tr_resume;
  std::int64_t tr_ckpt_every = -1;
  int tr_threads = -1;
  double tr_lr = -1.0;
  std::int64_t tr_step_size = -1;
  tr->add_option("--config", tr_config, "Run config JSON (flags override file values)");
  tr->add_option("--preset", tr_preset, "Network preset: desk64, desk32, tiny");
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--mode", tr_mode, "single-flow | single-pixels | mask | multi-flow");
  tr->add_option("--iters", tr_iters, "Total training iterations");
  tr->add_option("--batch", tr_batch, "Batch size");
  tr->add_option("--seed", tr_seed, "Training seed");
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--resume", tr_resume, "Checkpoint to resume from");
  tr->add_option("--ckpt-every", tr_ckpt_every, "Checkpoint cadence in iterations (0 = final only)");
  tr->add_option("--threads", tr_threads, "Worker threads (results are thread-count independent)");
  tr->add_option("--lr", tr_lr, "ADAM base learning rate");
  tr->add_option("--step-size", tr_step_size, "Learning-rate decay step");

  // synth
  auto* sy = app.add_subcommand("synth", "Synthesize a novel view from input image(s)");
  std::string sy_ckpt;
  std::string sy_input;
  std::string sy_delta;
  std::string sy_out;
  std::string sy_mask_ckpt;
  std::uint64_t sy_seed = 0;
  int sy_samples = 24;
  int sy_threads = 1;
  sy->add_option("--ckpt", sy_ckpt, "Checkpoint")->required();
  sy->add_option("--input", sy_input, "Input PNG(s), comma separated")->required();
  sy->add_option("--delta", sy_delta, "Azimuth delta(s) in degrees, comma separated")->required();
  sy->add_option("--out", sy_out, "Output directory")->required();
  sy->add_option("--mask-ckpt", sy_mask_ckpt, "Optional mask-mode checkpoint applied to the prediction");
  sy->add_option("--seed", sy_seed, "Seed for overlay point sampling");
  sy->add_option("--samples", sy_samples, "Flow overlay sample count");
  sy->add_option("--threads", sy_threads, "Worker threads");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate mean foreground L1 over sampled tuples");
  std::string ev_ckpt;
  std::string ev_data;
  std::string ev_split = "test";
  std::int64_t ev_tuples = 20000;
  std::uint64_t ev_seed = 0;
  std::string ev_out;
  bool ev_oracle = false;
  int ev_threads = 1;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint (omit with --oracle)");
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--split", ev_split, "train | test");
  ev->add_option("--tuples", ev_tuples, "Tuple count");
  ev->add_option("--seed", ev_seed, "Sampling seed");
  ev->add_option("--out", ev_out, "Output directory")->required();
  ev->add_flag("--oracle", ev_oracle, "Evaluate the analytic-flow oracle instead of a checkpoint");
  ev->add_option("--threads", ev_threads, "Worker threads");

  // confusion
  auto* cf = app.add_subcommand("confusion", "Cross-view confusion matrix + heatmap");
  std::string cf_ckpt;
  std::string cf_data;
  int cf_samples = 4;
  std::uint64_t cf_seed = 0;
  std::string cf_split = "test";
  std::string cf_out;
  bool cf_oracle = false;
  int cf_threads = 1;
  cf->add_option("--ckpt", cf_ckpt, "Checkpoint (omit with --oracle)");
  cf->add_option("--data", cf_data, "Dataset directory")->required();
  cf->add_option("--samples-per-cell", cf_samples, "Samples per matrix cell");
  cf->add_option("--seed", cf_seed, "Sampling seed");
  cf->add_option("--split", cf_split, "train | test");
  cf->add_option("--out", cf_out, "Output directory")->required();
  cf->add_flag("--oracle", cf_oracle, "Use the analytic-flow oracle");
  cf->add_option("--threads", cf_threads, "Worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  if (gen->parsed()) {
    aflow::generate_dataset(gen_seed, gen_instances, gen_size, gen_out);
    std::cout << "dataset written to " << gen_out << "\n";
    return kExitOk;
  }

  if (tr->parsed()) {
    RunConfig rc;
    if (!tr_config.empty()) {
      rc = load_run_config(tr_config);
    }
    if (!tr_preset.empty()) {
      rc.network = aflow::NetworkConfig::preset(tr_preset);
    }
    if (tr_mode.empty() && tr_config.empty()) {
      throw aflow::UsageError("train: --mode is required (or provide it via --config)");
    }
    if (!tr_mode.empty()) rc.mode = tr_mode;
    if (tr_iters >= 0) rc.iterations = tr_iters;
    if (tr_batch >= 0) rc.batch = tr_batch;
    if (tr_seed >= 0) rc.seed = static_cast<std::uint64_t>(tr_seed);
    if (tr_ckpt_every >= 0) rc.ckpt_every = tr_ckpt_every;
    if (tr_threads >= 1) rc.threads = tr_threads;
    if (tr_lr > 0.0) rc.adam.lr = tr_lr;
    if (tr_step_size > 0) rc.adam.step_size = tr_step_size;

    aflow::set_thread_count(rc.threads);
    aflow::DatasetReader reader(aflow::load_manifest(tr_data));
    if (reader.manifest().image_size != rc.network.image_size) {
      // Pick the matching preset automatically when the default does not fit.
      if (tr_preset.empty() && tr_config.empty() && reader.manifest().image_size == 32) {
        rc.network = aflow::NetworkConfig::preset("desk32");
      } else {
        throw aflow::ConfigError("network image_size " + std::to_string(rc.network.image_size) +
                                 " does not match dataset size " + std::to_string(reader.manifest().image_size));
      }
    }

    aflow::TrainOptions opts;
    opts.iterations = rc.iterations;
    opts.batch = rc.batch;
    opts.seed = rc.seed;
    opts.mode = aflow::parse_train_mode(rc.mode);
    opts.ckpt_every = rc.ckpt_every;
    opts.out_dir = tr_out;
    if (!tr_resume.empty()) {
      opts.resume = tr_resume;
    }

    ensure_dir(tr_out);
    write_run_config(rc, std::filesystem::path(tr_out) / "config.json");
    aflow::train(rc.network, rc.adam, reader, opts);
    std::cout << "training complete; final checkpoint at " << (std::filesystem::path(tr_out) / "final.ckpt").string() << "\n";
    return kExitOk;
  }

  if (sy->parsed()) {
    aflow::set_thread_count(sy_threads);
    const aflow::Checkpoint ckpt = aflow::load_checkpoint(sy_ckpt);
    const aflow::NetworkConfig& config = ckpt.meta.network;
    const aflow::TrainMode tmode = aflow::parse_train_mode(ckpt.meta.train_mode);

    const std::vector<std::string> inputs = split_csv(sy_input);
    const std::vector<std::string> delta_strs = split_csv(sy_delta);
    if (inputs.empty() || inputs.size() != delta_strs.size()) {
      throw aflow::UsageError("synth: --input and --delta need matching non-empty lists");
    }
    if (tmode != aflow::TrainMode::kMultiFlow && inputs.size() != 1) {
      throw aflow::UsageError("synth: checkpoint mode " + ckpt.meta.train_mode + " takes exactly one input view");
    }

    std::vector<aflow::Tensor> sources;
    std::vector<aflow::ViewTransform> transforms;
    std::vector<int> deltas;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      int delta = 0;
      try {
        delta = std::stoi(delta_strs[i]);
      } catch (const std::exception&) {
        throw aflow::UsageError("synth: bad delta '" + delta_strs[i] + "'");
      }
      aflow::ViewTransform t;
      try {
        t = aflow::encode_transform(delta);
      } catch (const aflow::DataError& e) {
        throw aflow::UsageError(e.what());
      }
      deltas.push_back(delta);
      transforms.push_back(std::move(t));
      const aflow::ImageU8 img = aflow::read_png(inputs[i]);
      if (img.channels != 3 || img.width != config.image_size || img.height != config.image_size) {
        throw aflow::ConfigError("synth: input " + inputs[i] + " must be RGB " + std::to_string(config.image_size) + "x" +
                                 std::to_string(config.image_size));
      }
      const aflow::Tensor chw = aflow::image_to_tensor(img);
      sources.push_back(aflow::Tensor({1, 3, config.image_size, config.image_size}, chw.vec()));
    }

    ensure_dir(sy_out);
    const std::filesystem::path out(sy_out);
    aflow::Tensor prediction;  // (1,C,H,W)

    if (tmode == aflow::TrainMode::kMultiFlow) {
      aflow::MultiViewResult r = aflow::forward_multi(config, ckpt.params, sources, transforms);
      prediction = r.fused;
      const auto heatmaps = aflow::render_confidence_heatmaps(r.normalized_masks);
      for (std::size_t j = 0; j < heatmaps.size(); ++j) {
        aflow::write_png(out / ("confidence_" + std::to_string(j) + ".png"), heatmaps[j]);
      }
      for (std::size_t j = 0; j < r.views.size(); ++j) {
        aflow::Rng rng(aflow::Rng::derive_seed(sy_seed, j));
        const aflow::Tensor pred3({3, config.image_size, config.image_size}, r.views[j].prediction.vec());
        const aflow::Tensor src3({3, config.image_size, config.image_size}, sources[j].vec());
        aflow::write_png(out / ("flow_overlay_" + std::to_string(j) + ".png"),
                         aflow::render_flow_overlay(pred3, src3, *r.views[j].flow, sy_samples, rng));
      }
    } else {
      const aflow::OutputMode omode = aflow::output_mode_for(tmode);
      aflow::SingleViewResult r = aflow::forward_single(config, ckpt.params, sources[0], transforms[0], omode);
      prediction = r.prediction;
      if (omode == aflow::OutputMode::kFlow) {
        aflow::Rng rng(aflow::Rng::derive_seed(sy_seed, 0));
        const aflow::Tensor pred3({3, config.image_size, config.image_size}, r.prediction.vec());
        const aflow::Tensor src3({3, config.image_size, config.image_size}, sources[0].vec());
        aflow::write_png(out / "flow_overlay.png", aflow::render_flow_overlay(pred3, src3, *r.flow, sy_samples, rng));
      }
      if (omode == aflow::OutputMode::kMask) {
        // Logits -> probability map.
        aflow::Tensor prob({1, config.image_size, config.image_size});
        for (std::int64_t i = 0; i < prob.size(); ++i) {
          const double z = r.prediction[i];
          prob[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        }
        aflow::write_png(out / "prediction.png", aflow::tensor_to_image(prob));
        std::cout << "mask written to " << (out / "prediction.png").string() << "\n";
        return kExitOk;
      }
    }

    const int pc = prediction.dim(1);
    aflow::Tensor pred_chw({pc, config.image_size, config.image_size}, prediction.vec());
    aflow::write_png(out / "prediction.png", aflow::tensor_to_image(pred_chw));

    if (!sy_mask_ckpt.empty()) {
      const aflow::Checkpoint mc = aflow::load_checkpoint(sy_mask_ckpt);
      if (mc.meta.train_mode != "mask") {
        throw aflow::ConfigError("synth: --mask-ckpt must be a mask-mode checkpoint");
      }
      aflow::SingleViewResult mr =
          aflow::forward_single(mc.meta.network, mc.params, sources[0], transforms[0], aflow::OutputMode::kMask);
      const aflow::Tensor masked = aflow::apply_foreground_mask(prediction, mr.prediction);
      aflow::write_png(out / "prediction_masked.png",
                       aflow::tensor_to_image(aflow::Tensor({pc, config.image_size, config.image_size}, masked.vec())));
    }
    std::cout << "prediction written to " << (out / "prediction.png").string() << "\n";
    return kExitOk;
  }

  if (ev->parsed()) {
    aflow::set_thread_count(ev_threads);
    aflow::DatasetReader reader(aflow::load_manifest(ev_data));
    aflow::EvalOptions opts;
    opts.tuples = ev_tuples;
    opts.seed = ev_seed;
    opts.split = parse_split(ev_split);

    aflow::Checkpoint ckpt;
    aflow::Predictor predictor;
    if (ev_oracle) {
      predictor = aflow::make_oracle_predictor();
    } else {
      if (ev_ckpt.empty()) {
        throw aflow::UsageError("eval: --ckpt is required unless --oracle is set");
      }
      ckpt = aflow::load_checkpoint(ev_ckpt);
      if (ckpt.meta.network.image_size != reader.manifest().image_size) {
        throw aflow::ConfigError("eval: checkpoint image size does not match dataset");
      }
      const bool multi = ckpt.meta.train_mode == "multi-flow";
      opts.views = multi ? 2 : 1;
      predictor = aflow::make_network_predictor(ckpt.meta.network, ckpt.params, multi);
    }

    const aflow::EvalReport report = aflow::evaluate(reader, predictor, opts);
    ensure_dir(ev_out);
    write_text(std::filesystem::path(ev_out) / "report.json", aflow::report_to_json(report));
    std::cout << "overall_l1 " << report.overall_l1 << "\n";
    return kExitOk;
  }

  if (cf->parsed()) {
    aflow::set_thread_count(cf_threads);
    aflow::DatasetReader reader(aflow::load_manifest(cf_data));

    aflow::Checkpoint ckpt;
    aflow::Predictor predictor;
    if (cf_oracle) {
      predictor = aflow::make_oracle_predictor();
    } else {
      if (cf_ckpt.empty()) {
        throw aflow::UsageError("confusion: --ckpt is required unless --oracle is set");
      }
      ckpt = aflow::load_checkpoint(cf_ckpt);
      if (ckpt.meta.train_mode == "multi-flow" || ckpt.meta.train_mode == "mask") {
        throw aflow::UsageError("confusion: use a single-view synthesis checkpoint");
      }
      predictor = aflow::make_network_predictor(ckpt.meta.network, ckpt.params, false);
    }

    const aflow::ConfusionMatrix m = aflow::confusion_matrix(reader, predictor, cf_samples, cf_seed, parse_split(cf_split));
    ensure_dir(cf_out);
    write_text(std::filesystem::path(cf_out) / "confusion.json", aflow::confusion_to_json(m));
    aflow::write_png(std::filesystem::path(cf_out) / "confusion.png", aflow::render_confusion_heatmap(m));
    std::cout << "confusion matrix written to " << cf_out << "\n";
    return kExitOk;
  }

  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const aflow::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const aflow::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
