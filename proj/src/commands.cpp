#include "maf/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "maf/checkpoint.hpp"
#include "maf/config.hpp"
#include "maf/data.hpp"
#include "maf/train.hpp"
#include "maf/viz.hpp"

namespace maf {

namespace fs = std::filesystem;

namespace {

// Atomic publish: run `produce` against a staging path, then rename over
// the target. Failures leave no partial artifact behind.
template <typename Produce>
void staged(const std::string& target, Produce&& produce) {
  const fs::path final_path(target);
  const fs::path tmp_path = final_path.string() + ".tmp";
  std::error_code ignored;
  fs::remove_all(tmp_path, ignored);
  try {
    produce(tmp_path.string());
    fs::remove_all(final_path, ignored);
    fs::rename(tmp_path, final_path);
  } catch (...) {
    fs::remove_all(tmp_path, ignored);
    throw;
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path);
}

void require_dataset_dir(const std::string& dir, const char* what) {
  if (!fs::exists(fs::path(dir) / "manifest.csv")) {
    throw std::runtime_error(std::string(what) + " dataset not found: " + dir +
                             " has no manifest.csv");
  }
}

RunSettings load_settings(const std::string& config_path) {
  if (config_path.empty()) return RunSettings{};
  return parse_config_file(config_path);
}

}  // namespace

int cmd_gen(const GenArgs& args) {
  SynthSpec spec;
  spec.count = args.count;
  spec.image_h = spec.image_w = args.image;
  spec.occlusion_prob = args.occlusion;
  spec.noise_std = args.noise;
  spec.seed = args.seed;
  const auto samples = generate_synthetic(spec);
  staged(args.out_dir, [&](const std::string& tmp) { save_dataset(tmp, samples); });

  int cell[2][2] = {{0, 0}, {0, 0}};
  for (const Sample& s : samples) ++cell[s.label][s.occluded ? 1 : 0];
  for (int label = 0; label < 2; ++label) {
    for (int occ = 0; occ < 2; ++occ) {
      std::printf("label=%d occluded=%d count=%d\n", label, occ, cell[label][occ]);
    }
  }
  std::printf("total=%d dir=%s\n", args.count, args.out_dir.c_str());
  return 0;
}

int cmd_train(const TrainArgs& args) {
  const RunSettings settings = load_settings(args.config_path);
  require_dataset_dir(args.data_dir, "training");
  require_dataset_dir(args.test_dir, "test");
  if (args.out_dir.empty()) throw std::runtime_error("train: --out is required");

  const auto train_set = load_dataset(args.data_dir);
  const auto test_set = load_dataset(args.test_dir);

  TrainOptions options = settings.trainer;
  options.seed = args.seed;
  options.jobs = args.jobs;

  MafParams params = init_params(settings.model, args.seed);
  TrainResult result =
      train(settings.model, std::move(params), train_set, test_set, options);

  for (const EpochRecord& r : result.history.records) {
    std::printf("epoch=%d lr=%.6g train_loss=%.6g train_acc=%.4f test_acc=%.4f test_f1=%.4f\n",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.test_acc, r.test_f1);
  }

  staged(args.out_dir, [&](const std::string& tmp) {
    fs::create_directories(tmp);
    save_checkpoint((fs::path(tmp) / "checkpoint.maf").string(), settings.model,
                    result.params);
    write_text_file((fs::path(tmp) / "history.csv").string(),
                    history_csv(result.history));
  });
  return 0;
}

int cmd_eval(const EvalArgs& args) {
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  require_dataset_dir(args.data_dir, "evaluation");
  const auto samples = load_dataset(args.data_dir);
  const EvalResult result = evaluate(ckpt.params, samples, ckpt.config, args.jobs);

  std::printf("acc=%.4f f1=%.4f\n", result.acc, result.f1);
  if (result.acc_unoccluded >= 0.0) {
    std::printf("acc_unoccluded=%.4f\n", result.acc_unoccluded);
  }
  if (result.acc_occluded >= 0.0) {
    std::printf("acc_occluded=%.4f\n", result.acc_occluded);
  }

  if (!args.out_dir.empty()) {
    std::string csv = "path,label,pred\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
      csv += samples[i].path + "," + std::to_string(samples[i].label) + "," +
             std::to_string(result.predictions[i]) + "\n";
    }
    staged(args.out_dir, [&](const std::string& tmp) {
      fs::create_directories(tmp);
      write_text_file((fs::path(tmp) / "predictions.csv").string(), csv);
    });
  }
  return 0;
}

namespace {

struct AblationRun {
  std::string variant;
  int num_maps;
  std::uint64_t seed;
};

MafConfig variant_config(const MafConfig& base, const std::string& variant, int n) {
  MafConfig cfg = base;
  cfg.num_maps = n;
  if (variant == "backbone") {
    cfg.use_mlfe = false;
    cfg.use_llfe = false;
    cfg.p_map = 0.0;
    cfg.p_head = 0.0;
  } else if (variant == "llfe") {
    cfg.use_mlfe = false;
    cfg.use_llfe = true;
    cfg.p_map = 0.0;
    cfg.p_head = 0.0;
  } else if (variant == "mlfe_drop") {
    cfg.use_mlfe = true;
    cfg.use_llfe = false;
    cfg.p_head = 0.0;
  } else if (variant == "nodrop") {
    cfg.use_mlfe = true;
    cfg.use_llfe = true;
    cfg.p_map = 0.0;
    cfg.p_head = 0.0;
  } else if (variant == "full") {
    cfg.use_mlfe = true;
    cfg.use_llfe = true;
  } else {
    throw std::invalid_argument("unknown ablation variant " + variant);
  }
  return cfg;
}

}  // namespace

int cmd_ablate(const AblateArgs& args) {
  const RunSettings settings = load_settings(args.config_path);
  require_dataset_dir(args.data_dir, "training");
  require_dataset_dir(args.test_dir, "test");
  if (args.out_dir.empty()) throw std::runtime_error("ablate: --out is required");

  const auto train_set = load_dataset(args.data_dir);
  const auto test_set = load_dataset(args.test_dir);

  std::vector<AblationRun> runs;
  for (const char* variant : {"backbone", "llfe", "mlfe_drop", "nodrop", "full"}) {
    for (int s = 0; s < settings.ablation_seeds; ++s) {
      runs.push_back({variant, settings.model.num_maps, args.seed + static_cast<std::uint64_t>(s)});
    }
  }
  for (int n = 1; n <= 4; ++n) {
    for (int s = 0; s < settings.ablation_seeds; ++s) {
      runs.push_back({"full", n, args.seed + static_cast<std::uint64_t>(s)});
    }
  }

  std::vector<std::string> rows(runs.size());
  parallel_for(static_cast<int>(runs.size()), args.jobs, [&](int i) {
    const AblationRun& run = runs[static_cast<std::size_t>(i)];
    const MafConfig cfg = variant_config(settings.model, run.variant, run.num_maps);
    TrainOptions options = settings.trainer;
    options.epochs = settings.ablation_epochs;
    options.batch_size = settings.ablation_batch;
    options.seed = run.seed;
    options.jobs = 1;
    TrainResult result =
        train(cfg, init_params(cfg, run.seed), train_set, test_set, options);
    const EvalResult ev = evaluate(result.params, test_set, cfg, 1);
    char line[256];
    std::snprintf(line, sizeof(line), "%s,%d,%llu,%.4f,%.4f,%.4f,%.4f\n",
                  run.variant.c_str(), run.num_maps,
                  static_cast<unsigned long long>(run.seed), ev.acc, ev.f1,
                  ev.acc_unoccluded, ev.acc_occluded);
    rows[static_cast<std::size_t>(i)] = line;
  });

  std::string csv = "variant,n,seed,acc,f1,acc_unoccluded,acc_occluded\n";
  for (const std::string& row : rows) csv += row;
  staged(args.out_dir, [&](const std::string& tmp) {
    fs::create_directories(tmp);
    write_text_file((fs::path(tmp) / "ablation.csv").string(), csv);
  });
  std::printf("%s", csv.c_str());
  return 0;
}

int cmd_visualize(const VisualizeArgs& args) {
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  if (!ckpt.config.use_mlfe) {
    throw std::runtime_error("visualize: checkpoint was trained without the "
                             "multi-local attention module, nothing to show");
  }
  const Tensor image = load_tensor(args.image_path);
  if (image.shape != Shape{1, ckpt.config.image_h, ckpt.config.image_w}) {
    throw std::runtime_error("visualize: image shape " + shape_str(image.shape) +
                             " does not match the checkpoint config " +
                             shape_str({1, ckpt.config.image_h, ckpt.config.image_w}));
  }
  Tape tape(false);
  Rng rng(0);
  const MafOutput out = maf_forward(tape, image, ckpt.params, ckpt.config, rng, Mode::kEval);
  const Tensor fused = channel_max(tape, out.attention.maps);
  const auto rgb = attention_overlay(fused, image);
  staged(args.out_path, [&](const std::string& tmp) {
    write_ppm(tmp, ckpt.config.image_w, ckpt.config.image_h, rgb);
  });
  std::printf("wrote %s (%dx%d)\n", args.out_path.c_str(), ckpt.config.image_w,
              ckpt.config.image_h);
  return 0;
}

}  // namespace maf
