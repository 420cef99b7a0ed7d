#include <CLI11.hpp>

#include <cstdio>
#include <exception>

#include "maf/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Multi-attention fusion drowsiness classifier"};
  app.require_subcommand(1);

  maf::GenArgs gen;
  CLI::App* cmd_gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  cmd_gen->add_option("--out", gen.out_dir, "Output dataset directory")->required();
  cmd_gen->add_option("--count", gen.count, "Number of samples");
  cmd_gen->add_option("--image", gen.image, "Square image size in pixels");
  cmd_gen->add_option("--occlusion", gen.occlusion, "Occlusion probability");
  cmd_gen->add_option("--noise", gen.noise, "Gaussian pixel noise stddev");
  cmd_gen->add_option("--seed", gen.seed, "Generator seed");

  maf::TrainArgs train;
  CLI::App* cmd_train = app.add_subcommand("train", "Train a model");
  cmd_train->add_option("--config", train.config_path, "key=value config file");
  cmd_train->add_option("--data", train.data_dir, "Training dataset directory")->required();
  cmd_train->add_option("--test", train.test_dir, "Test dataset directory")->required();
  cmd_train->add_option("--out", train.out_dir, "Output directory")->required();
  cmd_train->add_option("--seed", train.seed, "Training seed");
  cmd_train->add_option("--jobs", train.jobs, "Concurrent passes inside a batch");

  maf::EvalArgs eval;
  CLI::App* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  cmd_eval->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  cmd_eval->add_option("--data", eval.data_dir, "Dataset directory")->required();
  cmd_eval->add_option("--out", eval.out_dir, "Directory for predictions.csv");
  cmd_eval->add_option("--jobs", eval.jobs, "Concurrent forward passes");

  maf::AblateArgs ablate;
  CLI::App* cmd_ablate = app.add_subcommand("ablate", "Run the ablation sweep");
  cmd_ablate->add_option("--config", ablate.config_path, "key=value config file");
  cmd_ablate->add_option("--data", ablate.data_dir, "Training dataset directory")->required();
  cmd_ablate->add_option("--test", ablate.test_dir, "Test dataset directory")->required();
  cmd_ablate->add_option("--out", ablate.out_dir, "Output directory")->required();
  cmd_ablate->add_option("--seed", ablate.seed, "First seed of the sweep");
  cmd_ablate->add_option("--jobs", ablate.jobs, "Concurrent training runs");

  maf::VisualizeArgs viz;
  CLI::App* cmd_viz = app.add_subcommand("visualize", "Render an attention overlay");
  cmd_viz->add_option("--checkpoint", viz.checkpoint, "Checkpoint file")->required();
  cmd_viz->add_option("--image", viz.image_path, "Input image (MAFT tensor)")->required();
  cmd_viz->add_option("--out", viz.out_path, "Output PPM path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_gen->parsed()) return maf::cmd_gen(gen);
    if (cmd_train->parsed()) return maf::cmd_train(train);
    if (cmd_eval->parsed()) return maf::cmd_eval(eval);
    if (cmd_ablate->parsed()) return maf::cmd_ablate(ablate);
    if (cmd_viz->parsed()) return maf::cmd_visualize(viz);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
