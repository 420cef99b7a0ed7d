#pragma once

#include <cstdint>
#include <string>

namespace maf {

// Subcommand bodies, separated from argument parsing so tests can drive
// them directly. Each validates its inputs before producing any artifact
// and stages outputs through a temp path so failures leave nothing behind.

struct GenArgs {
  std::string out_dir;
  int count = 256;
  int image = 48;
  double occlusion = 0.5;
  double noise = 0.10;
  std::uint64_t seed = 1;
};
int cmd_gen(const GenArgs& args);

struct TrainArgs {
  std::string config_path;  // optional; defaults when empty
  std::string data_dir;
  std::string test_dir;
  std::string out_dir;
  std::uint64_t seed = 1;
  int jobs = 1;
};
int cmd_train(const TrainArgs& args);

struct EvalArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string out_dir;
  int jobs = 1;
};
int cmd_eval(const EvalArgs& args);

struct AblateArgs {
  std::string config_path;
  std::string data_dir;
  std::string test_dir;
  std::string out_dir;
  std::uint64_t seed = 1;
  int jobs = 1;
};
int cmd_ablate(const AblateArgs& args);

struct VisualizeArgs {
  std::string checkpoint;
  std::string image_path;
  std::string out_path;
};
int cmd_visualize(const VisualizeArgs& args);

}  // namespace maf
