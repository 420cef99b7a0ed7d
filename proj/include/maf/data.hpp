#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "maf/rng.hpp"
#include "maf/tensor.hpp"

namespace maf {

struct Sample {
  Tensor image;  // 1 x H x W, values in [0,1]
  int label = 0;  // 0 = non-drowsy, 1 = drowsy
  bool occluded = false;
  std::string path;  // where the image lives on disk, when it does
};

// Half-open pixel rectangle [row0, row1) x [col0, col1).
struct Region {
  int row0 = 0, row1 = 0, col0 = 0, col1 = 0;
  int height() const { return row1 - row0; }
  int width() const { return col1 - col0; }
};

// Synthetic face stand-in: an "eye" region in the upper third and a "mouth"
// region in the lower third. Each class plants a distinctive pattern in BOTH
// regions, so either region alone suffices to classify; occlusion then hides
// exactly one of them behind a flat patch.
//   drowsy (1):     low-contrast dark bar across the eyes, bright disc mouth
//   non-drowsy (0): two bright eye dots, thin dark mouth bar
struct SynthSpec {
  int image_h = 48;
  int image_w = 48;
  Region eye;    // defaults to the upper third when left empty
  Region mouth;  // defaults to the lower third when left empty
  double occlusion_prob = 0.5;
  double noise_std = 0.10;
  double bar_contrast = 0.35;   // depth of the dark bars
  double disc_contrast = 0.50;  // height of the bright discs
  // Eye patterns are deliberately fainter than mouth patterns: a model that
  // latches onto the easy mouth cue alone fails when the mouth is occluded.
  double eye_gain = 0.45;
  double background = 0.45;
  int count = 256;
  std::uint64_t seed = 1;

  // Fills empty regions with the defaults and checks the invariants.
  SynthSpec resolved() const;
};

std::vector<Sample> generate_synthetic(const SynthSpec& spec);

// Strongest trivial baseline: the best (threshold, polarity) classifier on
// per-image mean brightness, fit on the set itself.
double best_threshold_accuracy(const std::vector<Sample>& samples);

// ---- MAFT tensor container ----
// "MAFT" | version u8 (=1) | dtype u8 (1 = float64 LE) | ndim u8 |
// ndim x u32 LE dims | row-major float64 LE payload.

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// ---- metrics ----

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels);
double f1_score(const std::vector<int>& preds, const std::vector<int>& labels,
                int positive_class = 1);

// ---- dataset directory (MAFT files + manifest.csv "path,label,occluded") ----

void save_dataset(const std::string& dir, const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::string& dir);

}  // namespace maf
