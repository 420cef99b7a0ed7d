#include "maf/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace maf {

namespace fs = std::filesystem;

namespace {

void plant_bar(Tensor& image, const Region& r, int center_row, int rows,
               int inset, double delta) {
  const int w = image.shape[2];
  for (int dr = -(rows / 2); dr <= (rows - 1) / 2; ++dr) {
    const int row = center_row + dr;
    if (row < r.row0 || row >= r.row1) continue;
    for (int col = r.col0 + inset; col < r.col1 - inset; ++col) {
      image.data[static_cast<std::size_t>(row) * w + col] += delta;
    }
  }
}

void plant_disc(Tensor& image, const Region& r, double cy, double cx,
                double radius, double delta) {
  const int w = image.shape[2];
  for (int row = r.row0; row < r.row1; ++row) {
    for (int col = r.col0; col < r.col1; ++col) {
      const double dy = row - cy, dx = col - cx;
      if (dy * dy + dx * dx <= radius * radius) {
        image.data[static_cast<std::size_t>(row) * w + col] += delta;
      }
    }
  }
}

void fill_region(Tensor& image, const Region& r, double value) {
  const int w = image.shape[2];
  for (int row = r.row0; row < r.row1; ++row) {
    for (int col = r.col0; col < r.col1; ++col) {
      image.data[static_cast<std::size_t>(row) * w + col] = value;
    }
  }
}

}  // namespace

SynthSpec SynthSpec::resolved() const {
  SynthSpec s = *this;
  if (s.eye.height() == 0) {
    s.eye = Region{s.image_h / 8, s.image_h / 8 + s.image_h / 4, s.image_w / 6,
                   s.image_w - s.image_w / 6};
  }
  if (s.mouth.height() == 0) {
    s.mouth = Region{s.image_h - s.image_h / 8 - s.image_h / 4,
                     s.image_h - s.image_h / 8, s.image_w / 6,
                     s.image_w - s.image_w / 6};
  }
  const auto inside = [&](const Region& r) {
    return r.row0 >= 0 && r.col0 >= 0 && r.row0 < r.row1 && r.col0 < r.col1 &&
           r.row1 <= s.image_h && r.col1 <= s.image_w;
  };
  if (!inside(s.eye) || !inside(s.mouth)) {
    throw std::invalid_argument("SynthSpec: feature regions must lie inside the image");
  }
  const bool disjoint = s.eye.row1 <= s.mouth.row0 || s.mouth.row1 <= s.eye.row0 ||
                        s.eye.col1 <= s.mouth.col0 || s.mouth.col1 <= s.eye.col0;
  if (!disjoint) {
    throw std::invalid_argument("SynthSpec: feature regions must be disjoint");
  }
  if (s.occlusion_prob < 0.0 || s.occlusion_prob > 1.0) {
    throw std::invalid_argument("SynthSpec: occlusion probability must lie in [0,1]");
  }
  if (s.count < 1) throw std::invalid_argument("SynthSpec: count must be positive");
  return s;
}

std::vector<Sample> generate_synthetic(const SynthSpec& raw) {
  const SynthSpec spec = raw.resolved();
  Rng root(spec.seed);
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    Sample s;
    s.label = i % 2;  // balanced within one sample
    Tensor img = Tensor::full({1, spec.image_h, spec.image_w}, spec.background);

    // Small positional and intensity jitter keeps the task from being a
    // fixed-pixel lookup.
    const int eye_jr = static_cast<int>(rng.next_below(3)) - 1;
    const int eye_jc = static_cast<int>(rng.next_below(3)) - 1;
    const int mouth_jr = static_cast<int>(rng.next_below(3)) - 1;
    const int mouth_jc = static_cast<int>(rng.next_below(3)) - 1;
    const double gain = 0.9 + 0.2 * rng.next_double();

    const Region& eye = spec.eye;
    const Region& mouth = spec.mouth;
    const double eye_cy = 0.5 * (eye.row0 + eye.row1 - 1) + eye_jr;
    const double mouth_cy = 0.5 * (mouth.row0 + mouth.row1 - 1) + mouth_jr;
    const double mouth_cx = 0.5 * (mouth.col0 + mouth.col1 - 1) + mouth_jc;

    // Pattern geometry scales with the region so any image size works.
    const int eye_bar_rows = std::max(2, eye.height() / 3);
    const int mouth_bar_rows = std::max(2, mouth.height() / 4);
    const double disc_r = std::max(2.5, 0.55 * mouth.height());
    const double dot_r = std::max(1.5, 0.30 * eye.height());

    const double eye_bar_delta = -spec.bar_contrast * spec.eye_gain * gain;
    const double eye_disc_delta = spec.disc_contrast * spec.eye_gain * gain;
    if (s.label == 1) {
      // Closed eyes: a low-contrast bar. Yawn: a bright disc.
      plant_bar(img, eye, static_cast<int>(eye_cy), eye_bar_rows,
                eye.width() / 8 + eye_jc, eye_bar_delta);
      plant_disc(img, mouth, mouth_cy, mouth_cx, disc_r, spec.disc_contrast * gain);
    } else {
      // Open eyes: two bright dots. Closed mouth: a thin bar.
      const double left_cx = eye.col0 + eye.width() / 4.0 + eye_jc;
      const double right_cx = eye.col1 - 1 - eye.width() / 4.0 + eye_jc;
      plant_disc(img, eye, eye_cy, left_cx, dot_r, eye_disc_delta);
      plant_disc(img, eye, eye_cy, right_cx, dot_r, eye_disc_delta);
      plant_bar(img, mouth, static_cast<int>(mouth_cy), mouth_bar_rows,
                mouth.width() / 8 + mouth_jc, -spec.bar_contrast * gain);
    }

    // Re-center so the image mean carries no class signal: a global
    // brightness threshold must stay near chance.
    double mean_shift = 0.0;
    for (double v : img.data) mean_shift += v - spec.background;
    mean_shift /= static_cast<double>(img.numel());
    for (double& v : img.data) {
      v = std::clamp(v - mean_shift + spec.noise_std * rng.next_normal(), 0.0, 1.0);
    }

    if (rng.bernoulli(spec.occlusion_prob)) {
      s.occluded = true;
      const bool eye_side = rng.next_below(2) == 0;
      fill_region(img, eye_side ? eye : mouth, 0.5);
    }
    s.image = std::move(img);
    samples.push_back(std::move(s));
  }
  return samples;
}

double best_threshold_accuracy(const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("best_threshold_accuracy: empty set");
  std::vector<std::pair<double, int>> means;
  means.reserve(samples.size());
  for (const Sample& s : samples) {
    double m = 0.0;
    for (double v : s.image.data) m += v;
    means.emplace_back(m / static_cast<double>(s.image.numel()), s.label);
  }
  std::sort(means.begin(), means.end());
  const int n = static_cast<int>(means.size());
  int positives = 0;
  for (const auto& [m, l] : means) positives += l;
  // Sweep every cut position; below-threshold is predicted 0 or 1 by polarity.
  int best = std::max(positives, n - positives);  // degenerate all-one-class cut
  int ones_below = 0;
  for (int cut = 1; cut < n; ++cut) {
    ones_below += means[static_cast<std::size_t>(cut - 1)].second;
    const int zeros_below = cut - ones_below;
    const int correct_pol0 = zeros_below + (positives - ones_below);
    const int correct_pol1 = ones_below + ((n - positives) - zeros_below);
    best = std::max({best, correct_pol0, correct_pol1});
  }
  return best / static_cast<double>(n);
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
                     static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

[[noreturn]] void format_error(const std::string& what) {
  throw std::runtime_error("MAFT format error: " + what);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write("MAFT", 4);
  out.put(1);  // version
  out.put(1);  // dtype: float64 little-endian
  if (t.shape.size() > 255) throw std::invalid_argument("write_tensor: rank > 255");
  out.put(static_cast<char>(t.shape.size()));
  for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(bits >> (8 * i));
    out.write(b, 8);
  }
  if (!out) throw std::runtime_error("write_tensor: stream write failed");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MAFT", 4) != 0) {
    format_error("bad magic, expected \"MAFT\"");
  }
  const int version = in.get();
  if (version != 1) format_error("unsupported version " + std::to_string(version));
  const int dtype = in.get();
  if (dtype != 1) format_error("unsupported dtype code " + std::to_string(dtype));
  const int ndim = in.get();
  if (ndim < 0 || !in) format_error("truncated header");
  Shape shape;
  for (int i = 0; i < ndim; ++i) {
    const std::uint32_t d = get_u32(in);
    if (!in) format_error("truncated dims");
    if (d == 0) format_error("zero dimension");
    shape.push_back(static_cast<int>(d));
  }
  const std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) {
      format_error("truncated payload: expected " + std::to_string(n * 8) +
                   " bytes, stopped inside element " + std::to_string(i));
    }
    std::uint64_t bits = 0;
    for (int j = 0; j < 8; ++j) bits |= static_cast<std::uint64_t>(b[j]) << (8 * j);
    std::memcpy(&data[i], &bits, 8);
  }
  return Tensor::from(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_tensor: cannot open " + path);
  write_tensor(out, t);
  if (!out) throw std::runtime_error("save_tensor: write failed for " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_tensor: cannot open " + path);
  return read_tensor(in);
}

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.empty() || preds.size() != labels.size()) {
    throw std::invalid_argument("accuracy: need equal nonzero-length lists");
  }
  int correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == labels[i]) ++correct;
  }
  return correct / static_cast<double>(preds.size());
}

double f1_score(const std::vector<int>& preds, const std::vector<int>& labels,
                int positive_class) {
  if (preds.empty() || preds.size() != labels.size()) {
    throw std::invalid_argument("f1_score: need equal nonzero-length lists");
  }
  int tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool pred_pos = preds[i] == positive_class;
    const bool label_pos = labels[i] == positive_class;
    if (pred_pos && label_pos) ++tp;
    if (pred_pos && !label_pos) ++fp;
    if (!pred_pos && label_pos) ++fn;
  }
  // Degenerate one-class predictors score 0 by convention.
  if (tp == 0) return 0.0;
  const double precision = tp / static_cast<double>(tp + fp);
  const double recall = tp / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

void save_dataset(const std::string& dir, const std::vector<Sample>& samples) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "path,label,occluded\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05zu.maft", i);
    save_tensor((fs::path(dir) / name).string(), samples[i].image);
    manifest << name << ',' << samples[i].label << ',' << (samples[i].occluded ? 1 : 0)
             << '\n';
  }
  std::ofstream out(fs::path(dir) / "manifest.csv");
  if (!out) throw std::runtime_error("save_dataset: cannot write manifest in " + dir);
  out << manifest.str();
}

std::vector<Sample> load_dataset(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.csv");
  if (!in) throw std::runtime_error("load_dataset: no manifest.csv in " + dir);
  std::string line;
  if (!std::getline(in, line) || line != "path,label,occluded") {
    throw std::runtime_error("load_dataset: malformed manifest header in " + dir);
  }
  std::vector<Sample> samples;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string path, label, occluded;
    if (!std::getline(row, path, ',') || !std::getline(row, label, ',') ||
        !std::getline(row, occluded)) {
      throw std::runtime_error("load_dataset: malformed manifest row: " + line);
    }
    Sample s;
    s.path = path;
    s.label = std::stoi(label);
    s.occluded = std::stoi(occluded) != 0;
    s.image = load_tensor((fs::path(dir) / path).string());
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw std::runtime_error("load_dataset: empty dataset in " + dir);
  return samples;
}

}  // namespace maf
