#include "maf/viz.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace maf {

Rgb heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  // Stops at 0, 1/3, 2/3, 1.
  static constexpr double stops[4][3] = {
      {0, 0, 255}, {0, 255, 255}, {255, 255, 0}, {255, 0, 0}};
  const double scaled = t * 3.0;
  const int seg = std::min(2, static_cast<int>(scaled));
  const double frac = scaled - seg;
  const auto lerp = [&](int ch) {
    const double v = stops[seg][ch] + frac * (stops[seg + 1][ch] - stops[seg][ch]);
    return static_cast<std::uint8_t>(std::llround(v));
  };
  return Rgb{lerp(0), lerp(1), lerp(2)};
}

Tensor bilinear_resize(const Tensor& map, int out_h, int out_w) {
  if (map.rank() != 2) {
    throw std::invalid_argument("bilinear_resize: need an HxW map, got " +
                                shape_str(map.shape));
  }
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("bilinear_resize: output size must be positive");
  }
  const int in_h = map.shape[0], in_w = map.shape[1];
  Tensor out = Tensor::zeros({out_h, out_w});
  const double sy = out_h > 1 ? static_cast<double>(in_h - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(in_w - 1) / (out_w - 1) : 0.0;
  for (int r = 0; r < out_h; ++r) {
    const double fy = r * sy;
    const int y0 = std::min(static_cast<int>(fy), in_h - 1);
    const int y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - y0;
    for (int c = 0; c < out_w; ++c) {
      const double fx = c * sx;
      const int x0 = std::min(static_cast<int>(fx), in_w - 1);
      const int x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - x0;
      // Difference form keeps constant maps bitwise constant.
      const double top = map.at(y0, x0) + wx * (map.at(y0, x1) - map.at(y0, x0));
      const double bottom = map.at(y1, x0) + wx * (map.at(y1, x1) - map.at(y1, x0));
      out.at(r, c) = top + wy * (bottom - top);
    }
  }
  return out;
}

Tensor normalize_to_255(const Tensor& map) {
  double lo = map.data[0], hi = map.data[0];
  for (double v : map.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Tensor out = map;
  out.node = -1;
  if (hi > lo) {
    for (double& v : out.data) v = (v - lo) / (hi - lo) * 255.0;
  } else {
    for (double& v : out.data) v = 0.0;
  }
  return out;
}

std::vector<std::uint8_t> attention_overlay(const Tensor& attention,
                                            const Tensor& image) {
  if (image.rank() != 3 || image.shape[0] != 1) {
    throw std::invalid_argument("attention_overlay: image must be 1xHxW, got " +
                                shape_str(image.shape));
  }
  const int h = image.shape[1], w = image.shape[2];
  const Tensor resized = bilinear_resize(attention, h, w);
  const Tensor heat = normalize_to_255(resized);
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Rgb color = heat_color(heat.at(r, c) / 255.0);
      const double gray = std::clamp(image.at(0, r, c), 0.0, 1.0) * 255.0;
      const std::size_t base = (static_cast<std::size_t>(r) * w + c) * 3;
      rgb[base + 0] = static_cast<std::uint8_t>(std::llround(0.5 * color.r + 0.5 * gray));
      rgb[base + 1] = static_cast<std::uint8_t>(std::llround(0.5 * color.g + 0.5 * gray));
      rgb[base + 2] = static_cast<std::uint8_t>(std::llround(0.5 * color.b + 0.5 * gray));
    }
  }
  return rgb;
}

std::string encode_ppm(int width, int height, const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3) {
    throw std::invalid_argument("encode_ppm: pixel buffer size does not match " +
                                std::to_string(width) + "x" + std::to_string(height));
  }
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) +
                    "\n255\n";
  out.append(reinterpret_cast<const char*>(rgb.data()), rgb.size());
  return out;
}

void write_ppm(const std::string& path, int width, int height,
               const std::vector<std::uint8_t>& rgb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
  const std::string bytes = encode_ppm(width, height, rgb);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

}  // namespace maf
