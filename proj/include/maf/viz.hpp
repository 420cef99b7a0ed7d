#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maf/tensor.hpp"

namespace maf {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

// Four-stop piecewise-linear colormap blue -> cyan -> yellow -> red over
// t in [0,1] (clamped outside).
Rgb heat_color(double t);

// Bilinear resize of an H x W map with corner alignment.
Tensor bilinear_resize(const Tensor& map, int out_h, int out_w);

// Min-max normalization to [0,255]; a constant map collapses to all zeros.
Tensor normalize_to_255(const Tensor& map);

// Full overlay pipeline: resize the attention map to the image size,
// normalize, colorize, and alpha-blend 0.5/0.5 with the grayscale image.
// Returns row-major RGB bytes.
std::vector<std::uint8_t> attention_overlay(const Tensor& attention,
                                            const Tensor& image);

// Binary PPM: header "P6\n<W> <H>\n255\n" followed by RGB bytes.
std::string encode_ppm(int width, int height, const std::vector<std::uint8_t>& rgb);
void write_ppm(const std::string& path, int width, int height,
               const std::vector<std::uint8_t>& rgb);

}  // namespace maf
