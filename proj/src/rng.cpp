#include "maf/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace maf {

double Rng::next_normal() {
  for (;;) {
    const double u = 2.0 * next_double() - 1.0;
    const double v = 2.0 * next_double() - 1.0;
    const double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) {
      return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }
}

std::uint32_t Rng::next_below(std::uint32_t n) {
  if (n == 0) {
    throw std::invalid_argument("Rng::next_below: n must be positive");
  }
  // Widening multiply maps the 64-bit draw onto [0, n) with negligible bias.
  return static_cast<std::uint32_t>(
      (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

}  // namespace maf
