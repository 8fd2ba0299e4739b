#include "slac/common.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace slac {

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

double uniform_draw(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double normal_draw(Rng& rng) {
  double u1 = uniform_draw(rng);
  while (u1 <= 0.0) u1 = uniform_draw(rng);
  const double u2 = uniform_draw(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace slac
