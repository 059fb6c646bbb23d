#include "tvmerge/half.hpp"

#include <cmath>

namespace tvmerge {

std::uint16_t double_to_half_bits(double value) {
  const std::uint16_t sign = std::signbit(value) ? 0x8000 : 0x0000;
  if (std::isnan(value)) return sign | 0x7E00;
  const double mag = std::fabs(value);
  if (mag >= 65520.0) return sign | 0x7C00;

  // Subnormal range: quantum is 2^-24. A result of 0x400 rolls naturally
  // into the smallest normal encoding.
  if (mag < 0x1p-14) {
    const double q = std::nearbyint(std::ldexp(mag, 24));
    return sign | static_cast<std::uint16_t>(q);
  }

  int exp = std::ilogb(mag);
  double q = std::nearbyint(std::ldexp(mag, 10 - exp));
  if (q == 2048.0) {
    q = 1024.0;
    ++exp;
  }
  if (exp > 15) return sign | 0x7C00;
  const auto biased = static_cast<std::uint16_t>(exp + 15);
  const auto mantissa = static_cast<std::uint16_t>(q - 1024.0);
  return sign | static_cast<std::uint16_t>(biased << 10) | mantissa;
}

double half_bits_to_double(std::uint16_t bits) {
  const bool negative = (bits & 0x8000) != 0;
  const int biased = (bits >> 10) & 0x1F;
  const int mantissa = bits & 0x3FF;
  double mag;
  if (biased == 0) {
    mag = std::ldexp(static_cast<double>(mantissa), -24);
  } else if (biased == 31) {
    mag = mantissa == 0 ? INFINITY : NAN;
  } else {
    mag = std::ldexp(static_cast<double>(mantissa + 1024), biased - 25);
  }
  return negative ? -mag : mag;
}

}  // namespace tvmerge
