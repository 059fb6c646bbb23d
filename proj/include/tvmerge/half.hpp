#pragma once

#include <cstdint>

namespace tvmerge {

// IEEE-754 binary16 conversions. Narrowing rounds to nearest, ties to even,
// directly from double (no intermediate float rounding). Magnitudes at or
// above 65520 become infinity; NaN maps to a quiet NaN with the input sign.
std::uint16_t double_to_half_bits(double value);
double half_bits_to_double(std::uint16_t bits);

}  // namespace tvmerge
