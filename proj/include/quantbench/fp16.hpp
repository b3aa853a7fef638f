#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace qb {

inline constexpr float kHalfMax = 65504.0f;

// IEEE binary16 <-> binary32. Encoding rounds to nearest-even. Values whose
// magnitude exceeds the largest finite half saturate to +/-65504 instead of
// becoming infinity; NaN stays NaN.
std::uint16_t float_to_half(float value);
float half_to_float(std::uint16_t bits);

// Rounds through binary16 and back.
inline float round_to_half(float value) { return half_to_float(float_to_half(value)); }

// Bulk decode; uses F16C when the build enables it. Conversion is exact either
// way, so results do not depend on the path taken.
void half_to_float(std::span<const std::uint16_t> in, std::span<float> out);
void half_to_float(const std::uint8_t* in, float* out, std::size_t count);

}  // namespace qb
