#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace qb {

// Round half away from zero, the single rounding convention of the codecs.
inline float round_half_away(float v) { return std::round(v); }

struct SymmetricCodes {
  std::vector<std::int32_t> codes;  // in [-2^(n-1), 2^(n-1) - 1]
  float scale = 0.0f;               // max|x| / 2^(n-1)
};

struct AsymmetricCodes {
  std::vector<std::int32_t> codes;  // in [0, 2^n - 1]
  float scale = 0.0f;               // (x_max - x_min) / (2^n - 1)
  float min = 0.0f;                 // x_min
};

// n_bits in [2, 8]; values non-empty and finite.
SymmetricCodes quantize_symmetric(std::span<const float> values, int n_bits);
AsymmetricCodes quantize_asymmetric(std::span<const float> values, int n_bits);

// Throws corrupt_data when a code is outside the n-bit range.
std::vector<float> dequantize_symmetric(std::span<const std::int32_t> codes, float scale, int n_bits);
std::vector<float> dequantize_asymmetric(std::span<const std::int32_t> codes, float scale, float min, int n_bits);

}  // namespace qb
