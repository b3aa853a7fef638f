#include "quantbench/scalar_quant.hpp"

#include <algorithm>
#include <string>

#include "quantbench/error.hpp"

namespace qb {

namespace {

void check_input(std::span<const float> values, int n_bits) {
  if (n_bits < 2 || n_bits > 8) throw Error(ErrorCode::parameter_error, "n_bits must be in [2, 8]");
  if (values.empty()) throw Error(ErrorCode::invalid_value, "empty input");
  for (float v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::invalid_value, "non-finite input value");
  }
}

}  // namespace

SymmetricCodes quantize_symmetric(std::span<const float> values, int n_bits) {
  check_input(values, n_bits);
  const std::int32_t lo = -(1 << (n_bits - 1));
  const std::int32_t hi = (1 << (n_bits - 1)) - 1;
  float amax = 0.0f;
  for (float v : values) amax = std::max(amax, std::fabs(v));

  SymmetricCodes out{std::vector<std::int32_t>(values.size(), 0), amax / float(1 << (n_bits - 1))};
  if (out.scale == 0.0f) return out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float q = round_half_away(values[i] / out.scale);
    out.codes[i] = static_cast<std::int32_t>(std::clamp(q, float(lo), float(hi)));
  }
  return out;
}

AsymmetricCodes quantize_asymmetric(std::span<const float> values, int n_bits) {
  check_input(values, n_bits);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const float top = float((1 << n_bits) - 1);
  AsymmetricCodes out{std::vector<std::int32_t>(values.size(), 0), (*hi - *lo) / top, *lo};
  if (out.scale == 0.0f) return out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float q = round_half_away((values[i] - out.min) / out.scale);
    out.codes[i] = static_cast<std::int32_t>(std::clamp(q, 0.0f, top));
  }
  return out;
}

std::vector<float> dequantize_symmetric(std::span<const std::int32_t> codes, float scale, int n_bits) {
  if (n_bits < 2 || n_bits > 8) throw Error(ErrorCode::parameter_error, "n_bits must be in [2, 8]");
  const std::int32_t lo = -(1 << (n_bits - 1));
  const std::int32_t hi = (1 << (n_bits - 1)) - 1;
  std::vector<float> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] < lo || codes[i] > hi) {
      throw Error(ErrorCode::corrupt_data, "code " + std::to_string(codes[i]) + " at index " + std::to_string(i) +
                                               " outside signed " + std::to_string(n_bits) + "-bit range");
    }
    out[i] = float(codes[i]) * scale;
  }
  return out;
}

std::vector<float> dequantize_asymmetric(std::span<const std::int32_t> codes, float scale, float min, int n_bits) {
  if (n_bits < 2 || n_bits > 8) throw Error(ErrorCode::parameter_error, "n_bits must be in [2, 8]");
  const std::int32_t hi = (1 << n_bits) - 1;
  std::vector<float> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] < 0 || codes[i] > hi) {
      throw Error(ErrorCode::corrupt_data, "code " + std::to_string(codes[i]) + " at index " + std::to_string(i) +
                                               " outside unsigned " + std::to_string(n_bits) + "-bit range");
    }
    out[i] = float(codes[i]) * scale + min;
  }
  return out;
}

}  // namespace qb
