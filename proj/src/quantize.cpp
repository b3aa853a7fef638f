#include "quantbench/quantize.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

#include "quantbench/bitpack.hpp"
#include "quantbench/error.hpp"
#include "quantbench/fp16.hpp"
#include "quantbench/imatrix.hpp"
#include "quantbench/scalar_quant.hpp"

namespace qb {

std::uint32_t pad_count_for(const Layout& layout, std::uint64_t elements) {
  const std::uint64_t b = layout.block_size();
  return static_cast<std::uint32_t>((b - elements % b) % b);
}

std::uint64_t payload_bytes_for(const Layout& layout, std::uint64_t elements) {
  const std::uint64_t b = layout.block_size();
  return (elements + b - 1) / b * layout.block_bytes();
}

void QuantizedTensor::validate() const {
  if (!shape.valid()) throw Error(ErrorCode::corrupt_data, "tensor '" + name + "' has a zero dimension");
  if (pad_count != pad_count_for(layout, shape.elements())) {
    throw Error(ErrorCode::corrupt_data, "tensor '" + name + "' pad count " + std::to_string(pad_count) +
                                             " does not match its shape");
  }
  if (payload.size() != payload_bytes_for(layout, shape.elements())) {
    throw Error(ErrorCode::corrupt_data, "tensor '" + name + "' payload holds " + std::to_string(payload.size()) +
                                             " bytes, layout " + describe(layout) + " needs " +
                                             std::to_string(payload_bytes_for(layout, shape.elements())));
  }
}

namespace {

void store_half(std::uint8_t* dst, float value) {
  const std::uint16_t h = float_to_half(value);
  std::memcpy(dst, &h, sizeof h);
}

float load_half(const std::uint8_t* src) {
  std::uint16_t h;
  std::memcpy(&h, src, sizeof h);
  return half_to_float(h);
}

std::uint32_t clamp_code(float value, std::uint32_t hi) {
  return static_cast<std::uint32_t>(std::clamp(round_half_away(value), 0.0f, float(hi)));
}

// Sub-block parameters before they are quantized against the super-block.
struct SubParams {
  float scale = 0.0f;
  float min = 0.0f;
  float max = 0.0f;
};

SubParams fit_sub_block(std::span<const float> x, std::span<const float> importance, int bits, bool asymmetric) {
  SubParams p;
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  p.max = *hi;
  if (importance.empty()) {
    if (asymmetric) {
      p.min = *lo;
      p.scale = (*hi - *lo) / float((1 << bits) - 1);
    } else {
      p.scale = std::max(std::fabs(*lo), std::fabs(*hi)) / float(1 << (bits - 1));
    }
    return p;
  }
  const AffineFit fit = weighted_affine_fit(x, importance, bits, asymmetric);
  p.scale = static_cast<float>(std::max(fit.scale, 0.0));
  p.min = static_cast<float>(fit.min);
  return p;
}

void encode_sym32(const Layout& layout, std::span<const float> x, std::span<const float> importance,
                  std::uint8_t* out) {
  const int bits = layout.code_bits;
  const SubParams p = fit_sub_block(x, importance, bits, false);
  store_half(out, p.scale);
  const float d = load_half(out);
  const std::int32_t offset = 1 << (bits - 1);
  std::array<std::uint8_t, 32> codes{};
  for (std::size_t i = 0; i < 32; ++i) {
    const float q = d > 0 ? std::clamp(round_half_away(x[i] / d), float(-offset), float(offset - 1)) : 0.0f;
    codes[i] = static_cast<std::uint8_t>(static_cast<std::int32_t>(q) + offset);
  }
  pack_codes(codes, bits, {out + layout.header_bytes(), packed_size(32, bits)});
}

void encode_super(const Layout& layout, std::span<const float> x, std::span<const float> importance,
                  std::uint8_t* out) {
  const int bits = layout.code_bits;
  const bool asymmetric = layout.asymmetric();
  const std::uint32_t sub = layout.sub_block_size();
  const std::uint32_t n_sub = layout.sub_block_count();
  const std::uint32_t param_max = (1u << layout.param_bits) - 1u;

  std::array<SubParams, 16> params{};
  for (std::uint32_t j = 0; j < n_sub; ++j) {
    params[j] = fit_sub_block(x.subspan(j * sub, sub),
                              importance.empty() ? importance : importance.subspan(j * sub, sub), bits, asymmetric);
  }

  std::array<float, 16> mins{};
  std::array<std::uint32_t, 16> min_codes{};
  std::uint32_t pos = 2;
  if (asymmetric) {
    // Sub-block offsets share the sign of the super offset; offsets of the
    // opposite sign collapse to zero, which still covers their range when
    // the super offset is negative.
    const bool negative = std::any_of(params.begin(), params.begin() + n_sub, [](const SubParams& p) { return p.min < 0; });
    float extreme = 0.0f;
    for (std::uint32_t j = 0; j < n_sub; ++j) {
      extreme = negative ? std::min(extreme, params[j].min) : std::max(extreme, params[j].min);
    }
    store_half(out + 2, extreme / float(param_max));
    const float super_min = load_half(out + 2);
    for (std::uint32_t j = 0; j < n_sub; ++j) {
      min_codes[j] = super_min != 0 ? clamp_code(params[j].min / super_min, param_max) : 0;
      mins[j] = float(min_codes[j]) * super_min;
      if (importance.empty()) {
        params[j].scale = std::max(0.0f, params[j].max - mins[j]) / float((1 << bits) - 1);
      }
    }
    pos = 4;
  }

  float max_scale = 0.0f;
  for (std::uint32_t j = 0; j < n_sub; ++j) max_scale = std::max(max_scale, params[j].scale);
  store_half(out, max_scale / float(param_max));
  const float super_scale = load_half(out);

  BitWriter params_out({out + pos, layout.header_bytes() - pos});
  std::array<float, 16> scales{};
  for (std::uint32_t j = 0; j < n_sub; ++j) {
    const std::uint32_t code = super_scale > 0 ? clamp_code(params[j].scale / super_scale, param_max) : 0;
    scales[j] = float(code) * super_scale;
    params_out.put(code, layout.param_bits);
  }
  if (asymmetric) {
    for (std::uint32_t j = 0; j < n_sub; ++j) params_out.put(min_codes[j], layout.param_bits);
  }

  std::array<std::uint8_t, 256> codes{};
  if (asymmetric) {
    const std::uint32_t top = (1u << bits) - 1u;
    for (std::uint32_t i = 0; i < 256; ++i) {
      const std::uint32_t j = i / sub;
      codes[i] = static_cast<std::uint8_t>(scales[j] > 0 ? clamp_code((x[i] - mins[j]) / scales[j], top) : 0);
    }
  } else {
    const std::int32_t offset = 1 << (bits - 1);
    for (std::uint32_t i = 0; i < 256; ++i) {
      const std::uint32_t j = i / sub;
      const float q =
          scales[j] > 0 ? std::clamp(round_half_away(x[i] / scales[j]), float(-offset), float(offset - 1)) : 0.0f;
      codes[i] = static_cast<std::uint8_t>(static_cast<std::int32_t>(q) + offset);
    }
  }
  pack_codes(codes, bits, {out + layout.header_bytes(), packed_size(256, bits)});
}

}  // namespace

void encode_block(const Layout& layout, std::span<const float> values, std::span<const float> importance,
                  std::span<std::uint8_t> out) {
  if (values.size() != layout.block_size() || out.size() < layout.block_bytes() ||
      (!importance.empty() && importance.size() != values.size())) {
    throw Error(ErrorCode::parameter_error, "encode_block: buffer sizes do not match layout " + describe(layout));
  }
  switch (layout.kind) {
    case LayoutKind::fp16: store_half(out.data(), values[0]); return;
    case LayoutKind::sym32: encode_sym32(layout, values, importance, out.data()); return;
    default: encode_super(layout, values, importance, out.data()); return;
  }
}

void decode_block(const Layout& layout, const std::uint8_t* block, float* out) {
  alignas(32) std::uint8_t codes[256];
  switch (layout.kind) {
    case LayoutKind::fp16: out[0] = load_half(block); return;
    case LayoutKind::sym32: {
      const float d = load_half(block);
      const std::int32_t offset = 1 << (layout.code_bits - 1);
      unpack_codes_unchecked(block + 2, layout.code_bits, 32, codes);
      for (int i = 0; i < 32; ++i) out[i] = float(std::int32_t(codes[i]) - offset) * d;
      return;
    }
    case LayoutKind::sym_k16x16: {
      const float super_scale = load_half(block);
      BitReader params({block + 2, layout.header_bytes() - 2u});
      const std::int32_t offset = 1 << (layout.code_bits - 1);
      unpack_codes_unchecked(block + layout.header_bytes(), layout.code_bits, 256, codes);
      for (int j = 0; j < 16; ++j) {
        const float s = float(params.get(layout.param_bits)) * super_scale;
        for (int i = 16 * j; i < 16 * j + 16; ++i) out[i] = float(std::int32_t(codes[i]) - offset) * s;
      }
      return;
    }
    case LayoutKind::asym_k32x8:
    case LayoutKind::asym_k16x16: {
      const float super_scale = load_half(block);
      const float super_min = load_half(block + 2);
      const int n_sub = static_cast<int>(layout.sub_block_count());
      const int sub = static_cast<int>(layout.sub_block_size());
      BitReader params({block + 4, layout.header_bytes() - 4u});
      std::array<float, 16> scales{};
      for (int j = 0; j < n_sub; ++j) scales[j] = float(params.get(layout.param_bits)) * super_scale;
      unpack_codes_unchecked(block + layout.header_bytes(), layout.code_bits, 256, codes);
      for (int j = 0; j < n_sub; ++j) {
        const float s = scales[j];
        const float m = float(params.get(layout.param_bits)) * super_min;
        for (int i = sub * j; i < sub * j + sub; ++i) out[i] = float(codes[i]) * s + m;
      }
      return;
    }
  }
}

BlockFields inspect_block(const Layout& layout, std::span<const std::uint8_t> block) {
  if (block.size() < layout.block_bytes()) throw Error(ErrorCode::truncated, "inspect_block: short block");
  BlockFields f;
  if (layout.kind == LayoutKind::fp16) {
    f.codes.push_back(block[0] | (block[1] << 8));
    return f;
  }
  f.super_scale = load_half(block.data());
  std::uint32_t pos = 2;
  if (layout.asymmetric()) {
    f.super_min = load_half(block.data() + 2);
    pos = 4;
  }
  if (layout.super_block()) {
    BitReader params(block.subspan(pos, layout.header_bytes() - pos));
    for (std::uint32_t j = 0; j < layout.sub_block_count(); ++j) f.scale_codes.push_back(params.get(layout.param_bits));
    if (layout.asymmetric()) {
      for (std::uint32_t j = 0; j < layout.sub_block_count(); ++j) f.min_codes.push_back(params.get(layout.param_bits));
    }
  }
  std::vector<std::uint8_t> raw(layout.block_size());
  unpack_codes(block.subspan(layout.header_bytes()), layout.code_bits, raw);
  const std::int32_t offset = layout.asymmetric() ? 0 : 1 << (layout.code_bits - 1);
  for (auto c : raw) f.codes.push_back(std::int32_t(c) - offset);
  return f;
}

QuantizedTensor quantize_tensor(const DenseTensor& tensor, SchemeId scheme, std::span<const float> column_importance) {
  tensor.validate();
  const QuantScheme& plan = QuantScheme::get(scheme);
  const Layout layout = plan.layout_for(tensor.role, tensor.layer);
  if (!column_importance.empty() && column_importance.size() != tensor.shape.cols) {
    throw Error(ErrorCode::shape_mismatch, "tensor '" + tensor.name + "' has " + std::to_string(tensor.shape.cols) +
                                               " columns, importance has " +
                                               std::to_string(column_importance.size()));
  }

  QuantizedTensor out;
  out.name = tensor.name;
  out.shape = tensor.shape;
  out.scheme = scheme;
  out.role = tensor.role;
  out.layout = layout;
  const std::uint64_t elements = tensor.shape.elements();
  out.pad_count = pad_count_for(layout, elements);
  out.payload.resize(payload_bytes_for(layout, elements));

  const std::uint64_t block = layout.block_size();
  const auto blocks = static_cast<std::int64_t>(out.block_count());
  const bool weighted = !column_importance.empty() && layout.kind != LayoutKind::fp16;
  const std::uint64_t cols = tensor.shape.cols;

#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < blocks; ++b) {
    const std::uint64_t begin = std::uint64_t(b) * block;
    const std::uint64_t valid = std::min<std::uint64_t>(block, elements - begin);
    std::vector<float> values(block, 0.0f);
    std::copy_n(tensor.values.begin() + static_cast<std::ptrdiff_t>(begin), valid, values.begin());
    std::vector<float> importance;
    if (weighted) {
      std::vector<float> a_sq(block, 0.0f);
      for (std::uint64_t i = 0; i < valid; ++i) a_sq[i] = column_importance[(begin + i) % cols];
      importance = block_weights(values, a_sq).a_tilde_sq;
    }
    encode_block(layout, values, importance,
                 {out.payload.data() + std::uint64_t(b) * layout.block_bytes(), layout.block_bytes()});
  }
  return out;
}

std::vector<float> dequantize_padded(const QuantizedTensor& tensor) {
  tensor.validate();
  std::vector<float> out(tensor.padded_elements());
  const auto blocks = static_cast<std::int64_t>(tensor.block_count());
  const std::uint64_t block = tensor.layout.block_size();
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < blocks; ++b) {
    decode_block(tensor.layout, tensor.block(std::uint64_t(b)), out.data() + std::uint64_t(b) * block);
  }
  std::fill(out.begin() + static_cast<std::ptrdiff_t>(tensor.shape.elements()), out.end(), 0.0f);
  return out;
}

std::vector<float> dequantize_tensor(const QuantizedTensor& tensor) {
  std::vector<float> out = dequantize_padded(tensor);
  out.resize(tensor.shape.elements());
  return out;
}

DenseTensor to_dense(const QuantizedTensor& tensor) {
  return {tensor.name, tensor.shape, tensor.role, layer_from_name(tensor.name), dequantize_tensor(tensor)};
}

double rmse(std::span<const float> reference, std::span<const float> approx) {
  if (reference.size() != approx.size()) throw Error(ErrorCode::shape_mismatch, "rmse: length mismatch");
  if (reference.empty()) return 0.0;
  double sum = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double d = double(reference[i]) - double(approx[i]);
    sum += d * d;
  }
  return std::sqrt(sum / double(reference.size()));
}

double round_trip_rmse(const DenseTensor& tensor, SchemeId scheme, std::span<const float> column_importance) {
  return rmse(tensor.values, dequantize_tensor(quantize_tensor(tensor, scheme, column_importance)));
}

}  // namespace qb
