#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

#include <boost/rational.hpp>

#include "quantbench/tensor.hpp"

namespace qb {

using Bpw = boost::rational<std::int64_t>;

enum class SchemeId : std::uint8_t {
  FP16 = 0,
  Q8_0 = 1,
  Q5_0 = 2,
  Q4_0 = 3,
  Q5_K = 4,
  Q4_K = 5,
  Q3_K = 6,
  Q2_K = 7,
};

inline constexpr SchemeId kAllSchemes[] = {SchemeId::FP16, SchemeId::Q8_0, SchemeId::Q5_0, SchemeId::Q4_0,
                                           SchemeId::Q5_K, SchemeId::Q4_K, SchemeId::Q3_K, SchemeId::Q2_K};

std::string_view to_string(SchemeId id);
std::optional<SchemeId> scheme_from_string(std::string_view name);
std::optional<SchemeId> scheme_from_byte(std::uint8_t value);

// Block layouts. Every quantized layout stores its 16-bit metadata first,
// then the sub-block parameter codes, then the weight codes; the weight codes
// always start on a byte boundary.
//
//   sym32        [f16 scale][32 x n-bit codes]
//   asym_k32x8   [f16 super_scale][f16 super_min][8 x p-bit scale][8 x p-bit min][256 x n-bit codes]
//   sym_k16x16   [f16 super_scale][16 x p-bit scale][256 x n-bit codes]
//   asym_k16x16  [f16 super_scale][f16 super_min][16 x p-bit scale][16 x p-bit min][256 x n-bit codes]
//
// Symmetric codes are stored offset by 2^(n-1) so every field is unsigned.
enum class LayoutKind : std::uint8_t { fp16, sym32, asym_k32x8, sym_k16x16, asym_k16x16 };

struct Layout {
  LayoutKind kind = LayoutKind::fp16;
  std::uint8_t code_bits = 16;
  std::uint8_t param_bits = 0;  // sub-block scale/min code width (16 for sym32's scale)

  constexpr std::uint32_t block_size() const { return kind == LayoutKind::fp16 ? 1 : kind == LayoutKind::sym32 ? 32 : 256; }
  constexpr std::uint32_t sub_block_size() const {
    switch (kind) {
      case LayoutKind::fp16: return 1;
      case LayoutKind::sym32:
      case LayoutKind::asym_k32x8: return 32;
      case LayoutKind::sym_k16x16:
      case LayoutKind::asym_k16x16: return 16;
    }
    return 1;
  }
  constexpr std::uint32_t sub_block_count() const { return block_size() / sub_block_size(); }
  constexpr bool asymmetric() const { return kind == LayoutKind::asym_k32x8 || kind == LayoutKind::asym_k16x16; }
  constexpr bool super_block() const { return block_size() == 256; }

  constexpr std::uint64_t header_bits() const {
    switch (kind) {
      case LayoutKind::fp16: return 0;
      case LayoutKind::sym32: return 16;
      case LayoutKind::sym_k16x16: return 16 + std::uint64_t{sub_block_count()} * param_bits;
      case LayoutKind::asym_k32x8:
      case LayoutKind::asym_k16x16: return 32 + 2 * std::uint64_t{sub_block_count()} * param_bits;
    }
    return 0;
  }
  constexpr std::uint64_t block_bits() const { return header_bits() + std::uint64_t{block_size()} * code_bits; }
  constexpr std::uint32_t header_bytes() const { return static_cast<std::uint32_t>(header_bits() / 8); }
  constexpr std::uint32_t block_bytes() const { return static_cast<std::uint32_t>(block_bits() / 8); }

  // Serialized bits per weight, metadata included.
  Bpw bpw() const { return Bpw(static_cast<std::int64_t>(block_bits()), block_size()); }

  friend constexpr bool operator==(const Layout&, const Layout&) = default;
};

std::string describe(const Layout& layout);

inline constexpr Layout kLayoutFp16{LayoutKind::fp16, 16, 0};
constexpr Layout sym32(std::uint8_t bits) { return {LayoutKind::sym32, bits, 16}; }
constexpr Layout asym_k32x8(std::uint8_t bits, std::uint8_t param_bits) { return {LayoutKind::asym_k32x8, bits, param_bits}; }
constexpr Layout sym_k16x16(std::uint8_t bits, std::uint8_t param_bits) { return {LayoutKind::sym_k16x16, bits, param_bits}; }
constexpr Layout asym_k16x16(std::uint8_t bits, std::uint8_t param_bits) { return {LayoutKind::asym_k16x16, bits, param_bits}; }

enum class Path { standard, high_precision };

struct RolePlan {
  Layout standard;
  // Applied to even-indexed transformer blocks.
  std::optional<Layout> high_precision;
};

struct QuantScheme {
  SchemeId id = SchemeId::FP16;
  std::array<RolePlan, 4> roles{};

  static const QuantScheme& get(SchemeId id);

  const RolePlan& plan(Role role) const;
  Layout layout(Role role, Path path) const;
  // Path selection for a concrete tensor.
  Layout layout_for(Role role, std::optional<std::uint32_t> layer) const;
};

Path path_for(const RolePlan& plan, std::optional<std::uint32_t> layer);

// Throws scheme_error when the role has no such path.
Bpw bpw(SchemeId scheme, Role role, Path path = Path::standard);

inline double to_double(const Bpw& value) { return boost::rational_cast<double>(value); }

}  // namespace qb
