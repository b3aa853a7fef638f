#include "quantbench/scheme.hpp"

#include <string>

#include "quantbench/error.hpp"

namespace qb {

static_assert(sym32(8).block_bits() == 272);
static_assert(asym_k32x8(4, 6).block_bits() == 1152);
static_assert(sym_k16x16(6, 8).block_bits() == 1680);
static_assert(sym_k16x16(3, 6).block_bits() == 880);
static_assert(asym_k16x16(2, 4).block_bits() == 672);
static_assert(asym_k32x8(5, 6).header_bits() % 8 == 0 && sym_k16x16(3, 6).header_bits() % 8 == 0);

std::string_view to_string(SchemeId id) {
  switch (id) {
    case SchemeId::FP16: return "FP16";
    case SchemeId::Q8_0: return "Q8_0";
    case SchemeId::Q5_0: return "Q5_0";
    case SchemeId::Q4_0: return "Q4_0";
    case SchemeId::Q5_K: return "Q5_K";
    case SchemeId::Q4_K: return "Q4_K";
    case SchemeId::Q3_K: return "Q3_K";
    case SchemeId::Q2_K: return "Q2_K";
  }
  return "unknown";
}

std::optional<SchemeId> scheme_from_string(std::string_view name) {
  for (SchemeId id : kAllSchemes) {
    if (to_string(id) == name) return id;
  }
  return std::nullopt;
}

std::optional<SchemeId> scheme_from_byte(std::uint8_t value) {
  if (value > static_cast<std::uint8_t>(SchemeId::Q2_K)) return std::nullopt;
  return static_cast<SchemeId>(value);
}

std::string describe(const Layout& layout) {
  switch (layout.kind) {
    case LayoutKind::fp16: return "fp16";
    case LayoutKind::sym32: return "sym32/q" + std::to_string(layout.code_bits);
    case LayoutKind::asym_k32x8:
      return "asym32x8/q" + std::to_string(layout.code_bits) + "p" + std::to_string(layout.param_bits);
    case LayoutKind::sym_k16x16:
      return "sym16x16/q" + std::to_string(layout.code_bits) + "p" + std::to_string(layout.param_bits);
    case LayoutKind::asym_k16x16:
      return "asym16x16/q" + std::to_string(layout.code_bits) + "p" + std::to_string(layout.param_bits);
  }
  return "unknown";
}

namespace {

// Index order follows Role: wv, wo, w2, other.
QuantScheme uniform(SchemeId id, Layout layout) {
  return {id, {RolePlan{layout, {}}, RolePlan{layout, {}}, RolePlan{layout, {}}, RolePlan{layout, {}}}};
}

QuantScheme k_mixed(SchemeId id, std::uint8_t bits) {
  const Layout base = asym_k32x8(bits, 6);
  const Layout high = sym_k16x16(6, 8);
  return {id, {RolePlan{base, high}, RolePlan{base, {}}, RolePlan{base, high}, RolePlan{base, {}}}};
}

const std::array<QuantScheme, 8>& scheme_table() {
  static const std::array<QuantScheme, 8> table = [] {
    const Layout q3_other = sym_k16x16(3, 6);
    const Layout q4_block = asym_k32x8(4, 6);
    const Layout q2_other = asym_k16x16(2, 4);
    return std::array<QuantScheme, 8>{
        uniform(SchemeId::FP16, kLayoutFp16),
        uniform(SchemeId::Q8_0, sym32(8)),
        uniform(SchemeId::Q5_0, sym32(5)),
        uniform(SchemeId::Q4_0, sym32(4)),
        k_mixed(SchemeId::Q5_K, 5),
        k_mixed(SchemeId::Q4_K, 4),
        QuantScheme{SchemeId::Q3_K,
                    {RolePlan{q4_block, {}}, RolePlan{q4_block, {}}, RolePlan{q4_block, {}}, RolePlan{q3_other, {}}}},
        QuantScheme{SchemeId::Q2_K,
                    {RolePlan{q2_other, q4_block}, RolePlan{q2_other, {}}, RolePlan{q2_other, q4_block},
                     RolePlan{q2_other, {}}}},
    };
  }();
  return table;
}

}  // namespace

const QuantScheme& QuantScheme::get(SchemeId id) {
  const auto index = static_cast<std::size_t>(id);
  if (index >= scheme_table().size()) {
    throw Error(ErrorCode::scheme_error, "unknown scheme id " + std::to_string(index));
  }
  return scheme_table()[index];
}

const RolePlan& QuantScheme::plan(Role role) const {
  const auto index = static_cast<std::size_t>(role);
  if (index >= roles.size()) {
    throw Error(ErrorCode::scheme_error,
                std::string(to_string(id)) + " has no layout for role byte " + std::to_string(index));
  }
  return roles[index];
}

Layout QuantScheme::layout(Role role, Path path) const {
  const RolePlan& p = plan(role);
  if (path == Path::standard) return p.standard;
  if (!p.high_precision) {
    throw Error(ErrorCode::scheme_error, std::string(to_string(id)) + " has no high-precision path for " +
                                             std::string(to_string(role)));
  }
  return *p.high_precision;
}

Path path_for(const RolePlan& plan, std::optional<std::uint32_t> layer) {
  return plan.high_precision && layer && *layer % 2 == 0 ? Path::high_precision : Path::standard;
}

Layout QuantScheme::layout_for(Role role, std::optional<std::uint32_t> layer) const {
  return layout(role, path_for(plan(role), layer));
}

Bpw bpw(SchemeId scheme, Role role, Path path) { return QuantScheme::get(scheme).layout(role, path).bpw(); }

}  // namespace qb
