#include "quantbench/bitpack.hpp"

#include <cstring>
#include <string>

#include "quantbench/error.hpp"

namespace qb {

void BitWriter::put(std::uint32_t value, unsigned bits) {
  for (unsigned b = 0; b < bits; ++b, ++pos_) {
    const std::size_t byte = pos_ / 8;
    const unsigned shift = pos_ % 8;
    if (shift == 0) out_[byte] = 0;
    out_[byte] = static_cast<std::uint8_t>(out_[byte] | (((value >> b) & 1u) << shift));
  }
}

std::uint32_t BitReader::get(unsigned bits) {
  std::uint32_t value = 0;
  for (unsigned b = 0; b < bits; ++b, ++pos_) {
    value |= std::uint32_t((in_[pos_ / 8] >> (pos_ % 8)) & 1u) << b;
  }
  return value;
}

namespace {

void check_args(std::size_t count, unsigned bits) {
  if (bits < 1 || bits > 8) throw Error(ErrorCode::parameter_error, "code width must be 1..8, got " + std::to_string(bits));
  if (count % 32 != 0) throw Error(ErrorCode::parameter_error, "code count must be a multiple of 32");
}

}  // namespace

std::size_t packed_size(std::size_t count, unsigned bits) { return count * bits / 8; }

void pack_codes(std::span<const std::uint8_t> codes, unsigned bits, std::span<std::uint8_t> out) {
  check_args(codes.size(), bits);
  if (out.size() < packed_size(codes.size(), bits)) throw Error(ErrorCode::parameter_error, "pack buffer too small");
  const std::uint32_t mask = (1u << bits) - 1u;
  for (std::uint8_t c : codes) {
    if (c > mask) throw Error(ErrorCode::parameter_error, "code " + std::to_string(c) + " exceeds width");
  }
  if (bits == 8) {
    for (std::size_t i = 0; i < codes.size(); ++i) out[i] = codes[i];
    return;
  }
  if (bits == 4 || bits == 2) {
    const std::size_t lanes = 8 / bits;
    const std::size_t stride = 32 / lanes;  // bytes per 32-code group
    for (std::size_t g = 0; g < codes.size() / 32; ++g) {
      const std::uint8_t* src = codes.data() + 32 * g;
      std::uint8_t* dst = out.data() + stride * g;
      for (std::size_t j = 0; j < stride; ++j) {
        std::uint8_t byte = 0;
        for (std::size_t lane = 0; lane < lanes; ++lane) {
          byte = static_cast<std::uint8_t>(byte | (src[j + lane * stride] << (lane * bits)));
        }
        dst[j] = byte;
      }
    }
    return;
  }
  BitWriter writer(out);
  for (std::uint8_t c : codes) writer.put(c, bits);
}

namespace {

// Eight codes span exactly B bytes.
template <unsigned B>
void unpack_stream(const std::uint8_t* in, std::size_t count, std::uint8_t* out) {
  constexpr std::uint64_t mask = (std::uint64_t{1} << B) - 1u;
  for (std::size_t g = 0; g < count / 8; ++g) {
    // Two overlapping loads; a partial memcpy into v stalls on store forwarding.
    std::uint64_t v;
    if constexpr (B >= 4) {
      std::uint32_t lo, hi;
      std::memcpy(&lo, in + g * B, 4);
      std::memcpy(&hi, in + g * B + B - 4, 4);
      v = lo | std::uint64_t{hi} << (8 * (B - 4));
    } else {
      v = 0;
      for (unsigned b = 0; b < B; ++b) v |= std::uint64_t{in[g * B + b]} << (8 * b);
    }
    for (unsigned k = 0; k < 8; ++k) out[8 * g + k] = static_cast<std::uint8_t>((v >> (k * B)) & mask);
  }
}

}  // namespace

void unpack_codes_unchecked(const std::uint8_t* in, unsigned bits, std::size_t count, std::uint8_t* out) {
  switch (bits) {
    case 8:
      for (std::size_t i = 0; i < count; ++i) out[i] = in[i];
      return;
    case 4:
      for (std::size_t g = 0; g < count / 32; ++g) {
        const std::uint8_t* __restrict src = in + 16 * g;
        std::uint8_t* __restrict dst = out + 32 * g;
        for (std::size_t j = 0; j < 16; ++j) dst[j] = src[j] & 0x0F;
        for (std::size_t j = 0; j < 16; ++j) dst[j + 16] = src[j] >> 4;
      }
      return;
    case 2:
      for (std::size_t g = 0; g < count / 32; ++g) {
        const std::uint8_t* __restrict src = in + 8 * g;
        std::uint8_t* __restrict dst = out + 32 * g;
        for (unsigned k = 0; k < 4; ++k) {
          for (std::size_t j = 0; j < 8; ++j) dst[j + 8 * k] = (src[j] >> (2 * k)) & 3;
        }
      }
      return;
    case 1: return unpack_stream<1>(in, count, out);
    case 3: return unpack_stream<3>(in, count, out);
    case 5: return unpack_stream<5>(in, count, out);
    case 6: return unpack_stream<6>(in, count, out);
    case 7: return unpack_stream<7>(in, count, out);

  }
}

void unpack_codes(std::span<const std::uint8_t> in, unsigned bits, std::span<std::uint8_t> codes) {
  check_args(codes.size(), bits);
  if (in.size() < packed_size(codes.size(), bits)) throw Error(ErrorCode::truncated, "packed codes truncated");
  unpack_codes_unchecked(in.data(), bits, codes.size(), codes.data());
}

}  // namespace qb
