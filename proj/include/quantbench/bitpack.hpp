#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace qb {

// LSB-first bit stream over a caller-owned byte buffer.
class BitWriter {
 public:
  explicit BitWriter(std::span<std::uint8_t> out) : out_(out) {}
  void put(std::uint32_t value, unsigned bits);
  std::size_t bit_position() const { return pos_; }

 private:
  std::span<std::uint8_t> out_;
  std::size_t pos_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint32_t get(unsigned bits);
  std::size_t bit_position() const { return pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

// Weight-code packing. codes.size() must be a multiple of 32 and every code
// must fit in `bits` (1..8). Widths 8, 4 and 2 use byte-parallel groups of 32
// codes so decoding needs no cross-byte shifts:
//   8-bit: byte i = code i
//   4-bit: byte j (0..15) = code j | code (j + 16) << 4
//   2-bit: byte j (0..7)  = code j | code (j + 8) << 2 | code (j + 16) << 4 | code (j + 24) << 6
// Other widths use the plain LSB-first stream.
std::size_t packed_size(std::size_t count, unsigned bits);
void pack_codes(std::span<const std::uint8_t> codes, unsigned bits, std::span<std::uint8_t> out);
void unpack_codes(std::span<const std::uint8_t> in, unsigned bits, std::span<std::uint8_t> codes);

// Hot-path variant without argument checks; count must be a multiple of 32.
void unpack_codes_unchecked(const std::uint8_t* in, unsigned bits, std::size_t count, std::uint8_t* out);

}  // namespace qb
