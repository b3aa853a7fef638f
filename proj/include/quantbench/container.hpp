#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "quantbench/quantize.hpp"

namespace qb {

// "QBF1" container, little-endian:
//   magic "QBF1", u32 version (1), u32 tensor count, then per tensor
//   u32 name length, UTF-8 name, u8 role, u8 scheme, u32 rows, u32 cols,
//   u32 pad_count, u64 payload length, payload, u32 CRC-32 of the tensor record
//   (name length through payload).
// The block layout of a heterogeneous scheme is not stored; it is recovered
// from the payload length, which differs between a role's two layouts.
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kContainerHeaderBytes = 12;

std::vector<std::uint8_t> encode_container(std::span<const QuantizedTensor> tensors);
// Throws bad_magic, version_mismatch, truncated, checksum_mismatch or
// corrupt_data; never returns a partial result.
std::vector<QuantizedTensor> decode_container(std::span<const std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, std::span<const QuantizedTensor> tensors);
std::vector<QuantizedTensor> read_container(const std::filesystem::path& path);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace qb
