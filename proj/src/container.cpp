#include "quantbench/container.hpp"

#include <algorithm>

#include <zlib.h>

#include "binary_io.hpp"
#include "quantbench/error.hpp"

namespace qb {

namespace {

constexpr std::uint8_t kMagic[4] = {0x51, 0x42, 0x46, 0x31};

Layout recover_layout(const QuantScheme& scheme, Role role, std::uint64_t elements, std::uint32_t pad_count,
                      std::uint64_t payload_len, const std::string& name) {
  const RolePlan& plan = scheme.plan(role);
  std::vector<Layout> candidates{plan.standard};
  if (plan.high_precision) candidates.push_back(*plan.high_precision);
  for (const Layout& layout : candidates) {
    if (payload_bytes_for(layout, elements) == payload_len && pad_count_for(layout, elements) == pad_count) {
      return layout;
    }
  }
  throw Error(ErrorCode::corrupt_data, "tensor '" + name + "': payload of " + std::to_string(payload_len) +
                                           " bytes matches no " + std::string(to_string(scheme.id)) + " layout for " +
                                           std::string(to_string(role)));
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - offset, 1u << 30));
    crc = crc32(crc, bytes.data() + offset, chunk);
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_container(std::span<const QuantizedTensor> tensors) {
  detail::ByteWriter out;
  out.put_bytes(kMagic);
  out.put<std::uint32_t>(kContainerVersion);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const QuantizedTensor& t : tensors) {
    t.validate();
    const std::size_t record = out.bytes().size();
    out.put_string(t.name);
    out.put<std::uint8_t>(static_cast<std::uint8_t>(t.role));
    out.put<std::uint8_t>(static_cast<std::uint8_t>(t.scheme));
    out.put<std::uint32_t>(t.shape.rows);
    out.put<std::uint32_t>(t.shape.cols);
    out.put<std::uint32_t>(t.pad_count);
    out.put<std::uint64_t>(t.payload.size());
    out.put_bytes(t.payload);
    out.put<std::uint32_t>(crc32_of(std::span(out.bytes()).subspan(record)));
  }
  return std::move(out.bytes());
}

std::vector<QuantizedTensor> decode_container(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  const auto magic = in.get_bytes(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) throw Error(ErrorCode::bad_magic, "not a QBF1 container");
  const auto version = in.get<std::uint32_t>();
  if (version != kContainerVersion) {
    throw Error(ErrorCode::version_mismatch, "QBF1 version " + std::to_string(version) + ", expected " +
                                                 std::to_string(kContainerVersion));
  }
  const auto count = in.get<std::uint32_t>();

  std::vector<QuantizedTensor> tensors;
  for (std::uint32_t index = 0; index < count; ++index) {
    QuantizedTensor t;
    const std::size_t record = in.position();
    t.name = in.get_string();
    const auto role_byte = in.get<std::uint8_t>();
    const auto scheme_byte = in.get<std::uint8_t>();
    t.shape.rows = in.get<std::uint32_t>();
    t.shape.cols = in.get<std::uint32_t>();
    t.pad_count = in.get<std::uint32_t>();
    const auto payload_len = in.get<std::uint64_t>();
    const auto payload = in.get_bytes(payload_len);
    const std::size_t record_end = in.position();
    const auto crc = in.get<std::uint32_t>();
    if (crc32_of(bytes.subspan(record, record_end - record)) != crc) {
      throw Error(ErrorCode::checksum_mismatch, "tensor '" + t.name + "' record CRC");
    }

    const auto role = role_from_byte(role_byte);
    const auto scheme = scheme_from_byte(scheme_byte);
    if (!role) throw Error(ErrorCode::corrupt_data, "tensor '" + t.name + "': role byte " + std::to_string(role_byte));
    if (!scheme) throw Error(ErrorCode::corrupt_data, "tensor '" + t.name + "': scheme byte " + std::to_string(scheme_byte));
    if (!t.shape.valid()) throw Error(ErrorCode::corrupt_data, "tensor '" + t.name + "' has a zero dimension");
    if (t.shape.elements() > payload_len * 8) {
      throw Error(ErrorCode::corrupt_data, "tensor '" + t.name + "' shape too large for its payload");
    }
    t.role = *role;
    t.scheme = *scheme;
    t.layout = recover_layout(QuantScheme::get(t.scheme), t.role, t.shape.elements(), t.pad_count, payload_len, t.name);
    t.payload.assign(payload.begin(), payload.end());
    tensors.push_back(std::move(t));
  }
  if (in.remaining() != 0) {
    throw Error(ErrorCode::corrupt_data, std::to_string(in.remaining()) + " trailing bytes after the last tensor");
  }
  return tensors;
}

void write_container(const std::filesystem::path& path, std::span<const QuantizedTensor> tensors) {
  detail::write_file(path, encode_container(tensors));
}

std::vector<QuantizedTensor> read_container(const std::filesystem::path& path) {
  return decode_container(detail::read_file(path));
}

}  // namespace qb
