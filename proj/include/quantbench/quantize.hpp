#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "quantbench/scheme.hpp"
#include "quantbench/tensor.hpp"

namespace qb {

// One packed tensor. The payload holds ceil(elements / block) blocks in
// row-major block order; the flattened tail is padded with zeros before
// encoding and pad_count records how many.
struct QuantizedTensor {
  std::string name;
  TensorShape shape;
  SchemeId scheme = SchemeId::FP16;
  Role role = Role::other;
  Layout layout = kLayoutFp16;
  std::uint32_t pad_count = 0;
  std::vector<std::uint8_t> payload;

  std::uint64_t padded_elements() const { return shape.elements() + pad_count; }
  std::uint64_t block_count() const { return padded_elements() / layout.block_size(); }
  const std::uint8_t* block(std::uint64_t index) const { return payload.data() + index * layout.block_bytes(); }

  // Throws corrupt_data when payload size or pad count disagree with shape and layout.
  void validate() const;

  friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

std::uint32_t pad_count_for(const Layout& layout, std::uint64_t elements);
std::uint64_t payload_bytes_for(const Layout& layout, std::uint64_t elements);

// Encodes layout.block_size() values. `importance` is empty (min/max fit) or
// holds one non-negative weight per value (weighted fit per sub-block).
void encode_block(const Layout& layout, std::span<const float> values, std::span<const float> importance,
                  std::span<std::uint8_t> out);

// Decodes one block into layout.block_size() floats. Shared by every consumer
// of packed data so all of them see bit-identical weights.
void decode_block(const Layout& layout, const std::uint8_t* block, float* out);

// Raw fields of one block, for inspection and tests. Symmetric weight codes
// are reported signed.
struct BlockFields {
  float super_scale = 0.0f;  // scale for sym32
  float super_min = 0.0f;
  std::vector<std::uint32_t> scale_codes;
  std::vector<std::uint32_t> min_codes;
  std::vector<std::int32_t> codes;
};
BlockFields inspect_block(const Layout& layout, std::span<const std::uint8_t> block);

// column_importance, when non-empty, holds the mean squared activation of each
// input column (length = cols); block weights follow a^2 * sqrt(sigma2 + w^2).
QuantizedTensor quantize_tensor(const DenseTensor& tensor, SchemeId scheme,
                                std::span<const float> column_importance = {});

// rows * cols values.
std::vector<float> dequantize_tensor(const QuantizedTensor& tensor);
// padded_elements() values; the padded tail is reported as zeros.
std::vector<float> dequantize_padded(const QuantizedTensor& tensor);

DenseTensor to_dense(const QuantizedTensor& tensor);

double rmse(std::span<const float> reference, std::span<const float> approx);
double round_trip_rmse(const DenseTensor& tensor, SchemeId scheme, std::span<const float> column_importance = {});

}  // namespace qb
