#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qb {

struct TensorShape {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;

  std::uint64_t elements() const { return std::uint64_t{rows} * cols; }
  bool valid() const { return rows >= 1 && cols >= 1; }
  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

// Tensor roles that the heterogeneous schemes distinguish.
enum class Role : std::uint8_t {
  attention_wv = 0,
  attention_wo = 1,
  feed_forward_w2 = 2,
  other = 3,
};

inline constexpr Role kAllRoles[] = {Role::attention_wv, Role::attention_wo,
                                     Role::feed_forward_w2, Role::other};

std::string_view to_string(Role role);
std::optional<Role> role_from_byte(std::uint8_t value);

struct DenseTensor {
  std::string name;
  TensorShape shape;
  Role role = Role::other;
  // Transformer block index, when the tensor belongs to one. Heterogeneous
  // schemes route even-indexed blocks to their high-precision layout.
  std::optional<std::uint32_t> layer;
  std::vector<float> values;  // row-major, rows * cols

  // Throws invalid_shape / invalid_value when the invariants do not hold.
  void validate() const;
};

struct ModelConfig {
  std::uint32_t n_layers = 0;
  std::uint32_t d_model = 0;
  std::uint32_t d_ffn = 0;
  std::uint32_t n_heads = 0;
  std::uint32_t vocab_proxy = 0;
  std::string label;

  // Throws invalid_config.
  void validate() const;
  std::uint64_t parameter_count() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr std::uint32_t kDefaultInputLengths[] = {64, 128, 256, 512};
inline constexpr std::uint32_t kDefaultOutputLength = 1024;

struct Workload {
  std::uint32_t input_len = 64;
  std::uint32_t output_len = kDefaultOutputLength;
  std::uint64_t seed = 0;

  void validate() const;
  std::uint64_t max_tokens() const { return std::uint64_t{input_len} + output_len; }
};

// Shape and identity of one model weight, without its values.
struct TensorSpec {
  std::string name;
  TensorShape shape;
  Role role = Role::other;
  std::optional<std::uint32_t> layer;
  std::uint64_t stream = 0;  // RNG stream id, unique within a model
};

// Per block: attn_q, attn_k, attn_v, attn_o (d x d); ffn_gate, ffn_up
// (d_ffn x d); ffn_down (d x d_ffn). Followed by one output projection
// (vocab_proxy x d). Shapes are (out_features x in_features).
std::vector<TensorSpec> model_tensor_specs(const ModelConfig& config);

// Zero-mean unit-variance values; deterministic in (shape, seed).
DenseTensor make_random_tensor(TensorShape shape, Role role, std::uint64_t seed);

DenseTensor materialize(const TensorSpec& spec, std::uint64_t seed);

std::vector<DenseTensor> make_model(const ModelConfig& config, std::uint64_t seed);

// Parses the "blk.<n>." prefix used for transformer-block tensors.
std::optional<std::uint32_t> layer_from_name(std::string_view name);

}  // namespace qb
