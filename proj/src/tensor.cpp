#include "quantbench/tensor.hpp"

#include <charconv>
#include <cmath>

#include "quantbench/error.hpp"
#include "quantbench/philox.hpp"

namespace qb {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::attention_wv: return "attention_wv";
    case Role::attention_wo: return "attention_wo";
    case Role::feed_forward_w2: return "feed_forward_w2";
    case Role::other: return "other";
  }
  return "unknown";
}

std::optional<Role> role_from_byte(std::uint8_t value) {
  if (value > static_cast<std::uint8_t>(Role::other)) return std::nullopt;
  return static_cast<Role>(value);
}

void DenseTensor::validate() const {
  if (!shape.valid()) {
    throw Error(ErrorCode::invalid_shape, "tensor '" + name + "' has a zero dimension");
  }
  if (values.size() != shape.elements()) {
    throw Error(ErrorCode::invalid_shape, "tensor '" + name + "' holds " +
                                              std::to_string(values.size()) + " values, shape needs " +
                                              std::to_string(shape.elements()));
  }
  for (float v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::invalid_value, "tensor '" + name + "' has a non-finite value");
  }
}

void ModelConfig::validate() const {
  if (n_layers < 1 || d_model < 1 || d_ffn < 1 || n_heads < 1 || vocab_proxy < 1) {
    throw Error(ErrorCode::invalid_config, "model '" + label + "': all dimensions must be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw Error(ErrorCode::invalid_config, "model '" + label + "': d_model must be divisible by n_heads");
  }
}

std::uint64_t ModelConfig::parameter_count() const {
  const std::uint64_t d = d_model;
  const std::uint64_t f = d_ffn;
  return std::uint64_t{n_layers} * (4 * d * d + 3 * d * f) + std::uint64_t{vocab_proxy} * d;
}

void Workload::validate() const {
  if (input_len < 1) throw Error(ErrorCode::parameter_error, "input_len must be >= 1");
  if (output_len < 1) throw Error(ErrorCode::parameter_error, "output_len must be >= 1");
}

std::vector<TensorSpec> model_tensor_specs(const ModelConfig& config) {
  config.validate();
  const std::uint32_t d = config.d_model;
  const std::uint32_t f = config.d_ffn;
  struct Slot {
    const char* suffix;
    TensorShape shape;
    Role role;
  };
  const Slot block[] = {
      {"attn_q", {d, d}, Role::other},           {"attn_k", {d, d}, Role::other},
      {"attn_v", {d, d}, Role::attention_wv},    {"attn_o", {d, d}, Role::attention_wo},
      {"ffn_gate", {f, d}, Role::other},         {"ffn_up", {f, d}, Role::other},
      {"ffn_down", {d, f}, Role::feed_forward_w2},
  };

  std::vector<TensorSpec> specs;
  specs.reserve(std::size_t{config.n_layers} * std::size(block) + 1);
  std::uint64_t stream = 0;
  for (std::uint32_t layer = 0; layer < config.n_layers; ++layer) {
    for (const Slot& slot : block) {
      specs.push_back({"blk." + std::to_string(layer) + "." + slot.suffix, slot.shape, slot.role, layer,
                       stream++});
    }
  }
  specs.push_back({"output", {config.vocab_proxy, d}, Role::other, std::nullopt, stream++});
  return specs;
}

DenseTensor make_random_tensor(TensorShape shape, Role role, std::uint64_t seed) {
  return materialize({"random", shape, role, std::nullopt, 0}, seed);
}

DenseTensor materialize(const TensorSpec& spec, std::uint64_t seed) {
  if (!spec.shape.valid()) {
    throw Error(ErrorCode::invalid_shape, "tensor '" + spec.name + "' has a zero dimension");
  }
  DenseTensor t{spec.name, spec.shape, spec.role, spec.layer, {}};
  t.values.resize(spec.shape.elements());
  GaussianStream(seed, spec.stream).fill(t.values.data(), t.values.size());
  return t;
}

std::vector<DenseTensor> make_model(const ModelConfig& config, std::uint64_t seed) {
  std::vector<DenseTensor> tensors;
  for (const TensorSpec& spec : model_tensor_specs(config)) tensors.push_back(materialize(spec, seed));
  return tensors;
}

std::optional<std::uint32_t> layer_from_name(std::string_view name) {
  constexpr std::string_view prefix = "blk.";
  if (!name.starts_with(prefix)) return std::nullopt;
  name.remove_prefix(prefix.size());
  std::uint32_t layer = 0;
  const auto [end, ec] = std::from_chars(name.data(), name.data() + name.size(), layer);
  if (ec != std::errc{} || end == name.data() || end == name.data() + name.size() || *end != '.') {
    return std::nullopt;
  }
  return layer;
}

}  // namespace qb
