#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "quantbench/imatrix.hpp"
#include "quantbench/kernels.hpp"
#include "quantbench/quantize.hpp"
#include "quantbench/record.hpp"

namespace qb {

// Quantized weights of a synthetic layer stack, in model_tensor_specs order.
struct SyntheticModel {
  ModelConfig config;
  SchemeId scheme = SchemeId::FP16;
  std::vector<QuantizedTensor> tensors;
  // Pooled round-trip RMSE over every weight against the generated values.
  // NaN when the model was loaded from packed data.
  double rmse = 0.0;

  std::uint64_t parameter_count() const { return config.parameter_count(); }
  std::uint64_t weight_bytes() const;
};

// Generates one tensor at a time from (config, seed), quantizes it and drops
// the dense copy. Importance matrices are matched to tensors by name.
SyntheticModel build_model(const ModelConfig& config, SchemeId scheme, std::uint64_t seed,
                           std::span<const ImportanceMatrix> importance = {});

// Recovers the config from tensor names and shapes (n_heads is not stored and
// is reported as 1). Throws invalid_config when the set is not a layer stack.
ModelConfig infer_config(std::span<const QuantizedTensor> tensors, std::string label);
SyntheticModel model_from_tensors(std::vector<QuantizedTensor> tensors, std::string label);

// Sum of payload sizes the scheme produces for the config, without generating.
std::uint64_t predicted_weight_bytes(const ModelConfig& config, SchemeId scheme);

struct KvCacheAccount {
  std::uint64_t bytes_per_token = 0;
  std::uint64_t tokens_cached = 0;

  std::uint64_t total_bytes() const { return bytes_per_token * tokens_cached; }
  // K and V, one 16-bit entry per model dimension per layer.
  static KvCacheAccount for_model(const ModelConfig& config) {
    return {2ull * config.n_layers * config.d_model * 2ull, 0};
  }
};

// 16-bit K and V entries for every layer, allocated and zeroed up front for a
// fixed token capacity.
class KvCache {
 public:
  KvCache(const ModelConfig& config, std::uint64_t capacity);

  void reset() { account_.tokens_cached = 0; }
  const KvCacheAccount& account() const { return account_; }
  std::uint64_t capacity() const { return capacity_; }
  std::uint64_t allocated_bytes() const { return data_.size() * sizeof(std::uint16_t); }

  std::uint16_t* keys(std::uint32_t layer, std::uint64_t position);
  std::uint16_t* values(std::uint32_t layer, std::uint64_t position);
  void advance(std::uint64_t tokens) { account_.tokens_cached += tokens; }

 private:
  std::uint32_t d_model_;
  std::uint64_t capacity_;
  KvCacheAccount account_;
  std::vector<std::uint16_t> data_;  // [layer][K|V][position][d_model]
};

// Exact accounting for one pass; no dependence on timing.
struct PhaseCounters {
  std::uint64_t flops = 0;
  std::uint64_t bytes = 0;
  std::uint64_t kv_bytes = 0;
  std::uint64_t activation_bytes = 0;
};

// flops = 2 x parameters x tokens. A prefill streams the weights once; decode
// streams them once per token. Every new token writes its K and V entries.
// Attention reads cached V entries: a prefill keeps a running sum, so every
// entry up to the end of the batch is read once; a decode step reads all
// entries up to and including its own.
PhaseCounters prefill_counters(const ModelConfig& config, std::uint64_t weight_bytes, std::uint64_t cached_before,
                               std::uint64_t input_len);
PhaseCounters decode_counters(const ModelConfig& config, std::uint64_t weight_bytes, std::uint64_t cached_before,
                              std::uint64_t output_len);

// Receives the input rows of every matmul: tensor index into model.tensors,
// then batch token-major vectors of that tensor's column count.
using ActivationObserver = std::function<void(std::size_t tensor, const float* xs, std::size_t batch)>;

struct SimOptions {
  KernelOptions kernel;
  ActivationObserver observer;
};

// Runs the layer stack over input_len synthetic tokens as batched products and
// appends them to the cache.
BenchRecord simulate_prefill(const SyntheticModel& model, std::uint32_t input_len, KvCache& kv, std::uint64_t seed,
                             const SimOptions& options = {});

// Runs output_len sequential single-token passes; the cache grows by one
// entry per step.
BenchRecord simulate_decode(const SyntheticModel& model, std::uint32_t output_len, KvCache& kv, std::uint64_t seed,
                            const SimOptions& options = {});

// Effective worker count for the given kernel options.
int resolve_workers(const KernelOptions& options);

}  // namespace qb
