#include "quantbench/simulate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <limits>
#include <map>
#include <new>

#include <omp.h>

#include "quantbench/error.hpp"
#include "quantbench/fp16.hpp"
#include "quantbench/philox.hpp"

namespace qb {

namespace {

constexpr std::size_t kSlotsPerLayer = 7;
enum Slot { attn_q, attn_k, attn_v, attn_o, ffn_gate, ffn_up, ffn_down };

// Token vectors come from streams disjoint from the weight streams.
constexpr std::uint64_t kTokenStream = std::uint64_t{1} << 63;

void synthetic_token(std::uint64_t seed, std::uint64_t position, float* out, std::size_t d) {
  GaussianStream(seed, kTokenStream + position).fill(out, d);
}

void rms_norm(const float* in, float* out, std::size_t d) {
  double sum = 0.0;
  for (std::size_t i = 0; i < d; ++i) sum += double(in[i]) * in[i];
  const float inv = float(1.0 / std::sqrt(sum / double(d) + 1e-6));
  for (std::size_t i = 0; i < d; ++i) out[i] = in[i] * inv;
}

float silu(float v) { return v / (1.0f + std::exp(-v)); }

std::uint64_t activation_bytes_per_token(const ModelConfig& c) {
  std::uint64_t total = 0;
  for (const TensorSpec& spec : model_tensor_specs(c)) total += (std::uint64_t{spec.shape.cols} + spec.shape.rows) * 4;
  return total;
}

struct Clock {
  std::chrono::steady_clock::time_point wall = std::chrono::steady_clock::now();
  std::clock_t cpu = std::clock();

  void finish(BenchRecord& r) const {
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall).count();
    r.cpu_time = double(std::clock() - cpu) / CLOCKS_PER_SEC;
  }
};

// Runs the stack over `n` token-major vectors in `x` starting at cache
// position `first`.
class Forward {
 public:
  Forward(const SyntheticModel& model, KvCache& kv, const SimOptions& options, std::size_t n)
      : m_(model), kv_(kv), options_(options), n_(n) {
    const std::size_t d = model.config.d_model;
    const std::size_t f = model.config.d_ffn;
    try {
      h_.resize(n * d);
      q_.resize(n * d);
      k_.resize(n * d);
      v_.resize(n * d);
      a_.resize(n * d);
      o_.resize(n * d);
      g_.resize(n * f);
      u_.resize(n * f);
      logits_.resize(n * model.config.vocab_proxy);
      vsum_.resize(d);
      row_.resize(d);
    } catch (const std::bad_alloc&) {
      throw Error(ErrorCode::resource_error, "cannot allocate activations for " + std::to_string(n) + " tokens");
    }
  }

  void run(std::vector<float>& x, std::uint64_t first) {
    const ModelConfig& c = m_.config;
    const std::size_t d = c.d_model;
    if (first + n_ > kv_.capacity()) {
      throw Error(ErrorCode::resource_error, "KV cache holds " + std::to_string(kv_.capacity()) + " tokens; " +
                                                 std::to_string(first + n_) + " requested");
    }
    for (std::uint32_t layer = 0; layer < c.n_layers; ++layer) {
      const std::size_t base = std::size_t{layer} * kSlotsPerLayer;
      norm_rows(x.data(), h_.data(), d);
      matmul(base + attn_q, h_.data(), q_.data());
      matmul(base + attn_k, h_.data(), k_.data());
      matmul(base + attn_v, h_.data(), v_.data());
      for (std::size_t t = 0; t < n_; ++t) {
        float_to_half_row(k_.data() + t * d, kv_.keys(layer, first + t), d);
        float_to_half_row(v_.data() + t * d, kv_.values(layer, first + t), d);
      }
      attend(layer, first);
      matmul(base + attn_o, a_.data(), o_.data());
      for (std::size_t i = 0; i < n_ * d; ++i) x[i] += o_[i];

      norm_rows(x.data(), h_.data(), d);
      matmul(base + ffn_gate, h_.data(), g_.data());
      matmul(base + ffn_up, h_.data(), u_.data());
      for (std::size_t i = 0; i < g_.size(); ++i) g_[i] = silu(g_[i]) * u_[i];
      matmul(base + ffn_down, g_.data(), o_.data());
      for (std::size_t i = 0; i < n_ * d; ++i) x[i] += o_[i];
    }
    norm_rows(x.data(), h_.data(), d);
    matmul(m_.tensors.size() - 1, h_.data(), logits_.data());
    kv_.advance(n_);
  }

 private:
  void norm_rows(const float* in, float* out, std::size_t d) {
    for (std::size_t t = 0; t < n_; ++t) rms_norm(in + t * d, out + t * d, d);
  }

  // Outputs are scaled by 1/sqrt(cols) so activations stay O(1) through the stack.
  void matmul(std::size_t index, const float* in, float* out) {
    const QuantizedTensor& w = m_.tensors[index];
    if (options_.observer) options_.observer(index, in, n_);
    gemm_tokens(w, in, n_, out, options_.kernel);
    const float scale = 1.0f / std::sqrt(float(w.shape.cols));
    for (std::size_t i = 0; i < n_ * w.shape.rows; ++i) out[i] *= scale;
  }

  static void float_to_half_row(const float* in, std::uint16_t* out, std::size_t d) {
    for (std::size_t i = 0; i < d; ++i) out[i] = float_to_half(in[i]);
  }

  // Uniform causal attention: token at position p takes the mean of the cached
  // V entries 0..p. A batch keeps a running sum; a single token reads the
  // whole cache.
  void attend(std::uint32_t layer, std::uint64_t first) {
    const std::size_t d = m_.config.d_model;
    std::fill(vsum_.begin(), vsum_.end(), 0.0f);
    const auto add_entry = [&](std::uint64_t position) {
      half_to_float(reinterpret_cast<const std::uint8_t*>(kv_.values(layer, position)), row_.data(), d);
      for (std::size_t i = 0; i < d; ++i) vsum_[i] += row_[i];
    };
    for (std::uint64_t p = 0; p < first; ++p) add_entry(p);
    for (std::size_t t = 0; t < n_; ++t) {
      add_entry(first + t);
      const float inv = 1.0f / float(first + t + 1);
      for (std::size_t i = 0; i < d; ++i) a_[t * d + i] = vsum_[i] * inv;
    }
  }

  const SyntheticModel& m_;
  KvCache& kv_;
  const SimOptions& options_;
  std::size_t n_;
  std::vector<float> h_, q_, k_, v_, a_, o_, g_, u_, logits_, vsum_, row_;
};

}  // namespace

std::uint64_t SyntheticModel::weight_bytes() const {
  std::uint64_t total = 0;
  for (const QuantizedTensor& t : tensors) total += t.payload.size();
  return total;
}

SyntheticModel build_model(const ModelConfig& config, SchemeId scheme, std::uint64_t seed,
                           std::span<const ImportanceMatrix> importance) {
  config.validate();
  std::map<std::string, const ImportanceMatrix*, std::less<>> by_name;
  for (const ImportanceMatrix& m : importance) by_name[m.name()] = &m;

  SyntheticModel model{config, scheme, {}, 0.0};
  double sq_error = 0.0;
  std::uint64_t count = 0;
  for (const TensorSpec& spec : model_tensor_specs(config)) {
    const DenseTensor dense = materialize(spec, seed);
    std::vector<float> column_importance;
    if (const auto it = by_name.find(spec.name); it != by_name.end()) column_importance = it->second->mean_sq();
    QuantizedTensor q = quantize_tensor(dense, scheme, column_importance);
    const std::vector<float> back = dequantize_tensor(q);
    for (std::size_t i = 0; i < back.size(); ++i) {
      const double e = double(dense.values[i]) - back[i];
      sq_error += e * e;
    }
    count += back.size();
    model.tensors.push_back(std::move(q));
  }
  model.rmse = std::sqrt(sq_error / double(count));
  return model;
}

ModelConfig infer_config(std::span<const QuantizedTensor> tensors, std::string label) {
  const auto find = [&](std::string_view name) -> const QuantizedTensor* {
    for (const QuantizedTensor& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  };
  const QuantizedTensor* output = find("output");
  const QuantizedTensor* up = find("blk.0.ffn_up");
  if (!output || !up) throw Error(ErrorCode::invalid_config, "tensor set lacks 'output' or 'blk.0.ffn_up'");
  ModelConfig c;
  c.label = std::move(label);
  c.d_model = output->shape.cols;
  c.vocab_proxy = output->shape.rows;
  c.d_ffn = up->shape.rows;
  c.n_heads = 1;
  c.n_layers = static_cast<std::uint32_t>((tensors.size() - 1) / kSlotsPerLayer);
  const auto specs = model_tensor_specs(c);
  if (specs.size() != tensors.size()) {
    throw Error(ErrorCode::invalid_config, "expected " + std::to_string(specs.size()) + " tensors, found " +
                                               std::to_string(tensors.size()));
  }
  for (const TensorSpec& spec : specs) {
    const QuantizedTensor* t = find(spec.name);
    if (!t) throw Error(ErrorCode::invalid_config, "missing tensor '" + spec.name + "'");
    if (t->shape != spec.shape) throw Error(ErrorCode::invalid_config, "tensor '" + spec.name + "' has the wrong shape");
  }
  return c;
}

SyntheticModel model_from_tensors(std::vector<QuantizedTensor> tensors, std::string label) {
  SyntheticModel model;
  model.config = infer_config(tensors, std::move(label));
  model.scheme = tensors.front().scheme;
  model.rmse = std::numeric_limits<double>::quiet_NaN();
  for (const TensorSpec& spec : model_tensor_specs(model.config)) {
    const auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& t) { return t.name == spec.name; });
    model.tensors.push_back(std::move(*it));
  }
  return model;
}

std::uint64_t predicted_weight_bytes(const ModelConfig& config, SchemeId scheme) {
  const QuantScheme& s = QuantScheme::get(scheme);
  std::uint64_t total = 0;
  for (const TensorSpec& spec : model_tensor_specs(config)) {
    total += payload_bytes_for(s.layout_for(spec.role, spec.layer), spec.shape.elements());
  }
  return total;
}

KvCache::KvCache(const ModelConfig& config, std::uint64_t capacity)
    : d_model_(config.d_model), capacity_(capacity), account_(KvCacheAccount::for_model(config)) {
  try {
    data_.assign(std::size_t{config.n_layers} * 2 * capacity * config.d_model, 0);
  } catch (const std::bad_alloc&) {
    throw Error(ErrorCode::resource_error, "cannot allocate a KV cache for " + std::to_string(capacity) + " tokens");
  }
}

std::uint16_t* KvCache::keys(std::uint32_t layer, std::uint64_t position) {
  return data_.data() + ((std::size_t{layer} * 2) * capacity_ + position) * d_model_;
}

std::uint16_t* KvCache::values(std::uint32_t layer, std::uint64_t position) {
  return data_.data() + ((std::size_t{layer} * 2 + 1) * capacity_ + position) * d_model_;
}

PhaseCounters prefill_counters(const ModelConfig& config, std::uint64_t weight_bytes, std::uint64_t cached_before,
                               std::uint64_t input_len) {
  const std::uint64_t per_token = KvCacheAccount::for_model(config).bytes_per_token;
  PhaseCounters c;
  c.flops = 2 * config.parameter_count() * input_len;
  c.bytes = weight_bytes;
  c.kv_bytes = input_len * per_token + (cached_before + input_len) * (per_token / 2);
  c.activation_bytes = activation_bytes_per_token(config) * input_len;
  return c;
}

PhaseCounters decode_counters(const ModelConfig& config, std::uint64_t weight_bytes, std::uint64_t cached_before,
                              std::uint64_t output_len) {
  const std::uint64_t per_token = KvCacheAccount::for_model(config).bytes_per_token;
  // Step s reads entries 0..cached_before+s.
  const std::uint64_t reads = output_len * (cached_before + 1) + output_len * (output_len - 1) / 2;
  PhaseCounters c;
  c.flops = 2 * config.parameter_count() * output_len;
  c.bytes = weight_bytes * output_len;
  c.kv_bytes = output_len * per_token + reads * (per_token / 2);
  c.activation_bytes = activation_bytes_per_token(config) * output_len;
  return c;
}

int resolve_workers(const KernelOptions& options) {
  return options.workers > 0 ? options.workers : omp_get_max_threads();
}

BenchRecord simulate_prefill(const SyntheticModel& model, std::uint32_t input_len, KvCache& kv, std::uint64_t seed,
                             const SimOptions& options) {
  if (input_len < 1) throw Error(ErrorCode::parameter_error, "input_len must be >= 1");
  const std::size_t d = model.config.d_model;
  const std::uint64_t first = kv.account().tokens_cached;
  BenchRecord r;
  r.phase = Phase::prefill;
  r.tokens = input_len;
  r.workers = resolve_workers(options.kernel);
  const PhaseCounters c = prefill_counters(model.config, model.weight_bytes(), first, input_len);
  r.flops = c.flops;
  r.bytes = c.bytes;
  r.kv_bytes = c.kv_bytes;
  r.activation_bytes = c.activation_bytes;

  Forward forward(model, kv, options, input_len);
  std::vector<float> x(std::size_t{input_len} * d);
  for (std::uint32_t t = 0; t < input_len; ++t) synthetic_token(seed, first + t, x.data() + t * d, d);
  const Clock clock;
  forward.run(x, first);
  clock.finish(r);
  return r;
}

BenchRecord simulate_decode(const SyntheticModel& model, std::uint32_t output_len, KvCache& kv, std::uint64_t seed,
                            const SimOptions& options) {
  if (output_len < 1) throw Error(ErrorCode::parameter_error, "output_len must be >= 1");
  const std::size_t d = model.config.d_model;
  const std::uint64_t first = kv.account().tokens_cached;
  BenchRecord r;
  r.phase = Phase::decode;
  r.tokens = output_len;
  r.workers = resolve_workers(options.kernel);
  const PhaseCounters c = decode_counters(model.config, model.weight_bytes(), first, output_len);
  r.flops = c.flops;
  r.bytes = c.bytes;
  r.kv_bytes = c.kv_bytes;
  r.activation_bytes = c.activation_bytes;

  Forward forward(model, kv, options, 1);
  std::vector<float> tokens(std::size_t{output_len} * d);
  for (std::uint32_t s = 0; s < output_len; ++s) synthetic_token(seed, first + s, tokens.data() + s * d, d);
  std::vector<float> x(d);
  const Clock clock;
  for (std::uint32_t s = 0; s < output_len; ++s) {
    std::copy_n(tokens.data() + s * d, d, x.data());
    forward.run(x, first + s);
  }
  clock.finish(r);
  return r;
}

std::string_view to_string(Phase phase) { return phase == Phase::prefill ? "prefill" : "decode"; }

std::optional<Phase> phase_from_string(std::string_view name) {
  if (name == "prefill") return Phase::prefill;
  if (name == "decode") return Phase::decode;
  return std::nullopt;
}

}  // namespace qb
