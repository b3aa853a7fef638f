#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

namespace qb {

enum class Phase { prefill, decode };

std::string_view to_string(Phase phase);
std::optional<Phase> phase_from_string(std::string_view name);

// One measured pass over the layer stack.
struct BenchRecord {
  Phase phase = Phase::prefill;
  std::uint64_t tokens = 0;
  double wall_time = 0.0;  // seconds, monotonic clock
  std::uint64_t flops = 0;
  // Weight payload bytes streamed: once per prefill, once per decoded token.
  std::uint64_t bytes = 0;
  std::uint64_t kv_bytes = 0;          // cache entries written plus read
  std::uint64_t activation_bytes = 0;  // matmul inputs read plus outputs written
  std::optional<std::uint64_t> peak_resident_bytes;
  double cpu_time = 0.0;  // process CPU seconds
  int workers = 1;
  std::uint32_t trial_index = 0;

  double tps() const { return double(tokens) / wall_time; }
};

}  // namespace qb
