#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "quantbench/record.hpp"
#include "quantbench/simulate.hpp"

namespace qb {

struct BenchOptions {
  std::uint32_t warmup = 3;
  std::uint32_t trials = 3;
  // workers = 0 takes QUANTBENCH_WORKERS, then the OpenMP default.
  KernelOptions kernel;
  bool sample_memory = true;
  // Called before every trial attempt (warmups included) with the seed it
  // will use. Throwing from here fails the attempt; used to exercise retries.
  std::function<void(std::uint32_t attempt, std::uint64_t seed)> before_trial;
};

struct PhaseStats {
  double tps_mean = 0.0;
  double tps_std = 0.0;  // sample standard deviation; 0 for a single trial
};

struct BenchSummary {
  SchemeId scheme = SchemeId::FP16;
  std::string model_label;
  std::uint32_t input_len = 0;
  std::uint32_t output_len = 0;
  std::uint64_t seed = 0;  // as requested; retried trials use seed + 1
  PhaseStats prefill;
  PhaseStats decode;
  std::uint32_t warmup_count = 0;
  std::uint32_t trial_count = 0;
  std::vector<BenchRecord> records;  // measured trials, prefill then decode per trial
  std::uint32_t retries = 0;
  bool valid = true;  // false when a trial failed twice; records are partial
  std::string error;

  const PhaseStats& stats(Phase phase) const { return phase == Phase::prefill ? prefill : decode; }
};

// Warmup runs (discarded), then measured trials. Each run resets the KV cache
// and executes a prefill of input_len tokens followed by output_len decode
// steps. A failed run is retried once with seed + 1; a second failure stops
// the benchmark and returns what was measured with valid = false. Holds a
// process-wide lock so only one benchmark times at once.
BenchSummary run_benchmark(const SyntheticModel& model, const Workload& workload, const BenchOptions& options = {});

// QUANTBENCH_WORKERS when set (must be a positive integer), else 0.
int workers_from_env();

PhaseStats phase_stats(const std::vector<BenchRecord>& records, Phase phase);

// (t_low_bpw - t_fp16) / t_low_bpw. Throws math_error when t_low_bpw <= 0.
double degradation_comm(double t_low_bpw, double t_fp16);
// (t_64 - t_512) / t_64. Throws math_error when t_64 <= 0.
double degradation_comp(double t_64, double t_512);

// flops / bytes from the record's exact counters. Throws math_error when bytes is 0.
double operational_intensity(const BenchRecord& record);
// Decode intensity when every weight is read once per token at the given bits
// per weight: 2 flops over bpw/8 bytes.
Bpw decode_intensity_for_bpw(const Bpw& bpw);

struct HardwareProfile {
  double peak_flops_per_s = 0.0;
  double mem_bandwidth_bytes_per_s = 0.0;
  std::uint32_t cores = 1;

  void validate() const;  // parameter_error unless all positive
  double machine_balance() const { return peak_flops_per_s / mem_bandwidth_bytes_per_s; }
};

enum class Bound { compute, communication };
std::string_view to_string(Bound bound);

struct RooflinePoint {
  double operational_intensity = 0.0;
  Bound bound = Bound::communication;
};

// Compute-bound iff oi >= machine balance; a tie counts as compute-bound.
RooflinePoint classify_bound(double oi, const HardwareProfile& hw);

// Resident bytes of an empty run, measured when the build is configured; a
// fixed 16 MiB when that measurement was not possible.
std::uint64_t runtime_overhead_bytes();

// Sum of payloads + KV cache at max tokens + runtime overhead.
std::uint64_t memory_footprint(const ModelConfig& config, SchemeId scheme, const Workload& workload);

bool resident_sampling_supported();
// Current resident set in bytes. Throws capability_error when unsupported.
std::uint64_t current_resident_bytes();

// Samples the resident set every `period` while run() executes, plus once
// before and after, and returns the maximum. Throws capability_error when
// unsupported; exceptions from run() propagate after sampling stops.
std::uint64_t measure_peak_resident(const std::function<void()>& run,
                                    std::chrono::milliseconds period = std::chrono::milliseconds(10));

}  // namespace qb
