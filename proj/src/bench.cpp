#include "quantbench/bench.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <new>
#include <thread>

#include <unistd.h>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "quantbench/error.hpp"

namespace qb {

namespace {

std::mutex& bench_lock() {
  static std::mutex m;
  return m;
}

}  // namespace

int workers_from_env() {
  const char* value = std::getenv("QUANTBENCH_WORKERS");
  if (!value || !*value) return 0;
  const std::string_view text(value);
  int workers = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), workers);
  if (ec != std::errc{} || end != text.data() + text.size() || workers < 1) {
    throw Error(ErrorCode::parameter_error, "QUANTBENCH_WORKERS must be a positive integer, got '" +
                                                std::string(text) + "'");
  }
  return workers;
}

PhaseStats phase_stats(const std::vector<BenchRecord>& records, Phase phase) {
  std::vector<double> tps;
  for (const BenchRecord& r : records)
    if (r.phase == phase) tps.push_back(r.tps());
  PhaseStats s;
  if (tps.empty()) return s;
  double sum = 0.0;
  for (double v : tps) sum += v;
  s.tps_mean = sum / double(tps.size());
  if (tps.size() > 1) {
    double sq = 0.0;
    for (double v : tps) sq += (v - s.tps_mean) * (v - s.tps_mean);
    s.tps_std = std::sqrt(sq / double(tps.size() - 1));
  }
  return s;
}

BenchSummary run_benchmark(const SyntheticModel& model, const Workload& workload, const BenchOptions& options) {
  workload.validate();
  if (options.trials < 1) throw Error(ErrorCode::parameter_error, "trials must be >= 1");
  const std::lock_guard<std::mutex> lock(bench_lock());

  SimOptions sim;
  sim.kernel = options.kernel;
  if (sim.kernel.workers == 0) sim.kernel.workers = workers_from_env();

  BenchSummary summary;
  summary.scheme = model.scheme;
  summary.model_label = model.config.label;
  summary.input_len = workload.input_len;
  summary.output_len = workload.output_len;
  summary.seed = workload.seed;
  summary.warmup_count = options.warmup;
  summary.trial_count = options.trials;

  KvCache kv(model.config, workload.max_tokens());
  bool sample = options.sample_memory && resident_sampling_supported();
#if defined(__GLIBC__)
  // Hand heap pages freed before the run (model building) back to the kernel
  // so the sampled peak covers live allocations.
  if (sample) malloc_trim(0);
#endif
  std::uint32_t attempt = 0;

  // One run: prefill then decode from a cleared cache.
  const auto run_once = [&](std::uint64_t seed, std::uint32_t trial_index) {
    if (options.before_trial) options.before_trial(attempt++, seed);
    kv.reset();
    BenchRecord prefill, decode;
    const auto body = [&] {
      prefill = simulate_prefill(model, workload.input_len, kv, seed, sim);
      decode = simulate_decode(model, workload.output_len, kv, seed, sim);
    };
    if (sample) {
      const std::uint64_t peak = measure_peak_resident(body);
      prefill.peak_resident_bytes = peak;
      decode.peak_resident_bytes = peak;
    } else {
      body();
    }
    prefill.trial_index = decode.trial_index = trial_index;
    return std::pair{prefill, decode};
  };

  const std::uint32_t total = options.warmup + options.trials;
  for (std::uint32_t i = 0; i < total; ++i) {
    const bool measured = i >= options.warmup;
    const std::uint32_t trial_index = measured ? i - options.warmup : i;
    std::pair<BenchRecord, BenchRecord> result;
    try {
      result = run_once(workload.seed, trial_index);
    } catch (const std::exception& first) {
      ++summary.retries;
      try {
        result = run_once(workload.seed + 1, trial_index);
      } catch (const std::exception& second) {
        summary.valid = false;
        summary.error = std::string(measured ? "trial " : "warmup ") + std::to_string(trial_index) +
                        " failed twice: " + second.what();
        break;
      }
    }
    if (measured) {
      summary.records.push_back(result.first);
      summary.records.push_back(result.second);
    }
  }
  summary.prefill = phase_stats(summary.records, Phase::prefill);
  summary.decode = phase_stats(summary.records, Phase::decode);
  return summary;
}

double degradation_comm(double t_low_bpw, double t_fp16) {
  if (!(t_low_bpw > 0.0)) throw Error(ErrorCode::math_error, "degradation_comm needs a positive low-bpw throughput");
  return (t_low_bpw - t_fp16) / t_low_bpw;
}

double degradation_comp(double t_64, double t_512) {
  if (!(t_64 > 0.0)) throw Error(ErrorCode::math_error, "degradation_comp needs a positive short-input throughput");
  return (t_64 - t_512) / t_64;
}

double operational_intensity(const BenchRecord& record) {
  if (record.bytes == 0) throw Error(ErrorCode::math_error, "operational intensity of a record with zero bytes");
  return double(record.flops) / double(record.bytes);
}

Bpw decode_intensity_for_bpw(const Bpw& bpw) {
  if (bpw <= 0) throw Error(ErrorCode::math_error, "bits per weight must be positive");
  return Bpw(2) / (bpw / 8);
}

void HardwareProfile::validate() const {
  if (!(peak_flops_per_s > 0.0) || !(mem_bandwidth_bytes_per_s > 0.0) || cores < 1) {
    throw Error(ErrorCode::parameter_error, "hardware profile fields must be positive");
  }
}

std::string_view to_string(Bound bound) { return bound == Bound::compute ? "compute" : "communication"; }

RooflinePoint classify_bound(double oi, const HardwareProfile& hw) {
  hw.validate();
  return {oi, oi >= hw.machine_balance() ? Bound::compute : Bound::communication};
}

bool resident_sampling_supported() {
  std::ifstream in("/proc/self/statm");
  std::uint64_t size = 0, resident = 0;
  return static_cast<bool>(in >> size >> resident);
}

std::uint64_t current_resident_bytes() {
  std::ifstream in("/proc/self/statm");
  std::uint64_t size = 0, resident = 0;
  if (!(in >> size >> resident)) throw Error(ErrorCode::capability_error, "resident set sampling is unavailable");
  return resident * static_cast<std::uint64_t>(sysconf(_SC_PAGESIZE));
}

std::uint64_t measure_peak_resident(const std::function<void()>& run, std::chrono::milliseconds period) {
  std::atomic<std::uint64_t> peak{current_resident_bytes()};
  const auto observe = [&] {
    const std::uint64_t now = current_resident_bytes();
    std::uint64_t seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
  };
  std::mutex m;
  std::condition_variable cv;
  bool done = false;
  std::thread sampler([&] {
    std::unique_lock<std::mutex> lk(m);
    while (!cv.wait_for(lk, period, [&] { return done; })) observe();
  });
  const auto stop = [&] {
    {
      const std::lock_guard<std::mutex> lk(m);
      done = true;
    }
    cv.notify_one();
    sampler.join();
  };
  try {
    run();
  } catch (...) {
    stop();
    throw;
  }
  stop();
  observe();
  return peak.load();
}

std::uint64_t runtime_overhead_bytes() { return QUANTBENCH_RUNTIME_OVERHEAD_BYTES; }

std::uint64_t memory_footprint(const ModelConfig& config, SchemeId scheme, const Workload& workload) {
  workload.validate();
  const std::uint64_t kv = KvCacheAccount::for_model(config).bytes_per_token * workload.max_tokens();
  return predicted_weight_bytes(config, scheme) + kv + runtime_overhead_bytes();
}

}  // namespace qb
