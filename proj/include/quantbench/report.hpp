#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "quantbench/bench.hpp"

namespace qb {

struct ParetoPoint {
  std::string label;
  double fidelity = 0.0;  // higher is better
  double tps = 0.0;       // higher is better
  std::uint64_t mem_bytes = 0;  // lower is better
};

// True when a is at least as good as b everywhere and strictly better somewhere.
bool dominates(const ParetoPoint& a, const ParetoPoint& b);

// Non-dominated points in input order. Equal points are all kept. Throws
// invalid_value for non-finite fidelity or tps.
std::vector<ParetoPoint> pareto_frontier(std::span<const ParetoPoint> points);

inline constexpr std::string_view kReportHeader =
    "model,scheme,bpw,phase,input_len,output_len,tps_mean,tps_std,rmse,mem_bytes";
// Written in place of tps_mean and tps_std for cells that did not complete.
inline constexpr std::string_view kFailedMarker = "FAILED";

struct ReportRow {
  std::string model;
  std::string scheme;
  double bpw = 0.0;
  Phase phase = Phase::prefill;
  std::uint32_t input_len = 0;
  std::uint32_t output_len = 0;
  double tps_mean = 0.0;
  double tps_std = 0.0;
  double rmse = 0.0;  // NaN when unknown
  std::uint64_t mem_bytes = 0;
  bool failed = false;

  // NaN fields compare equal to NaN.
  friend bool operator==(const ReportRow& a, const ReportRow& b);
};

struct ReportTable {
  std::vector<ReportRow> rows;

  // Order by (model, scheme, phase, input_len, output_len).
  void sort();
  friend bool operator==(const ReportTable&, const ReportTable&) = default;
};

// RFC 4180 with CRLF line ends; rows are emitted in sorted order.
std::string emit_csv(const ReportTable& table);
ReportTable parse_csv(std::string_view text);  // invalid_value on malformed input
void emit_csv(const ReportTable& table, const std::filesystem::path& path);
ReportTable read_csv(const std::filesystem::path& path);

// {"rows": [{field: value, ...}, ...]} with the CSV's column names.
std::string emit_json(const ReportTable& table);
void emit_json(const ReportTable& table, const std::filesystem::path& path);

// Bits per weight reported for a scheme: its standard layout for role "other".
double report_bpw(SchemeId scheme);

// Everything known about one (model, scheme, workload) cell.
struct CellResult {
  std::string model;
  SchemeId scheme = SchemeId::FP16;
  Workload workload;
  double rmse = 0.0;
  std::uint64_t mem_bytes = 0;  // predicted footprint
  std::optional<BenchSummary> summary;  // absent when the model could not be built
  std::string error;

  bool ok() const { return summary && summary->valid; }
};

// Two rows per cell; failed cells carry the failure marker.
void append_rows(ReportTable& table, const CellResult& cell);

// One JSON object per line: every measured BenchRecord with its cell context
// and "status": "ok", or a single "status": "failed" line for a failed cell.
std::string cell_jsonl(const CellResult& cell);

// Rebuilds the table from JSON-lines. Blank lines are skipped; a malformed
// line throws invalid_value naming its 1-based line number.
ReportTable table_from_jsonl(std::istream& in);

// Relative throughput drops. "comm": a = each quantized scheme, b = FP16 at the
// same input length. "comp": a = shortest, b = longest input length of the
// same scheme. ratio = (a - b) / a.
struct DegradationRow {
  std::string kind;
  std::string model;
  Phase phase = Phase::prefill;
  std::uint32_t output_len = 0;
  std::string a_scheme;
  std::uint32_t a_input_len = 0;
  double a_tps = 0.0;
  std::string b_scheme;
  std::uint32_t b_input_len = 0;
  double b_tps = 0.0;
  double ratio = 0.0;
};
std::vector<DegradationRow> degradation_rows(const ReportTable& table);
std::string emit_degradation_csv(std::span<const DegradationRow> rows);

// Frontier input for one phase: fidelity = -rmse unless the scheme has an
// externally supplied score. Failed rows and rows without a finite fidelity
// are left out.
std::vector<ParetoPoint> pareto_points(const ReportTable& table, Phase phase,
                                       const std::map<std::string, double>& scores = {});
// phase,label,fidelity,tps,mem_bytes; frontier per phase, prefill first.
std::string emit_frontier_csv(const ReportTable& table, const std::map<std::string, double>& scores = {});

struct SweepOptions {
  BenchOptions bench;
  std::uint64_t seed = 0;  // weights and tokens
  std::function<void(const CellResult&)> on_cell;
};

struct SweepResult {
  ReportTable table;
  std::vector<CellResult> cells;
};

// Every (model, scheme, workload) cell. Models are built once per scheme. A
// failure is recorded in its cell and the sweep continues. Empty lists throw
// parameter_error.
SweepResult sweep(std::span<const ModelConfig> models, std::span<const SchemeId> schemes,
                  std::span<const Workload> workloads, const SweepOptions& options = {});

}  // namespace qb
