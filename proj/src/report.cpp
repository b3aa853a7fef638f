#include "quantbench/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <tuple>

#include <fmt/format.h>
#include <json.hpp>

#include "quantbench/error.hpp"

namespace qb {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool same_double(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

std::string fmt_double(double v) { return fmt::format("{}", v); }

auto row_key(const ReportRow& r) {
  return std::tuple<const std::string&, const std::string&, std::string_view, std::uint32_t, std::uint32_t>(
      r.model, r.scheme, to_string(r.phase), r.input_len, r.output_len);
}

std::string quote_field(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

// RFC 4180 records; accepts CRLF or bare LF.
std::vector<std::vector<std::string>> split_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  std::size_t i = 0;
  bool at_record_start = true;
  while (i < text.size()) {
    at_record_start = false;
    if (text[i] == '"') {
      ++i;
      for (;;) {
        if (i >= text.size()) throw Error(ErrorCode::invalid_value, "unterminated quoted CSV field");
        if (text[i] == '"') {
          if (i + 1 < text.size() && text[i + 1] == '"') {
            field += '"';
            i += 2;
            continue;
          }
          ++i;
          break;
        }
        field += text[i++];
      }
      if (i < text.size() && text[i] != ',' && text[i] != '\r' && text[i] != '\n') {
        throw Error(ErrorCode::invalid_value, "characters after a closing quote in CSV");
      }
    } else {
      while (i < text.size() && text[i] != ',' && text[i] != '\r' && text[i] != '\n') field += text[i++];
    }
    if (i < text.size() && text[i] == ',') {
      record.push_back(std::move(field));
      field.clear();
      ++i;
      if (i == text.size()) record.emplace_back();
      continue;
    }
    record.push_back(std::move(field));
    field.clear();
    records.push_back(std::move(record));
    record.clear();
    at_record_start = true;
    if (i < text.size() && text[i] == '\r') ++i;
    if (i < text.size() && text[i] == '\n') ++i;
  }
  if (!at_record_start) records.push_back(std::move(record));
  return records;
}

template <class T>
T parse_number(std::string_view text, std::string_view what) {
  T value{};
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    throw Error(ErrorCode::invalid_value, fmt::format("bad {} '{}'", what, text));
  }
  return value;
}

Phase parse_phase(std::string_view text) {
  const auto phase = phase_from_string(text);
  if (!phase) throw Error(ErrorCode::invalid_value, fmt::format("unknown phase '{}'", text));
  return *phase;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::io_error, "cannot read " + path.string());
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_or_nan(const json& v) { return v.is_null() ? kNaN : v.get<double>(); }

}  // namespace

bool dominates(const ParetoPoint& a, const ParetoPoint& b) {
  const bool no_worse = a.fidelity >= b.fidelity && a.tps >= b.tps && a.mem_bytes <= b.mem_bytes;
  const bool better = a.fidelity > b.fidelity || a.tps > b.tps || a.mem_bytes < b.mem_bytes;
  return no_worse && better;
}

std::vector<ParetoPoint> pareto_frontier(std::span<const ParetoPoint> points) {
  for (const ParetoPoint& p : points) {
    if (!std::isfinite(p.fidelity) || !std::isfinite(p.tps)) {
      throw Error(ErrorCode::invalid_value, "point '" + p.label + "' has a non-finite objective");
    }
  }
  // A dominating point always sorts strictly before the point it dominates,
  // and every dominated point is dominated by some frontier member.
  std::vector<std::size_t> order(points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    const ParetoPoint &a = points[i], &b = points[j];
    if (a.fidelity != b.fidelity) return a.fidelity > b.fidelity;
    if (a.tps != b.tps) return a.tps > b.tps;
    return a.mem_bytes < b.mem_bytes;
  });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    const bool dominated = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) { return dominates(points[k], points[i]); });
    if (!dominated) kept.push_back(i);
  }
  std::sort(kept.begin(), kept.end());
  std::vector<ParetoPoint> out;
  out.reserve(kept.size());
  for (std::size_t i : kept) out.push_back(points[i]);
  return out;
}

bool operator==(const ReportRow& a, const ReportRow& b) {
  return a.model == b.model && a.scheme == b.scheme && same_double(a.bpw, b.bpw) && a.phase == b.phase &&
         a.input_len == b.input_len && a.output_len == b.output_len && a.failed == b.failed &&
         (a.failed || (same_double(a.tps_mean, b.tps_mean) && same_double(a.tps_std, b.tps_std))) &&
         same_double(a.rmse, b.rmse) && a.mem_bytes == b.mem_bytes;
}

void ReportTable::sort() {
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) { return row_key(a) < row_key(b); });
}

std::string emit_csv(const ReportTable& table) {
  ReportTable sorted = table;
  sorted.sort();
  std::string out(kReportHeader);
  out += "\r\n";
  for (const ReportRow& r : sorted.rows) {
    const std::string mean = r.failed ? std::string(kFailedMarker) : fmt_double(r.tps_mean);
    const std::string stddev = r.failed ? std::string(kFailedMarker) : fmt_double(r.tps_std);
    out += fmt::format("{},{},{},{},{},{},{},{},{},{}\r\n", quote_field(r.model), quote_field(r.scheme),
                       fmt_double(r.bpw), to_string(r.phase), r.input_len, r.output_len, mean, stddev,
                       fmt_double(r.rmse), r.mem_bytes);
  }
  return out;
}

ReportTable parse_csv(std::string_view text) {
  const auto records = split_csv(text);
  if (records.empty()) throw Error(ErrorCode::invalid_value, "CSV has no header row");
  std::string header;
  for (std::size_t i = 0; i < records[0].size(); ++i) header += (i ? "," : "") + records[0][i];
  if (header != kReportHeader) throw Error(ErrorCode::invalid_value, "unexpected CSV header '" + header + "'");
  ReportTable table;
  for (std::size_t n = 1; n < records.size(); ++n) {
    const auto& f = records[n];
    if (f.size() != 10) {
      throw Error(ErrorCode::invalid_value, fmt::format("CSV row {} has {} fields, expected 10", n + 1, f.size()));
    }
    try {
      ReportRow r;
      r.model = f[0];
      r.scheme = f[1];
      r.bpw = parse_number<double>(f[2], "bpw");
      r.phase = parse_phase(f[3]);
      r.input_len = parse_number<std::uint32_t>(f[4], "input_len");
      r.output_len = parse_number<std::uint32_t>(f[5], "output_len");
      r.failed = f[6] == kFailedMarker;
      if ((f[7] == kFailedMarker) != r.failed) throw Error(ErrorCode::invalid_value, "tps_mean and tps_std disagree on failure");
      if (!r.failed) {
        r.tps_mean = parse_number<double>(f[6], "tps_mean");
        r.tps_std = parse_number<double>(f[7], "tps_std");
      }
      r.rmse = parse_number<double>(f[8], "rmse");
      r.mem_bytes = parse_number<std::uint64_t>(f[9], "mem_bytes");
      table.rows.push_back(std::move(r));
    } catch (const Error& e) {
      throw Error(ErrorCode::invalid_value, fmt::format("CSV row {}: {}", n + 1, e.what()));
    }
  }
  return table;
}

void emit_csv(const ReportTable& table, const std::filesystem::path& path) { write_file(path, emit_csv(table)); }

ReportTable read_csv(const std::filesystem::path& path) {
  try {
    return parse_csv(read_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::io_error) throw;
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string emit_json(const ReportTable& table) {
  ReportTable sorted = table;
  sorted.sort();
  json rows = json::array();
  for (const ReportRow& r : sorted.rows) {
    rows.push_back({{"model", r.model},
                    {"scheme", r.scheme},
                    {"bpw", r.bpw},
                    {"phase", to_string(r.phase)},
                    {"input_len", r.input_len},
                    {"output_len", r.output_len},
                    {"tps_mean", r.failed ? json(nullptr) : number_or_null(r.tps_mean)},
                    {"tps_std", r.failed ? json(nullptr) : number_or_null(r.tps_std)},
                    {"rmse", number_or_null(r.rmse)},
                    {"mem_bytes", r.mem_bytes},
                    {"failed", r.failed}});
  }
  return json{{"rows", rows}}.dump(2) + "\n";
}

void emit_json(const ReportTable& table, const std::filesystem::path& path) { write_file(path, emit_json(table)); }

double report_bpw(SchemeId scheme) { return to_double(bpw(scheme, Role::other)); }

void append_rows(ReportTable& table, const CellResult& cell) {
  for (Phase phase : {Phase::prefill, Phase::decode}) {
    ReportRow r;
    r.model = cell.model;
    r.scheme = std::string(to_string(cell.scheme));
    r.bpw = report_bpw(cell.scheme);
    r.phase = phase;
    r.input_len = cell.workload.input_len;
    r.output_len = cell.workload.output_len;
    r.rmse = cell.rmse;
    r.mem_bytes = cell.mem_bytes;
    r.failed = !cell.ok();
    if (!r.failed) {
      r.tps_mean = cell.summary->stats(phase).tps_mean;
      r.tps_std = cell.summary->stats(phase).tps_std;
    }
    table.rows.push_back(std::move(r));
  }
}

std::string cell_jsonl(const CellResult& cell) {
  const json context = {{"model", cell.model},
                        {"scheme", to_string(cell.scheme)},
                        {"bpw", report_bpw(cell.scheme)},
                        {"input_len", cell.workload.input_len},
                        {"output_len", cell.workload.output_len},
                        {"seed", cell.workload.seed},
                        {"rmse", number_or_null(cell.rmse)},
                        {"mem_bytes", cell.mem_bytes}};
  std::string out;
  if (cell.summary) {
    for (const BenchRecord& r : cell.summary->records) {
      json line = context;
      line["status"] = "ok";
      line["phase"] = to_string(r.phase);
      line["trial_index"] = r.trial_index;
      line["tokens"] = r.tokens;
      line["wall_time"] = r.wall_time;
      line["cpu_time"] = r.cpu_time;
      line["tps"] = r.tps();
      line["flops"] = r.flops;
      line["bytes"] = r.bytes;
      line["kv_bytes"] = r.kv_bytes;
      line["activation_bytes"] = r.activation_bytes;
      line["peak_resident_bytes"] = r.peak_resident_bytes ? json(*r.peak_resident_bytes) : json(nullptr);
      line["workers"] = r.workers;
      line["retries"] = cell.summary->retries;
      out += line.dump() + "\n";
    }
  }
  if (!cell.ok()) {
    json line = context;
    line["status"] = "failed";
    line["error"] = cell.summary && !cell.summary->error.empty() ? cell.summary->error : cell.error;
    out += line.dump() + "\n";
  }
  return out;
}

ReportTable table_from_jsonl(std::istream& in) {
  struct Cell {
    ReportRow row;
    std::vector<BenchRecord> records;
  };
  using Key = std::tuple<std::string, std::string, std::string, std::uint32_t, std::uint32_t>;
  std::map<Key, Cell> cells;
  std::vector<Key> order;

  const auto cell_for = [&](const json& line, Phase phase) -> Cell& {
    ReportRow r;
    r.model = line.at("model").get<std::string>();
    r.scheme = line.at("scheme").get<std::string>();
    r.bpw = line.at("bpw").get<double>();
    r.phase = phase;
    r.input_len = line.at("input_len").get<std::uint32_t>();
    r.output_len = line.at("output_len").get<std::uint32_t>();
    r.rmse = number_or_nan(line.at("rmse"));
    r.mem_bytes = line.at("mem_bytes").get<std::uint64_t>();
    Key key{r.model, r.scheme, std::string(to_string(phase)), r.input_len, r.output_len};
    auto [it, inserted] = cells.try_emplace(key);
    if (inserted) {
      it->second.row = std::move(r);
      order.push_back(key);
    }
    return it->second;
  };

  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      const json line = json::parse(text);
      const std::string status = line.at("status").get<std::string>();
      if (status == "ok") {
        BenchRecord r;
        r.phase = parse_phase(line.at("phase").get<std::string>());
        r.tokens = line.at("tokens").get<std::uint64_t>();
        r.wall_time = line.at("wall_time").get<double>();
        r.trial_index = line.at("trial_index").get<std::uint32_t>();
        cell_for(line, r.phase).records.push_back(r);
      } else if (status == "failed") {
        cell_for(line, Phase::prefill).row.failed = true;
        cell_for(line, Phase::decode).row.failed = true;
      } else {
        throw Error(ErrorCode::invalid_value, "unknown status '" + status + "'");
      }
    } catch (const std::exception& e) {
      throw Error(ErrorCode::invalid_value, fmt::format("JSONL line {}: {}", line_no, e.what()));
    }
  }

  ReportTable table;
  for (const Key& key : order) {
    Cell& cell = cells.at(key);
    if (!cell.row.failed) {
      if (cell.records.empty()) continue;
      const PhaseStats s = phase_stats(cell.records, cell.row.phase);
      cell.row.tps_mean = s.tps_mean;
      cell.row.tps_std = s.tps_std;
    }
    table.rows.push_back(std::move(cell.row));
  }
  table.sort();
  return table;
}

std::vector<DegradationRow> degradation_rows(const ReportTable& table) {
  ReportTable sorted = table;
  sorted.sort();
  std::vector<const ReportRow*> ok;
  for (const ReportRow& r : sorted.rows)
    if (!r.failed && r.tps_mean > 0.0) ok.push_back(&r);

  std::vector<DegradationRow> out;
  const auto add = [&](std::string_view kind, const ReportRow& a, const ReportRow& b, double ratio) {
    out.push_back({std::string(kind), a.model, a.phase, a.output_len, a.scheme, a.input_len, a.tps_mean, b.scheme,
                   b.input_len, b.tps_mean, ratio});
  };
  const std::string fp16(to_string(SchemeId::FP16));
  for (const ReportRow* a : ok) {
    if (a->scheme == fp16) continue;
    for (const ReportRow* b : ok) {
      if (b->scheme == fp16 && b->model == a->model && b->phase == a->phase && b->input_len == a->input_len &&
          b->output_len == a->output_len) {
        add("comm", *a, *b, degradation_comm(a->tps_mean, b->tps_mean));
      }
    }
  }
  // Rows are sorted, so the first and last match of a group are the shortest
  // and longest input lengths.
  std::set<std::tuple<std::string, std::string, Phase, std::uint32_t>> seen;
  for (const ReportRow* a : ok) {
    if (!seen.insert({a->model, a->scheme, a->phase, a->output_len}).second) continue;
    const ReportRow* b = a;
    for (const ReportRow* r : ok) {
      if (r->model == a->model && r->scheme == a->scheme && r->phase == a->phase && r->output_len == a->output_len &&
          r->input_len > b->input_len) {
        b = r;
      }
    }
    if (b != a) add("comp", *a, *b, degradation_comp(a->tps_mean, b->tps_mean));
  }
  return out;
}

std::string emit_degradation_csv(std::span<const DegradationRow> rows) {
  std::string out = "kind,model,phase,output_len,a_scheme,a_input_len,a_tps,b_scheme,b_input_len,b_tps,ratio\r\n";
  for (const DegradationRow& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\r\n", r.kind, quote_field(r.model), to_string(r.phase),
                       r.output_len, quote_field(r.a_scheme), r.a_input_len, fmt_double(r.a_tps),
                       quote_field(r.b_scheme), r.b_input_len, fmt_double(r.b_tps), fmt_double(r.ratio));
  }
  return out;
}

std::vector<ParetoPoint> pareto_points(const ReportTable& table, Phase phase, const std::map<std::string, double>& scores) {
  ReportTable sorted = table;
  sorted.sort();
  std::vector<ParetoPoint> points;
  for (const ReportRow& r : sorted.rows) {
    if (r.failed || r.phase != phase) continue;
    const auto score = scores.find(r.scheme);
    const double fidelity = score != scores.end() ? score->second : -r.rmse;
    if (!std::isfinite(fidelity) || !std::isfinite(r.tps_mean)) continue;
    points.push_back({fmt::format("{}/{}/{}/{}", r.model, r.scheme, r.input_len, r.output_len), fidelity, r.tps_mean,
                      r.mem_bytes});
  }
  return points;
}

std::string emit_frontier_csv(const ReportTable& table, const std::map<std::string, double>& scores) {
  std::string out = "phase,label,fidelity,tps,mem_bytes\r\n";
  for (Phase phase : {Phase::prefill, Phase::decode}) {
    const auto points = pareto_points(table, phase, scores);
    for (const ParetoPoint& p : pareto_frontier(points)) {
      out += fmt::format("{},{},{},{},{}\r\n", to_string(phase), quote_field(p.label), fmt_double(p.fidelity),
                         fmt_double(p.tps), p.mem_bytes);
    }
  }
  return out;
}

SweepResult sweep(std::span<const ModelConfig> models, std::span<const SchemeId> schemes,
                  std::span<const Workload> workloads, const SweepOptions& options) {
  if (models.empty()) throw Error(ErrorCode::parameter_error, "sweep needs at least one model");
  if (schemes.empty()) throw Error(ErrorCode::parameter_error, "sweep needs at least one scheme");
  if (workloads.empty()) throw Error(ErrorCode::parameter_error, "sweep needs at least one workload");

  SweepResult result;
  const auto finish = [&](CellResult cell) {
    append_rows(result.table, cell);
    if (options.on_cell) options.on_cell(cell);
    result.cells.push_back(std::move(cell));
  };
  for (const ModelConfig& config : models) {
    for (SchemeId scheme : schemes) {
      std::optional<SyntheticModel> model;
      std::string build_error;
      try {
        model = build_model(config, scheme, options.seed);
      } catch (const std::exception& e) {
        build_error = std::string("model build failed: ") + e.what();
      }
      for (const Workload& workload : workloads) {
        CellResult cell;
        cell.model = config.label;
        cell.scheme = scheme;
        cell.workload = workload;
        cell.rmse = model ? model->rmse : kNaN;
        cell.error = build_error;
        try {
          cell.mem_bytes = memory_footprint(config, scheme, workload);
          if (model) cell.summary = run_benchmark(*model, workload, options.bench);
        } catch (const std::exception& e) {
          cell.error = e.what();
        }
        finish(std::move(cell));
      }
    }
  }
  result.table.sort();
  return result;
}

}  // namespace qb
