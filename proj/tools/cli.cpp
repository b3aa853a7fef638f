#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include "quantbench/bench.hpp"
#include "quantbench/container.hpp"
#include "quantbench/error.hpp"
#include "quantbench/imatrix.hpp"
#include "quantbench/report.hpp"

namespace qb::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::parameter_error:
      return kUsage;
    case ErrorCode::io_error:
      return kIo;
    case ErrorCode::invalid_shape:
    case ErrorCode::shape_mismatch:
    case ErrorCode::scheme_error:
    case ErrorCode::corrupt_data:
    case ErrorCode::bad_magic:
    case ErrorCode::version_mismatch:
    case ErrorCode::truncated:
    case ErrorCode::checksum_mismatch:
      return kCodec;
    case ErrorCode::invalid_value:
    case ErrorCode::invalid_config:
    case ErrorCode::math_error:
    case ErrorCode::resource_error:
    case ErrorCode::capability_error:
      return kData;
  }
  return kData;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
}

// {"n_layers", "d_model", "d_ffn", "n_heads", "vocab_proxy", optional "label"}.
ModelConfig load_model_config(const fs::path& path) {
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_config, path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, path.string() + ": expected a JSON object");
  static const std::set<std::string> known{"n_layers", "d_model", "d_ffn", "n_heads", "vocab_proxy", "label"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw Error(ErrorCode::invalid_config, path.string() + ": unknown key '" + key + "'");
  }
  const auto count = [&](const char* key) {
    if (!j.contains(key)) throw Error(ErrorCode::invalid_config, path.string() + ": missing '" + key + "'");
    const json& v = j[key];
    if (!v.is_number_unsigned() || v.get<std::uint64_t>() > UINT32_MAX) {
      throw Error(ErrorCode::invalid_config, path.string() + ": '" + key + "' must be a non-negative integer");
    }
    return v.get<std::uint32_t>();
  };
  ModelConfig c;
  c.n_layers = count("n_layers");
  c.d_model = count("d_model");
  c.d_ffn = count("d_ffn");
  c.n_heads = count("n_heads");
  c.vocab_proxy = count("vocab_proxy");
  if (j.contains("label")) {
    if (!j["label"].is_string()) throw Error(ErrorCode::invalid_config, path.string() + ": 'label' must be a string");
    c.label = j["label"].get<std::string>();
  } else {
    c.label = path.stem().string();
  }
  c.validate();
  return c;
}

json config_json(const ModelConfig& c) {
  return {{"label", c.label},       {"n_layers", c.n_layers}, {"d_model", c.d_model}, {"d_ffn", c.d_ffn},
          {"n_heads", c.n_heads},   {"vocab_proxy", c.vocab_proxy}, {"parameters", c.parameter_count()}};
}

SchemeId parse_scheme(const std::string& name) {
  const auto id = scheme_from_string(name);
  if (!id) throw Error(ErrorCode::parameter_error, "unknown scheme '" + name + "'");
  return *id;
}

std::string join_names(std::span<const SchemeId> schemes) {
  std::string out;
  for (SchemeId s : schemes) out += (out.empty() ? "" : ",") + std::string(to_string(s));
  return out;
}

fs::path with_suffix(const fs::path& path, const std::string& suffix) {
  fs::path out = path;
  out.replace_extension();
  out += suffix;
  return out;
}

double exact_bpw(const Layout& layout) { return to_double(layout.bpw()); }

// ---- commands ----

struct GenerateArgs {
  std::string model_config, out;
  std::uint64_t seed = 0;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out, std::ostream& err) {
  const ModelConfig c = load_model_config(a.model_config);
  err << json{{"command", "generate"}, {"model", config_json(c)}, {"out", a.out}, {"seed", a.seed}}.dump() << "\n";
  std::vector<QuantizedTensor> tensors;
  for (const TensorSpec& spec : model_tensor_specs(c)) tensors.push_back(quantize_tensor(materialize(spec, a.seed), SchemeId::FP16));
  write_container(a.out, tensors);
  fmt::print(out, "wrote {} tensors, {} weights, to {}\n", tensors.size(), c.parameter_count(), a.out);
  return kOk;
}

struct QuantizeArgs {
  std::string in, out, scheme, imatrix;
};

int cmd_quantize(const QuantizeArgs& a, std::ostream& out, std::ostream& err) {
  const SchemeId scheme = parse_scheme(a.scheme);
  err << json{{"command", "quantize"}, {"in", a.in}, {"out", a.out}, {"scheme", to_string(scheme)},
              {"imatrix", a.imatrix.empty() ? json(nullptr) : json(a.imatrix)}}
             .dump()
      << "\n";
  std::map<std::string, std::vector<float>> importance;
  if (!a.imatrix.empty()) {
    for (const ImportanceMatrix& m : read_importance(a.imatrix)) importance[m.name()] = m.mean_sq();
  }
  const std::vector<QuantizedTensor> input = read_container(a.in);
  std::vector<QuantizedTensor> result;
  result.reserve(input.size());
  fmt::print(out, "{:<28} {:<16} {:>8} {:>12}\n", "tensor", "role", "bpw", "rmse");
  std::uint64_t weights = 0, bits = 0;
  for (const QuantizedTensor& t : input) {
    const DenseTensor dense = to_dense(t);
    const auto it = importance.find(t.name);
    const std::span<const float> columns = it == importance.end() ? std::span<const float>{} : it->second;
    QuantizedTensor q = quantize_tensor(dense, scheme, columns);
    const double error = rmse(dense.values, dequantize_tensor(q));
    fmt::print(out, "{:<28} {:<16} {:>8} {:>12.6g}\n", t.name, to_string(t.role), exact_bpw(q.layout), error);
    weights += q.padded_elements();
    bits += q.payload.size() * 8;
    result.push_back(std::move(q));
  }
  write_container(a.out, result);
  if (weights) fmt::print(out, "total: {} tensors, {} bits per weight\n", result.size(), double(bits) / double(weights));
  return kOk;
}

struct DequantizeArgs {
  std::string in, out;
};

// Raw little-endian float32 values of every tensor, concatenated in container
// order; the manifest giving each tensor's offset goes to stdout.
int cmd_dequantize(const DequantizeArgs& a, std::ostream& out, std::ostream& err) {
  err << json{{"command", "dequantize"}, {"in", a.in}, {"out", a.out}}.dump() << "\n";
  const std::vector<QuantizedTensor> tensors = read_container(a.in);
  std::ofstream file(a.out, std::ios::binary | std::ios::trunc);
  if (!file) throw Error(ErrorCode::io_error, "cannot open " + a.out + " for writing");
  json manifest = json::array();
  std::uint64_t offset = 0;
  for (const QuantizedTensor& t : tensors) {
    const std::vector<float> values = dequantize_tensor(t);
    file.write(reinterpret_cast<const char*>(values.data()), std::streamsize(values.size() * sizeof(float)));
    manifest.push_back({{"name", t.name}, {"rows", t.shape.rows}, {"cols", t.shape.cols}, {"offset", offset}});
    offset += values.size() * sizeof(float);
  }
  file.flush();
  if (!file) throw Error(ErrorCode::io_error, "cannot write " + a.out);
  out << json{{"file", a.out}, {"dtype", "float32"}, {"tensors", manifest}}.dump(2) << "\n";
  return kOk;
}

struct InspectArgs {
  std::string in;
};

int cmd_inspect(const InspectArgs& a, std::ostream& out, std::ostream& err) {
  err << json{{"command", "inspect"}, {"in", a.in}}.dump() << "\n";
  std::string head(4, '\0');
  {
    std::ifstream probe(a.in, std::ios::binary);
    if (!probe) throw Error(ErrorCode::io_error, "cannot open " + a.in);
    probe.read(head.data(), 4);
  }
  json report;
  if (head == "QIM1") {
    report = {{"file", a.in}, {"format", "QIM1"}};
    json list = json::array();
    for (const ImportanceMatrix& m : read_importance(a.in)) {
      list.push_back({{"name", m.name()}, {"columns", m.columns()}, {"samples", m.sample_count()}});
    }
    report["matrices"] = list;
  } else {
    const std::vector<QuantizedTensor> tensors = read_container(a.in);
    report = {{"file", a.in}, {"format", "QBF1"}};
    json list = json::array();
    std::uint64_t payload = 0, weights = 0;
    for (const QuantizedTensor& t : tensors) {
      const Bpw b = t.layout.bpw();
      list.push_back({{"name", t.name},
                      {"role", to_string(t.role)},
                      {"scheme", to_string(t.scheme)},
                      {"rows", t.shape.rows},
                      {"cols", t.shape.cols},
                      {"layout", describe(t.layout)},
                      {"block_size", t.layout.block_size()},
                      {"block_bytes", t.layout.block_bytes()},
                      {"bpw", to_double(b)},
                      {"bpw_exact", fmt::format("{}/{}", b.numerator(), b.denominator())},
                      {"pad_count", t.pad_count},
                      {"payload_bytes", t.payload.size()}});
      payload += t.payload.size();
      weights += t.shape.elements();
    }
    report["tensors"] = list;
    report["payload_bytes"] = payload;
    report["weights"] = weights;
    try {
      report["model"] = config_json(infer_config(tensors, fs::path(a.in).stem().string()));
    } catch (const Error&) {
      report["model"] = nullptr;
    }
  }
  out << report.dump(2) << "\n";
  return kOk;
}

struct ImatrixArgs {
  std::string in, out;
  std::uint32_t tokens = 64;
  std::uint64_t seed = 0;
};

// Runs a prefill of synthetic tokens through the model and accumulates the
// squared inputs of every matmul.
int cmd_imatrix(const ImatrixArgs& a, std::ostream& out, std::ostream& err) {
  if (a.tokens < 1) throw Error(ErrorCode::parameter_error, "--tokens must be >= 1");
  err << json{{"command", "imatrix"}, {"in", a.in}, {"out", a.out}, {"tokens", a.tokens}, {"seed", a.seed}}.dump()
      << "\n";
  const SyntheticModel model = model_from_tensors(read_container(a.in), fs::path(a.in).stem().string());
  std::vector<ImportanceMatrix> matrices;
  for (const QuantizedTensor& t : model.tensors) matrices.emplace_back(t.name, t.shape.cols);
  SimOptions options;
  options.observer = [&](std::size_t tensor, const float* xs, std::size_t batch) {
    ImportanceMatrix& m = matrices[tensor];
    for (std::size_t b = 0; b < batch; ++b) m.accumulate({xs + b * m.columns(), m.columns()});
  };
  KvCache kv(model.config, a.tokens);
  simulate_prefill(model, a.tokens, kv, a.seed, options);
  write_importance(a.out, matrices);
  fmt::print(out, "wrote {} importance matrices from {} tokens to {}\n", matrices.size(), a.tokens, a.out);
  return kOk;
}

struct BenchArgs {
  std::vector<std::string> model_configs;
  std::vector<std::string> schemes;
  std::vector<std::uint32_t> input_lens{std::begin(kDefaultInputLengths), std::end(kDefaultInputLengths)};
  std::uint32_t output_len = kDefaultOutputLength;
  std::uint32_t trials = 3;
  std::uint32_t warmup = 3;
  std::uint64_t seed = 0;
  std::string jsonl = "bench.jsonl";
  int workers = 0;
  std::string mode = "fused";
  bool no_memory = false;
};

int cmd_bench(const std::string& command, const BenchArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<ModelConfig> models;
  for (const std::string& path : a.model_configs) models.push_back(load_model_config(path));
  std::vector<SchemeId> schemes;
  if (a.schemes.empty()) {
    schemes.assign(std::begin(kAllSchemes), std::end(kAllSchemes));
  } else {
    for (const std::string& s : a.schemes) schemes.push_back(parse_scheme(s));
  }
  const auto mode = kernel_mode_from_string(a.mode);
  if (!mode) throw Error(ErrorCode::parameter_error, "unknown kernel mode '" + a.mode + "'");
  if (a.trials < 1) throw Error(ErrorCode::parameter_error, "--trials must be >= 1");
  std::vector<Workload> workloads;
  for (std::uint32_t len : a.input_lens) {
    const Workload w{len, a.output_len, a.seed};
    w.validate();
    workloads.push_back(w);
  }

  SweepOptions options;
  options.seed = a.seed;
  options.bench.trials = a.trials;
  options.bench.warmup = a.warmup;
  options.bench.kernel.mode = *mode;
  options.bench.kernel.workers = a.workers > 0 ? a.workers : workers_from_env();
  options.bench.sample_memory = !a.no_memory;

  json models_json = json::array();
  for (const ModelConfig& c : models) models_json.push_back(config_json(c));
  const fs::path jsonl = a.jsonl;
  const fs::path csv = with_suffix(jsonl, ".csv");
  const fs::path degradation = with_suffix(jsonl, ".degradation.csv");
  err << json{{"command", command},
              {"models", models_json},
              {"schemes", join_names(schemes)},
              {"input_lens", a.input_lens},
              {"output_len", a.output_len},
              {"trials", a.trials},
              {"warmup", a.warmup},
              {"seed", a.seed},
              {"workers", resolve_workers(options.bench.kernel)},
              {"mode", to_string(*mode)},
              {"memory_sampling", options.bench.sample_memory && resident_sampling_supported()},
              {"jsonl", jsonl.string()},
              {"csv", csv.string()},
              {"degradation_csv", degradation.string()}}
             .dump()
      << "\n";

  std::ofstream records(jsonl, std::ios::binary | std::ios::trunc);
  if (!records) throw Error(ErrorCode::io_error, "cannot open " + jsonl.string() + " for writing");
  std::size_t succeeded = 0;
  options.on_cell = [&](const CellResult& cell) {
    records << cell_jsonl(cell);
    records.flush();
    if (!records) throw Error(ErrorCode::io_error, "cannot write " + jsonl.string());
    if (cell.ok()) {
      ++succeeded;
      fmt::print(out, "{} {} in={} out={}: prefill {:.2f} +/- {:.2f} tok/s, decode {:.2f} +/- {:.2f} tok/s\n", cell.model,
                 to_string(cell.scheme), cell.workload.input_len, cell.workload.output_len,
                 cell.summary->prefill.tps_mean, cell.summary->prefill.tps_std, cell.summary->decode.tps_mean,
                 cell.summary->decode.tps_std);
    } else {
      const std::string why = cell.summary && !cell.summary->error.empty() ? cell.summary->error : cell.error;
      fmt::print(err, "{} {} in={} out={}: FAILED: {}\n", cell.model, to_string(cell.scheme), cell.workload.input_len,
                 cell.workload.output_len, why);
    }
  };
  const SweepResult result = sweep(models, schemes, workloads, options);
  emit_csv(result.table, csv);
  write_text(degradation, emit_degradation_csv(degradation_rows(result.table)));
  if (succeeded == 0) {
    err << "error: every cell failed\n";
    return kData;
  }
  return kOk;
}

struct ReportArgs {
  std::string in, csv, pareto, scores;
};

int cmd_report(const ReportArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path csv = a.csv.empty() ? with_suffix(a.in, ".csv") : fs::path(a.csv);
  const fs::path json_path = with_suffix(csv, ".json");
  const fs::path degradation = with_suffix(csv, ".degradation.csv");
  err << json{{"command", "report"},
              {"in", a.in},
              {"csv", csv.string()},
              {"json", json_path.string()},
              {"degradation_csv", degradation.string()},
              {"pareto", a.pareto.empty() ? json(nullptr) : json(a.pareto)},
              {"scores", a.scores.empty() ? json(nullptr) : json(a.scores)}}
             .dump()
      << "\n";
  std::map<std::string, double> scores;
  if (!a.scores.empty()) {
    try {
      const json j = json::parse(read_text(a.scores));
      for (const auto& [scheme, value] : j.items()) {
        parse_scheme(scheme);
        scores[scheme] = value.get<double>();
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::invalid_value, a.scores + ": " + e.what());
    }
  }
  std::ifstream in(a.in, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + a.in);
  ReportTable table;
  try {
    table = table_from_jsonl(in);
  } catch (const Error& e) {
    throw Error(e.code(), a.in + ": " + e.what());
  }
  emit_csv(table, csv);
  emit_json(table, json_path);
  write_text(degradation, emit_degradation_csv(degradation_rows(table)));
  if (!a.pareto.empty()) write_text(a.pareto, emit_frontier_csv(table, scores));
  fmt::print(out, "{} rows to {}\n", table.rows.size(), csv.string());
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Block quantization codecs and a prefill/decode benchmark harness", "quantbench"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic FP16 model container");
  generate->add_option("--model-config", gen.model_config, "Model config JSON")->required();
  generate->add_option("--out", gen.out, "Output QBF1 file")->required();
  generate->add_option("--seed", gen.seed, "Weight seed")->capture_default_str();

  QuantizeArgs quant;
  auto* quantize = app.add_subcommand("quantize", "Re-encode a container with another scheme");
  quantize->add_option("--in", quant.in, "Input QBF1 file")->required();
  quantize->add_option("--out", quant.out, "Output QBF1 file")->required();
  quantize->add_option("--scheme", quant.scheme, "FP16, Q8_0, Q5_0, Q4_0, Q5_K, Q4_K, Q3_K or Q2_K")->required();
  quantize->add_option("--imatrix", quant.imatrix, "QIM1 importance file");

  DequantizeArgs deq;
  auto* dequantize = app.add_subcommand("dequantize", "Expand a container to raw float32");
  dequantize->add_option("--in", deq.in, "Input QBF1 file")->required();
  dequantize->add_option("--out", deq.out, "Output float32 file")->required();

  InspectArgs insp;
  auto* inspect = app.add_subcommand("inspect", "Describe a QBF1 or QIM1 file");
  inspect->add_option("--in", insp.in, "Input file")->required();

  ImatrixArgs imat;
  auto* imatrix = app.add_subcommand("imatrix", "Collect activation statistics over synthetic tokens");
  imatrix->add_option("--in", imat.in, "Model QBF1 file")->required();
  imatrix->add_option("--out", imat.out, "Output QIM1 file")->required();
  imatrix->add_option("--tokens", imat.tokens, "Tokens to run")->capture_default_str();
  imatrix->add_option("--seed", imat.seed, "Token seed")->capture_default_str();

  BenchArgs bench_args, sweep_args;
  const auto add_bench_options = [](CLI::App* cmd, BenchArgs& b, bool many_models) {
    auto* config = cmd->add_option("--model-config", b.model_configs, "Model config JSON")->required();
    if (many_models) {
      config->delimiter(',');
    } else {
      config->expected(1);
    }
    cmd->add_option("--schemes", b.schemes, "Comma-separated schemes (default: all)")->delimiter(',');
    cmd->add_option("--input-lens", b.input_lens, "Comma-separated prompt lengths")->delimiter(',')->capture_default_str();
    cmd->add_option("--output-len", b.output_len, "Decoded tokens")->capture_default_str();
    cmd->add_option("--trials", b.trials, "Measured trials")->capture_default_str();
    cmd->add_option("--warmup", b.warmup, "Discarded warmup runs")->capture_default_str();
    cmd->add_option("--seed", b.seed, "Seed for weights and tokens")->capture_default_str();
    cmd->add_option("--jsonl", b.jsonl, "JSON-lines output; CSVs are written next to it")->capture_default_str();
    cmd->add_option("--workers", b.workers, "Worker threads (default: QUANTBENCH_WORKERS, then all cores)");
    cmd->add_option("--mode", b.mode, "fused or unpack")->capture_default_str();
    cmd->add_flag("--no-memory-sampling", b.no_memory, "Skip resident-set sampling");
  };
  auto* bench = app.add_subcommand("bench", "Benchmark one model over schemes and input lengths");
  add_bench_options(bench, bench_args, false);
  auto* sweep_cmd = app.add_subcommand("sweep", "Benchmark the grid of models, schemes and input lengths");
  add_bench_options(sweep_cmd, sweep_args, true);

  ReportArgs rep;
  auto* report = app.add_subcommand("report", "Aggregate JSON-lines records into tables");
  report->add_option("--in", rep.in, "JSON-lines records")->required();
  report->add_option("--csv", rep.csv, "Table CSV (default: next to --in)");
  report->add_option("--pareto", rep.pareto, "Frontier CSV, one frontier per phase");
  report->add_option("--scores", rep.scores, "JSON object of scheme -> fidelity score replacing -rmse");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kUsage;
  }

  try {
    if (generate->parsed()) return cmd_generate(gen, out, err);
    if (quantize->parsed()) return cmd_quantize(quant, out, err);
    if (dequantize->parsed()) return cmd_dequantize(deq, out, err);
    if (inspect->parsed()) return cmd_inspect(insp, out, err);
    if (imatrix->parsed()) return cmd_imatrix(imat, out, err);
    if (bench->parsed()) return cmd_bench("bench", bench_args, out, err);
    if (sweep_cmd->parsed()) return cmd_bench("sweep", sweep_args, out, err);
    if (report->parsed()) return cmd_report(rep, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::bad_alloc&) {
    err << "error: out of memory\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace qb::cli
