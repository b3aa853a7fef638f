#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "quantbench/error.hpp"
#include "quantbench/report.hpp"

using namespace qb;

namespace {

// O(n^2) reference: keep every point that no other point dominates.
std::vector<std::size_t> oracle_frontier(const std::vector<ParetoPoint>& pts) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < pts.size() && !dominated; ++j) {
      const ParetoPoint &a = pts[j], &b = pts[i];
      const bool ge = a.fidelity >= b.fidelity && a.tps >= b.tps && a.mem_bytes <= b.mem_bytes;
      const bool gt = a.fidelity > b.fidelity || a.tps > b.tps || a.mem_bytes < b.mem_bytes;
      dominated = ge && gt;
    }
    if (!dominated) out.push_back(i);
  }
  return out;
}

std::vector<std::string> labels(const std::vector<ParetoPoint>& pts) {
  std::vector<std::string> out;
  for (const auto& p : pts) out.push_back(p.label);
  return out;
}

std::vector<ParetoPoint> random_points(std::size_t n, unsigned seed, int levels) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> q(0, levels - 1);
  std::vector<ParetoPoint> pts(n);
  for (std::size_t i = 0; i < n; ++i) {
    pts[i] = {std::to_string(i), double(q(rng)) / 7.0, double(q(rng)) * 1.5, std::uint64_t(q(rng)) * 1024};
  }
  return pts;
}

ReportRow row(std::string model, std::string scheme, Phase phase, std::uint32_t in, double tps) {
  ReportRow r;
  r.model = std::move(model);
  r.scheme = std::move(scheme);
  r.bpw = 4.5;
  r.phase = phase;
  r.input_len = in;
  r.output_len = 1024;
  r.tps_mean = tps;
  r.tps_std = 0.25;
  r.rmse = 0.125;
  r.mem_bytes = 123456789;
  return r;
}

}  // namespace

TEST(Pareto, SinglePoint) {
  const std::vector<ParetoPoint> one{{"a", 1, 2, 3}};
  EXPECT_EQ(labels(pareto_frontier(one)), (std::vector<std::string>{"a"}));
  EXPECT_TRUE(pareto_frontier({}).empty());
}

TEST(Pareto, SmallExample) {
  const std::vector<ParetoPoint> pts{{"a", 90, 10, 5}, {"b", 80, 20, 5}, {"c", 70, 15, 5}};
  EXPECT_EQ(labels(pareto_frontier(pts)), (std::vector<std::string>{"a", "b"}));
}

TEST(Pareto, DuplicatesKeptInInputOrder) {
  const std::vector<ParetoPoint> pts{{"x", 1, 1, 1}, {"low", 0, 0, 2}, {"y", 1, 1, 1}, {"z", 2, 0, 1}};
  EXPECT_EQ(labels(pareto_frontier(pts)), (std::vector<std::string>{"x", "y", "z"}));
}

TEST(Pareto, RejectsNonFinite) {
  const std::vector<ParetoPoint> pts{{"a", NAN, 1, 1}};
  EXPECT_THROW(pareto_frontier(pts), Error);
  const std::vector<ParetoPoint> inf{{"a", 1, INFINITY, 1}};
  EXPECT_THROW(pareto_frontier(inf), Error);
}

TEST(Pareto, MatchesQuadraticOracle) {
  for (unsigned seed = 0; seed < 20; ++seed) {
    // Few levels force many ties; many levels give a generic frontier.
    for (int levels : {4, 50, 1 << 20}) {
      const auto pts = random_points(1000, seed, levels);
      std::vector<std::string> want;
      for (std::size_t i : oracle_frontier(pts)) want.push_back(pts[i].label);
      EXPECT_EQ(labels(pareto_frontier(pts)), want) << "seed " << seed << " levels " << levels;
    }
  }
}

TEST(Pareto, LargeInputMatchesOracle) {
  const auto pts = random_points(10000, 99, 1000);
  std::vector<std::string> want;
  for (std::size_t i : oracle_frontier(pts)) want.push_back(pts[i].label);
  EXPECT_EQ(labels(pareto_frontier(pts)), want);
}

TEST(Pareto, InvariantUnderMonotoneRescaling) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto pts = random_points(300, 1000 + trial, 40);
    std::uniform_real_distribution<double> u(0.1, 3.0);
    const double a = u(rng), b = u(rng), c = u(rng), e = u(rng);
    const std::uint64_t k = 1 + rng() % 9, off = rng() % 1000;
    auto mapped = pts;
    for (auto& p : mapped) {
      p.fidelity = a * std::exp(b * p.fidelity) - 4.0;
      p.tps = std::cbrt(c * p.tps) + e * p.tps;
      p.mem_bytes = k * p.mem_bytes * p.mem_bytes + off;
    }
    EXPECT_EQ(labels(pareto_frontier(pts)), labels(pareto_frontier(mapped)));
  }
}

TEST(ReportCsv, EmptyTableIsHeaderOnly) {
  EXPECT_EQ(emit_csv(ReportTable{}), std::string(kReportHeader) + "\r\n");
  EXPECT_TRUE(parse_csv(emit_csv(ReportTable{})).rows.empty());
}

TEST(ReportCsv, OneRowRoundTrips) {
  ReportTable t{{row("m", "Q4_K", Phase::decode, 64, 12.5)}};
  const std::string text = emit_csv(t);
  EXPECT_EQ(text, std::string(kReportHeader) + "\r\nm,Q4_K,4.5,decode,64,1024,12.5,0.25,0.125,123456789\r\n");
  EXPECT_EQ(parse_csv(text), t);
}

TEST(ReportCsv, QuotedLabelsRoundTrip) {
  ReportTable t{{row("tiny, \"fast\"", "Q8_0", Phase::prefill, 64, 3), row("line\nbreak", "FP16", Phase::decode, 8, 1)}};
  const std::string text = emit_csv(t);
  EXPECT_NE(text.find("\"tiny, \"\"fast\"\"\""), std::string::npos);
  ReportTable sorted = t;
  sorted.sort();
  EXPECT_EQ(parse_csv(text), sorted);
}

TEST(ReportCsv, SortedRowOrder) {
  ReportTable t;
  t.rows = {row("b", "Q4_0", Phase::prefill, 64, 1), row("a", "Q8_0", Phase::prefill, 128, 1),
            row("a", "Q8_0", Phase::decode, 512, 1), row("a", "Q8_0", Phase::decode, 64, 1),
            row("a", "FP16", Phase::prefill, 64, 1)};
  const ReportTable back = parse_csv(emit_csv(t));
  ASSERT_EQ(back.rows.size(), 5u);
  EXPECT_EQ(back.rows[0].scheme, "FP16");
  EXPECT_EQ(back.rows[1].phase, Phase::decode);
  EXPECT_EQ(back.rows[1].input_len, 64u);
  EXPECT_EQ(back.rows[2].input_len, 512u);
  EXPECT_EQ(back.rows[3].phase, Phase::prefill);
  EXPECT_EQ(back.rows[4].model, "b");
}

TEST(ReportCsv, RandomTablesRoundTrip) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 1e4);
  const std::string names[] = {"plain", "with,comma", "with \"quote\"", "x"};
  for (int trial = 0; trial < 50; ++trial) {
    ReportTable t;
    for (int i = 0; i < 12; ++i) {
      ReportRow r = row(names[rng() % 4], std::string(to_string(kAllSchemes[rng() % 8])),
                        rng() % 2 ? Phase::prefill : Phase::decode, 1 + rng() % 600, u(rng));
      r.tps_std = u(rng) / 3;
      r.bpw = u(rng);
      r.rmse = rng() % 5 ? u(rng) * 1e-7 : NAN;
      r.mem_bytes = rng();
      r.failed = rng() % 7 == 0;
      if (r.failed) r.tps_mean = r.tps_std = 0;
      t.rows.push_back(r);
    }
    t.sort();
    EXPECT_EQ(parse_csv(emit_csv(t)), t);
  }
}

TEST(ReportCsv, FailedCellsMarked) {
  ReportRow r = row("m", "Q2_K", Phase::decode, 64, 0);
  r.failed = true;
  const std::string text = emit_csv(ReportTable{{r}});
  EXPECT_NE(text.find(",FAILED,FAILED,"), std::string::npos);
  EXPECT_TRUE(parse_csv(text).rows[0].failed);
}

TEST(ReportCsv, MalformedInputRejected) {
  EXPECT_THROW(parse_csv("nope\r\n"), Error);
  EXPECT_THROW(parse_csv(std::string(kReportHeader) + "\r\na,b\r\n"), Error);
  EXPECT_THROW(parse_csv(std::string(kReportHeader) + "\r\nm,Q4_0,x,decode,1,1,1,1,1,1\r\n"), Error);
  EXPECT_THROW(parse_csv(std::string(kReportHeader) + "\r\n\"open,Q4_0\r\n"), Error);
}

TEST(ReportCsv, FileRoundTripAndIoErrors) {
  const auto dir = std::filesystem::temp_directory_path() / "qb_report_test";
  std::filesystem::create_directories(dir);
  ReportTable t{{row("m", "Q4_K", Phase::decode, 64, 12.5)}};
  emit_csv(t, dir / "r.csv");
  EXPECT_EQ(read_csv(dir / "r.csv"), t);
  try {
    emit_csv(t, dir / "missing" / "r.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::io_error);
    EXPECT_NE(std::string(e.what()).find("missing"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST(ReportJson, MirrorsTable) {
  ReportRow failed = row("m", "Q2_K", Phase::prefill, 64, 0);
  failed.failed = true;
  failed.rmse = NAN;
  const std::string text = emit_json(ReportTable{{row("m", "Q4_K", Phase::decode, 64, 12.5), failed}});
  EXPECT_NE(text.find("\"tps_mean\": 12.5"), std::string::npos);
  EXPECT_NE(text.find("\"failed\": true"), std::string::npos);
  EXPECT_NE(text.find("\"rmse\": null"), std::string::npos);
}

TEST(ReportBpw, MatchesCodecs) {
  EXPECT_EQ(report_bpw(SchemeId::Q8_0), 8.5);
  EXPECT_EQ(report_bpw(SchemeId::Q4_K), 4.5);
  EXPECT_EQ(report_bpw(SchemeId::Q2_K), 2.625);
  EXPECT_EQ(report_bpw(SchemeId::FP16), 16.0);
}

TEST(Jsonl, RoundTripsThroughTable) {
  CellResult ok;
  ok.model = "tiny";
  ok.scheme = SchemeId::Q4_0;
  ok.workload = {64, 16, 3};
  ok.rmse = 0.01;
  ok.mem_bytes = 999;
  BenchSummary s;
  for (std::uint32_t t = 0; t < 3; ++t) {
    for (Phase p : {Phase::prefill, Phase::decode}) {
      BenchRecord r;
      r.phase = p;
      r.tokens = p == Phase::prefill ? 64 : 16;
      r.wall_time = 0.1 + 0.0173 * t + (p == Phase::decode ? 0.3 : 0);
      r.trial_index = t;
      s.records.push_back(r);
    }
  }
  s.prefill = phase_stats(s.records, Phase::prefill);
  s.decode = phase_stats(s.records, Phase::decode);
  ok.summary = s;

  CellResult bad = ok;
  bad.scheme = SchemeId::Q2_K;
  bad.summary.reset();
  bad.error = "model build failed";

  std::istringstream in(cell_jsonl(ok) + "\n" + cell_jsonl(bad));
  const ReportTable from_lines = table_from_jsonl(in);
  ReportTable direct;
  append_rows(direct, ok);
  append_rows(direct, bad);
  direct.sort();
  EXPECT_EQ(from_lines, direct);
  EXPECT_EQ(emit_csv(from_lines), emit_csv(direct));
}

TEST(Jsonl, MalformedLineNamesLineNumber) {
  std::istringstream in("\n\n\n\n\n\n{not json\n");
  try {
    table_from_jsonl(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_value);
    EXPECT_NE(std::string(e.what()).find("line 7"), std::string::npos) << e.what();
  }
  std::istringstream missing("{\"status\": \"ok\"}\n");
  EXPECT_THROW(table_from_jsonl(missing), Error);
  std::istringstream empty("");
  EXPECT_TRUE(table_from_jsonl(empty).rows.empty());
}

TEST(Degradation, RowsFromTable) {
  ReportTable t;
  t.rows = {row("m", "FP16", Phase::decode, 64, 4), row("m", "Q2_K", Phase::decode, 64, 10),
            row("m", "Q2_K", Phase::decode, 512, 9), row("m", "Q2_K", Phase::prefill, 64, 100),
            row("m", "Q2_K", Phase::prefill, 512, 90)};
  const auto rows = degradation_rows(t);
  int comm = 0, comp = 0;
  for (const DegradationRow& r : rows) {
    if (r.kind == "comm") {
      ++comm;
      EXPECT_EQ(r.a_scheme, "Q2_K");
      EXPECT_EQ(r.b_scheme, "FP16");
      EXPECT_DOUBLE_EQ(r.ratio, 0.6);
    } else {
      ++comp;
      EXPECT_EQ(r.a_input_len, 64u);
      EXPECT_EQ(r.b_input_len, 512u);
      EXPECT_DOUBLE_EQ(r.ratio, 0.1);
    }
  }
  EXPECT_EQ(comm, 1);
  EXPECT_EQ(comp, 2);
  const std::string csv = emit_degradation_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\r')), "kind,model,phase,output_len,a_scheme,a_input_len,a_tps,b_scheme,b_input_len,b_tps,ratio");
}

TEST(Frontier, SeparatePerPhase) {
  ReportTable t;
  ReportRow a = row("m", "Q4_0", Phase::prefill, 64, 10);
  ReportRow b = row("m", "Q8_0", Phase::prefill, 64, 8);
  b.rmse = 0.01;
  b.mem_bytes = 2 * a.mem_bytes;
  ReportRow c = row("m", "Q4_0", Phase::decode, 64, 5);
  ReportRow d = row("m", "Q2_K", Phase::decode, 64, 4);
  d.rmse = 0.5;
  t.rows = {a, b, c, d};
  EXPECT_EQ(pareto_points(t, Phase::prefill).size(), 2u);
  const std::string csv = emit_frontier_csv(t);
  EXPECT_NE(csv.find("prefill,m/Q4_0/64/1024"), std::string::npos);
  EXPECT_NE(csv.find("prefill,m/Q8_0/64/1024"), std::string::npos);
  EXPECT_NE(csv.find("decode,m/Q4_0/64/1024"), std::string::npos);
  EXPECT_EQ(csv.find("Q2_K"), std::string::npos);
  // Imported scores replace -rmse.
  const std::string scored = emit_frontier_csv(t, {{"Q2_K", 99.0}});
  EXPECT_NE(scored.find("decode,m/Q2_K/64/1024,99"), std::string::npos);
}

TEST(Sweep, CountsRowsPerCell) {
  const ModelConfig tiny{1, 32, 64, 2, 32, "tiny"};
  SweepOptions o;
  o.bench.warmup = 0;
  o.bench.trials = 1;
  o.bench.sample_memory = false;
  int callbacks = 0;
  o.on_cell = [&](const CellResult&) { ++callbacks; };
  const SchemeId schemes[] = {SchemeId::Q4_0, SchemeId::Q8_0};
  const Workload workloads[] = {{4, 2, 0}};
  const SweepResult r = sweep(std::span(&tiny, 1), schemes, workloads, o);
  EXPECT_EQ(r.table.rows.size(), 4u);
  EXPECT_EQ(r.cells.size(), 2u);
  EXPECT_EQ(callbacks, 2);
  int prefill = 0;
  for (const ReportRow& row : r.table.rows) {
    prefill += row.phase == Phase::prefill;
    EXPECT_FALSE(row.failed);
    EXPECT_GT(row.tps_mean, 0.0);
    EXPECT_EQ(row.tps_std, 0.0);
  }
  EXPECT_EQ(prefill, 2);
}

TEST(Sweep, FailuresAreMarkedNotDropped) {
  const ModelConfig models[] = {{1, 32, 64, 2, 32, "ok"}, {1, 30, 64, 4, 32, "bad"}};
  SweepOptions o;
  o.bench.warmup = 0;
  o.bench.trials = 1;
  o.bench.sample_memory = false;
  const SchemeId schemes[] = {SchemeId::Q4_0};
  const Workload workloads[] = {{4, 2, 0}};
  const SweepResult r = sweep(models, schemes, workloads, o);
  ASSERT_EQ(r.table.rows.size(), 4u);
  int failed = 0;
  for (const ReportRow& row : r.table.rows) failed += row.failed;
  EXPECT_EQ(failed, 2);
  EXPECT_FALSE(r.cells[1].error.empty());
}

TEST(Sweep, EmptyListsRejected) {
  const ModelConfig tiny{1, 32, 64, 2, 32, "tiny"};
  const SchemeId schemes[] = {SchemeId::Q4_0};
  const Workload workloads[] = {{4, 2, 0}};
  const auto code = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::io_error;
  };
  EXPECT_EQ(code([&] { sweep(std::span(&tiny, 1), {}, workloads); }), ErrorCode::parameter_error);
  EXPECT_EQ(code([&] { sweep({}, schemes, workloads); }), ErrorCode::parameter_error);
  EXPECT_EQ(code([&] { sweep(std::span(&tiny, 1), schemes, {}); }), ErrorCode::parameter_error);
}
