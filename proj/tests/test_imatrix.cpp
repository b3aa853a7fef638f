#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "quantbench/error.hpp"
#include "quantbench/imatrix.hpp"

using namespace qb;

namespace {

struct Instance {
  std::vector<float> w;
  std::vector<float> weights;
};

Instance random_instance(std::mt19937& rng, std::size_t d) {
  std::normal_distribution<float> normal;
  std::uniform_real_distribution<float> uni(0.0f, 2.0f);
  Instance inst{std::vector<float>(d), std::vector<float>(d)};
  for (auto& v : inst.w) v = normal(rng);
  for (auto& v : inst.weights) v = uni(rng);
  return inst;
}

}  // namespace

TEST(Accumulate, SumsAndCount) {
  ImportanceMatrix m("blk.0.attn_q", 2);
  const std::vector<float> a{1, 2};
  m.accumulate(a);
  m.accumulate(a);
  EXPECT_EQ(m.sum_sq(), (std::vector<double>{2, 8}));
  EXPECT_EQ(m.sample_count(), 2u);
  EXPECT_EQ(m.mean_sq(), (std::vector<float>{1, 4}));
}

TEST(Accumulate, EmptyFallsBackToOnes) {
  const ImportanceMatrix m("t", 3);
  EXPECT_EQ(m.mean_sq(), (std::vector<float>{1, 1, 1}));
}

TEST(Accumulate, OrderIndependent) {
  std::mt19937 rng(4);
  std::uniform_int_distribution<int> small(-8, 8);
  std::vector<std::vector<float>> samples(20, std::vector<float>(5));
  for (auto& s : samples)
    for (auto& v : s) v = float(small(rng));
  ImportanceMatrix a("t", 5), b("t", 5);
  for (const auto& s : samples) a.accumulate(s);
  std::shuffle(samples.begin(), samples.end(), rng);
  for (const auto& s : samples) b.accumulate(s);
  EXPECT_EQ(a, b);
}

TEST(Accumulate, LengthMismatch) {
  ImportanceMatrix m("t", 3);
  const std::vector<float> a{1, 2};
  try {
    m.accumulate(a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::shape_mismatch);
  }
}

TEST(ImportanceFile, RoundTrip) {
  ImportanceMatrix a("blk.0.attn_v", 3), b("output", 1);
  a.accumulate(std::vector<float>{0.5f, -1.0f, 3.0f});
  const std::vector<ImportanceMatrix> all{a, b};
  const auto path = std::filesystem::temp_directory_path() / "qb_test_roundtrip.qim";
  write_importance(path, all);
  EXPECT_EQ(read_importance(path), all);
  std::filesystem::remove(path);
}

TEST(ImportanceFile, RejectsDamage) {
  const std::vector<ImportanceMatrix> all{ImportanceMatrix("t", 4)};
  auto bytes = encode_importance(all);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_importance(bad), Error);
  bad = bytes;
  bad.resize(bad.size() - 3);
  try {
    decode_importance(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::truncated);
  }
}

TEST(BlockWeights, Sigma2) {
  const std::vector<float> w{3, 4}, a{1, 1};
  EXPECT_DOUBLE_EQ(block_weights(w, a).sigma2, 12.5);
}

TEST(BlockWeights, ZeroCase) {
  const std::vector<float> w{0}, a{4};
  const auto bw = block_weights(w, a);
  EXPECT_EQ(bw.sigma2, 0.0);
  EXPECT_EQ(bw.a_tilde_sq[0], 0.0f);
}

TEST(BlockWeights, SigmaFromWholeBlock) {
  const std::vector<float> w{0, std::sqrt(8.0f)}, a{4, 1};
  const auto bw = block_weights(w, a);
  EXPECT_NEAR(bw.sigma2, 4.0, 1e-6);
  EXPECT_NEAR(bw.a_tilde_sq[0], 8.0f, 1e-5);
}

TEST(BlockWeights, RejectsNan) {
  const std::vector<float> w{NAN}, a{1};
  EXPECT_THROW(block_weights(w, a), Error);
}

TEST(BlockWeights, FormulaHoldsOnRandomInputs) {
  std::mt19937 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto inst = random_instance(rng, 16);
    const auto bw = block_weights(inst.w, inst.weights);
    double sigma2 = 0;
    for (float v : inst.w) sigma2 += double(v) * v / 16;
    for (std::size_t i = 0; i < 16; ++i) {
      const double expect = double(inst.weights[i]) * std::sqrt(sigma2 + double(inst.w[i]) * inst.w[i]);
      ASSERT_GE(bw.a_tilde_sq[i], 0.0f);
      ASSERT_NEAR(bw.a_tilde_sq[i], expect, 1e-6 * (1 + expect));
    }
  }
}

TEST(WeightedFit, LatticeAlignedIsExact) {
  const std::vector<float> w{0, 1, 2, 3}, uniform(4, 1.0f);
  EXPECT_NEAR(weighted_affine_fit(w, uniform, 2, true).objective, 0.0, 1e-12);
}

TEST(WeightedFit, MatchesExhaustiveOracleSeed11) {
  std::mt19937 rng(11);
  const auto inst = random_instance(rng, 4);
  const auto fit = weighted_affine_fit(inst.w, inst.weights, 2, true);
  const auto best = oracle::exhaustive_asymmetric_fit(inst.w, inst.weights, 2);
  EXPECT_NEAR(fit.objective, best.objective, 1e-6);
}

TEST(WeightedFit, ConcentratedWeightReconstructsExactly) {
  const std::vector<float> w{0.37f, -1.2f, 2.5f, 0.9f}, weights{1, 0, 0, 0};
  const auto fit = weighted_affine_fit(w, weights, 2, true);
  EXPECT_NEAR(fit.objective, 0.0, 1e-12);
  EXPECT_NEAR(fit.scale * fit.codes[0] + fit.min, 0.37, 1e-6);
  EXPECT_NEAR(oracle::exhaustive_asymmetric_fit(w, weights, 2).objective, 0.0, 1e-12);
}

TEST(WeightedFit, InvalidBitsIsParameterError) {
  const std::vector<float> w{1, 2}, weights{1, 1};
  try {
    weighted_affine_fit(w, weights, 1, true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::parameter_error);
  }
}

TEST(WeightedFit, ZeroWeightsActLikeUniform) {
  const std::vector<float> w{0.1f, 0.5f, -0.4f, 1.0f}, zeros(4, 0.0f), ones(4, 1.0f);
  const auto a = weighted_affine_fit(w, zeros, 2, true);
  const auto b = weighted_affine_fit(w, ones, 2, true);
  EXPECT_EQ(a.codes, b.codes);
  EXPECT_DOUBLE_EQ(a.objective, b.objective);
}

TEST(WeightedFit, OracleEquivalenceOnRandomInstances) {
  std::mt19937 rng(2024);
  int matched = 0;
  constexpr int kInstances = 200;
  for (int trial = 0; trial < kInstances; ++trial) {
    const auto d = std::size_t(2 + trial % 3);
    const auto inst = random_instance(rng, d);
    const auto fit = weighted_affine_fit(inst.w, inst.weights, 2, true);
    const auto best = oracle::exhaustive_asymmetric_fit(inst.w, inst.weights, 2);
    ASSERT_GE(fit.objective, best.objective - 1e-9);
    if (fit.objective <= best.objective + 1e-6) ++matched;
  }
  // Every instance reaches the global optimum.
  EXPECT_EQ(matched, kInstances);
}

TEST(WeightedFit, DominatesMinMax) {
  std::mt19937 rng(77);
  for (int n : {2, 3, 4, 6}) {
    for (bool asym : {true, false}) {
      for (int trial = 0; trial < 100; ++trial) {
        const auto inst = random_instance(rng, 32);
        const auto fit = weighted_affine_fit(inst.w, inst.weights, n, asym);
        const auto base = minmax_fit(inst.w, inst.weights, n, asym);
        ASSERT_LE(fit.objective, base.objective);
        ASSERT_NEAR(fit.objective, affine_objective(inst.w, inst.weights, fit.codes, fit.scale, fit.min),
                    1e-9 * (1 + fit.objective));
      }
    }
  }
}

TEST(WeightedFit, CodesInvariantUnderActivationScaling) {
  std::mt19937 rng(31);
  for (float c : {0.25f, 4.0f, 1024.0f}) {
    for (int trial = 0; trial < 50; ++trial) {
      const auto inst = random_instance(rng, 32);
      std::vector<float> a_scaled(inst.weights.size());
      for (std::size_t i = 0; i < a_scaled.size(); ++i) a_scaled[i] = inst.weights[i] * c * c;
      const auto base = block_weights(inst.w, inst.weights);
      const auto scaled = block_weights(inst.w, a_scaled);
      for (std::size_t i = 0; i < a_scaled.size(); ++i) {
        ASSERT_FLOAT_EQ(scaled.a_tilde_sq[i], base.a_tilde_sq[i] * c * c);
      }
      EXPECT_EQ(weighted_affine_fit(inst.w, base.a_tilde_sq, 4, true).codes,
                weighted_affine_fit(inst.w, scaled.a_tilde_sq, 4, true).codes);
    }
  }
}

TEST(Refine, OptimalInputIsFixedPoint) {
  const std::vector<float> w{0, 1, 2, 3}, uniform(4, 1.0f);
  const AffineFit start{1.0, 0.0, {0, 1, 2, 3}, 0.0};
  const auto out = perturbative_refine(start, w, uniform, 2, true, 10);
  EXPECT_EQ(out.codes, start.codes);
  EXPECT_EQ(out.scale, 1.0);
  EXPECT_EQ(out.min, 0.0);
}

TEST(Refine, ZeroRoundsIsIdentity) {
  const std::vector<float> w{0.2f, 0.9f, -0.3f, 1.4f}, uniform(4, 1.0f);
  const AffineFit start{0.5, -0.3, {3, 0, 1, 2}, 123.0};
  const auto out = perturbative_refine(start, w, uniform, 2, true, 0);
  EXPECT_EQ(out.codes, start.codes);
  EXPECT_EQ(out.objective, start.objective);
}

TEST(Refine, AdversarialStartSeed23ReachesOptimum) {
  std::mt19937 rng(23);
  const auto inst = random_instance(rng, 4);
  // Codes in reverse order of the values: the worst monotone assignment.
  std::vector<std::size_t> order{0, 1, 2, 3};
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return inst.w[a] > inst.w[b]; });
  AffineFit start{0.1, 0.0, std::vector<std::int32_t>(4), 0.0};
  for (std::size_t rank = 0; rank < 4; ++rank) start.codes[order[rank]] = std::int32_t(rank);
  start.objective = affine_objective(inst.w, inst.weights, start.codes, start.scale, start.min);
  const auto out = perturbative_refine(start, inst.w, inst.weights, 2, true, 64);
  const auto best = oracle::exhaustive_asymmetric_fit(inst.w, inst.weights, 2);
  EXPECT_LE(out.objective, start.objective);
  EXPECT_NEAR(out.objective, best.objective, 1e-6);
}

TEST(Refine, ObjectiveNeverIncreasesAcrossRounds) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto inst = random_instance(rng, 16);
    AffineFit cur = minmax_fit(inst.w, inst.weights, 3, true);
    for (int round = 0; round < 20; ++round) {
      const auto next = perturbative_refine(cur, inst.w, inst.weights, 3, true, 1);
      ASSERT_LE(next.objective, cur.objective);
      if (next.codes == cur.codes) break;
      ASSERT_LT(next.objective, cur.objective);
      cur = next;
    }
  }
}

TEST(SumSquared, IndependentActivations) {
  const auto r = check_sum_squared_approx(8, 100000, 1);
  EXPECT_LT(r.rel_gap, 0.05);
}

TEST(SumSquared, SingleDimensionIsExact) {
  const auto r = check_sum_squared_approx(1, 5000, 3);
  EXPECT_EQ(r.lhs, r.rhs);
}

TEST(SumSquared, CorrelatedActivationsReportGap) {
  const auto r = check_sum_squared_approx(8, 20000, 1, ActivationModel::correlated);
  EXPECT_TRUE(std::isfinite(r.rel_gap));
  RecordProperty("correlated_rel_gap", std::to_string(r.rel_gap));
}
