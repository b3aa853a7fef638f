#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace qb {

// Per-column accumulated squared activations for one weight tensor. Columns
// index the tensor's input dimension.
class ImportanceMatrix {
 public:
  ImportanceMatrix() = default;
  ImportanceMatrix(std::string name, std::size_t columns) : name_(std::move(name)), sum_sq_(columns, 0.0) {}
  ImportanceMatrix(std::string name, std::vector<double> sum_sq, std::uint64_t sample_count);

  // Adds a_i^2 to every column. Throws shape_mismatch on a length mismatch.
  void accumulate(std::span<const float> activations);

  // Mean squared activation per column; all ones when no sample has been seen.
  std::vector<float> mean_sq() const;

  const std::string& name() const { return name_; }
  std::size_t columns() const { return sum_sq_.size(); }
  std::uint64_t sample_count() const { return sample_count_; }
  const std::vector<double>& sum_sq() const { return sum_sq_; }

  friend bool operator==(const ImportanceMatrix&, const ImportanceMatrix&) = default;

 private:
  std::string name_;
  std::vector<double> sum_sq_;
  std::uint64_t sample_count_ = 0;
};

// "QIM1" file: magic, u32 version, u32 count, then per matrix u32 name length,
// name bytes, u32 columns, u64 sample count, f64 column sums. Little-endian.
void write_importance(const std::filesystem::path& path, std::span<const ImportanceMatrix> matrices);
std::vector<ImportanceMatrix> read_importance(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_importance(std::span<const ImportanceMatrix> matrices);
std::vector<ImportanceMatrix> decode_importance(std::span<const std::uint8_t> bytes);

struct BlockWeights {
  std::vector<float> w;
  std::vector<float> a_sq;
  double sigma2 = 0.0;             // mean of w^2 over the block
  std::vector<float> a_tilde_sq;   // a_sq[i] * sqrt(sigma2 + w[i]^2)
};

BlockWeights block_weights(std::span<const float> w, std::span<const float> a_sq);

struct AffineFit {
  double scale = 0.0;
  double min = 0.0;  // always 0 for symmetric fits
  std::vector<std::int32_t> codes;
  double objective = 0.0;
};

// sum_i weight_i * (scale * code_i + min - w_i)^2, evaluated directly.
double affine_objective(std::span<const float> w, std::span<const float> weights, std::span<const std::int32_t> codes,
                        double scale, double min);

// Plain min/max fit (no search) with its objective under `weights`.
AffineFit minmax_fit(std::span<const float> w, std::span<const float> weights, int n_bits, bool asymmetric);

// Weighted block fit: a 64-point geometric scale grid over [s/2, 2s] around
// the min/max scale, closed-form weighted offset for each candidate, weighted
// least-squares refit of (scale, min) on the candidate codes, then
// perturbative_refine. Never worse than minmax_fit under the same weights.
// All-zero weights fall back to uniform weights.
AffineFit weighted_affine_fit(std::span<const float> w, std::span<const float> weights, int n_bits, bool asymmetric);

// Best-improvement +/-1 code moves with a least-squares (scale, min) refit per
// move. Every accepted move strictly lowers the objective; stops at a local
// optimum or after max_rounds accepted moves.
AffineFit perturbative_refine(AffineFit start, std::span<const float> w, std::span<const float> weights, int n_bits,
                              bool asymmetric, int max_rounds);

enum class ActivationModel { independent, correlated };

struct SumSquaredCheck {
  double lhs = 0.0;  // E[(sum_i e_i a_i)^2]
  double rhs = 0.0;  // E[sum_i (a_i e_i)^2]
  double rel_gap = 0.0;
};

// Monte-Carlo comparison of the two sides of the cross-term elimination for a
// fixed residual vector e (uniform in [-1/2, 1/2)) and zero-mean unit-variance
// activations.
SumSquaredCheck check_sum_squared_approx(std::size_t dim, std::size_t samples, std::uint64_t seed,
                                         ActivationModel model = ActivationModel::independent);

}  // namespace qb
