#include "quantbench/imatrix.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "binary_io.hpp"
#include "quantbench/error.hpp"
#include "quantbench/philox.hpp"
#include "quantbench/scalar_quant.hpp"

namespace qb {

ImportanceMatrix::ImportanceMatrix(std::string name, std::vector<double> sum_sq, std::uint64_t sample_count)
    : name_(std::move(name)), sum_sq_(std::move(sum_sq)), sample_count_(sample_count) {
  for (double v : sum_sq_) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error(ErrorCode::invalid_value, "importance matrix '" + name_ + "' has a negative or non-finite sum");
    }
  }
}

void ImportanceMatrix::accumulate(std::span<const float> activations) {
  if (activations.size() != sum_sq_.size()) {
    throw Error(ErrorCode::shape_mismatch, "importance matrix '" + name_ + "' has " + std::to_string(columns()) +
                                               " columns, activation has " + std::to_string(activations.size()));
  }
  for (std::size_t i = 0; i < activations.size(); ++i) {
    const double a = activations[i];
    sum_sq_[i] += a * a;
  }
  ++sample_count_;
}

std::vector<float> ImportanceMatrix::mean_sq() const {
  std::vector<float> out(sum_sq_.size(), 1.0f);
  if (sample_count_ == 0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(sum_sq_[i] / double(sample_count_));
  return out;
}

namespace {

constexpr std::uint8_t kImportanceMagic[4] = {'Q', 'I', 'M', '1'};
constexpr std::uint32_t kImportanceVersion = 1;

}  // namespace

std::vector<std::uint8_t> encode_importance(std::span<const ImportanceMatrix> matrices) {
  detail::ByteWriter out;
  out.put_bytes(kImportanceMagic);
  out.put<std::uint32_t>(kImportanceVersion);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(matrices.size()));
  for (const auto& m : matrices) {
    out.put_string(m.name());
    out.put<std::uint32_t>(static_cast<std::uint32_t>(m.columns()));
    out.put<std::uint64_t>(m.sample_count());
    for (double v : m.sum_sq()) out.put<double>(v);
  }
  return std::move(out.bytes());
}

std::vector<ImportanceMatrix> decode_importance(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  const auto magic = in.get_bytes(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kImportanceMagic))) {
    throw Error(ErrorCode::bad_magic, "not a QIM1 importance file");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kImportanceVersion) {
    throw Error(ErrorCode::version_mismatch, "QIM1 version " + std::to_string(version));
  }
  const auto count = in.get<std::uint32_t>();
  std::vector<ImportanceMatrix> out;
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name = in.get_string();
    const auto columns = in.get<std::uint32_t>();
    const auto samples = in.get<std::uint64_t>();
    if (std::uint64_t{columns} * 8 > in.remaining()) throw Error(ErrorCode::truncated, "column sums of '" + name + "'");
    std::vector<double> sums(columns);
    for (auto& v : sums) v = in.get<double>();
    try {
      out.emplace_back(std::move(name), std::move(sums), samples);
    } catch (const Error& e) {
      throw Error(ErrorCode::corrupt_data, e.what());
    }
  }
  return out;
}

void write_importance(const std::filesystem::path& path, std::span<const ImportanceMatrix> matrices) {
  detail::write_file(path, encode_importance(matrices));
}

std::vector<ImportanceMatrix> read_importance(const std::filesystem::path& path) {
  return decode_importance(detail::read_file(path));
}

BlockWeights block_weights(std::span<const float> w, std::span<const float> a_sq) {
  if (w.size() != a_sq.size()) throw Error(ErrorCode::shape_mismatch, "block weights: length mismatch");
  BlockWeights out{{w.begin(), w.end()}, {a_sq.begin(), a_sq.end()}, 0.0, std::vector<float>(w.size())};
  double sum = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!std::isfinite(w[i]) || !std::isfinite(a_sq[i])) throw Error(ErrorCode::invalid_value, "block weights: non-finite input");
    sum += double(w[i]) * w[i];
  }
  out.sigma2 = w.empty() ? 0.0 : sum / double(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    out.a_tilde_sq[i] = static_cast<float>(double(a_sq[i]) * std::sqrt(out.sigma2 + double(w[i]) * w[i]));
  }
  return out;
}

namespace {

struct CodeRange {
  std::int32_t lo;
  std::int32_t hi;
};

CodeRange code_range(int n_bits, bool asymmetric) {
  if (asymmetric) return {0, (1 << n_bits) - 1};
  return {-(1 << (n_bits - 1)), (1 << (n_bits - 1)) - 1};
}

// Weighted moments of a block for a fixed code assignment.
struct Moments {
  double w = 0, q = 0, qq = 0, x = 0, qx = 0, xx = 0;
};

Moments moments(std::span<const float> x, std::span<const double> wt, std::span<const std::int32_t> codes) {
  Moments m;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double q = codes[i];
    m.w += wt[i];
    m.q += wt[i] * q;
    m.qq += wt[i] * q * q;
    m.x += wt[i] * x[i];
    m.qx += wt[i] * q * x[i];
    m.xx += wt[i] * double(x[i]) * x[i];
  }
  return m;
}

// Least-squares (scale, min) for fixed codes; keeps `scale` when the codes do
// not determine it.
std::pair<double, double> refit(const Moments& m, double scale, bool asymmetric) {
  if (!asymmetric) {
    return {m.qq > 0 ? m.qx / m.qq : scale, 0.0};
  }
  const double det = m.w * m.qq - m.q * m.q;
  if (det > 1e-12 * m.w * m.qq && det > 0) {
    const double s = (m.w * m.qx - m.q * m.x) / det;
    return {s, (m.x - s * m.q) / m.w};
  }
  return {scale, (m.x - scale * m.q) / m.w};
}

double objective_from_moments(const Moments& m, double s, double mn) {
  return m.xx - 2 * s * m.qx - 2 * mn * m.x + s * s * m.qq + 2 * s * mn * m.q + mn * mn * m.w;
}

std::vector<double> effective_weights(std::span<const float> weights, std::size_t n) {
  if (weights.size() != n) throw Error(ErrorCode::shape_mismatch, "fit: weights and values differ in length");
  std::vector<double> wt(n);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(weights[i] >= 0.0f) || !std::isfinite(weights[i])) {
      throw Error(ErrorCode::invalid_value, "fit: weights must be finite and non-negative");
    }
    wt[i] = weights[i];
    total += wt[i];
  }
  if (total == 0) std::fill(wt.begin(), wt.end(), 1.0);
  return wt;
}

void check_fit_args(std::span<const float> w, int n_bits) {
  if (n_bits < 2 || n_bits > 8) throw Error(ErrorCode::parameter_error, "fit: n_bits must be in [2, 8]");
  if (w.empty()) throw Error(ErrorCode::invalid_value, "fit: empty block");
  for (float v : w) {
    if (!std::isfinite(v)) throw Error(ErrorCode::invalid_value, "fit: non-finite value");
  }
}

double direct_objective(std::span<const float> x, std::span<const double> wt, std::span<const std::int32_t> codes,
                        double s, double m) {
  double sum = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = s * codes[i] + m - x[i];
    sum += wt[i] * r * r;
  }
  return sum;
}

void round_codes(std::span<const float> x, double s, double m, CodeRange range, std::vector<std::int32_t>& codes) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double q = s > 0 ? std::round((x[i] - m) / s) : 0.0;
    codes[i] = static_cast<std::int32_t>(std::clamp(q, double(range.lo), double(range.hi)));
  }
}

AffineFit minmax_fit_impl(std::span<const float> x, std::span<const double> wt, int n_bits, bool asymmetric) {
  const CodeRange range = code_range(n_bits, asymmetric);
  AffineFit fit;
  fit.codes.assign(x.size(), 0);
  if (asymmetric) {
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    fit.min = *lo;
    fit.scale = (double(*hi) - double(*lo)) / range.hi;
  } else {
    double amax = 0;
    for (float v : x) amax = std::max(amax, std::fabs(double(v)));
    fit.scale = amax / double(1 << (n_bits - 1));
  }
  round_codes(x, fit.scale, fit.min, range, fit.codes);
  fit.objective = direct_objective(x, wt, fit.codes, fit.scale, fit.min);
  return fit;
}

AffineFit refine_impl(AffineFit cur, std::span<const float> x, std::span<const double> wt, int n_bits, bool asymmetric,
                      int max_rounds) {
  const CodeRange range = code_range(n_bits, asymmetric);
  cur.objective = direct_objective(x, wt, cur.codes, cur.scale, cur.min);
  for (int round = 0; round < max_rounds; ++round) {
    const Moments base = moments(x, wt, cur.codes);
    const double tolerance = 1e-12 * (base.xx + std::numeric_limits<double>::min());
    double best_obj = cur.objective - tolerance;
    std::size_t best_i = x.size();
    int best_delta = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (wt[i] == 0) continue;
      for (int delta : {-1, +1}) {
        const std::int32_t q = cur.codes[i] + delta;
        if (q < range.lo || q > range.hi) continue;
        Moments m = base;
        const double q0 = cur.codes[i];
        m.q += wt[i] * delta;
        m.qq += wt[i] * (double(q) * q - q0 * q0);
        m.qx += wt[i] * delta * double(x[i]);
        const auto [s, mn] = refit(m, cur.scale, asymmetric);
        if (s < 0) continue;
        const double obj = objective_from_moments(m, s, mn);
        if (obj < best_obj) {
          best_obj = obj;
          best_i = i;
          best_delta = delta;
        }
      }
    }
    AffineFit next = cur;
    if (best_i < x.size()) {
      next.codes[best_i] += best_delta;
      std::tie(next.scale, next.min) = refit(moments(x, wt, next.codes), cur.scale, asymmetric);
    } else {
      // No single move helps: re-round every code at the current (s, m).
      round_codes(x, cur.scale, cur.min, range, next.codes);
      const auto [s, mn] = refit(moments(x, wt, next.codes), cur.scale, asymmetric);
      if (s >= 0) std::tie(next.scale, next.min) = std::pair{s, mn};
      if (asymmetric) {
        // Codes ordered against the values fit best with a negative scale;
        // reflecting them gives the same reconstruction with s > 0.
        AffineFit reflected = cur;
        for (auto& q : reflected.codes) q = range.hi - q;
        std::tie(reflected.scale, reflected.min) = refit(moments(x, wt, reflected.codes), cur.scale, asymmetric);
        reflected.objective = direct_objective(x, wt, reflected.codes, reflected.scale, reflected.min);
        next.objective = direct_objective(x, wt, next.codes, next.scale, next.min);
        if (reflected.scale >= 0 && reflected.objective < next.objective) next = std::move(reflected);
      }
    }
    next.objective = direct_objective(x, wt, next.codes, next.scale, next.min);
    if (!(next.objective < cur.objective)) break;
    cur = std::move(next);
  }
  return cur;
}

}  // namespace

double affine_objective(std::span<const float> w, std::span<const float> weights, std::span<const std::int32_t> codes,
                        double scale, double min) {
  if (codes.size() != w.size()) throw Error(ErrorCode::shape_mismatch, "objective: codes and values differ in length");
  const auto wt = effective_weights(weights, w.size());
  return direct_objective(w, wt, codes, scale, min);
}

AffineFit minmax_fit(std::span<const float> w, std::span<const float> weights, int n_bits, bool asymmetric) {
  check_fit_args(w, n_bits);
  return minmax_fit_impl(w, effective_weights(weights, w.size()), n_bits, asymmetric);
}

AffineFit perturbative_refine(AffineFit start, std::span<const float> w, std::span<const float> weights, int n_bits,
                              bool asymmetric, int max_rounds) {
  check_fit_args(w, n_bits);
  if (start.codes.size() != w.size()) throw Error(ErrorCode::shape_mismatch, "refine: codes and values differ in length");
  const CodeRange range = code_range(n_bits, asymmetric);
  for (auto q : start.codes) {
    if (q < range.lo || q > range.hi) throw Error(ErrorCode::parameter_error, "refine: start code out of range");
  }
  if (max_rounds <= 0) return start;
  return refine_impl(std::move(start), w, effective_weights(weights, w.size()), n_bits, asymmetric, max_rounds);
}

AffineFit weighted_affine_fit(std::span<const float> w, std::span<const float> weights, int n_bits, bool asymmetric) {
  check_fit_args(w, n_bits);
  const auto wt = effective_weights(weights, w.size());
  const CodeRange range = code_range(n_bits, asymmetric);

  AffineFit best = minmax_fit_impl(w, wt, n_bits, asymmetric);
  if (best.scale == 0) {
    if (asymmetric) {
      // Constant block: exact reconstruction through the offset.
      best.min = std::inner_product(w.begin(), w.end(), wt.begin(), 0.0) / std::accumulate(wt.begin(), wt.end(), 0.0);
      best.objective = direct_objective(w, wt, best.codes, 0.0, best.min);
    }
    return best;
  }

  const double base_scale = best.scale;
  const double weight_sum = std::accumulate(wt.begin(), wt.end(), 0.0);
  std::vector<std::int32_t> codes(w.size());
  const auto consider = [&](double s, double m) {
    const double obj = direct_objective(w, wt, codes, s, m);
    if (obj < best.objective) best = AffineFit{s, m, codes, obj};
  };

  {
    codes = best.codes;
    const auto [s, m] = refit(moments(w, wt, codes), best.scale, asymmetric);
    if (s > 0) consider(s, m);
  }

  constexpr int kGridPoints = 64;
  for (int k = 0; k < kGridPoints; ++k) {
    const double s = base_scale * std::exp2(-1.0 + 2.0 * k / (kGridPoints - 1));
    // Offsets anchored at the bottom and at the top code.
    const int anchors = asymmetric ? 2 : 1;
    for (int anchor = 0; anchor < anchors; ++anchor) {
      double m = 0.0;
      if (asymmetric) {
        m = anchor == 0 ? double(*std::min_element(w.begin(), w.end()))
                        : double(*std::max_element(w.begin(), w.end())) - s * range.hi;
      }
      round_codes(w, s, m, range, codes);
      if (asymmetric) {
        for (int iter = 0; iter < 3; ++iter) {
          double num = 0;
          for (std::size_t i = 0; i < w.size(); ++i) num += wt[i] * (w[i] - s * codes[i]);
          m = num / weight_sum;
          round_codes(w, s, m, range, codes);
        }
      }
      consider(s, m);
      const auto [rs, rm] = refit(moments(w, wt, codes), s, asymmetric);
      if (rs > 0) consider(rs, rm);
    }
  }

  return refine_impl(std::move(best), w, wt, n_bits, asymmetric, 4 * static_cast<int>(w.size()));
}

SumSquaredCheck check_sum_squared_approx(std::size_t dim, std::size_t samples, std::uint64_t seed,
                                         ActivationModel model) {
  if (dim == 0 || samples == 0) throw Error(ErrorCode::parameter_error, "sum-squared check needs dim, samples >= 1");
  const Philox4x32 residual_gen(seed ^ 0x5eed5eedULL);
  std::vector<double> e(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const auto r = residual_gen({static_cast<std::uint32_t>(i), 0, 0, 0});
    e[i] = (double(r[0]) + 0.5) * 0x1p-32 - 0.5;
  }

  const GaussianStream activations(seed, 1);
  std::vector<double> a(dim);
  double lhs = 0, rhs = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    if (model == ActivationModel::independent) {
      activations.fill(a.data(), dim, std::uint64_t{s} * dim);
    } else {
      std::fill(a.begin(), a.end(), activations.at(s));
    }
    double cross = 0, diag = 0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double term = a[i] * e[i];
      cross += term;
      diag += term * term;
    }
    lhs += cross * cross;
    rhs += diag;
  }
  lhs /= double(samples);
  rhs /= double(samples);
  return {lhs, rhs, rhs > 0 ? std::fabs(lhs - rhs) / rhs : 0.0};
}

}  // namespace qb
