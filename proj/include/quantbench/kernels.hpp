#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "quantbench/quantize.hpp"

namespace qb {

enum class KernelMode { unpack_then_compute, fused_per_block };

std::string_view to_string(KernelMode mode);
std::optional<KernelMode> kernel_mode_from_string(std::string_view name);

struct KernelOptions {
  KernelMode mode = KernelMode::fused_per_block;
  int workers = 0;  // 0: OpenMP default
};

// Elements decoded and reduced together. Equal to the layout block size except
// for FP16, which is consumed in runs of 32.
std::uint32_t kernel_block_size(const Layout& layout);

// Each row keeps three accumulators of 8 float lanes: even, odd and mins.
// Sub-blocks are visited in ascending order. Sub-block t multiplies its codes
// against x into a partial (lane-wise, groups of 8 in order), then
//   acc[t % 2] = fma(partial, scale, acc[t % 2]).
// Asymmetric blocks on rows that start on a block boundary then add
//   mins = fma(min[8g..8g+8), s[8g..8g+8), mins)
// for each group g of eight sub-blocks, where s_j is the lane-reduced sum of
// x over sub-block j. Other rows add mins = fma(sum(x over the piece), min,
// mins) after each row/sub-block piece. The row value is the fixed-tree lane
// reduction of (even + odd) + mins. Both modes and every worker count
// therefore give bit-identical results.
// y = W x; x has cols entries.
std::vector<float> gemv_quant(const QuantizedTensor& qt, std::span<const float> x, KernelOptions options = {});
std::vector<float> gemv_quant_serial(const QuantizedTensor& qt, std::span<const float> x,
                                     KernelMode mode = KernelMode::fused_per_block);

// Y = W X with X stored cols x batch (row-major); Y is rows x batch.
std::vector<float> gemm_quant(const QuantizedTensor& qt, std::span<const float> x, std::size_t batch,
                              KernelOptions options = {});
std::vector<float> gemm_quant_serial(const QuantizedTensor& qt, std::span<const float> x, std::size_t batch,
                                     KernelMode mode = KernelMode::fused_per_block);

// Token-major variant used by the layer simulation: xs holds batch vectors of
// cols entries, ys receives batch vectors of rows entries.
void gemm_tokens(const QuantizedTensor& qt, const float* xs, std::size_t batch, float* ys, KernelOptions options,
                 bool parallel = true);

}  // namespace qb
