#include "quantbench/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include <omp.h>

#include "quantbench/bitpack.hpp"
#include "quantbench/error.hpp"
#include "quantbench/fp16.hpp"

#if defined(__AVX2__) && defined(__FMA__) && defined(__F16C__)
#define QB_KERNELS_AVX2 1
#include <immintrin.h>
#endif

namespace qb {

namespace {

constexpr std::uint32_t kFp16Run = 32;

// Eight float lanes. All arithmetic on weights goes through these helpers.
#ifdef QB_KERNELS_AVX2
struct Lanes {
  __m256 v;
};
inline Lanes lanes_zero() { return {_mm256_setzero_ps()}; }
inline Lanes lanes_load(const float* p) { return {_mm256_loadu_ps(p)}; }
inline Lanes lanes_mul(Lanes a, Lanes b) { return {_mm256_mul_ps(a.v, b.v)}; }
inline Lanes lanes_add(Lanes a, Lanes b) { return {_mm256_add_ps(a.v, b.v)}; }
inline Lanes lanes_fma(Lanes a, Lanes b, Lanes c) { return {_mm256_fmadd_ps(a.v, b.v, c.v)}; }
inline Lanes lanes_fma(Lanes a, float s, Lanes c) { return {_mm256_fmadd_ps(a.v, _mm256_set1_ps(s), c.v)}; }
inline void lanes_store(float* p, Lanes a) { _mm256_storeu_ps(p, a.v); }
#else
struct Lanes {
  float v[8];
};
inline Lanes lanes_zero() { return {}; }
inline Lanes lanes_load(const float* p) {
  Lanes r;
  std::memcpy(r.v, p, sizeof r.v);
  return r;
}
inline Lanes lanes_mul(Lanes a, Lanes b) {
  for (int j = 0; j < 8; ++j) a.v[j] *= b.v[j];
  return a;
}
inline Lanes lanes_add(Lanes a, Lanes b) {
  for (int j = 0; j < 8; ++j) a.v[j] += b.v[j];
  return a;
}
inline Lanes lanes_fma(Lanes a, Lanes b, Lanes c) {
  for (int j = 0; j < 8; ++j) c.v[j] = std::fma(a.v[j], b.v[j], c.v[j]);
  return c;
}
inline Lanes lanes_fma(Lanes a, float s, Lanes c) {
  for (int j = 0; j < 8; ++j) c.v[j] = std::fma(a.v[j], s, c.v[j]);
  return c;
}
inline void lanes_store(float* p, Lanes a) { std::memcpy(p, a.v, sizeof a.v); }
#endif

inline float lanes_reduce(Lanes a) {
  alignas(32) float v[8];
  lanes_store(v, a);
  return ((v[0] + v[4]) + (v[1] + v[5])) + ((v[2] + v[6]) + (v[3] + v[7]));
}

// Dot product of one sub-block (groups of 8 codes) against x, and the plain
// sum of x over the same positions. `Src` yields the float lanes of group g.
template <class Src>
inline Lanes sub_dot(const Src& src, const float* x, int groups) {
  Lanes p = lanes_mul(src(0), lanes_load(x));
  for (int g = 1; g < groups; ++g) p = lanes_fma(src(g), lanes_load(x + 8 * g), p);
  return p;
}

inline Lanes sub_sum(const float* x, int groups) {
  Lanes s = lanes_load(x);
  for (int g = 1; g < groups; ++g) s = lanes_add(s, lanes_load(x + 8 * g));
  return s;
}

struct FloatCodes {
  const float* q;
  Lanes operator()(int g) const { return lanes_load(q + 8 * g); }
};

float load_half(const std::uint8_t* p) {
  std::uint16_t h;
  std::memcpy(&h, p, sizeof h);
#ifdef QB_KERNELS_AVX2
  return _cvtsh_ss(h);
#else
  return half_to_float(h);
#endif
}

// Little-endian load of exactly B bytes as two overlapping in-bounds loads.
template <unsigned B>
inline std::uint64_t load_bytes(const std::uint8_t* p) {
  if constexpr (B == 8) {
    std::uint64_t v;
    std::memcpy(&v, p, 8);
    return v;
  } else if constexpr (B >= 4) {
    std::uint32_t lo, hi;
    std::memcpy(&lo, p, 4);
    std::memcpy(&hi, p + B - 4, 4);
    return lo | std::uint64_t{hi} << (8 * (B - 4));
  } else if constexpr (B >= 2) {
    std::uint16_t lo, hi;
    std::memcpy(&lo, p, 2);
    std::memcpy(&hi, p + B - 2, 2);
    return lo | std::uint64_t{hi} << (8 * (B - 2));
  } else {
    return p[0];
  }
}

// LSB-first stream of `count` (multiple of 8) fields; eight fields always
// span exactly B bytes.
template <unsigned B>
void unpack_stream(const std::uint8_t* src, unsigned count, std::uint32_t* out) {
  constexpr std::uint64_t mask = (std::uint64_t{1} << B) - 1u;
  for (unsigned g = 0; g < count / 8; ++g) {
    const std::uint64_t v = load_bytes<B>(src + g * B);
    for (unsigned k = 0; k < 8; ++k) out[8 * g + k] = static_cast<std::uint32_t>((v >> (k * B)) & mask);
  }
}

void unpack_stream(const std::uint8_t* src, unsigned bits, unsigned count, std::uint32_t* out) {
  switch (bits) {
    case 4: return unpack_stream<4>(src, count, out);
    case 6: return unpack_stream<6>(src, count, out);
    case 8: return unpack_stream<8>(src, count, out);
    default:
      for (unsigned i = 0; i < count; ++i) {
        std::uint32_t v = 0;
        for (unsigned b = 0; b < bits; ++b) {
          const unsigned bit = i * bits + b;
          v |= std::uint32_t((src[bit / 8] >> (bit % 8)) & 1u) << b;
        }
        out[i] = v;
      }
  }
}

#ifdef QB_KERNELS_AVX2
inline Lanes cvt_i8(__m128i v) { return {_mm256_cvtepi32_ps(_mm256_cvtepi8_epi32(v))}; }
inline Lanes cvt_u8(__m128i v) { return {_mm256_cvtepi32_ps(_mm256_cvtepu8_epi32(v))}; }

// 32 codes packed as nibbles: byte j holds codes j and j + 16.
struct Nibbles32 {
  Lanes g[4];
  Nibbles32(const std::uint8_t* src, bool is_signed) {
    const __m128i low = _mm_set1_epi8(0x0F);
    const __m128i v = _mm_loadu_si128(reinterpret_cast<const __m128i*>(src));
    __m128i lo = _mm_and_si128(v, low);
    __m128i hi = _mm_and_si128(_mm_srli_epi16(v, 4), low);
    if (is_signed) {
      const __m128i eight = _mm_set1_epi8(8);
      lo = _mm_sub_epi8(lo, eight);
      hi = _mm_sub_epi8(hi, eight);
      g[0] = cvt_i8(lo);
      g[1] = cvt_i8(_mm_srli_si128(lo, 8));
      g[2] = cvt_i8(hi);
      g[3] = cvt_i8(_mm_srli_si128(hi, 8));
    } else {
      g[0] = cvt_u8(lo);
      g[1] = cvt_u8(_mm_srli_si128(lo, 8));
      g[2] = cvt_u8(hi);
      g[3] = cvt_u8(_mm_srli_si128(hi, 8));
    }
  }
  Lanes operator()(int i) const { return g[i]; }
};

// 32 offset-binary bytes.
struct Bytes32 {
  Lanes g[4];
  explicit Bytes32(const std::uint8_t* src) {
    const __m128i bias = _mm_set1_epi8(static_cast<char>(0x80));  // offset-binary to two's complement
    const __m128i a = _mm_xor_si128(_mm_loadu_si128(reinterpret_cast<const __m128i*>(src)), bias);
    const __m128i b = _mm_xor_si128(_mm_loadu_si128(reinterpret_cast<const __m128i*>(src + 16)), bias);
    g[0] = cvt_i8(a);
    g[1] = cvt_i8(_mm_srli_si128(a, 8));
    g[2] = cvt_i8(b);
    g[3] = cvt_i8(_mm_srli_si128(b, 8));
  }
  Lanes operator()(int i) const { return g[i]; }
};

// permutevar8x32 reads only the low three bits of each index, so a table
// holding (i & mask) - offset turns shifted code bits into floats directly.
template <unsigned B>
inline __m256 code_table(int offset) {
  constexpr int mask = (1 << B) - 1;
  return _mm256_setr_ps(float((0 & mask) - offset), float((1 & mask) - offset), float((2 & mask) - offset),
                        float((3 & mask) - offset), float((4 & mask) - offset), float((5 & mask) - offset),
                        float((6 & mask) - offset), float((7 & mask) - offset));
}

// Half of a 2-bit group of 32: byte j holds codes j, j+8, j+16, j+24.
struct Crumbs16 {
  Lanes g[2];
  Crumbs16(const std::uint8_t* src, int half) {
    const __m256 table = code_table<2>(0);
    const __m256i v = _mm256_cvtepu8_epi32(_mm_loadl_epi64(reinterpret_cast<const __m128i*>(src)));
    const __m256i s0 = half == 0 ? v : _mm256_srli_epi32(v, 4);
    g[0] = {_mm256_permutevar8x32_ps(table, s0)};
    g[1] = {_mm256_permutevar8x32_ps(table, _mm256_srli_epi32(s0, 2))};
  }
  Lanes operator()(int i) const { return g[i]; }
};

struct Halves {
  const std::uint8_t* src;
  Lanes operator()(int g) const {
    return {_mm256_cvtph_ps(_mm_loadu_si128(reinterpret_cast<const __m128i*>(src + 16 * g)))};
  }
};
// Eight LSB-first codes of B bits starting at src (exactly B bytes).
template <unsigned B>
struct Stream {
  const std::uint8_t* src;
  int offset;
  const std::uint8_t* end;  // 8-byte reads are used while they stay below this
  Lanes operator()(int g) const {
    static const __m256i shuffle = [] {
      alignas(32) std::int8_t bytes[32];
      for (int k = 0; k < 8; ++k) {
        const int half = k / 4 * 16;
        const int lane = (k % 4) * 4;
        bytes[half + lane] = std::int8_t(k * B / 8);
        bytes[half + lane + 1] = std::int8_t(k * B / 8 + 1);
        bytes[half + lane + 2] = bytes[half + lane + 3] = -128;
      }
      return _mm256_load_si256(reinterpret_cast<const __m256i*>(bytes));
    }();
    static const __m256i shifts = _mm256_setr_epi32(0, B % 8, 2 * B % 8, 3 * B % 8, 4 * B % 8, 5 * B % 8,
                                                    6 * B % 8, 7 * B % 8);
    const std::uint8_t* at = src + g * B;
    __m256i wide;
    if (at + 8 <= end) {
      long long v;
      std::memcpy(&v, at, 8);
      wide = _mm256_set1_epi64x(v);
    } else {
      wide = _mm256_set1_epi64x(static_cast<long long>(load_bytes<B>(at)));
    }
    const __m256i bytes = _mm256_shuffle_epi8(wide, shuffle);
    if constexpr (B <= 3) {
      return {_mm256_permutevar8x32_ps(code_table<B>(offset), _mm256_srlv_epi32(bytes, shifts))};
    } else {
      __m256i codes = _mm256_and_si256(_mm256_srlv_epi32(bytes, shifts), _mm256_set1_epi32((1 << B) - 1));
      codes = _mm256_sub_epi32(codes, _mm256_set1_epi32(offset));
      return {_mm256_cvtepi32_ps(codes)};
    }
  }
};

// Float lanes of sub-block j of a block's code area, for layout kind K with
// B-bit codes.
template <LayoutKind K>
constexpr std::uint32_t kSub = K == LayoutKind::sym_k16x16 || K == LayoutKind::asym_k16x16 ? 16 : 32;

template <LayoutKind K, unsigned B>
auto sub_codes(const std::uint8_t* codes, std::uint32_t j, const std::uint8_t* end) {
  constexpr bool is_signed = K == LayoutKind::sym32 || K == LayoutKind::sym_k16x16;
  if constexpr (B == 4 && kSub<K> == 32) {
    return Nibbles32(codes + 16 * j, is_signed);
  } else if constexpr (B == 8 && kSub<K> == 32) {
    return Bytes32(codes + 32 * j);
  } else if constexpr (B == 2 && kSub<K> == 16) {
    return Crumbs16(codes + 8 * (j / 2), int(j % 2));
  } else {
    return Stream<B>{codes + j * kSub<K> * B / 8, is_signed ? 1 << (B - 1) : 0, end};
  }
}
#endif

// out[j] = field j of a `count` (multiple of 8) field stream times `super`.
void scaled_params(const std::uint8_t* src, unsigned bits, unsigned count, float super, float* out) {
#ifdef QB_KERNELS_AVX2
  const Lanes s{_mm256_set1_ps(super)};
  const auto run = [&](auto stream) {
    for (unsigned g = 0; g < count / 8; ++g) lanes_store(out + 8 * g, lanes_mul(stream(int(g)), s));
  };
  switch (bits) {
    case 4: return run(Stream<4>{src, 0, src});
    case 6: return run(Stream<6>{src, 0, src});
    case 8: return run(Stream<8>{src, 0, src});
    default: break;
  }
#endif
  std::uint32_t codes[32] = {};
  unpack_stream(src, bits, count, codes);
  for (unsigned j = 0; j < count; ++j) out[j] = float(codes[j]) * super;
}

// Row accumulator. Sub-block t of a row adds its scaled partial into even or
// odd by the parity of t; min terms have their own chain. The three are
// combined as (even + odd) + mins before the final lane reduction.
struct RowAcc {
  Lanes even = lanes_zero(), odd = lanes_zero(), mins = lanes_zero();
  std::uint64_t t = 0;  // next sub-block, for callers that track it here
  void add(std::uint64_t sub_index, Lanes partial, float scale) {
    Lanes& a = sub_index & 1 ? odd : even;
    a = lanes_fma(partial, scale, a);
  }
  void add_min(Lanes sum, float min) { mins = lanes_fma(sum, min, mins); }
  // Eight sub-block mins against their eight x sums at once.
  void add_mins(const float* min, const float* sums) { mins = lanes_fma(lanes_load(min), lanes_load(sums), mins); }
  float reduce() const { return lanes_reduce(lanes_add(lanes_add(even, odd), mins)); }
};

struct Plan;
using FusedRowFn = RowAcc (*)(const Plan&, std::uint32_t, const float*, const float*);
using DecodeCodesFn = void (*)(const std::uint8_t*, const std::uint8_t*, float*);
void select_fast_paths(Plan& p);

struct Plan {
  const QuantizedTensor& qt;
  const Layout& L;
  std::uint32_t k;    // kernel block
  std::uint32_t sub;  // sub-block
  std::uint32_t n_sub;
  bool asymmetric;
  bool aligned;  // every row starts on a kernel block boundary
  FusedRowFn fused_row = nullptr;        // single token, aligned rows only
  DecodeCodesFn decode_codes = nullptr;  // block code area to float codes
  std::uint64_t elements;

  explicit Plan(const QuantizedTensor& t)
      : qt(t),
        L(t.layout),
        k(kernel_block_size(t.layout)),
        sub(t.layout.kind == LayoutKind::fp16 ? kFp16Run : t.layout.sub_block_size()),
        n_sub(k / sub),
        asymmetric(t.layout.asymmetric()),
        aligned(t.shape.cols % k == 0),
        elements(t.shape.elements()) {
    select_fast_paths(*this);
  }

  std::uint64_t chunks_per_row() const { return qt.shape.cols / k; }

  void decode_params(const std::uint8_t* block, float* scale, float* min) const {
    switch (L.kind) {
      case LayoutKind::fp16:
        scale[0] = 1.0f;
        min[0] = 0.0f;
        return;
      case LayoutKind::sym32:
        scale[0] = load_half(block);
        min[0] = 0.0f;
        return;
      case LayoutKind::sym_k16x16: {
        const float super_scale = load_half(block);
        scaled_params(block + 2, L.param_bits, n_sub, super_scale, scale);
        std::fill(min, min + n_sub, 0.0f);
        return;
      }
      case LayoutKind::asym_k32x8:
      case LayoutKind::asym_k16x16: {
        const float super_scale = load_half(block);
        const float super_min = load_half(block + 2);
#ifdef QB_KERNELS_AVX2
        if (n_sub == 16 && L.param_bits == 4) {
          // 8 scale bytes then 8 min bytes; field 2i is the low nibble of byte i.
          const __m128i v = _mm_loadu_si128(reinterpret_cast<const __m128i*>(block + 4));
          const __m128i low = _mm_set1_epi8(0x0F);
          const __m128i lo = _mm_and_si128(v, low);
          const __m128i hi = _mm_and_si128(_mm_srli_epi16(v, 4), low);
          const __m128i sc = _mm_unpacklo_epi8(lo, hi);
          const __m128i mn = _mm_unpackhi_epi8(lo, hi);
          const Lanes ss{_mm256_set1_ps(super_scale)}, sm{_mm256_set1_ps(super_min)};
          lanes_store(scale, lanes_mul(cvt_u8(sc), ss));
          lanes_store(scale + 8, lanes_mul(cvt_u8(_mm_srli_si128(sc, 8)), ss));
          lanes_store(min, lanes_mul(cvt_u8(mn), sm));
          lanes_store(min + 8, lanes_mul(cvt_u8(_mm_srli_si128(mn, 8)), sm));
          return;
        }
#endif
        scaled_params(block + 4, L.param_bits, n_sub, super_scale, scale);
        scaled_params(block + 4 + n_sub * L.param_bits / 8, L.param_bits, n_sub, super_min, min);
        return;
      }
    }
  }

  // Integer-valued codes as floats plus per-sub-block parameters:
  // value[i] = q[i] * scale[i / sub] + min[i / sub].
  void decode(std::uint64_t chunk, float* q, float* scale, float* min) const {
    if (L.kind == LayoutKind::fp16) {
      const std::uint64_t first = chunk * kFp16Run;
      const auto count = static_cast<std::size_t>(std::min<std::uint64_t>(kFp16Run, elements - first));
      half_to_float(qt.payload.data() + 2 * first, q, count);
      decode_params(nullptr, scale, min);
      return;
    }
    const std::uint8_t* block = qt.block(chunk);
    decode_params(block, scale, min);
    if (decode_codes) {
      decode_codes(block + L.header_bytes(), qt.payload.data() + qt.payload.size(), q);
      return;
    }
    const int offset = asymmetric ? 0 : 1 << (L.code_bits - 1);
    alignas(32) std::uint8_t codes[256];
    unpack_codes_unchecked(block + L.header_bytes(), L.code_bits, k, codes);
    for (std::uint32_t i = 0; i < k; ++i) q[i] = float(int(codes[i]) - offset);
  }
};

// Per-token sums of x over every sub-block, for aligned asymmetric tensors.
// Asymmetric layouts are all super-blocks, so a block's sums fill whole lane
// groups.
std::vector<float> precompute_sums(const Plan& p, const float* xs, std::size_t batch) {
  if (!p.asymmetric || !p.aligned) return {};
  const std::uint32_t cols = p.qt.shape.cols;
  const std::uint32_t per_row = cols / p.sub;
  std::vector<float> sums(batch * per_row);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::uint32_t j = 0; j < per_row; ++j)
      sums[b * per_row + j] = lanes_reduce(sub_sum(xs + b * cols + std::size_t{j} * p.sub, int(p.sub / 8)));
  return sums;
}

struct Scratch {
  std::vector<float> q, scale, min;
  std::vector<RowAcc> acc;
};

// T tokens against one decoded block; code lanes are loaded once per group
// and shared. Per token the operations do not depend on T.
template <int T>
inline void accumulate_tokens(const Plan& p, std::uint64_t c, const float* q, const float* scale, const float* min,
                              const float* x, std::size_t x_stride, const float* sums, std::size_t sums_stride,
                              RowAcc* acc) {
  const int groups = int(p.sub / 8);
  for (std::uint32_t j = 0; j < p.n_sub; ++j) {
    const float* qj = q + j * p.sub;
    const float* xj = x + j * p.sub;
    Lanes part[T];
    Lanes qg = lanes_load(qj);
    for (int t = 0; t < T; ++t) part[t] = lanes_mul(qg, lanes_load(xj + t * x_stride));
    for (int g = 1; g < groups; ++g) {
      qg = lanes_load(qj + 8 * g);
      for (int t = 0; t < T; ++t) part[t] = lanes_fma(qg, lanes_load(xj + t * x_stride + 8 * g), part[t]);
    }
    for (int t = 0; t < T; ++t) acc[t].add(c * p.n_sub + j, part[t], scale[j]);
  }
  if (!p.asymmetric) return;
  for (int t = 0; t < T; ++t)
    for (std::uint32_t g = 0; g < p.n_sub; g += 8) acc[t].add_mins(min + g, sums + t * sums_stride + g);
}

#ifdef QB_KERNELS_AVX2
// Fused single-token rows decode codes straight into registers. Each must
// match accumulate_tokens on the decoded block operation for operation.
RowAcc fused_row_fp16(const Plan& p, std::uint32_t r, const float* x, const float*) {
  const std::uint8_t* base = p.qt.payload.data() + 2 * std::uint64_t{r} * p.qt.shape.cols;
  const std::uint64_t count = p.chunks_per_row();
  Lanes even = lanes_zero(), odd = lanes_zero();
  std::uint64_t c = 0;
  for (; c + 1 < count; c += 2) {
    even = lanes_fma(sub_dot(Halves{base + 64 * c}, x + c * kFp16Run, 4), 1.0f, even);
    odd = lanes_fma(sub_dot(Halves{base + 64 * (c + 1)}, x + (c + 1) * kFp16Run, 4), 1.0f, odd);
  }
  if (c < count) even = lanes_fma(sub_dot(Halves{base + 64 * c}, x + c * kFp16Run, 4), 1.0f, even);
  RowAcc acc;
  acc.even = even;
  acc.odd = odd;
  return acc;
}

template <LayoutKind K, unsigned B>
RowAcc fused_row(const Plan& p, std::uint32_t r, const float* x, const float* sums) {
  constexpr std::uint32_t sub = kSub<K>;
  constexpr std::uint32_t n_sub = K == LayoutKind::sym32 ? 1 : 256 / sub;
  constexpr std::uint32_t k = sub * n_sub;
  constexpr bool asym = K == LayoutKind::asym_k32x8 || K == LayoutKind::asym_k16x16;
  const std::uint64_t count = p.chunks_per_row();
  const std::size_t stride = p.L.block_bytes();
  const std::uint32_t header = p.L.header_bytes();
  const std::uint8_t* block = p.qt.payload.data() + std::uint64_t{r} * count * stride;
  const std::uint8_t* end = p.qt.payload.data() + p.qt.payload.size();
  Lanes even = lanes_zero(), odd = lanes_zero(), mins = lanes_zero();
  const auto partial = [&](const std::uint8_t* b, std::uint64_t c, std::uint32_t j) {
    return sub_dot(sub_codes<K, B>(b + header, j, end), x + c * k + j * sub, int(sub / 8));
  };
  if constexpr (K == LayoutKind::sym32) {
    std::uint64_t c = 0;
    for (; c + 1 < count; c += 2, block += 2 * stride) {
      even = lanes_fma(partial(block, c, 0), load_half(block), even);
      odd = lanes_fma(partial(block + stride, c + 1, 0), load_half(block + stride), odd);
    }
    if (c < count) even = lanes_fma(partial(block, c, 0), load_half(block), even);
  } else {
    alignas(32) float scale[16], min[16];
    for (std::uint64_t c = 0; c < count; ++c, block += stride) {
      p.decode_params(block, scale, min);
      for (std::uint32_t j = 0; j < n_sub; j += 2) {
        even = lanes_fma(partial(block, c, j), scale[j], even);
        odd = lanes_fma(partial(block, c, j + 1), scale[j + 1], odd);
      }
      if constexpr (asym) {
        for (std::uint32_t g = 0; g < n_sub; g += 8)
          mins = lanes_fma(lanes_load(min + g), lanes_load(sums + c * n_sub + g), mins);
      }
    }
  }
  RowAcc acc;
  acc.even = even;
  acc.odd = odd;
  acc.mins = mins;
  return acc;
}

template <LayoutKind K, unsigned B>
void decode_codes(const std::uint8_t* codes, const std::uint8_t* end, float* q) {
  constexpr std::uint32_t sub = kSub<K>;
  constexpr std::uint32_t k = K == LayoutKind::sym32 ? 32 : 256;
  for (std::uint32_t j = 0; j < k / sub; ++j) {
    const auto src = sub_codes<K, B>(codes, j, end);
    for (std::uint32_t g = 0; g < sub / 8; ++g) lanes_store(q + j * sub + 8 * g, src(int(g)));
  }
}

template <LayoutKind K, unsigned B>
bool try_select(Plan& p) {
  if (p.L.kind != K || p.L.code_bits != B) return false;
  p.decode_codes = decode_codes<K, B>;
  if (p.aligned) p.fused_row = fused_row<K, B>;
  return true;
}

void select_fast_paths(Plan& p) {
  if (p.L.kind == LayoutKind::fp16) {
    if (p.aligned) p.fused_row = fused_row_fp16;
    return;
  }
  using enum LayoutKind;
  try_select<sym32, 8>(p) || try_select<sym32, 5>(p) || try_select<sym32, 4>(p) || try_select<asym_k32x8, 5>(p) ||
      try_select<asym_k32x8, 4>(p) || try_select<sym_k16x16, 6>(p) || try_select<sym_k16x16, 3>(p) ||
      try_select<asym_k16x16, 2>(p);
}
#else
void select_fast_paths(Plan&) {}
#endif

void aligned_row(const Plan& p, std::uint32_t r, const float* xs, std::size_t batch, float* ys, KernelMode mode,
                 const std::vector<float>& sums, Scratch& s) {
  const std::uint32_t cols = p.qt.shape.cols;
  const std::uint32_t rows = p.qt.shape.rows;
  const std::uint64_t count = p.chunks_per_row();
  const std::uint64_t first = std::uint64_t{r} * count;
  const std::size_t sums_per_token = cols / p.sub;
  const auto token_sums = [&](std::size_t b, std::uint64_t c) {
    return sums.empty() ? nullptr : sums.data() + b * sums_per_token + c * p.n_sub;
  };

#ifdef QB_KERNELS_AVX2
  if (mode == KernelMode::fused_per_block && batch == 1 && p.fused_row) {
    ys[r] = p.fused_row(p, r, xs, token_sums(0, 0)).reduce();
    return;
  }
#endif
  for (std::size_t b = 0; b < batch; ++b) s.acc[b] = RowAcc{};
  const auto all_tokens = [&](std::uint64_t c, const float* q, const float* scale, const float* min) {
    std::size_t b = 0;
    for (; b + 4 <= batch; b += 4) {
      accumulate_tokens<4>(p, c, q, scale, min, xs + b * cols + c * p.k, cols, token_sums(b, c), sums_per_token,
                           &s.acc[b]);
    }
    for (; b < batch; ++b) {
      accumulate_tokens<1>(p, c, q, scale, min, xs + b * cols + c * p.k, cols, token_sums(b, c), sums_per_token,
                           &s.acc[b]);
    }
  };
  if (mode == KernelMode::fused_per_block) {
    alignas(32) float q[256];
    float scale[16], min[16];
    for (std::uint64_t c = 0; c < count; ++c) {
      p.decode(first + c, q, scale, min);
      all_tokens(c, q, scale, min);
    }
  } else {
    for (std::uint64_t c = 0; c < count; ++c) {
      p.decode(first + c, s.q.data() + c * p.k, s.scale.data() + c * p.n_sub, s.min.data() + c * p.n_sub);
    }
    for (std::uint64_t c = 0; c < count; ++c) {
      all_tokens(c, s.q.data() + c * p.k, s.scale.data() + c * p.n_sub, s.min.data() + c * p.n_sub);
    }
  }
  for (std::size_t b = 0; b < batch; ++b) ys[b * rows + r] = s.acc[b].reduce();
}

// Rows that straddle kernel blocks: each (row, sub-block) intersection is
// zero-padded to whole lane groups.
void unaligned_piece(const Plan& p, const float* q, float scale, float min, const float* x, std::uint32_t n,
                     RowAcc& acc) {
  alignas(32) float tq[256] = {};
  alignas(32) float tx[256] = {};
  std::memcpy(tq, q, n * sizeof(float));
  std::memcpy(tx, x, n * sizeof(float));
  const int groups = int((n + 7) / 8);
  acc.add(acc.t++, sub_dot(FloatCodes{tq}, tx, groups), scale);
  if (p.asymmetric) acc.add_min(sub_sum(tx, groups), min);
}

void unaligned_row(const Plan& p, std::uint32_t r, const float* xs, std::size_t batch, float* ys, KernelMode mode,
                   Scratch& s) {
  const std::uint32_t cols = p.qt.shape.cols;
  const std::uint32_t rows = p.qt.shape.rows;
  const std::uint64_t start = std::uint64_t{r} * cols;
  const std::uint64_t end = start + cols;
  const std::uint64_t first = start / p.k;
  const std::uint64_t last = (end - 1) / p.k;
  for (std::size_t b = 0; b < batch; ++b) s.acc[b] = RowAcc{};

  const auto chunk = [&](std::uint64_t c, const float* q, const float* scale, const float* min, std::size_t b) {
    const std::uint64_t base = c * p.k;
    const auto a = static_cast<std::uint32_t>(std::max(start, base) - base);
    const auto e = static_cast<std::uint32_t>(std::min(end, base + p.k) - base);
    const float* x = xs + b * cols + (base + a - start);
    for (std::uint32_t j = a / p.sub; j * p.sub < e; ++j) {
      const std::uint32_t p0 = std::max(a, j * p.sub);
      const std::uint32_t p1 = std::min(e, (j + 1) * p.sub);
      unaligned_piece(p, q + p0, scale[j], min[j], x + (p0 - a), p1 - p0, s.acc[b]);
    }
  };

  if (mode == KernelMode::fused_per_block) {
    alignas(32) float q[256];
    float scale[16], min[16];
    for (std::uint64_t c = first; c <= last; ++c) {
      p.decode(c, q, scale, min);
      for (std::size_t b = 0; b < batch; ++b) chunk(c, q, scale, min, b);
    }
  } else {
    for (std::uint64_t c = first; c <= last; ++c) {
      const std::size_t i = c - first;
      p.decode(c, s.q.data() + i * p.k, s.scale.data() + i * p.n_sub, s.min.data() + i * p.n_sub);
    }
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::uint64_t c = first; c <= last; ++c) {
        const std::size_t i = c - first;
        chunk(c, s.q.data() + i * p.k, s.scale.data() + i * p.n_sub, s.min.data() + i * p.n_sub, b);
      }
    }
  }
  for (std::size_t b = 0; b < batch; ++b) ys[b * rows + r] = s.acc[b].reduce();
}

void run(const QuantizedTensor& qt, const float* xs, std::size_t batch, float* ys, KernelMode mode, int workers,
         bool parallel) {
  const Plan plan(qt);
  const auto sums = precompute_sums(plan, xs, batch);
  const auto rows = static_cast<std::int64_t>(qt.shape.rows);
  const int threads = workers > 0 ? workers : omp_get_max_threads();
  const std::size_t row_chunks = qt.shape.cols / plan.k + 2;
#pragma omp parallel num_threads(threads) if (parallel && threads > 1)
  {
    Scratch s;
    s.acc.resize(batch);
    if (mode == KernelMode::unpack_then_compute) {
      s.q.resize(row_chunks * plan.k);
      s.scale.resize(row_chunks * plan.n_sub);
      s.min.resize(row_chunks * plan.n_sub);
    }
#pragma omp for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r) {
      const auto row = static_cast<std::uint32_t>(r);
      if (plan.aligned) {
        aligned_row(plan, row, xs, batch, ys, mode, sums, s);
      } else {
        unaligned_row(plan, row, xs, batch, ys, mode, s);
      }
    }
  }
}

void check_input(const QuantizedTensor& qt, std::size_t got, std::size_t batch) {
  if (got != std::size_t{qt.shape.cols} * batch) {
    throw Error(ErrorCode::shape_mismatch, "tensor '" + qt.name + "' has " + std::to_string(qt.shape.cols) +
                                               " columns; input has " + std::to_string(got) + " values for batch " +
                                               std::to_string(batch));
  }
}

std::vector<float> gemv_impl(const QuantizedTensor& qt, std::span<const float> x, KernelMode mode, int workers,
                             bool parallel) {
  check_input(qt, x.size(), 1);
  std::vector<float> y(qt.shape.rows);
  run(qt, x.data(), 1, y.data(), mode, workers, parallel);
  return y;
}

std::vector<float> gemm_impl(const QuantizedTensor& qt, std::span<const float> x, std::size_t batch, KernelMode mode,
                             int workers, bool parallel) {
  check_input(qt, x.size(), batch);
  if (batch == 0) return {};
  const std::size_t cols = qt.shape.cols;
  const std::size_t rows = qt.shape.rows;
  std::vector<float> xs(x.size());
  for (std::size_t c = 0; c < cols; ++c)
    for (std::size_t b = 0; b < batch; ++b) xs[b * cols + c] = x[c * batch + b];
  std::vector<float> ys(rows * batch);
  run(qt, xs.data(), batch, ys.data(), mode, workers, parallel);
  std::vector<float> y(rows * batch);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t b = 0; b < batch; ++b) y[r * batch + b] = ys[b * rows + r];
  return y;
}

}  // namespace

std::string_view to_string(KernelMode mode) {
  return mode == KernelMode::fused_per_block ? "fused_per_block" : "unpack_then_compute";
}

std::optional<KernelMode> kernel_mode_from_string(std::string_view name) {
  if (name == "fused_per_block" || name == "fused") return KernelMode::fused_per_block;
  if (name == "unpack_then_compute" || name == "unpack") return KernelMode::unpack_then_compute;
  return std::nullopt;
}

std::uint32_t kernel_block_size(const Layout& layout) {
  return layout.kind == LayoutKind::fp16 ? kFp16Run : layout.block_size();
}

std::vector<float> gemv_quant(const QuantizedTensor& qt, std::span<const float> x, KernelOptions options) {
  return gemv_impl(qt, x, options.mode, options.workers, true);
}

std::vector<float> gemv_quant_serial(const QuantizedTensor& qt, std::span<const float> x, KernelMode mode) {
  return gemv_impl(qt, x, mode, 1, false);
}

std::vector<float> gemm_quant(const QuantizedTensor& qt, std::span<const float> x, std::size_t batch,
                              KernelOptions options) {
  return gemm_impl(qt, x, batch, options.mode, options.workers, true);
}

std::vector<float> gemm_quant_serial(const QuantizedTensor& qt, std::span<const float> x, std::size_t batch,
                                     KernelMode mode) {
  return gemm_impl(qt, x, batch, mode, 1, false);
}

void gemm_tokens(const QuantizedTensor& qt, const float* xs, std::size_t batch, float* ys, KernelOptions options,
                 bool parallel) {
  if (batch == 0) return;
  run(qt, xs, batch, ys, options.mode, options.workers, parallel);
}

}  // namespace qb
