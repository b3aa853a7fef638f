#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace qb {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Output for a
// given (key, counter) is a pure function, which is what makes synthetic
// tensors reproducible independent of generation order or thread count.
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;

  explicit constexpr Philox4x32(std::uint64_t key)
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)} {}

  constexpr Block operator()(Block counter) const {
    std::array<std::uint32_t, 2> key = key_;
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = std::uint64_t{kMul0} * counter[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * counter[2];
      counter = {static_cast<std::uint32_t>(p1 >> 32) ^ counter[1] ^ key[0],
                 static_cast<std::uint32_t>(p1),
                 static_cast<std::uint32_t>(p0 >> 32) ^ counter[3] ^ key[1],
                 static_cast<std::uint32_t>(p0)};
    }
    return counter;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  std::array<std::uint32_t, 2> key_;
};

// Standard-normal stream addressed by (seed, stream, index). Four variates per
// Philox call via Box-Muller on 32-bit uniforms in the open interval (0, 1).
class GaussianStream {
 public:
  GaussianStream(std::uint64_t seed, std::uint64_t stream) : gen_(seed), stream_(stream) {}

  std::array<double, 4> block(std::uint64_t block_index) const {
    const auto r = gen_({static_cast<std::uint32_t>(block_index),
                         static_cast<std::uint32_t>(block_index >> 32),
                         static_cast<std::uint32_t>(stream_),
                         static_cast<std::uint32_t>(stream_ >> 32)});
    const auto uniform = [](std::uint32_t v) { return (double(v) + 0.5) * 0x1p-32; };
    std::array<double, 4> out{};
    for (int pair = 0; pair < 2; ++pair) {
      const double radius = std::sqrt(-2.0 * std::log(uniform(r[2 * pair])));
      const double angle = 2.0 * std::numbers::pi * uniform(r[2 * pair + 1]);
      out[2 * pair] = radius * std::cos(angle);
      out[2 * pair + 1] = radius * std::sin(angle);
    }
    return out;
  }

  double at(std::uint64_t index) const { return block(index / 4)[index % 4]; }

  // Fills out[i] = at(offset + i).
  template <typename Float>
  void fill(Float* out, std::uint64_t count, std::uint64_t offset = 0) const {
    std::uint64_t i = 0;
    while (i < count) {
      const std::uint64_t index = offset + i;
      const auto values = block(index / 4);
      for (std::uint64_t lane = index % 4; lane < 4 && i < count; ++lane, ++i) {
        out[i] = static_cast<Float>(values[lane]);
      }
    }
  }

 private:
  Philox4x32 gen_;
  std::uint64_t stream_;
};

}  // namespace qb
