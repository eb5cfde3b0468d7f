#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace volterra::rng {

// Philox4x32-10 (Salmon et al. 2011): a keyed bijection of a 128-bit counter, so any
// (seed, path, stream, index) maps to the same random words with no generator state
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> c, std::array<std::uint32_t, 2> k) {
  constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
  constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
  for (int r = 0; r < 10; ++r) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(M0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(M1) * c[2];
    c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
         static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
    k[0] += W0;
    k[1] += W1;
  }
  return c;
}

// standard normals addressed by (path, stream, index); stream 0 is the outer simulation,
// branches use 1 + inner index
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint64_t path, std::uint32_t stream)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        path_(path), stream_(stream) {}

  // two normals per counter block (Box-Muller on two 53-bit uniforms)
  void pair(std::uint32_t block, double& z0, double& z1) const {
    const auto w = philox4x32({block, stream_, static_cast<std::uint32_t>(path_), static_cast<std::uint32_t>(path_ >> 32)},
                              key_);
    const double u0 = ((static_cast<std::uint64_t>(w[0]) << 21 ^ (w[1] >> 11)) + 0.5) * 0x1p-53;
    const double u1 = ((static_cast<std::uint64_t>(w[2]) << 21 ^ (w[3] >> 11)) + 0.5) * 0x1p-53;
    const double r = std::sqrt(-2.0 * std::log(u0));
    z0 = r * std::cos(2.0 * std::numbers::pi * u1);
    z1 = r * std::sin(2.0 * std::numbers::pi * u1);
  }

  // fills out[0..n) with consecutive normals starting at index 2*first_block
  template <class It>
  void fill(std::uint32_t first_block, It out, std::size_t n) const {
    for (std::size_t i = 0; i < n; i += 2) {
      double a, b;
      pair(first_block + static_cast<std::uint32_t>(i / 2), a, b);
      out[i] = a;
      if (i + 1 < n) out[i + 1] = b;
    }
  }

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint64_t path_;
  std::uint32_t stream_;
};

// uniform in [0,1) for bootstrap resampling
inline double uniform(std::uint64_t seed, std::uint64_t a, std::uint32_t b, std::uint32_t c) {
  const auto w = philox4x32({c, b, static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32)},
                            {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
  return (static_cast<std::uint64_t>(w[0]) << 21 ^ (w[1] >> 11)) * 0x1p-53;
}

}  // namespace volterra::rng
