// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef QMOP_RNG_HPP
#define QMOP_RNG_HPP

#include <cstdint>

namespace qmop {

// Portable counter-based generator built on the SplitMix64 finalizer.
//
// For a seed s the stream is
//
//   key  = mix64(s)
//   x_i  = mix64(key + (i + 1) * 0x9E3779B97F4A7C15),   i = 0, 1, 2, ...
//
// where mix64 is the SplitMix64 output function
//
//   z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//   z ^= z >> 27; z *= 0x94D049BB133111EB;
//   z ^= z >> 31;
//
// All arithmetic is modulo 2^64, so the integer stream is bit-identical on
// every platform. Doubles are derived from the top 53 bits.
class CounterRng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit CounterRng(std::uint64_t seed) noexcept;

  std::uint64_t next_u64() noexcept;

  // [0, 1): (x >> 11) * 2^-53.
  double uniform01() noexcept;

  // (0, 1): ((x >> 11) + 0.5) * 2^-53. Never returns exactly 0 or 1.
  double uniform_open() noexcept;

  // Box-Muller pair from two uniform_open draws (u1, u2):
  //   r = sqrt(-2 ln u1), z0 = r cos(2 pi u2), z1 = r sin(2 pi u2).
  // Returns z0 and buffers z1 for the following call.
  double gaussian() noexcept;

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t mix64(std::uint64_t z) noexcept;

// Independent child seed for a named sub-stream:
//   mix64(seed + (tag + 1) * 0xD1B54A32D192ED03).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept;

}  // namespace qmop

#endif  // QMOP_RNG_HPP
