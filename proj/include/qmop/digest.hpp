// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef QMOP_DIGEST_HPP
#define QMOP_DIGEST_HPP

#include <cstdint>
#include <span>
#include <string>

#include "qmop/matrix.hpp"

namespace qmop {

struct ProjectorParams;

// 64-bit FNV-1a.
class Fnv1a64 {
 public:
  void update(std::span<const std::uint8_t> bytes) noexcept;
  void update_f32(double value) noexcept;
  void update_f64(double value) noexcept;
  std::uint64_t value() const noexcept { return hash_; }
  // 16 lowercase hex digits.
  std::string hex() const;

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

// Hash of the little-endian float32 serialization of m (row-major).
std::string digest_f32(const Matrix& m);

// Hash of every learnable tensor as little-endian float64, in
// visit_tensors order.
std::string digest_params(const ProjectorParams& params);

}  // namespace qmop

#endif  // QMOP_DIGEST_HPP
