// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#include "qmop/digest.hpp"

#include <array>
#include <bit>
#include <cstdio>

#include "qmop/pipeline.hpp"

namespace qmop {

namespace {
template <typename U>
void update_le(Fnv1a64& h, U bits) {
  std::array<std::uint8_t, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<std::uint8_t>(bits >> (8 * i));
  h.update(bytes);
}
}  // namespace

void Fnv1a64::update(std::span<const std::uint8_t> bytes) noexcept {
  for (std::uint8_t b : bytes) {
    hash_ ^= b;
    hash_ *= 0x100000001b3ULL;
  }
}

void Fnv1a64::update_f32(double value) noexcept {
  update_le(*this, std::bit_cast<std::uint32_t>(static_cast<float>(value)));
}

void Fnv1a64::update_f64(double value) noexcept {
  update_le(*this, std::bit_cast<std::uint64_t>(value));
}

std::string Fnv1a64::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash_));
  return buf;
}

std::string digest_f32(const Matrix& m) {
  Fnv1a64 h;
  for (double x : m.data()) h.update_f32(x);
  return h.hex();
}

std::string digest_params(const ProjectorParams& params) {
  Fnv1a64 h;
  visit_tensors(params, [&](std::string_view, std::span<const double> data) {
    for (double x : data) h.update_f64(x);
  });
  return h.hex();
}

}  // namespace qmop
