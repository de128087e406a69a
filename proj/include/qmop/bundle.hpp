// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef QMOP_BUNDLE_HPP
#define QMOP_BUNDLE_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qmop/matrix.hpp"

namespace qmop {

// One sample's projector inputs, produced by an external vision/text
// encoder (or by synth_bundle).
//
// patches is N x C in raster order over a grid_h x grid_w patch grid.
// cls_attention is the class token's attention over the N patches, already
// averaged over heads by the exporter.
struct FeatureBundle {
  std::uint32_t grid_h = 0;
  std::uint32_t grid_w = 0;
  std::uint32_t c_vis = 0;
  std::uint32_t c_txt = 0;
  Matrix patches;
  Vector cls_token;
  Vector eos_token;
  Vector cls_attention;
  std::optional<std::string> text_raw;

  std::size_t num_tokens() const noexcept {
    return static_cast<std::size_t>(grid_h) * grid_w;
  }

  friend bool operator==(const FeatureBundle&, const FeatureBundle&) = default;
};

// Throws ValidationError (or ShapeError for inconsistent dims) unless the
// bundle invariants hold. attention_tol bounds |sum(cls_attention) - 1|.
void validate_bundle(const FeatureBundle& bundle, double attention_tol = 1e-6);

// QMOPFT01 container, all integers and floats little-endian:
//
//   offset  size  field
//   0       8     magic "QMOPFT01"
//   8       4     grid_h (u32)
//   12      4     grid_w (u32)
//   16      4     c_vis  (u32)
//   20      4     c_txt  (u32)
//   24      4     flags  (u32, bit 0: text_raw present)
//   28      ...   patches       N*C   f32, row-major
//                 cls_token     C     f32
//                 eos_token     C2    f32
//                 cls_attention N     f32
//                 [text_len u32, text_len bytes UTF-8]   when flags bit 0
inline constexpr char kBundleMagic[8] = {'Q', 'M', 'O', 'P', 'F', 'T', '0', '1'};
inline constexpr std::size_t kBundleHeaderBytes = 28;
inline constexpr std::uint32_t kFlagTextRaw = 1u;

std::vector<std::uint8_t> encode_bundle(const FeatureBundle& bundle);
FeatureBundle decode_bundle(const std::vector<std::uint8_t>& bytes);

FeatureBundle read_bundle(const std::filesystem::path& path);
void write_bundle(const FeatureBundle& bundle, const std::filesystem::path& path);

// Rounds every float field to the nearest float32, i.e. the value that
// survives a write/read cycle.
FeatureBundle quantize_f32(const FeatureBundle& bundle);

// Deterministic gaussian features. Sub-streams of seed (see derive_seed):
//   tag 0: patches, tag 1: cls_token, tag 2: eos_token,
//   tag 3: attention logits (cls_attention = softmax of these).
FeatureBundle synth_bundle(std::uint64_t seed, std::uint32_t grid_h, std::uint32_t grid_w,
                           std::uint32_t c_vis, std::uint32_t c_txt);

}  // namespace qmop

#endif  // QMOP_BUNDLE_HPP
