// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef QMOP_BRANCHES_HPP
#define QMOP_BRANCHES_HPP

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "qmop/bundle.hpp"
#include "qmop/matrix.hpp"

namespace qmop {

// Branch order is fixed everywhere: gate logits, fusion weights, tie breaks.
enum class Branch : std::size_t { kPool = 0, kResample = 1, kPrune = 2 };
inline constexpr std::size_t kNumBranches = 3;
inline constexpr std::array<Branch, kNumBranches> kAllBranches = {Branch::kPool, Branch::kResample,
                                                                  Branch::kPrune};

std::string_view branch_name(Branch b);
constexpr std::size_t index_of(Branch b) { return static_cast<std::size_t>(b); }

// How a projected token is compared with the EOS embedding.
enum class RelevanceMetric { kCosine, kNegEuclidean };

struct PruneConfig {
  double lambda = 0.5;
  std::size_t m_out = 1;
  RelevanceMetric metric = RelevanceMetric::kCosine;
};

// Maps visual channels into text space: g is C2 x C.
struct RelevanceMap {
  Matrix g;
};

struct ResamplerParams {
  Matrix queries;  // M x C
  Matrix w_k;      // C x C
  Matrix w_v;      // C x C
};

struct PoolParams {
  Matrix q2d;    // (h*w) x C, raster order over the h x w query grid
  Matrix phi_k;  // C x C
  Matrix phi_v;  // C x C, ignored when shared_projection is set
  std::size_t stride = 2;
  std::size_t query_h = 1;
  std::size_t query_w = 1;
  // Use phi_k for both keys and values.
  bool shared_projection = false;

  const Matrix& value_projection() const { return shared_projection ? phi_k : phi_v; }
};

struct CompressedTokens {
  Matrix tokens;  // M x C
  Branch origin = Branch::kPool;
  std::optional<std::vector<std::size_t>> kept_indices;  // prune only, ascending
};

// Min-max normalization to [0, 1]; a constant vector maps to all 0.5.
Vector minmax_normalize(const Vector& x);

// Raw (unnormalized) relevance of each token against the EOS embedding.
// Cosine with a zero-norm side is defined as 0.
Vector relevance_raw(const Matrix& tokens, const Vector& eos, const RelevanceMap& rel,
                     RelevanceMetric metric);

// lambda * minmax(cls_attention) + (1 - lambda) * minmax(relevance).
Vector prune_scores(const FeatureBundle& bundle, const RelevanceMap& rel, double lambda,
                    RelevanceMetric metric = RelevanceMetric::kCosine);

// Indices of the m_out largest scores, ties to the lower index, returned in
// ascending index order.
std::vector<std::size_t> top_m_indices(const Vector& scores, std::size_t m_out);

CompressedTokens prune_select(const Matrix& tokens, const Vector& scores, std::size_t m_out);

struct ResampleTrace {
  Matrix keys;
  Matrix values;
  Matrix probs;
};

CompressedTokens resample(const Matrix& tokens, const ResamplerParams& params,
                          ResampleTrace* trace = nullptr);

struct PoolWindowTrace {
  std::vector<std::size_t> token_indices;  // raster indices of the window's s*s tokens
  Matrix window;                           // s*s x C
  Matrix keys;
  Matrix values;
  Matrix probs;  // 1 x s*s
};

// Raster indices of the window belonging to query cell (i, j).
std::vector<std::size_t> pool_window_indices(std::size_t grid_w, std::size_t stride, std::size_t i,
                                             std::size_t j);

CompressedTokens pool_local(const FeatureBundle& bundle, const PoolParams& params,
                            std::vector<PoolWindowTrace>* trace = nullptr);

}  // namespace qmop

#endif  // QMOP_BRANCHES_HPP
