// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#include "qmop/branches.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qmop/errors.hpp"
#include "qmop/numerics.hpp"

namespace qmop {

std::string_view branch_name(Branch b) {
  switch (b) {
    case Branch::kPool:
      return "pool";
    case Branch::kResample:
      return "resample";
    case Branch::kPrune:
      return "prune";
  }
  return "unknown";
}

Vector minmax_normalize(const Vector& x) {
  Vector out(x.size(), 0.5);
  if (x.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - lo) / range;
  return out;
}

Vector relevance_raw(const Matrix& tokens, const Vector& eos, const RelevanceMap& rel,
                     RelevanceMetric metric) {
  if (rel.g.cols() != tokens.cols() || rel.g.rows() != eos.size()) {
    throw ShapeError("relevance map is " + rel.g.shape_string() + ", tokens have " +
                     std::to_string(tokens.cols()) + " channels and EOS has " +
                     std::to_string(eos.size()));
  }
  const Matrix projected = matmul_nt(tokens, rel.g);  // N x C2
  double eos_norm = 0.0;
  for (double e : eos) eos_norm += e * e;
  eos_norm = std::sqrt(eos_norm);

  Vector out(tokens.rows());
  for (std::size_t i = 0; i < projected.rows(); ++i) {
    auto p = projected.row(i);
    if (metric == RelevanceMetric::kCosine) {
      double num = 0.0;
      double norm = 0.0;
      for (std::size_t j = 0; j < p.size(); ++j) {
        num += p[j] * eos[j];
        norm += p[j] * p[j];
      }
      norm = std::sqrt(norm);
      out[i] = (norm == 0.0 || eos_norm == 0.0) ? 0.0 : num / (norm * eos_norm);
    } else {
      double dist = 0.0;
      for (std::size_t j = 0; j < p.size(); ++j) dist += (p[j] - eos[j]) * (p[j] - eos[j]);
      out[i] = -std::sqrt(dist);
    }
  }
  return out;
}

Vector prune_scores(const FeatureBundle& bundle, const RelevanceMap& rel, double lambda,
                    RelevanceMetric metric) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw DomainError("prune lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
  const Vector importance = minmax_normalize(bundle.cls_attention);
  const Vector relevance =
      minmax_normalize(relevance_raw(bundle.patches, bundle.eos_token, rel, metric));
  Vector out(importance.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = lambda * importance[i] + (1.0 - lambda) * relevance[i];
  }
  return out;
}

std::vector<std::size_t> top_m_indices(const Vector& scores, std::size_t m_out) {
  if (m_out < 1 || m_out > scores.size()) {
    throw DomainError("prune m_out must lie in [1, " + std::to_string(scores.size()) + "], got " +
                      std::to_string(m_out));
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  auto ranks_before = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m_out - 1),
                   order.end(), ranks_before);
  order.resize(m_out);
  std::sort(order.begin(), order.end());
  return order;
}

CompressedTokens prune_select(const Matrix& tokens, const Vector& scores, std::size_t m_out) {
  if (scores.size() != tokens.rows()) {
    throw ShapeError("prune_select: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(tokens.rows()) + " tokens");
  }
  auto kept = top_m_indices(scores, m_out);
  Matrix out(kept.size(), tokens.cols());
  for (std::size_t r = 0; r < kept.size(); ++r) {
    auto src = tokens.row(kept[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return {std::move(out), Branch::kPrune, std::move(kept)};
}

CompressedTokens resample(const Matrix& tokens, const ResamplerParams& params,
                          ResampleTrace* trace) {
  if (params.queries.cols() != tokens.cols() || params.w_k.cols() != tokens.cols() ||
      params.w_v.cols() != tokens.cols()) {
    throw ShapeError("resample: tokens are " + tokens.shape_string() + ", queries " +
                     params.queries.shape_string() + ", w_k " + params.w_k.shape_string() +
                     ", w_v " + params.w_v.shape_string());
  }
  Matrix keys = matmul_nt(tokens, params.w_k);
  Matrix values = matmul_nt(tokens, params.w_v);
  auto result = attention_with_probs(params.queries, keys, values);
  if (trace != nullptr) {
    trace->keys = std::move(keys);
    trace->values = std::move(values);
    trace->probs = std::move(result.probs);
  }
  return {std::move(result.output), Branch::kResample, std::nullopt};
}

std::vector<std::size_t> pool_window_indices(std::size_t grid_w, std::size_t stride, std::size_t i,
                                             std::size_t j) {
  std::vector<std::size_t> idx;
  idx.reserve(stride * stride);
  for (std::size_t r = stride * i; r < stride * (i + 1); ++r)
    for (std::size_t c = stride * j; c < stride * (j + 1); ++c) idx.push_back(r * grid_w + c);
  return idx;
}

CompressedTokens pool_local(const FeatureBundle& bundle, const PoolParams& params,
                            std::vector<PoolWindowTrace>* trace) {
  const std::size_t s = params.stride;
  const std::size_t h = params.query_h;
  const std::size_t w = params.query_w;
  if (s == 0 || bundle.grid_h != s * h || bundle.grid_w != s * w) {
    throw ShapeError("pool_local: grid H=" + std::to_string(bundle.grid_h) +
                     ", W=" + std::to_string(bundle.grid_w) + " is not stride s=" +
                     std::to_string(s) + " times the " + std::to_string(h) + "x" +
                     std::to_string(w) + " query grid");
  }
  const std::size_t c = bundle.patches.cols();
  if (params.q2d.rows() != h * w || params.q2d.cols() != c || params.phi_k.cols() != c ||
      params.value_projection().cols() != c) {
    throw ShapeError("pool_local: q2d " + params.q2d.shape_string() + " / phi " +
                     params.phi_k.shape_string() + " inconsistent with " + std::to_string(h * w) +
                     " queries of width " + std::to_string(c));
  }

  Matrix out(h * w, params.value_projection().rows());
  if (trace != nullptr) trace->assign(h * w, {});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t cell = i * w + j;
      auto idx = pool_window_indices(bundle.grid_w, s, i, j);
      Matrix window(idx.size(), c);
      for (std::size_t t = 0; t < idx.size(); ++t) {
        auto src = bundle.patches.row(idx[t]);
        std::copy(src.begin(), src.end(), window.row(t).begin());
      }
      Matrix keys = matmul_nt(window, params.phi_k);
      Matrix values = matmul_nt(window, params.value_projection());
      Matrix query = as_row(row_vector(params.q2d, cell));
      auto result = attention_with_probs(query, keys, values);
      auto src = result.output.row(0);
      std::copy(src.begin(), src.end(), out.row(cell).begin());
      if (trace != nullptr) {
        auto& t = (*trace)[cell];
        t.token_indices = std::move(idx);
        t.window = std::move(window);
        t.keys = std::move(keys);
        t.values = std::move(values);
        t.probs = std::move(result.probs);
      }
    }
  }
  return {std::move(out), Branch::kPool, std::nullopt};
}

}  // namespace qmop
