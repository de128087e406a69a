// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef QMOP_COSTMODEL_HPP
#define QMOP_COSTMODEL_HPP

#include <array>
#include <cstddef>

#include "qmop/branches.hpp"

namespace qmop::cost {

struct Anchor {
  double tokens = 0.0;
  double tflops = 0.0;
};

struct LlmCostAnchors {
  Anchor anchor_a;
  Anchor anchor_b;
  // KV-cache units per visual token; the unit is whatever the anchor table
  // reports ("M").
  double kv_per_token = 0.0;
};

// LLaVA-1.5-7B measurements: 576 tokens -> 3.82 TFLOPs / 302.0M KV cache,
// 144 tokens -> 0.94 TFLOPs.
LlmCostAnchors llava_anchors();

// cost(n) = linear * n + quadratic * n^2, in TFLOPs.
struct LlmCostFit {
  double linear = 0.0;
  double quadratic = 0.0;
};

// Exact solve through both anchors. Throws DomainError for coincident
// anchors or a nonpositive linear coefficient.
LlmCostFit fit_llm_model(const LlmCostAnchors& anchors);

double llm_cost(double n_tokens, const LlmCostFit& fit);

double kv_cache(double n_tokens, const LlmCostAnchors& anchors);
double kv_cache(double n_tokens);

struct ProjectorCostDims {
  std::size_t n_in = 576;     // visual tokens entering the projector
  std::size_t c_vis = 1024;   // CLIP ViT-L/14 width
  std::size_t c_txt = 768;    // text embedding width
  std::size_t d_llm = 4096;   // Vicuna-7B width
  std::size_t router_hidden = 0;  // 0: ceil((c_vis + c_txt) / 2)
  std::size_t query_len = 51;
  // Multiply-accumulates per query token spent producing t_EOS. Zero when
  // the EOS embedding is supplied precomputed.
  double text_encoder_macs_per_token = 0.0;
};

// GFLOPs (2 FLOPs per multiply-accumulate; softmax and activations excluded).
struct ProjectorCost {
  std::array<double, kNumBranches> branch_gflops{};  // pool, resample, prune
  double out_mlp_gflops = 0.0;
  double router_gflops = 0.0;

  // All three branches plus the shared output MLP (training and topk(3)).
  double total_gflops() const;
  // Worst case over active sets of k branches, plus output MLP.
  double topk_gflops(std::size_t k) const;
};

ProjectorCost projector_flops(const ProjectorCostDims& dims, std::size_t m_out);

struct CostReport {
  std::size_t n_tokens = 0;
  double llm_tflops = 0.0;
  double kv_cache_m = 0.0;
  double projector_gflops = 0.0;
  double router_gflops = 0.0;
  ProjectorCost projector;
};

// Cost of feeding n_tokens visual tokens to the anchored LLM, with the
// projector compressing dims.n_in tokens down to n_tokens.
CostReport cost_report(std::size_t n_tokens, const ProjectorCostDims& dims,
                       const LlmCostAnchors& anchors = llava_anchors());

}  // namespace qmop::cost

#endif  // QMOP_COSTMODEL_HPP
