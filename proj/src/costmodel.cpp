// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#include "qmop/costmodel.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "qmop/errors.hpp"

namespace qmop::cost {

namespace {
constexpr double kGiga = 1e9;
}

LlmCostAnchors llava_anchors() { return {{576.0, 3.82}, {144.0, 0.94}, 302.0 / 576.0}; }

LlmCostFit fit_llm_model(const LlmCostAnchors& anchors) {
  const auto [n1, c1] = anchors.anchor_a;
  const auto [n2, c2] = anchors.anchor_b;
  if (!(n1 > 0.0) || !(n2 > 0.0)) throw DomainError("cost anchors need positive token counts");
  // | n1  n1^2 | |a|   |c1|
  // | n2  n2^2 | |b| = |c2|
  const double det = n1 * n2 * n2 - n2 * n1 * n1;
  if (det == 0.0) throw DomainError("cost anchors have identical token counts");
  LlmCostFit fit;
  fit.linear = (c1 * n2 * n2 - c2 * n1 * n1) / det;
  fit.quadratic = (n1 * c2 - n2 * c1) / det;
  if (!(fit.linear > 0.0)) {
    throw DomainError("cost fit produced a nonpositive per-token coefficient");
  }
  return fit;
}

double llm_cost(double n_tokens, const LlmCostFit& fit) {
  return fit.linear * n_tokens + fit.quadratic * n_tokens * n_tokens;
}

double kv_cache(double n_tokens, const LlmCostAnchors& anchors) {
  return n_tokens * anchors.kv_per_token;
}

double kv_cache(double n_tokens) { return kv_cache(n_tokens, llava_anchors()); }

double ProjectorCost::total_gflops() const {
  double total = out_mlp_gflops;
  for (double b : branch_gflops) total += b;
  return total;
}

double ProjectorCost::topk_gflops(std::size_t k) const {
  auto sorted = branch_gflops;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double total = out_mlp_gflops;
  for (std::size_t i = 0; i < std::min(k, sorted.size()); ++i) total += sorted[i];
  return total;
}

ProjectorCost projector_flops(const ProjectorCostDims& dims, std::size_t m_out) {
  ProjectorCost cost;
  if (m_out == 0) return cost;
  const double n = static_cast<double>(dims.n_in);
  const double m = static_cast<double>(m_out);
  const double c = static_cast<double>(dims.c_vis);
  const double c2 = static_cast<double>(dims.c_txt);
  const double d_llm = static_cast<double>(dims.d_llm);
  const double hidden = static_cast<double>(
      dims.router_hidden != 0 ? dims.router_hidden : (dims.c_vis + dims.c_txt + 1) / 2);

  // Key and value projections over all N tokens; every token falls in
  // exactly one pooling window, so window attention costs N*C per side.
  const double pool_macs = 2.0 * n * c * c + 2.0 * n * c;
  // Key/value projections plus M x N scores and M x N weighted sum.
  const double resample_macs = 2.0 * n * c * c + 2.0 * m * n * c;
  // Relevance map, then dot product and norm per token.
  const double prune_macs = n * c * c2 + 2.0 * n * c2;
  const double out_mlp_macs = m * c * c + m * c * d_llm;
  const double router_macs = hidden * (c + c2) + 3.0 * hidden +
                             static_cast<double>(dims.query_len) * dims.text_encoder_macs_per_token;

  cost.branch_gflops = {2.0 * pool_macs / kGiga, 2.0 * resample_macs / kGiga,
                        2.0 * prune_macs / kGiga};
  cost.out_mlp_gflops = 2.0 * out_mlp_macs / kGiga;
  cost.router_gflops = 2.0 * router_macs / kGiga;
  return cost;
}

CostReport cost_report(std::size_t n_tokens, const ProjectorCostDims& dims,
                       const LlmCostAnchors& anchors) {
  const LlmCostFit fit = fit_llm_model(anchors);
  CostReport report;
  report.n_tokens = n_tokens;
  report.llm_tflops = llm_cost(static_cast<double>(n_tokens), fit);
  report.kv_cache_m = kv_cache(static_cast<double>(n_tokens), anchors);
  report.projector = projector_flops(dims, n_tokens);
  report.projector_gflops = report.projector.total_gflops();
  report.router_gflops = report.projector.router_gflops;
  return report;
}

}  // namespace qmop::cost
