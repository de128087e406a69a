// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "qmop/costmodel.hpp"
#include "qmop/errors.hpp"

namespace qmop::cost {
namespace {

// Two-anchor solve and row predictions computed with numpy.linalg.solve.
constexpr double kLinear = 0.006493055555555555;
constexpr double kQuadratic = 2.4112654320987676e-07;

TEST(LlmFit, SolvesAnchors) {
  const LlmCostFit fit = fit_llm_model(llava_anchors());
  EXPECT_NEAR(fit.linear, kLinear, 1e-15);
  EXPECT_NEAR(fit.quadratic, kQuadratic, 1e-18);
  EXPECT_NEAR(llm_cost(576, fit), 3.82, 1e-12);
  EXPECT_NEAR(llm_cost(144, fit), 0.94, 1e-12);
  EXPECT_EQ(llm_cost(0, fit), 0.0);
}

TEST(LlmFit, RecoversPureLinear) {
  const LlmCostFit fit = fit_llm_model({{100.0, 0.5}, {300.0, 1.5}, 1.0});
  EXPECT_NEAR(fit.linear, 0.005, 1e-15);
  EXPECT_NEAR(fit.quadratic, 0.0, 1e-12);
}

TEST(LlmFit, RejectsDegenerateAnchors) {
  EXPECT_THROW(fit_llm_model({{100.0, 0.5}, {100.0, 0.7}, 1.0}), DomainError);
  EXPECT_THROW(fit_llm_model({{0.0, 0.5}, {100.0, 0.7}, 1.0}), DomainError);
}

struct Row {
  double tokens;
  double tflops_exact;
  double tflops_table;
  double tflops_tol;
  double kv_table;
};

// Reference cost table rows; exact values from the numpy solve.
const Row kRows[] = {
    {576, 3.82, 3.82, 0.01, 302.0},
    {144, 0.94, 0.94, 0.01, 75.5},
    {64, 0.41654320987654314, 0.42, 0.01, 33.6},
    {36, 0.23406249999999998, 0.23, 0.01, 18.9},
    {16, 0.10395061728395061, 0.10, 0.01, 8.4},
    {4, 0.02597608024691358, 0.03, 0.005, 2.1},
};

TEST(LlmCost, ReproducesTableRows) {
  const LlmCostFit fit = fit_llm_model(llava_anchors());
  for (const Row& r : kRows) {
    EXPECT_NEAR(llm_cost(r.tokens, fit), r.tflops_exact, 1e-12) << r.tokens;
    EXPECT_NEAR(llm_cost(r.tokens, fit), r.tflops_table, r.tflops_tol) << r.tokens;
    EXPECT_NEAR(kv_cache(r.tokens), r.kv_table, 0.05) << r.tokens;
  }
  EXPECT_EQ(kv_cache(144), 75.5);
}

TEST(KvCache, ExactlyLinear) {
  for (double n = 0; n <= 1000; n += 37) {
    EXPECT_NEAR(kv_cache(n), 302.0 * n / 576.0, 1e-12);
    EXPECT_NEAR(kv_cache(2 * n), 2 * kv_cache(n), 1e-12);
  }
}

TEST(Projector, ZeroOutputIsZero) {
  const ProjectorCost c = projector_flops({}, 0);
  EXPECT_EQ(c.total_gflops(), 0.0);
  EXPECT_EQ(c.router_gflops, 0.0);
  ProjectorCostDims zero{0, 0, 0, 0, 0, 0, 0.0};
  EXPECT_EQ(projector_flops(zero, 4).total_gflops(), 0.0);
  EXPECT_EQ(projector_flops(zero, 4).router_gflops, 0.0);
}

TEST(Projector, DoublingChannelsQuadruplesProjection) {
  ProjectorCostDims d;
  const double m = 144.0;
  auto projection = [&](const ProjectorCostDims& dims) {
    const double attention = 2.0 * 2.0 * m * dims.n_in * dims.c_vis / 1e9;
    return projector_flops(dims, 144).branch_gflops[1] - attention;
  };
  const double base = projection(d);
  d.c_vis *= 2;
  EXPECT_NEAR(projection(d), 4.0 * base, 1e-9 * base);
}

TEST(Projector, LlavaScaleOrderOfMagnitude) {
  // Reference total is 7.29 GFLOPs; exact layer constants are unknown.
  const double total = projector_flops({}, 144).total_gflops();
  EXPECT_GT(total, 7.29 / 10.0);
  EXPECT_LT(total, 7.29 * 10.0);
}

TEST(Projector, MonotoneInEveryDimension) {
  const ProjectorCostDims base{64, 16, 12, 32, 8, 10, 100.0};
  const double ref_total = projector_flops(base, 16).total_gflops();
  const double ref_router = projector_flops(base, 16).router_gflops;
  auto bumped = [&](int which) {
    ProjectorCostDims d = base;
    switch (which) {
      case 0: d.n_in *= 2; break;
      case 1: d.c_vis *= 2; break;
      case 2: d.c_txt *= 2; break;
      case 3: d.d_llm *= 2; break;
      case 4: d.router_hidden *= 2; break;
      case 5: d.query_len *= 2; break;
      default: d.text_encoder_macs_per_token *= 2; break;
    }
    return projector_flops(d, 16);
  };
  for (int which = 0; which < 7; ++which) {
    const ProjectorCost c = bumped(which);
    EXPECT_GE(c.total_gflops(), ref_total) << which;
    EXPECT_GE(c.router_gflops, ref_router) << which;
  }
  EXPECT_GE(projector_flops(base, 32).total_gflops(), ref_total);
}

TEST(Projector, TopTwoCheaperThanTopThree) {
  for (std::size_t c : {4u, 64u, 1024u}) {
    ProjectorCostDims d;
    d.c_vis = c;
    const ProjectorCost cost = projector_flops(d, 64);
    EXPECT_LT(cost.topk_gflops(2), cost.topk_gflops(3));
    EXPECT_NEAR(cost.topk_gflops(3), cost.total_gflops(), 1e-12 * cost.total_gflops());
  }
}

TEST(Report, ZeroTokensAllZero) {
  const CostReport r = cost_report(0, {});
  EXPECT_EQ(r.llm_tflops, 0.0);
  EXPECT_EQ(r.kv_cache_m, 0.0);
  EXPECT_EQ(r.projector_gflops, 0.0);
  EXPECT_EQ(r.router_gflops, 0.0);
}

TEST(Report, AnchorRowReproducesItself) {
  const CostReport r = cost_report(576, {});
  EXPECT_NEAR(r.llm_tflops, 3.82, 1e-12);
  EXPECT_NEAR(r.kv_cache_m, 302.0, 1e-12);
}

}  // namespace
}  // namespace qmop::cost
