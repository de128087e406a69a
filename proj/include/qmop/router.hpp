// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef QMOP_ROUTER_HPP
#define QMOP_ROUTER_HPP

#include <array>
#include <cstdint>
#include <vector>

#include "qmop/branches.hpp"
#include "qmop/matrix.hpp"
#include "qmop/numerics.hpp"

namespace qmop {

// Two-layer gating MLP over concat(v_cls, t_eos).
// Output logits are ordered (pool, resample, prune).
struct RouterParams {
  Matrix w1;  // d x (C1 + C2)
  Vector b1;  // d
  Matrix w2;  // 3 x d
  Vector b2;  // 3
  Activation activation = Activation::kGelu;
};

struct GateWeights {
  std::array<double, kNumBranches> alpha{};
  // Pre-temperature logits, including Gumbel noise when applied.
  std::array<double, kNumBranches> logits{};
  double tau_used = 1.0;
  bool gumbel_applied = false;
};

struct ActiveSet {
  std::vector<Branch> members;  // in branch order
  std::vector<double> renorm_weights;

  bool contains(Branch b) const;
  // Renormalized weight for b, 0 when b is inactive.
  double weight(Branch b) const;
};

Vector build_context(const Vector& v_cls, const Vector& t_eos);

// Intermediates kept for the backward pass.
struct GateTrace {
  Vector context;
  Vector hidden_pre;  // w1 f + b1
  Vector hidden;      // sigma(hidden_pre)
  std::array<double, kNumBranches> noise{};
};

// Standard Gumbel(0, 1) draws for one gate evaluation: -log(-log(u)) with u
// from CounterRng(seed).uniform_open(), one per branch in branch order.
std::array<double, kNumBranches> gumbel_noise(std::uint64_t seed);

GateWeights gate_forward(const Vector& context, const RouterParams& params, double tau,
                         double gumbel_scale, std::uint64_t seed, GateTrace* trace = nullptr);

ActiveSet select_topk(const GateWeights& weights, std::size_t k);
ActiveSet select_threshold(const GateWeights& weights, double theta);

// Shannon entropy (nats) of the gate distribution.
double gate_entropy(const GateWeights& weights);

}  // namespace qmop

#endif  // QMOP_ROUTER_HPP
