// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#include "qmop/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qmop/errors.hpp"
#include "qmop/rng.hpp"

namespace qmop {

namespace {

ActiveSet renormalize(const GateWeights& weights, std::vector<Branch> members) {
  std::sort(members.begin(), members.end(),
            [](Branch a, Branch b) { return index_of(a) < index_of(b); });
  double total = 0.0;
  for (Branch b : members) total += weights.alpha[index_of(b)];
  ActiveSet set;
  set.members = std::move(members);
  for (Branch b : set.members) set.renorm_weights.push_back(weights.alpha[index_of(b)] / total);
  return set;
}

// Branch indices ordered by descending alpha, ties by branch order.
std::array<std::size_t, kNumBranches> ranked(const GateWeights& weights) {
  std::array<std::size_t, kNumBranches> order{};
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return weights.alpha[a] > weights.alpha[b];
  });
  return order;
}

}  // namespace

bool ActiveSet::contains(Branch b) const {
  return std::find(members.begin(), members.end(), b) != members.end();
}

double ActiveSet::weight(Branch b) const {
  for (std::size_t i = 0; i < members.size(); ++i)
    if (members[i] == b) return renorm_weights[i];
  return 0.0;
}

Vector build_context(const Vector& v_cls, const Vector& t_eos) {
  if (v_cls.empty() || t_eos.empty()) {
    throw ShapeError("build_context: class token has length " + std::to_string(v_cls.size()) +
                     " and EOS token has length " + std::to_string(t_eos.size()) +
                     "; both must be nonempty");
  }
  std::vector<double> f(v_cls.begin(), v_cls.end());
  f.insert(f.end(), t_eos.begin(), t_eos.end());
  return Vector(std::move(f));
}

std::array<double, kNumBranches> gumbel_noise(std::uint64_t seed) {
  CounterRng rng(seed);
  std::array<double, kNumBranches> g{};
  for (double& x : g) x = -std::log(-std::log(rng.uniform_open()));
  return g;
}

GateWeights gate_forward(const Vector& context, const RouterParams& params, double tau,
                         double gumbel_scale, std::uint64_t seed, GateTrace* trace) {
  if (!(tau > 0.0)) throw DomainError("gate temperature must be positive");
  if (!(gumbel_scale >= 0.0)) throw DomainError("gumbel scale must be nonnegative");
  if (params.w1.cols() != context.size() || params.b1.size() != params.w1.rows() ||
      params.w2.rows() != kNumBranches || params.w2.cols() != params.w1.rows() ||
      params.b2.size() != kNumBranches) {
    throw ShapeError("router parameters w1 " + params.w1.shape_string() + ", w2 " +
                     params.w2.shape_string() + " do not fit a context of length " +
                     std::to_string(context.size()));
  }

  const Matrix f = as_row(context);
  const Vector pre = row_vector(linear(params.w1, params.b1, f), 0);
  Vector hidden = pre;
  for (double& x : hidden.data()) x = activate(params.activation, x);
  const Vector raw = row_vector(linear(params.w2, params.b2, as_row(hidden)), 0);

  GateWeights out;
  out.tau_used = tau;
  out.gumbel_applied = gumbel_scale > 0.0;
  std::array<double, kNumBranches> noise{};
  if (out.gumbel_applied) noise = gumbel_noise(seed);
  for (std::size_t i = 0; i < kNumBranches; ++i) out.logits[i] = raw[i] + gumbel_scale * noise[i];

  const Vector alpha = softmax(Vector(std::vector<double>(out.logits.begin(), out.logits.end())), tau);
  for (std::size_t i = 0; i < kNumBranches; ++i) out.alpha[i] = alpha[i];

  if (trace != nullptr) {
    trace->context = context;
    trace->hidden_pre = pre;
    trace->hidden = std::move(hidden);
    for (std::size_t i = 0; i < kNumBranches; ++i) trace->noise[i] = gumbel_scale * noise[i];
  }
  return out;
}

ActiveSet select_topk(const GateWeights& weights, std::size_t k) {
  if (k < 1 || k > kNumBranches) {
    throw DomainError("top-k selection needs 1 <= k <= 3, got " + std::to_string(k));
  }
  const auto order = ranked(weights);
  std::vector<Branch> members;
  for (std::size_t i = 0; i < k; ++i) members.push_back(static_cast<Branch>(order[i]));
  return renormalize(weights, std::move(members));
}

ActiveSet select_threshold(const GateWeights& weights, double theta) {
  if (!(theta >= 0.0 && theta < 1.0)) {
    throw DomainError("threshold must lie in [0, 1), got " + std::to_string(theta));
  }
  std::vector<Branch> members;
  for (Branch b : kAllBranches)
    if (weights.alpha[index_of(b)] > theta) members.push_back(b);
  if (members.empty()) members.push_back(static_cast<Branch>(ranked(weights)[0]));
  return renormalize(weights, std::move(members));
}

double gate_entropy(const GateWeights& weights) {
  double h = 0.0;
  for (double a : weights.alpha)
    if (a > 0.0) h -= a * std::log(a);
  return h;
}

}  // namespace qmop
