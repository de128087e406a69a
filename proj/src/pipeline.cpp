// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#include "qmop/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "qmop/errors.hpp"
#include "qmop/numerics.hpp"
#include "qmop/rng.hpp"

namespace qmop {

namespace {

enum InitTag : std::uint64_t {
  kTagRelevance = 10,
  kTagResQueries,
  kTagResWk,
  kTagResWv,
  kTagPoolQ2d,
  kTagPoolPhiK,
  kTagPoolPhiV,
  kTagRouterW1,
  kTagRouterW2,
  kTagStage1W1,
  kTagStage1W2,
  kTagOutW1,
  kTagOutW2,
};

Matrix init_weight(std::uint64_t seed, InitTag tag, std::size_t rows, std::size_t cols) {
  const double sigma = 1.0 / std::sqrt(static_cast<double>(cols));
  return seeded_fill(derive_seed(seed, tag), rows, cols, Gaussian{sigma});
}

Mlp init_mlp(std::uint64_t seed, InitTag tag1, InitTag tag2, std::size_t in, std::size_t hidden,
             std::size_t out) {
  return {init_weight(seed, tag1, hidden, in), Vector(hidden), init_weight(seed, tag2, out, hidden),
          Vector(out)};
}

void zero(Matrix& m) { m = Matrix(m.rows(), m.cols()); }
void zero(Vector& v) { v = Vector(v.size()); }
void zero(Mlp& m) {
  zero(m.w1);
  zero(m.b1);
  zero(m.w2);
  zero(m.b2);
}

template <typename Params, typename Visitor>
void visit_impl(Params& p, const Visitor& visit) {
  visit("relevance.g", p.relevance.g.data());
  visit("resampler.queries", p.resampler.queries.data());
  visit("resampler.w_k", p.resampler.w_k.data());
  visit("resampler.w_v", p.resampler.w_v.data());
  visit("pool.q2d", p.pool.q2d.data());
  visit("pool.phi_k", p.pool.phi_k.data());
  if (!p.pool.shared_projection) visit("pool.phi_v", p.pool.phi_v.data());
  visit("router.w1", p.router.w1.data());
  visit("router.b1", p.router.b1.data());
  visit("router.w2", p.router.w2.data());
  visit("router.b2", p.router.b2.data());
  visit("stage1_mlp.w1", p.stage1_mlp.w1.data());
  visit("stage1_mlp.b1", p.stage1_mlp.b1.data());
  visit("stage1_mlp.w2", p.stage1_mlp.w2.data());
  visit("stage1_mlp.b2", p.stage1_mlp.b2.data());
  visit("out_mlp.w1", p.out_mlp.w1.data());
  visit("out_mlp.b1", p.out_mlp.b1.data());
  visit("out_mlp.w2", p.out_mlp.w2.data());
  visit("out_mlp.b2", p.out_mlp.b2.data());
}

Matrix concat_columns(const BranchOutputs& outputs) {
  const Matrix& first = outputs[0]->tokens;
  const std::size_t m = first.rows();
  const std::size_t c = first.cols();
  Matrix out(m, kNumBranches * c);
  for (std::size_t b = 0; b < kNumBranches; ++b) {
    const Matrix& part = outputs[b]->tokens;
    if (part.rows() != m || part.cols() != c) {
      throw ShapeError("branch outputs differ in shape: " + first.shape_string() + " vs " +
                       part.shape_string());
    }
    for (std::size_t i = 0; i < m; ++i) {
      auto src = part.row(i);
      std::copy(src.begin(), src.end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(b * c));
    }
  }
  return out;
}

}  // namespace

void validate_dims(const ProjectorDims& d) {
  if (d.grid_h == 0 || d.grid_w == 0 || d.c_vis == 0 || d.c_txt == 0 || d.d_llm == 0 ||
      d.m_tokens == 0 || d.pool_stride == 0) {
    throw ConfigError("all projector dimensions must be at least 1");
  }
  if (d.grid_h % d.pool_stride != 0 || d.grid_w % d.pool_stride != 0) {
    throw ConfigError("grid " + std::to_string(d.grid_h) + "x" + std::to_string(d.grid_w) +
                      " is not divisible by pool stride " + std::to_string(d.pool_stride));
  }
  const std::size_t pooled = (d.grid_h / d.pool_stride) * (d.grid_w / d.pool_stride);
  if (d.m_tokens != pooled) {
    throw ConfigError("m_tokens=" + std::to_string(d.m_tokens) + " but the pooled grid has " +
                      std::to_string(pooled) + " cells");
  }
  if (d.m_tokens > d.num_tokens()) throw ConfigError("m_tokens exceeds the number of patches");
}

Matrix mlp_forward(const Mlp& mlp, Activation act, const Matrix& x, MlpTrace* trace) {
  Matrix pre = linear(mlp.w1, mlp.b1, x);
  Matrix hidden = activate(act, pre);
  Matrix out = linear(mlp.w2, mlp.b2, hidden);
  if (trace != nullptr) {
    trace->input = x;
    trace->hidden_pre = std::move(pre);
    trace->hidden = std::move(hidden);
  }
  return out;
}

ProjectorParams init_params(const ProjectorDims& dims, const ProjectorOptions& options,
                            std::uint64_t seed) {
  validate_dims(dims);
  const std::size_t c = dims.c_vis;
  const std::size_t c2 = dims.c_txt;
  const std::size_t m = dims.m_tokens;
  const std::size_t d = dims.resolved_router_hidden();

  ProjectorParams p;
  p.m_tokens = m;
  p.mlp_activation = options.activation;
  p.prune = {options.lambda, m, options.metric};
  p.relevance.g = init_weight(seed, kTagRelevance, c2, c);

  p.resampler.queries = seeded_fill(derive_seed(seed, kTagResQueries), m, c, Gaussian{1.0});
  p.resampler.w_k = init_weight(seed, kTagResWk, c, c);
  p.resampler.w_v = init_weight(seed, kTagResWv, c, c);

  p.pool.stride = dims.pool_stride;
  p.pool.query_h = dims.grid_h / dims.pool_stride;
  p.pool.query_w = dims.grid_w / dims.pool_stride;
  p.pool.shared_projection = options.shared_pool_projection;
  p.pool.q2d = seeded_fill(derive_seed(seed, kTagPoolQ2d), m, c, Gaussian{1.0});
  p.pool.phi_k = init_weight(seed, kTagPoolPhiK, c, c);
  p.pool.phi_v = init_weight(seed, kTagPoolPhiV, c, c);

  p.router.activation = options.activation;
  p.router.w1 = init_weight(seed, kTagRouterW1, d, c + c2);
  p.router.b1 = Vector(d);
  p.router.w2 = init_weight(seed, kTagRouterW2, kNumBranches, d);
  p.router.b2 = Vector(kNumBranches);

  p.stage1_mlp = init_mlp(seed, kTagStage1W1, kTagStage1W2, 3 * c, 3 * c, dims.d_llm);
  p.out_mlp = init_mlp(seed, kTagOutW1, kTagOutW2, c, c, dims.d_llm);
  return p;
}

ProjectorParams zeros_like(const ProjectorParams& params) {
  ProjectorParams z = params;
  zero(z.relevance.g);
  zero(z.resampler.queries);
  zero(z.resampler.w_k);
  zero(z.resampler.w_v);
  zero(z.pool.q2d);
  zero(z.pool.phi_k);
  zero(z.pool.phi_v);
  zero(z.router.w1);
  zero(z.router.b1);
  zero(z.router.w2);
  zero(z.router.b2);
  zero(z.stage1_mlp);
  zero(z.out_mlp);
  return z;
}

void visit_tensors(ProjectorParams& params, const TensorVisitor& visit) {
  visit_impl(params, visit);
}

void visit_tensors(const ProjectorParams& params, const ConstTensorVisitor& visit) {
  visit_impl(params, visit);
}

std::vector<std::string> tensor_names(const ProjectorParams& params) {
  std::vector<std::string> names;
  visit_tensors(params, [&](std::string_view name, std::span<const double>) {
    names.emplace_back(name);
  });
  return names;
}

CompressedTokens run_branch(const FeatureBundle& bundle, const ProjectorParams& params, Branch b,
                            BranchInvocations* counters, BranchTraces* traces) {
  if (counters != nullptr) ++counters->count[index_of(b)];
  switch (b) {
    case Branch::kPool:
      return pool_local(bundle, params.pool, traces ? &traces->pool : nullptr);
    case Branch::kResample:
      return resample(bundle.patches, params.resampler, traces ? &traces->resample : nullptr);
    case Branch::kPrune: {
      const Vector scores =
          prune_scores(bundle, params.relevance, params.prune.lambda, params.prune.metric);
      return prune_select(bundle.patches, scores, params.prune.m_out);
    }
  }
  throw DomainError("unknown branch");
}

BranchOutputs run_branches(const FeatureBundle& bundle, const ProjectorParams& params,
                           BranchInvocations* counters, BranchTraces* traces) {
  BranchOutputs out;
  for (Branch b : kAllBranches) out[index_of(b)] = run_branch(bundle, params, b, counters, traces);
  for (Branch b : kAllBranches) {
    if (out[index_of(b)]->tokens.rows() != params.m_tokens) {
      throw ShapeError(std::string(branch_name(b)) + " branch produced " +
                       std::to_string(out[index_of(b)]->tokens.rows()) + " tokens, expected " +
                       std::to_string(params.m_tokens));
    }
  }
  return out;
}

Matrix fuse(const BranchOutputs& outputs, const std::array<double, kNumBranches>& weights) {
  const Matrix* shape = nullptr;
  for (std::size_t b = 0; b < kNumBranches; ++b) {
    if (!(weights[b] >= 0.0)) throw DomainError("fusion weights must be nonnegative");
    if (weights[b] > 0.0 && !outputs[b]) {
      throw ShapeError(std::string(branch_name(static_cast<Branch>(b))) +
                       " has positive fusion weight but was not computed");
    }
    if (outputs[b]) {
      const Matrix& t = outputs[b]->tokens;
      if (shape != nullptr && (t.rows() != shape->rows() || t.cols() != shape->cols())) {
        throw ShapeError("fuse: branch outputs " + shape->shape_string() + " and " +
                         t.shape_string() + " differ");
      }
      if (shape == nullptr) shape = &t;
    }
  }
  if (shape == nullptr) throw ShapeError("fuse: no branch outputs");
  Matrix out(shape->rows(), shape->cols());
  for (std::size_t b = 0; b < kNumBranches; ++b) {
    if (weights[b] > 0.0) axpy(weights[b], outputs[b]->tokens, out);
  }
  return out;
}

std::string_view mode_name(ForwardMode mode) {
  switch (mode) {
    case ForwardMode::kStage1:
      return "stage1";
    case ForwardMode::kTrain:
      return "train";
    case ForwardMode::kInfer:
      return "infer";
  }
  return "unknown";
}

InferMode InferMode::parse(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw DomainError("inference mode must be topk:K or threshold:THETA, got '" +
                      std::string(text) + "'");
  }
  const auto kind = text.substr(0, colon);
  const std::string value(text.substr(colon + 1));
  std::size_t consumed = 0;
  try {
    if (kind == "topk") {
      const long k = std::stol(value, &consumed);
      if (consumed != value.size() || k < 1 || k > 3) throw DomainError("");
      return topk(static_cast<std::size_t>(k));
    }
    if (kind == "threshold") {
      const double theta = std::stod(value, &consumed);
      if (consumed != value.size() || !(theta >= 0.0 && theta < 1.0)) throw DomainError("");
      return threshold(theta);
    }
  } catch (const std::exception&) {
  }
  throw DomainError("invalid inference mode '" + std::string(text) +
                    "' (expected topk:1..3 or threshold:[0,1))");
}

std::string InferMode::to_string() const {
  if (kind == Kind::kTopK) return "topk:" + std::to_string(k);
  std::ostringstream os;
  os << "threshold:" << theta;
  return os.str();
}

void check_bundle_fits(const FeatureBundle& bundle, const ProjectorParams& params) {
  const std::size_t c = params.resampler.queries.cols();
  const std::size_t c2 = params.relevance.g.rows();
  const std::size_t grid_h = params.pool.stride * params.pool.query_h;
  const std::size_t grid_w = params.pool.stride * params.pool.query_w;
  if (bundle.c_vis != c || bundle.c_txt != c2 || bundle.grid_h != grid_h ||
      bundle.grid_w != grid_w) {
    throw ShapeError("bundle dims (grid " + std::to_string(bundle.grid_h) + "x" +
                     std::to_string(bundle.grid_w) + ", c_vis " + std::to_string(bundle.c_vis) +
                     ", c_txt " + std::to_string(bundle.c_txt) + ") do not match projector (grid " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w) + ", c_vis " +
                     std::to_string(c) + ", c_txt " + std::to_string(c2) + ")");
  }
}

ProjectedTokens stage1_forward(const FeatureBundle& bundle, const ProjectorParams& params,
                               ForwardTrace* trace) {
  check_bundle_fits(bundle, params);
  BranchOutputs outputs = run_branches(bundle, params, nullptr, trace ? &trace->branches : nullptr);
  Matrix joined = concat_columns(outputs);
  ProjectedTokens out;
  out.mode = ForwardMode::kStage1;
  out.tokens = mlp_forward(params.stage1_mlp, params.mlp_activation, joined,
                           trace ? &trace->mlp : nullptr);
  if (trace != nullptr) {
    trace->outputs = std::move(outputs);
    trace->mlp_input = std::move(joined);
  }
  return out;
}

ProjectedTokens train_forward(const FeatureBundle& bundle, const ProjectorParams& params,
                              double tau, double gumbel_scale, std::uint64_t seed,
                              ForwardTrace* trace) {
  check_bundle_fits(bundle, params);
  const Vector context = build_context(bundle.cls_token, bundle.eos_token);
  GateWeights gate = gate_forward(context, params.router, tau, gumbel_scale, seed,
                                  trace ? &trace->gate_trace : nullptr);
  BranchOutputs outputs = run_branches(bundle, params, nullptr, trace ? &trace->branches : nullptr);
  Matrix fused = fuse(outputs, gate.alpha);

  ProjectedTokens out;
  out.mode = ForwardMode::kTrain;
  out.tokens =
      mlp_forward(params.out_mlp, params.mlp_activation, fused, trace ? &trace->mlp : nullptr);
  out.gate = gate;
  if (trace != nullptr) {
    trace->outputs = std::move(outputs);
    trace->gate = gate;
    trace->mlp_input = std::move(fused);
  }
  return out;
}

ProjectedTokens infer_forward(const FeatureBundle& bundle, const ProjectorParams& params,
                              const InferMode& mode, BranchInvocations* counters) {
  check_bundle_fits(bundle, params);
  const Vector context = build_context(bundle.cls_token, bundle.eos_token);
  const GateWeights gate = gate_forward(context, params.router, 1.0, 0.0, 0);
  ActiveSet active = mode.kind == InferMode::Kind::kTopK ? select_topk(gate, mode.k)
                                                         : select_threshold(gate, mode.theta);

  BranchOutputs outputs;
  std::array<double, kNumBranches> weights{};
  for (std::size_t i = 0; i < active.members.size(); ++i) {
    const Branch b = active.members[i];
    outputs[index_of(b)] = run_branch(bundle, params, b, counters);
    weights[index_of(b)] = active.renorm_weights[i];
  }
  const Matrix fused = fuse(outputs, weights);

  ProjectedTokens out;
  out.mode = ForwardMode::kInfer;
  out.tokens = mlp_forward(params.out_mlp, params.mlp_activation, fused);
  out.gate = gate;
  out.active = std::move(active);
  return out;
}

}  // namespace qmop
