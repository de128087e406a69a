// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef QMOP_PIPELINE_HPP
#define QMOP_PIPELINE_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qmop/branches.hpp"
#include "qmop/bundle.hpp"
#include "qmop/router.hpp"

namespace qmop {

struct ProjectorDims {
  std::uint32_t grid_h = 4;
  std::uint32_t grid_w = 4;
  std::uint32_t c_vis = 8;
  std::uint32_t c_txt = 6;
  std::size_t d_llm = 8;
  std::size_t m_tokens = 4;
  std::size_t pool_stride = 2;
  std::size_t router_hidden = 0;  // 0: ceil((c_vis + c_txt) / 2)

  std::size_t num_tokens() const { return static_cast<std::size_t>(grid_h) * grid_w; }
  std::size_t resolved_router_hidden() const {
    return router_hidden != 0 ? router_hidden : (c_vis + c_txt + 1) / 2;
  }
};

// Throws ConfigError when the grid is not divisible by the stride, when M
// differs from the pooled grid size, or when any width is zero.
void validate_dims(const ProjectorDims& dims);

struct ProjectorOptions {
  double lambda = 0.5;
  RelevanceMetric metric = RelevanceMetric::kCosine;
  Activation activation = Activation::kGelu;
  bool shared_pool_projection = false;
};

// Linear -> activation -> linear.
struct Mlp {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
};

struct MlpTrace {
  Matrix input;
  Matrix hidden_pre;
  Matrix hidden;
};

Matrix mlp_forward(const Mlp& mlp, Activation act, const Matrix& x, MlpTrace* trace = nullptr);

struct ProjectorParams {
  PruneConfig prune;
  RelevanceMap relevance;
  ResamplerParams resampler;
  PoolParams pool;
  RouterParams router;
  Mlp stage1_mlp;  // 3C -> 3C -> D_llm
  Mlp out_mlp;     // C -> C -> D_llm
  Activation mlp_activation = Activation::kGelu;
  std::size_t m_tokens = 0;
};

// Seeded initialization: weight matrices ~ N(0, 1/fan_in), biases zero,
// query maps ~ N(0, 1). Each tensor draws from its own derive_seed sub-stream.
ProjectorParams init_params(const ProjectorDims& dims, const ProjectorOptions& options,
                            std::uint64_t seed);

// Same shapes and configuration as params, every learnable entry zero.
ProjectorParams zeros_like(const ProjectorParams& params);

using TensorVisitor = std::function<void(std::string_view name, std::span<double> data)>;
using ConstTensorVisitor = std::function<void(std::string_view name, std::span<const double> data)>;

// Visits every learnable tensor in a fixed order with a stable name. The
// pooled value projection is skipped when it is shared with the keys.
void visit_tensors(ProjectorParams& params, const TensorVisitor& visit);
void visit_tensors(const ProjectorParams& params, const ConstTensorVisitor& visit);
std::vector<std::string> tensor_names(const ProjectorParams& params);

using BranchOutputs = std::array<std::optional<CompressedTokens>, kNumBranches>;

// Number of times each compression operator ran.
struct BranchInvocations {
  std::array<std::size_t, kNumBranches> count{};
  std::size_t operator[](Branch b) const { return count[index_of(b)]; }
};

struct BranchTraces {
  ResampleTrace resample;
  std::vector<PoolWindowTrace> pool;
};

CompressedTokens run_branch(const FeatureBundle& bundle, const ProjectorParams& params, Branch b,
                            BranchInvocations* counters = nullptr, BranchTraces* traces = nullptr);

BranchOutputs run_branches(const FeatureBundle& bundle, const ProjectorParams& params,
                           BranchInvocations* counters = nullptr, BranchTraces* traces = nullptr);

// sum_b weights[b] * outputs[b], row i of every branch aligned. Branches
// with zero weight may be absent.
Matrix fuse(const BranchOutputs& outputs, const std::array<double, kNumBranches>& weights);

enum class ForwardMode { kStage1, kTrain, kInfer };
std::string_view mode_name(ForwardMode mode);

struct ProjectedTokens {
  Matrix tokens;  // M x D_llm
  std::optional<GateWeights> gate;
  std::optional<ActiveSet> active;
  ForwardMode mode = ForwardMode::kInfer;
};

struct InferMode {
  enum class Kind { kTopK, kThreshold };
  Kind kind = Kind::kTopK;
  std::size_t k = 2;
  double theta = 0.2;

  static InferMode topk(std::size_t k) { return {Kind::kTopK, k, 0.2}; }
  static InferMode threshold(double theta) { return {Kind::kThreshold, 2, theta}; }

  // "topk:K" or "threshold:THETA".
  static InferMode parse(std::string_view text);
  std::string to_string() const;
};

// Everything the backward pass needs from one forward evaluation.
struct ForwardTrace {
  BranchOutputs outputs;
  BranchTraces branches;
  GateTrace gate_trace;
  GateWeights gate;
  Matrix mlp_input;  // stage 1: M x 3C concatenation; train: fused M x C
  MlpTrace mlp;
};

// Verifies bundle dimensions against the configured projector; throws
// ShapeError naming both sets of dimensions.
void check_bundle_fits(const FeatureBundle& bundle, const ProjectorParams& params);

ProjectedTokens stage1_forward(const FeatureBundle& bundle, const ProjectorParams& params,
                               ForwardTrace* trace = nullptr);

ProjectedTokens train_forward(const FeatureBundle& bundle, const ProjectorParams& params,
                              double tau, double gumbel_scale, std::uint64_t seed,
                              ForwardTrace* trace = nullptr);

// Gate at tau = 1 without noise; only the active branches are executed.
ProjectedTokens infer_forward(const FeatureBundle& bundle, const ProjectorParams& params,
                              const InferMode& mode, BranchInvocations* counters = nullptr);

}  // namespace qmop

#endif  // QMOP_PIPELINE_HPP
