// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef QMOP_TRAINER_HPP
#define QMOP_TRAINER_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qmop/bundle.hpp"
#include "qmop/pipeline.hpp"

namespace qmop {

// Exponential temperature and Gumbel-scale decay with a temperature floor.
// Defaults are illustrative, not tuned.
struct AnnealSchedule {
  double tau0 = 5.0;
  double tau_min = 0.5;
  double decay = 0.995;
  double gumbel0 = 1.0;
  double gumbel_decay = 0.995;
};

void validate_schedule(const AnnealSchedule& schedule);

// max(tau_min, tau0 * decay^step)
double tau_at(const AnnealSchedule& schedule, std::size_t step);
// gumbel0 * gumbel_decay^step
double gumbel_scale_at(const AnnealSchedule& schedule, std::size_t step);

// Mean squared error over all entries.
double loss(const ProjectedTokens& output, const Matrix& target);
double mse(const Matrix& output, const Matrix& target);

// Which forward pass to differentiate. In train mode the Gumbel noise drawn
// from seed is a constant of the objective.
struct GradMode {
  ForwardMode stage = ForwardMode::kStage1;
  double tau = 1.0;
  double gumbel_scale = 0.0;
  std::uint64_t seed = 0;

  static GradMode stage1() { return {}; }
  static GradMode train(double tau, double gumbel_scale, std::uint64_t seed) {
    return {ForwardMode::kTrain, tau, gumbel_scale, seed};
  }
};

ProjectedTokens forward(const FeatureBundle& bundle, const ProjectorParams& params,
                        const GradMode& mode, ForwardTrace* trace = nullptr);

struct LossAndGrads {
  double loss = 0.0;
  ProjectorParams grads;
};

// Analytic gradient of the MSE objective with respect to every learnable
// tensor. The pruning selection is a fixed index set: gradients reach the
// kept token values, never the scores, so relevance.g always gets zero.
// Stage 1 leaves the router gradients at zero.
LossAndGrads backward(const FeatureBundle& bundle, const ProjectorParams& params,
                      const Matrix& target, const GradMode& mode);

// Per-tensor max relative error of backward() against central differences.
// At most max_coords coordinates per tensor are probed (evenly strided);
// 0 probes every coordinate.
std::map<std::string, double> gradient_check(const FeatureBundle& bundle,
                                             const ProjectorParams& params, const Matrix& target,
                                             const GradMode& mode, double eps = 1e-5,
                                             std::size_t max_coords = 0);

struct TrainConfig {
  int stage = 1;
  std::size_t steps = 200;
  double lr = 0.05;
  std::uint64_t seed = 0;
  std::vector<FeatureBundle> batch;
  std::vector<Matrix> targets;  // one M x D_llm target per bundle
  AnnealSchedule schedule;      // stage 2 only
  ProjectorParams params;       // starting point
  // Probed coordinates per tensor for the closing gradient check.
  std::size_t final_check_coords = 32;
};

struct TrainReport {
  int stage = 1;
  std::vector<double> losses;
  std::vector<double> taus;           // stage 2
  std::vector<double> gumbel_scales;  // stage 2
  // Noise-free gate entropy at each step's temperature, averaged over the
  // batch (stage 2).
  std::vector<double> gate_entropies;
  double initial_gate_entropy = 0.0;
  double final_gate_entropy = 0.0;
  double grad_check_max_rel_err = 0.0;
  std::string params_digest;
  ProjectorParams final_params;
};

// Plain gradient descent on the batch-mean loss. Throws DivergenceError if a
// loss becomes non-finite.
TrainReport train_toy(const TrainConfig& config);

// Regression targets produced by a teacher projector initialized from
// teacher_seed, run in the requested stage (noise-free, tau = 1 for stage 2).
std::vector<Matrix> teacher_targets(const std::vector<FeatureBundle>& batch,
                                    const ProjectorDims& dims, const ProjectorOptions& options,
                                    int stage, std::uint64_t teacher_seed);

}  // namespace qmop

#endif  // QMOP_TRAINER_HPP
