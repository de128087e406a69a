// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#include "qmop/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "qmop/digest.hpp"
#include "qmop/errors.hpp"
#include "qmop/numerics.hpp"
#include "qmop/rng.hpp"

namespace qmop {

namespace {

std::span<double> tensor_by_name(ProjectorParams& params, std::string_view wanted) {
  std::span<double> found;
  visit_tensors(params, [&](std::string_view name, std::span<double> data) {
    if (name == wanted) found = data;
  });
  return found;
}

void add_into(Matrix& dst, const Matrix& src) { axpy(1.0, src, dst); }

void add_into(Vector& dst, const Vector& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Accumulates the MLP parameter gradients into grads and returns d(input).
Matrix mlp_backward(const Mlp& mlp, Activation act, const MlpTrace& trace, const Matrix& d_out,
                    Mlp& grads) {
  LinearGrads second = linear_backward(mlp.w2, trace.hidden, d_out);
  add_into(grads.w2, second.dw);
  add_into(grads.b2, second.db);
  Matrix d_pre = std::move(second.dx);
  auto pre = trace.hidden_pre.data();
  auto dp = d_pre.data();
  for (std::size_t i = 0; i < dp.size(); ++i) dp[i] *= activate_derivative(act, pre[i]);
  LinearGrads first = linear_backward(mlp.w1, trace.input, d_pre);
  add_into(grads.w1, first.dw);
  add_into(grads.b1, first.db);
  return std::move(first.dx);
}

void pool_backward(const ProjectorParams& params, const std::vector<PoolWindowTrace>& windows,
                   const Matrix& d_out, ProjectorParams& grads) {
  const PoolParams& pool = params.pool;
  Matrix& d_value_proj = pool.shared_projection ? grads.pool.phi_k : grads.pool.phi_v;
  for (std::size_t cell = 0; cell < windows.size(); ++cell) {
    const PoolWindowTrace& w = windows[cell];
    const Matrix query = as_row(row_vector(pool.q2d, cell));
    const Matrix d_cell = as_row(row_vector(d_out, cell));
    AttentionGrads g = attention_backward(query, w.keys, w.values, w.probs, d_cell);
    auto dq = g.dq.row(0);
    auto dst = grads.pool.q2d.row(cell);
    for (std::size_t j = 0; j < dq.size(); ++j) dst[j] += dq[j];
    add_into(grads.pool.phi_k, matmul_tn(g.dk, w.window));
    add_into(d_value_proj, matmul_tn(g.dv, w.window));
  }
}

void resample_backward(const ProjectorParams& params, const ResampleTrace& trace,
                       const Matrix& tokens, const Matrix& d_out, ProjectorParams& grads) {
  AttentionGrads g =
      attention_backward(params.resampler.queries, trace.keys, trace.values, trace.probs, d_out);
  add_into(grads.resampler.queries, g.dq);
  add_into(grads.resampler.w_k, matmul_tn(g.dk, tokens));
  add_into(grads.resampler.w_v, matmul_tn(g.dv, tokens));
}

void router_backward(const RouterParams& router, const GateTrace& trace, const Vector& d_logits,
                     RouterParams& grads) {
  const Matrix d2 = as_row(d_logits);
  LinearGrads second = linear_backward(router.w2, as_row(trace.hidden), d2);
  add_into(grads.w2, second.dw);
  add_into(grads.b2, second.db);
  Matrix d_pre = std::move(second.dx);
  for (std::size_t i = 0; i < d_pre.cols(); ++i) {
    d_pre(0, i) *= activate_derivative(router.activation, trace.hidden_pre[i]);
  }
  LinearGrads first = linear_backward(router.w1, as_row(trace.context), d_pre);
  add_into(grads.w1, first.dw);
  add_into(grads.b1, first.db);
}

Matrix column_block(const Matrix& m, std::size_t block, std::size_t width) {
  Matrix out(m.rows(), width);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto src = m.row(i).subspan(block * width, width);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void axpy_params(double scale, const ProjectorParams& delta, ProjectorParams& params) {
  std::vector<std::span<const double>> src;
  visit_tensors(delta, [&](std::string_view, std::span<const double> d) { src.push_back(d); });
  std::size_t t = 0;
  visit_tensors(params, [&](std::string_view, std::span<double> p) {
    const auto d = src[t++];
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += scale * d[i];
  });
}

double noise_free_entropy(const FeatureBundle& bundle, const ProjectorParams& params, double tau) {
  const Vector context = build_context(bundle.cls_token, bundle.eos_token);
  return gate_entropy(gate_forward(context, params.router, tau, 0.0, 0));
}

}  // namespace

void validate_schedule(const AnnealSchedule& s) {
  if (!(s.tau_min > 0.0) || !(s.tau0 >= s.tau_min)) {
    throw ConfigError("schedule needs tau0 >= tau_min > 0");
  }
  if (!(s.decay > 0.0 && s.decay < 1.0) || !(s.gumbel_decay > 0.0 && s.gumbel_decay < 1.0)) {
    throw ConfigError("schedule decays must lie in (0, 1)");
  }
  if (!(s.gumbel0 >= 0.0)) throw ConfigError("schedule gumbel0 must be nonnegative");
}

double tau_at(const AnnealSchedule& s, std::size_t step) {
  return std::max(s.tau_min, s.tau0 * std::pow(s.decay, static_cast<double>(step)));
}

double gumbel_scale_at(const AnnealSchedule& s, std::size_t step) {
  return s.gumbel0 * std::pow(s.gumbel_decay, static_cast<double>(step));
}

double mse(const Matrix& output, const Matrix& target) {
  if (output.rows() != target.rows() || output.cols() != target.cols()) {
    throw ShapeError("loss: output " + output.shape_string() + " vs target " +
                     target.shape_string());
  }
  double acc = 0.0;
  auto y = output.data();
  auto t = target.data();
  for (std::size_t i = 0; i < y.size(); ++i) acc += (y[i] - t[i]) * (y[i] - t[i]);
  return acc / static_cast<double>(y.size());
}

double loss(const ProjectedTokens& output, const Matrix& target) {
  return mse(output.tokens, target);
}

ProjectedTokens forward(const FeatureBundle& bundle, const ProjectorParams& params,
                        const GradMode& mode, ForwardTrace* trace) {
  switch (mode.stage) {
    case ForwardMode::kStage1:
      return stage1_forward(bundle, params, trace);
    case ForwardMode::kTrain:
      return train_forward(bundle, params, mode.tau, mode.gumbel_scale, mode.seed, trace);
    case ForwardMode::kInfer:
      break;
  }
  throw DomainError("backward supports stage1 and train modes only");
}

LossAndGrads backward(const FeatureBundle& bundle, const ProjectorParams& params,
                      const Matrix& target, const GradMode& mode) {
  ForwardTrace trace;
  const ProjectedTokens out = forward(bundle, params, mode, &trace);

  LossAndGrads result;
  result.loss = mse(out.tokens, target);
  result.grads = zeros_like(params);
  ProjectorParams& grads = result.grads;

  Matrix d_y = out.tokens;
  axpy(-1.0, target, d_y);
  const double scale = 2.0 / static_cast<double>(d_y.size());
  for (double& x : d_y.data()) x *= scale;

  const std::size_t c = bundle.patches.cols();
  std::array<Matrix, kNumBranches> d_branch;

  if (mode.stage == ForwardMode::kStage1) {
    const Matrix d_joined =
        mlp_backward(params.stage1_mlp, params.mlp_activation, trace.mlp, d_y, grads.stage1_mlp);
    for (std::size_t b = 0; b < kNumBranches; ++b) d_branch[b] = column_block(d_joined, b, c);
  } else {
    const Matrix d_fused =
        mlp_backward(params.out_mlp, params.mlp_activation, trace.mlp, d_y, grads.out_mlp);
    const auto& alpha = trace.gate.alpha;
    std::array<double, kNumBranches> d_alpha{};
    double mean = 0.0;
    for (std::size_t b = 0; b < kNumBranches; ++b) {
      d_alpha[b] = dot(d_fused, trace.outputs[b]->tokens);
      mean += alpha[b] * d_alpha[b];
      d_branch[b] = d_fused;
      for (double& x : d_branch[b].data()) x *= alpha[b];
    }
    // Softmax over logits / tau.
    Vector d_logits(kNumBranches);
    for (std::size_t b = 0; b < kNumBranches; ++b) {
      d_logits[b] = alpha[b] * (d_alpha[b] - mean) / trace.gate.tau_used;
    }
    router_backward(params.router, trace.gate_trace, d_logits, grads.router);
  }

  pool_backward(params, trace.branches.pool, d_branch[index_of(Branch::kPool)], grads);
  resample_backward(params, trace.branches.resample, bundle.patches,
                    d_branch[index_of(Branch::kResample)], grads);
  // Pruned rows are copies of the input patches: nothing learnable upstream.
  return result;
}

std::map<std::string, double> gradient_check(const FeatureBundle& bundle,
                                             const ProjectorParams& params, const Matrix& target,
                                             const GradMode& mode, double eps,
                                             std::size_t max_coords) {
  LossAndGrads analytic = backward(bundle, params, target, mode);
  std::map<std::string, double> errors;
  for (const std::string& name : tensor_names(params)) {
    ProjectorParams probe = params;
    std::span<double> slot = tensor_by_name(probe, name);
    const std::vector<double> point(slot.begin(), slot.end());
    const std::span<double> grad = tensor_by_name(analytic.grads, name);

    std::vector<std::size_t> coords;
    const std::size_t n = point.size();
    if (max_coords == 0 || n <= max_coords) {
      for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (std::size_t k = 0; k < max_coords; ++k) coords.push_back(k * n / max_coords);
    }

    ScalarFunction f = [&](std::span<const double> x) {
      std::copy(x.begin(), x.end(), slot.begin());
      return mse(forward(bundle, probe, mode).tokens, target);
    };
    errors[name] = grad_check(f, point, grad, eps, coords);
    std::copy(point.begin(), point.end(), slot.begin());
  }
  return errors;
}

TrainReport train_toy(const TrainConfig& config) {
  if (config.stage != 1 && config.stage != 2) throw ConfigError("training stage must be 1 or 2");
  if (config.batch.empty() || config.batch.size() != config.targets.size()) {
    throw ConfigError("training needs a nonempty batch with one target per bundle");
  }
  if (!(config.lr >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (config.stage == 2) validate_schedule(config.schedule);

  TrainReport report;
  report.stage = config.stage;
  ProjectorParams params = config.params;
  const double inv_batch = 1.0 / static_cast<double>(config.batch.size());
  GradMode mode = GradMode::stage1();

  for (std::size_t step = 0; step < config.steps; ++step) {
    if (config.stage == 2) {
      const double tau = tau_at(config.schedule, step);
      const double noise = gumbel_scale_at(config.schedule, step);
      mode = GradMode::train(tau, noise, 0);
      report.taus.push_back(tau);
      report.gumbel_scales.push_back(noise);
      double entropy = 0.0;
      for (const auto& bundle : config.batch) entropy += noise_free_entropy(bundle, params, tau);
      report.gate_entropies.push_back(entropy * inv_batch);
    }

    ProjectorParams total = zeros_like(params);
    double step_loss = 0.0;
    for (std::size_t i = 0; i < config.batch.size(); ++i) {
      mode.seed = derive_seed(derive_seed(config.seed, step), i);
      LossAndGrads lg = backward(config.batch[i], params, config.targets[i], mode);
      step_loss += lg.loss * inv_batch;
      axpy_params(inv_batch, lg.grads, total);
    }
    if (!std::isfinite(step_loss)) {
      throw DivergenceError("training diverged at step " + std::to_string(step), step);
    }
    report.losses.push_back(step_loss);
    axpy_params(-config.lr, total, params);
  }

  if (!report.gate_entropies.empty()) {
    report.initial_gate_entropy = report.gate_entropies.front();
    report.final_gate_entropy = report.gate_entropies.back();
  }
  if (config.steps > 0) {
    const auto errors = gradient_check(config.batch.front(), params, config.targets.front(), mode,
                                       1e-5, config.final_check_coords);
    for (const auto& [name, err] : errors) {
      report.grad_check_max_rel_err = std::max(report.grad_check_max_rel_err, err);
    }
  }
  report.params_digest = digest_params(params);
  report.final_params = std::move(params);
  return report;
}

std::vector<Matrix> teacher_targets(const std::vector<FeatureBundle>& batch,
                                    const ProjectorDims& dims, const ProjectorOptions& options,
                                    int stage, std::uint64_t teacher_seed) {
  const ProjectorParams teacher = init_params(dims, options, teacher_seed);
  std::vector<Matrix> targets;
  targets.reserve(batch.size());
  for (const auto& bundle : batch) {
    targets.push_back(stage == 1 ? stage1_forward(bundle, teacher).tokens
                                 : train_forward(bundle, teacher, 1.0, 0.0, 0).tokens);
  }
  return targets;
}

}  // namespace qmop
