// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#include "qmop/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "qmop/errors.hpp"
#include "qmop/rng.hpp"

namespace qmop {

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

void check_temperature(double temperature) {
  if (!(temperature > 0.0)) {
    throw DomainError("softmax temperature must be positive, got " + std::to_string(temperature));
  }
}

// In-place stable softmax of one row.
void softmax_inplace(std::span<double> row, double temperature) {
  if (row.empty()) return;
  const double inv_t = 1.0 / temperature;
  const double max = *std::max_element(row.begin(), row.end()) * inv_t;
  double sum = 0.0;
  for (double& x : row) {
    x = std::exp(x * inv_t - max);
    sum += x;
  }
  for (double& x : row) x /= sum;
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) shape_mismatch("matmul", a, b);
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) shape_mismatch("matmul_nt", a, b);
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto a_row = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto b_row = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a_row[k] * b_row[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) shape_mismatch("matmul_tn", a, b);
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto a_row = a.row(k);
    auto b_row = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a_row[i];
      if (aki == 0.0) continue;
      auto out_row = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aki * b_row[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

void axpy(double scale, const Matrix& b, Matrix& a) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_mismatch("axpy", a, b);
  auto dst = a.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

double dot(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_mismatch("dot", a, b);
  double acc = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

Vector column_sums(const Matrix& a) {
  Vector out(a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto row = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += row[j];
  }
  return out;
}

Matrix softmax_rows(const Matrix& x, double temperature) {
  check_temperature(temperature);
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) softmax_inplace(out.row(i), temperature);
  return out;
}

Vector softmax(const Vector& x, double temperature) {
  check_temperature(temperature);
  Vector out = x;
  softmax_inplace(out.data(), temperature);
  return out;
}

Matrix linear(const Matrix& w, const Vector& b, const Matrix& x) {
  if (w.cols() != x.cols()) shape_mismatch("linear", w, x);
  if (b.size() != w.rows()) {
    throw ShapeError("linear: bias length " + std::to_string(b.size()) +
                     " does not match weight " + w.shape_string());
  }
  Matrix out = matmul_nt(x, w);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  }
  return out;
}

LinearGrads linear_backward(const Matrix& w, const Matrix& x, const Matrix& dy) {
  if (dy.rows() != x.rows() || dy.cols() != w.rows()) shape_mismatch("linear_backward", w, dy);
  return {matmul_tn(dy, x), column_sums(dy), matmul(dy, w)};
}

AttentionResult attention_with_probs(const Matrix& q, const Matrix& k, const Matrix& v) {
  if (q.cols() != k.cols()) shape_mismatch("attention(q, k)", q, k);
  if (k.rows() != v.rows()) shape_mismatch("attention(k, v)", k, v);
  if (k.rows() == 0) throw ShapeError("attention: no keys");
  const double scale = 1.0 / std::sqrt(static_cast<double>(k.cols()));
  Matrix scores = matmul_nt(q, k);
  for (double& s : scores.data()) s *= scale;
  Matrix probs = softmax_rows(scores, 1.0);
  Matrix output = matmul(probs, v);
  return {std::move(output), std::move(probs)};
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  return attention_with_probs(q, k, v).output;
}

AttentionGrads attention_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                                  const Matrix& probs, const Matrix& d_output) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(k.cols()));
  Matrix d_probs = matmul_nt(d_output, v);
  Matrix dv = matmul_tn(probs, d_output);
  Matrix d_scores(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    auto p = probs.row(i);
    auto dp = d_probs.row(i);
    double inner = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) inner += p[j] * dp[j];
    auto ds = d_scores.row(i);
    for (std::size_t j = 0; j < p.size(); ++j) ds[j] = p[j] * (dp[j] - inner) * scale;
  }
  return {matmul(d_scores, k), matmul_tn(d_scores, q), std::move(dv)};
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + x * pdf;
}

double activate(Activation act, double x) {
  switch (act) {
    case Activation::kGelu:
      return gelu(x);
    case Activation::kRelu:
      return x > 0.0 ? x : 0.0;
  }
  return x;
}

double activate_derivative(Activation act, double x) {
  switch (act) {
    case Activation::kGelu:
      return gelu_derivative(x);
    case Activation::kRelu:
      return x > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

Matrix activate(Activation act, const Matrix& x) {
  Matrix out = x;
  for (double& v : out.data()) v = activate(act, v);
  return out;
}

double grad_check(const ScalarFunction& f, std::span<const double> point,
                  std::span<const double> analytic, double eps,
                  std::span<const std::size_t> coords) {
  if (!(eps > 0.0)) throw DomainError("grad_check: eps must be positive");
  if (analytic.size() != point.size()) {
    throw ShapeError("grad_check: analytic gradient has " + std::to_string(analytic.size()) +
                     " entries, point has " + std::to_string(point.size()));
  }
  std::vector<double> x(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t i : coords) {
    if (i >= x.size()) throw ShapeError("grad_check: coordinate out of range");
    const double saved = x[i];
    x[i] = saved + eps;
    const double plus = f(x);
    x[i] = saved - eps;
    const double minus = f(x);
    x[i] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericError("grad_check: non-finite function value at coordinate " +
                         std::to_string(i));
    }
    const double fd = (plus - minus) / (2.0 * eps);
    const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

double grad_check(const ScalarFunction& f, std::span<const double> point,
                  std::span<const double> analytic, double eps) {
  std::vector<std::size_t> coords(point.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  return grad_check(f, point, analytic, eps, coords);
}

Matrix seeded_fill(std::uint64_t seed, std::size_t rows, std::size_t cols,
                   FillDistribution distribution) {
  CounterRng rng(seed);
  Matrix out(rows, cols);
  if (const auto* g = std::get_if<Gaussian>(&distribution)) {
    if (!(g->sigma > 0.0)) throw DomainError("seeded_fill: gaussian sigma must be positive");
    for (double& x : out.data()) x = g->sigma * rng.gaussian();
  } else {
    for (double& x : out.data()) x = rng.uniform01();
  }
  return out;
}

}  // namespace qmop
