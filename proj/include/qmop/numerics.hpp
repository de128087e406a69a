// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef QMOP_NUMERICS_HPP
#define QMOP_NUMERICS_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <variant>

#include "qmop/matrix.hpp"

namespace qmop {

// ---------------------------------------------------------------------------
// Dense arithmetic
// ---------------------------------------------------------------------------

Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// a^T * b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// a += scale * b, shapes must match.
void axpy(double scale, const Matrix& b, Matrix& a);
// Frobenius inner product.
double dot(const Matrix& a, const Matrix& b);
Vector column_sums(const Matrix& a);

// Per-row softmax of x / temperature with max subtraction.
Matrix softmax_rows(const Matrix& x, double temperature = 1.0);
Vector softmax(const Vector& x, double temperature = 1.0);

// Each row of x mapped to x * w^T + b.
Matrix linear(const Matrix& w, const Vector& b, const Matrix& x);

struct LinearGrads {
  Matrix dw;
  Vector db;
  Matrix dx;
};

// Gradients of y = linear(w, b, x) given dy.
LinearGrads linear_backward(const Matrix& w, const Matrix& x, const Matrix& dy);

// ---------------------------------------------------------------------------
// Scaled dot-product attention: softmax(q k^T / sqrt(k.cols)) v
// ---------------------------------------------------------------------------

struct AttentionResult {
  Matrix output;  // q.rows x v.cols
  Matrix probs;   // q.rows x k.rows, rows sum to one
};

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v);
AttentionResult attention_with_probs(const Matrix& q, const Matrix& k, const Matrix& v);

struct AttentionGrads {
  Matrix dq;
  Matrix dk;
  Matrix dv;
};

AttentionGrads attention_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                                  const Matrix& probs, const Matrix& d_output);

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Activation { kGelu, kRelu };

// Exact GELU: x * Phi(x).
double gelu(double x);
double gelu_derivative(double x);

double activate(Activation act, double x);
double activate_derivative(Activation act, double x);
Matrix activate(Activation act, const Matrix& x);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

using ScalarFunction = std::function<double(std::span<const double>)>;

// Max over coordinates of |analytic - fd| / max(1, |fd|) where fd is the
// central difference (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
double grad_check(const ScalarFunction& f, std::span<const double> point,
                  std::span<const double> analytic, double eps);

// Same, restricted to the listed coordinates.
double grad_check(const ScalarFunction& f, std::span<const double> point,
                  std::span<const double> analytic, double eps,
                  std::span<const std::size_t> coords);

// ---------------------------------------------------------------------------
// Deterministic initialization
// ---------------------------------------------------------------------------

struct Uniform01 {};
struct Gaussian {
  double sigma = 1.0;
};
using FillDistribution = std::variant<Uniform01, Gaussian>;

// Fills a rows x cols matrix in raster order from CounterRng(seed).
Matrix seeded_fill(std::uint64_t seed, std::size_t rows, std::size_t cols,
                   FillDistribution distribution);

}  // namespace qmop

#endif  // QMOP_NUMERICS_HPP
