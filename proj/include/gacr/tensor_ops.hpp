#pragma once

// Row-wise numeric kernels used by the encoder, written as free functions over
// Eigen dense types so they work for any floating scalar.

#include <cmath>
#include <concepts>
#include <limits>

#include <Eigen/Dense>

namespace gacr {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = RowMatrix<double>;
using Vector = RowVec<double>;
using MaskMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// a * b accumulated row by row, in order over the inner index. Each output
/// row depends only on the matching row of `a`, whatever the row count,
/// which a blocked GEMM does not guarantee.
template <typename Scalar>
RowMatrix<Scalar> rowwise_product(const RowMatrix<Scalar>& a, const RowMatrix<Scalar>& b) {
  RowMatrix<Scalar> out = RowMatrix<Scalar>::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index k = 0; k < a.cols(); ++k) {
      const Scalar s = a(i, k);
      if (s != Scalar(0)) out.row(i) += s * b.row(k);
    }
  }
  return out;
}

template <std::floating_point Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
}

template <std::floating_point Scalar>
Scalar gelu_grad(Scalar x) {
  constexpr Scalar kInvSqrt2Pi = Scalar(0.39894228040143267793994605993438);
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
  return cdf + x * kInvSqrt2Pi * std::exp(Scalar(-0.5) * x * x);
}

template <typename Derived>
auto gelu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return gelu(v); });
}

/// Row-wise layer normalization; gain and shift are 1 x n. Stores the normalized input and the inverse
/// standard deviation per row for the backward pass.
template <typename Scalar>
void layer_norm_forward(const RowMatrix<Scalar>& in, const RowMatrix<Scalar>& gain, const RowMatrix<Scalar>& shift,
                        Scalar eps, RowMatrix<Scalar>& out, RowMatrix<Scalar>& normalized,
                        Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& inv_std) {
  const auto n = in.cols();
  normalized.resize(in.rows(), n);
  inv_std.resize(in.rows());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const Scalar mean = in.row(r).mean();
    const auto centered = (in.row(r).array() - mean).matrix();
    const Scalar var = centered.squaredNorm() / Scalar(n);
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    normalized.row(r) = centered * inv_std(r);
  }
  out = (normalized.array().rowwise() * gain.row(0).array()).rowwise() + shift.row(0).array();
}

template <typename Scalar>
void layer_norm_backward(const RowMatrix<Scalar>& grad_out, const RowMatrix<Scalar>& normalized,
                         const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& inv_std, const RowMatrix<Scalar>& gain,
                         RowMatrix<Scalar>& grad_in, RowMatrix<Scalar>& grad_gain, RowMatrix<Scalar>& grad_shift) {
  grad_gain += (grad_out.array() * normalized.array()).colwise().sum().matrix();
  grad_shift += grad_out.colwise().sum();
  const RowMatrix<Scalar> g_norm = grad_out.array().rowwise() * gain.row(0).array();
  const Scalar n = Scalar(normalized.cols());
  grad_in.resize(grad_out.rows(), grad_out.cols());
  for (Eigen::Index r = 0; r < grad_out.rows(); ++r) {
    const Scalar mean_g = g_norm.row(r).sum() / n;
    const Scalar mean_gx = g_norm.row(r).dot(normalized.row(r)) / n;
    grad_in.row(r) = inv_std(r) * (g_norm.row(r).array() - mean_g - normalized.row(r).array() * mean_gx).matrix();
  }
}

/// Softmax over each row with masked entries forced to probability zero.
/// A row with no visible entry yields all zeros.
template <typename Scalar, typename MaskDerived>
RowMatrix<Scalar> masked_softmax(const RowMatrix<Scalar>& logits, const Eigen::MatrixBase<MaskDerived>& mask) {
  RowMatrix<Scalar> probs = RowMatrix<Scalar>::Zero(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Scalar row_max = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index c = 0; c < logits.cols(); ++c)
      if (mask(r, c)) row_max = std::max(row_max, logits(r, c));
    if (row_max == -std::numeric_limits<Scalar>::infinity()) continue;
    Scalar total = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      if (!mask(r, c)) continue;
      probs(r, c) = std::exp(logits(r, c) - row_max);
      total += probs(r, c);
    }
    probs.row(r) /= total;
  }
  return probs;
}

/// Given probabilities P and upstream dL/dP, returns dL/dlogits.
template <typename Scalar>
RowMatrix<Scalar> softmax_backward(const RowMatrix<Scalar>& probs, const RowMatrix<Scalar>& grad_probs) {
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = (grad_probs.array() * probs.array()).rowwise().sum();
  return (probs.array() * (grad_probs.array().colwise() - dots.array())).matrix();
}

}  // namespace gacr
