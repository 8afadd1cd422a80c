#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twostage/errors.hpp"

namespace twostage {

// Row-major 2-D tensor of 64-bit floats. Rows are examples, columns features.
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

// Every stochastic operation takes one of these explicitly.
using Rng = std::mt19937_64;

inline void require_finite(const Tensor& t, const char* what) {
  if (!t.allFinite()) {
    throw NumericError(std::string("non-finite values in ") + what);
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
  }
}

// Numerically stable row-wise softmax.
inline Tensor softmax_rows(const Tensor& logits) {
  Tensor out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double peak = logits.row(r).maxCoeff();
    double total = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const double e = std::exp(logits(r, c) - peak);
      out(r, c) = e;
      total += e;
    }
    out.row(r) /= total;
  }
  return out;
}

// Vector-Jacobian product of softmax: maps dL/dp to dL/dlogits.
inline Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs) {
  require_same_shape(probs, grad_probs, "softmax_backward");
  Tensor out(probs.rows(), probs.cols());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const double dot = probs.row(r).dot(grad_probs.row(r));
    out.row(r) = (probs.row(r).array() * (grad_probs.row(r).array() - dot)).matrix();
  }
  return out;
}

// Index of the largest entry per row; first index wins ties.
inline std::vector<int> argmax_rows(const Tensor& t) {
  std::vector<int> out(static_cast<std::size_t>(t.rows()));
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < t.cols(); ++c) {
      if (t(r, c) > t(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

// Copies the listed rows of `src`, in order.
inline Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& rows) {
  Tensor out(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = src.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

}  // namespace twostage
