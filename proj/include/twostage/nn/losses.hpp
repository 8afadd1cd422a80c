#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "twostage/errors.hpp"
#include "twostage/nn/tensor.hpp"

namespace twostage {

// Floor applied to the true-class probability before taking its log.
inline constexpr double kLogFloor = 1e-12;

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor grad_logits;  // (probs - onehot) / M
};

// Mean negative log-likelihood of `labels` under `probs` (one row per example).
inline CrossEntropyResult cross_entropy(const Tensor& probs, std::span<const int> labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw DimensionError("cross_entropy: " + std::to_string(probs.rows()) + " rows but " +
                         std::to_string(labels.size()) + " labels");
  }
  CrossEntropyResult out;
  out.grad_logits = probs;
  const auto m = static_cast<double>(labels.size());
  if (labels.empty()) return out;
  double total = 0.0;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const int y = labels[j];
    if (y < 0 || y >= probs.cols()) throw ArgumentError("cross_entropy: label out of range");
    const auto r = static_cast<Eigen::Index>(j);
    total -= std::log(std::max(probs(r, y), kLogFloor));
    out.grad_logits(r, y) -= 1.0;
  }
  out.loss = total / m;
  out.grad_logits /= m;
  return out;
}

struct ConsistencyResult {
  double loss = 0.0;
  Tensor grad_first;   // (2/N)(z1 - z2)
  Tensor grad_second;  // -(2/N)(z1 - z2)
};

// (1/N) sum_i ||z1_i - z2_i||^2 over the N rows.
inline ConsistencyResult consistency_loss(const Tensor& z1, const Tensor& z2) {
  require_same_shape(z1, z2, "consistency_loss");
  ConsistencyResult out;
  const Eigen::Index n = z1.rows();
  if (n == 0) {
    out.grad_first = Tensor::Zero(0, z1.cols());
    out.grad_second = out.grad_first;
    return out;
  }
  const Tensor diff = z1 - z2;
  // Squares summed per element so swapping arguments gives the identical value.
  double total = 0.0;
  for (Eigen::Index k = 0; k < diff.size(); ++k) total += diff.data()[k] * diff.data()[k];
  out.loss = total / static_cast<double>(n);
  out.grad_first = diff * (2.0 / static_cast<double>(n));
  out.grad_second = -out.grad_first;
  return out;
}

}  // namespace twostage
