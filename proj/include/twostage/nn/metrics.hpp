#pragma once

#include <span>
#include <vector>

#include "twostage/errors.hpp"
#include "twostage/nn/losses.hpp"
#include "twostage/nn/network.hpp"

namespace twostage {

// Percentage of rows whose argmax matches `labels`.
inline double accuracy_pct(const Tensor& probs, std::span<const int> labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw DimensionError("accuracy: row count differs from label count");
  }
  if (labels.empty()) return 0.0;
  const auto pred = argmax_rows(probs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline double accuracy_pct(const Network& net, const Tensor& features, std::span<const int> labels) {
  return accuracy_pct(net.predict(features), labels);
}

// Accuracy and mean cross-entropy of one evaluation pass.
struct ValidationScore {
  double accuracy = 0.0;
  double loss = 0.0;

  // Higher accuracy wins; equal accuracy falls back to lower loss, which
  // matters once accuracy saturates on a small, easy validation set.
  bool better_than(const ValidationScore& o) const {
    return accuracy > o.accuracy || (accuracy == o.accuracy && loss < o.loss);
  }
};

inline ValidationScore validation_score(const Network& net, const Tensor& features, std::span<const int> labels) {
  if (labels.empty()) return {};
  const Tensor probs = net.predict(features);
  return {accuracy_pct(probs, labels), cross_entropy(probs, labels).loss};
}

// Rows are true classes, columns predicted classes.
inline std::vector<std::vector<std::size_t>> confusion_matrix(const Tensor& probs, std::span<const int> labels,
                                                              int classes) {
  std::vector<std::vector<std::size_t>> m(static_cast<std::size_t>(classes),
                                          std::vector<std::size_t>(static_cast<std::size_t>(classes), 0));
  const auto pred = argmax_rows(probs);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ++m[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(pred[i])];
  }
  return m;
}

}  // namespace twostage
