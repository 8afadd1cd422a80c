#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "twostage/data/dataset.hpp"
#include "twostage/errors.hpp"

namespace twostage {

// Row-stochastic label corruption matrix: entry (a, b) is the probability that
// a true label a is observed as b.
class TransitionMatrix {
 public:
  TransitionMatrix() = default;
  explicit TransitionMatrix(int classes)
      : classes_(classes), entries_(static_cast<std::size_t>(classes * classes), 0.0) {
    if (classes <= 0) throw ArgumentError("transition matrix needs at least one class");
    for (int c = 0; c < classes; ++c) at(c, c) = 1.0;
  }

  int classes() const { return classes_; }
  double& at(int from, int to) { return entries_[index(from, to)]; }
  double at(int from, int to) const { return entries_[index(from, to)]; }

  bool is_identity() const {
    for (int a = 0; a < classes_; ++a) {
      for (int b = 0; b < classes_; ++b) {
        if (at(a, b) != (a == b ? 1.0 : 0.0)) return false;
      }
    }
    return true;
  }

  // Rows sum to one within `tol` and entries lie in [0, 1].
  void validate(double tol = 1e-12) const {
    for (int a = 0; a < classes_; ++a) {
      double sum = 0.0;
      for (int b = 0; b < classes_; ++b) {
        const double v = at(a, b);
        if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("transition entry outside [0,1]");
        sum += v;
      }
      if (std::abs(sum - 1.0) > tol) {
        throw ArgumentError("transition row " + std::to_string(a) + " sums to " + std::to_string(sum));
      }
    }
  }

 private:
  std::size_t index(int from, int to) const {
    if (from < 0 || from >= classes_ || to < 0 || to >= classes_) {
      throw ArgumentError("transition index out of range");
    }
    return static_cast<std::size_t>(from * classes_ + to);
  }

  int classes_ = 0;
  std::vector<double> entries_;
};

enum class NoiseKind { symmetric, asymmetric };

// "A ->p B" flips, or uniform flips to the other C-1 classes with total mass p.
struct NoiseSpec {
  NoiseKind kind = NoiseKind::asymmetric;
  double p = 0.0;
  std::vector<std::pair<int, int>> pairs;  // (source, target), asymmetric only

  // The MNIST protocol: 2->7, 3->8, 5->6, 7->1.
  static NoiseSpec mnist_asymmetric(double p) {
    return {NoiseKind::asymmetric, p, {{2, 7}, {3, 8}, {5, 6}, {7, 1}}};
  }
  // CIFAR-10 protocol: truck->automobile, bird->airplane, deer->horse, cat<->dog.
  static NoiseSpec cifar_asymmetric(double p) {
    return {NoiseKind::asymmetric, p, {{9, 1}, {2, 0}, {4, 7}, {3, 5}, {5, 3}}};
  }
  static NoiseSpec symmetric(double p) { return {NoiseKind::symmetric, p, {}}; }
};

inline TransitionMatrix build_transition(const NoiseSpec& spec, int classes) {
  if (!(spec.p >= 0.0 && spec.p <= 1.0)) throw ArgumentError("noise rate must be in [0,1]");
  TransitionMatrix t(classes);
  if (spec.kind == NoiseKind::symmetric) {
    if (classes < 2 && spec.p > 0.0) throw ArgumentError("symmetric noise needs two classes");
    if (classes < 2) return t;
    const double off = spec.p / static_cast<double>(classes - 1);
    for (int a = 0; a < classes; ++a) {
      for (int b = 0; b < classes; ++b) t.at(a, b) = a == b ? 1.0 - spec.p : off;
    }
  } else {
    std::set<int> sources;
    for (const auto& [from, to] : spec.pairs) {
      if (from < 0 || from >= classes || to < 0 || to >= classes) {
        throw ArgumentError("noise pair references class outside [0, " + std::to_string(classes) + ")");
      }
      if (from == to) throw ArgumentError("noise pair maps a class onto itself");
      if (!sources.insert(from).second) {
        throw ArgumentError("duplicate source class " + std::to_string(from) + " in noise pairs");
      }
      t.at(from, from) = 1.0 - spec.p;
      t.at(from, to) = spec.p;
    }
  }
  t.validate();
  return t;
}

struct ClassAudit {
  std::size_t kept = 0;
  std::size_t flipped = 0;
};

struct NoiseAudit {
  std::vector<ClassAudit> per_class;  // indexed by true class
  double correct_fraction = 1.0;
  double incorrect_fraction = 0.0;
};

// Resamples each label from its row of `t`. True labels are retained on the
// returned dataset for auditing.
inline std::pair<Dataset, NoiseAudit> apply_noise(const Dataset& data, const TransitionMatrix& t,
                                                  std::uint64_t seed) {
  if (t.classes() != data.class_count) throw ArgumentError("transition matrix class count differs from dataset");
  Dataset out = data;
  const std::vector<int>& truth = data.has_true_labels() ? data.true_labels(AuditAccess{}) : data.labels;
  std::vector<int> original = truth;
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  NoiseAudit audit;
  audit.per_class.resize(static_cast<std::size_t>(data.class_count));
  std::size_t flips = 0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const int a = original[i];
    const double u = unit(rng);
    double cumulative = 0.0;
    int drawn = a;
    for (int b = 0; b < t.classes(); ++b) {
      cumulative += t.at(a, b);
      if (u < cumulative) {
        drawn = b;
        break;
      }
    }
    out.labels[i] = drawn;
    if (drawn == a) {
      ++audit.per_class[static_cast<std::size_t>(a)].kept;
    } else {
      ++audit.per_class[static_cast<std::size_t>(a)].flipped;
      ++flips;
    }
  }
  out.set_true_labels(std::move(original));
  if (out.size() > 0) {
    audit.incorrect_fraction = static_cast<double>(flips) / static_cast<double>(out.size());
    audit.correct_fraction = 1.0 - audit.incorrect_fraction;
  }
  return {std::move(out), std::move(audit)};
}

// Counts behind a correct / incorrect / unlabeled triple.
struct AuditTriple {
  std::size_t total = 0;
  std::size_t correct = 0;
  std::size_t incorrect = 0;
  std::size_t unlabeled = 0;

  double correct_pct() const { return pct(correct); }
  double incorrect_pct() const { return pct(incorrect); }
  double unlabeled_pct() const { return pct(unlabeled); }
  // Incorrect labels as a share of the labels that remain.
  double incorrect_of_labeled_pct() const {
    const auto labeled = correct + incorrect;
    return labeled ? 100.0 * static_cast<double>(incorrect) / static_cast<double>(labeled) : 0.0;
  }

 private:
  double pct(std::size_t k) const {
    return total ? 100.0 * static_cast<double>(k) / static_cast<double>(total) : 0.0;
  }
};

inline AuditTriple audit_stats(const std::vector<int>& noisy, const std::vector<int>& truth,
                               const std::vector<bool>& labeled) {
  if (noisy.size() != truth.size() || noisy.size() != labeled.size()) {
    throw DimensionError("audit_stats: vectors differ in length");
  }
  AuditTriple a;
  a.total = noisy.size();
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    if (!labeled[i]) {
      ++a.unlabeled;
    } else if (noisy[i] == truth[i]) {
      ++a.correct;
    } else {
      ++a.incorrect;
    }
  }
  return a;
}

inline nlohmann::json to_json(const AuditTriple& a) {
  return {{"correct_pct", a.correct_pct()},     {"incorrect_pct", a.incorrect_pct()},
          {"unlabeled_pct", a.unlabeled_pct()}, {"correct", a.correct},
          {"incorrect", a.incorrect},           {"unlabeled", a.unlabeled},
          {"total", a.total}};
}

// {correct_pct, incorrect_pct, unlabeled_pct, per_class: [...]}
inline nlohmann::json to_json(const NoiseAudit& audit) {
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < audit.per_class.size(); ++c) {
    per_class.push_back({{"class", c}, {"kept", audit.per_class[c].kept}, {"flipped", audit.per_class[c].flipped}});
  }
  return {{"correct_pct", 100.0 * audit.correct_fraction},
          {"incorrect_pct", 100.0 * audit.incorrect_fraction},
          {"unlabeled_pct", 0.0},
          {"per_class", per_class}};
}

}  // namespace twostage
