#pragma once

#include <algorithm>
#include <cstddef>
#include <random>
#include <vector>

#include "twostage/errors.hpp"
#include "twostage/nn/tensor.hpp"

namespace twostage {

struct LabeledEntry {
  std::size_t index = 0;
  int label = 0;

  bool operator==(const LabeledEntry&) const = default;
};

struct BalancedPool {
  std::vector<LabeledEntry> entries;
  std::vector<int> empty_classes;  // reported, contribute nothing
};

// Oversamples every non-empty class up to the largest class count. Each class
// keeps all of its members once and tops up with draws (with replacement)
// from its own members. Output order is shuffled.
inline BalancedPool balance_classes(const std::vector<LabeledEntry>& labeled, int classes, Rng& rng) {
  if (labeled.empty()) throw ArgumentError("balance_classes: no labeled examples");
  std::vector<std::vector<LabeledEntry>> by_class(static_cast<std::size_t>(classes));
  for (const auto& e : labeled) {
    if (e.label < 0 || e.label >= classes) throw ArgumentError("balance_classes: label out of range");
    by_class[static_cast<std::size_t>(e.label)].push_back(e);
  }
  std::size_t target = 0;
  for (const auto& members : by_class) target = std::max(target, members.size());

  BalancedPool out;
  out.entries.reserve(target * static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    const auto& members = by_class[static_cast<std::size_t>(c)];
    if (members.empty()) {
      out.empty_classes.push_back(c);
      continue;
    }
    out.entries.insert(out.entries.end(), members.begin(), members.end());
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    for (std::size_t k = members.size(); k < target; ++k) out.entries.push_back(members[pick(rng)]);
  }
  std::shuffle(out.entries.begin(), out.entries.end(), rng);
  return out;
}

// One mini-batch: N/2 labeled entries and N/2 unlabeled indices. When the
// unlabeled pool is empty the labeled half fills the whole batch and
// `labeled_only` is set.
struct BatchComposition {
  std::vector<LabeledEntry> labeled;
  std::vector<std::size_t> unlabeled;
  bool labeled_only = false;
};

// Draws batches by walking a shuffled copy of the balanced labeled pool
// without replacement (reshuffling when it runs out) and sampling unlabeled
// indices uniformly with replacement. One sub-epoch is enough batches to
// consume the labeled pool once.
class BatchSampler {
 public:
  BatchSampler(std::vector<LabeledEntry> labeled, std::vector<std::size_t> unlabeled, std::size_t batch_size)
      : labeled_(std::move(labeled)), unlabeled_(std::move(unlabeled)), batch_size_(batch_size) {
    if (batch_size_ == 0) throw ArgumentError("batch size must be positive");
    if (batch_size_ % 2 != 0) throw ArgumentError("batch size must be even");
    if (labeled_.empty()) throw ArgumentError("batch sampler needs labeled examples");
    cursor_ = labeled_.size();  // forces a shuffle on first use
  }

  std::size_t labeled_per_batch() const { return unlabeled_.empty() ? batch_size_ : batch_size_ / 2; }

  std::size_t batches_per_sub_epoch() const {
    const std::size_t per = labeled_per_batch();
    return (labeled_.size() + per - 1) / per;
  }

  BatchComposition next(Rng& rng) {
    BatchComposition b;
    b.labeled_only = unlabeled_.empty();
    const std::size_t want = labeled_per_batch();
    b.labeled.reserve(want);
    while (b.labeled.size() < want) {
      if (cursor_ == labeled_.size()) {
        std::shuffle(labeled_.begin(), labeled_.end(), rng);
        cursor_ = 0;
      }
      b.labeled.push_back(labeled_[cursor_++]);
    }
    if (!unlabeled_.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, unlabeled_.size() - 1);
      b.unlabeled.reserve(batch_size_ / 2);
      for (std::size_t k = 0; k < batch_size_ / 2; ++k) b.unlabeled.push_back(unlabeled_[pick(rng)]);
    }
    return b;
  }

  // Realigns to the start of a fresh pass so sub-epochs cover the pool exactly.
  void start_sub_epoch() { cursor_ = labeled_.size(); }

 private:
  std::vector<LabeledEntry> labeled_;
  std::vector<std::size_t> unlabeled_;
  std::size_t batch_size_;
  std::size_t cursor_;
};

// Single batch draw; see BatchSampler.
inline BatchComposition compose_batch(const std::vector<LabeledEntry>& balanced_labeled,
                                      const std::vector<std::size_t>& unlabeled, int batch_size, Rng& rng) {
  if (batch_size <= 0) throw ArgumentError("batch size must be positive");
  BatchSampler sampler(balanced_labeled, unlabeled, static_cast<std::size_t>(batch_size));
  return sampler.next(rng);
}

}  // namespace twostage
