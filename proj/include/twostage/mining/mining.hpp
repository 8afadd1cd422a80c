#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "twostage/data/dataset.hpp"
#include "twostage/errors.hpp"
#include "twostage/mining/baseline.hpp"
#include "twostage/nn/network.hpp"
#include "twostage/noise/transition.hpp"
#include "twostage/ssl/sampling.hpp"

namespace twostage {

struct MiningConfig {
  double confidence_threshold = 0.9;
  double floor_fraction = 0.10;

  void validate() const {
    if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) {
      throw ArgumentError("confidence threshold must be in [0, 1]");
    }
    if (!(floor_fraction > 0.0 && floor_fraction < 1.0)) {
      throw ArgumentError("floor fraction must be in (0, 1)");
    }
  }
};

// Partition of source indices into a labeled seed set and an unlabeled pool.
// Labeled entries carry the source (noisy) label unchanged.
struct MinedSplit {
  std::vector<LabeledEntry> labeled;
  std::vector<std::size_t> unlabeled;
  std::size_t source_size = 0;

  std::vector<bool> labeled_mask() const {
    std::vector<bool> mask(source_size, false);
    for (const auto& e : labeled) mask[e.index] = true;
    return mask;
  }

  // Throws ConsistencyError unless the split partitions [0, source_size) and
  // (when given) every label matches `source_labels`.
  void validate(const std::vector<int>* source_labels = nullptr) const {
    std::vector<char> seen(source_size, 0);
    auto mark = [&](std::size_t i) {
      if (i >= source_size) throw ConsistencyError("mined split index out of range");
      if (seen[i]++) throw ConsistencyError("mined split index " + std::to_string(i) + " appears twice");
    };
    for (const auto& e : labeled) {
      mark(e.index);
      if (source_labels && (*source_labels)[e.index] != e.label) {
        throw ConsistencyError("mined split relabels index " + std::to_string(e.index));
      }
    }
    for (auto i : unlabeled) mark(i);
    if (labeled.size() + unlabeled.size() != source_size) {
      throw ConsistencyError("mined split does not cover every source index");
    }
  }
};

inline nlohmann::json to_json(const MinedSplit& s) {
  nlohmann::json labeled = nlohmann::json::array();
  for (const auto& e : s.labeled) labeled.push_back({e.index, e.label});
  return {{"labeled", labeled}, {"unlabeled", s.unlabeled}, {"source_size", s.source_size}};
}

inline MinedSplit mined_split_from_json(const nlohmann::json& j) {
  MinedSplit s;
  try {
    s.source_size = j.at("source_size").get<std::size_t>();
    for (const auto& pair : j.at("labeled")) {
      s.labeled.push_back({pair.at(0).get<std::size_t>(), pair.at(1).get<int>()});
    }
    s.unlabeled = j.at("unlabeled").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed mined split: ") + e.what());
  }
  s.validate();
  return s;
}

struct MiningReport {
  std::vector<std::size_t> retained_per_class;
  std::optional<AuditTriple> audit;
  std::vector<std::string> warnings;
};

inline nlohmann::json to_json(const MiningReport& r) {
  nlohmann::json j = {{"retained_per_class", r.retained_per_class}, {"warnings", r.warnings}};
  if (r.audit) {
    const auto a = to_json(*r.audit);
    for (auto it = a.begin(); it != a.end(); ++it) j[it.key()] = it.value();
    j["incorrect_of_labeled_pct"] = r.audit->incorrect_of_labeled_pct();
  }
  return j;
}

struct Survivor {
  std::size_t index = 0;
  double confidence = 0.0;  // P(noisy label | x)
};

struct ConsistencyFilterResult {
  std::vector<std::vector<Survivor>> per_class;  // by noisy label
  std::vector<std::size_t> rejected;             // prediction disagrees with label
};

// Keeps examples whose argmax prediction equals their noisy label.
inline ConsistencyFilterResult consistency_filter(const Tensor& probs, const std::vector<int>& labels,
                                                  int classes) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw DimensionError("consistency_filter: prediction rows differ from labels");
  }
  ConsistencyFilterResult out;
  out.per_class.resize(static_cast<std::size_t>(classes));
  const auto pred = argmax_rows(probs);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (pred[i] == y) {
      out.per_class[static_cast<std::size_t>(y)].push_back({i, probs(static_cast<Eigen::Index>(i), y)});
    } else {
      out.rejected.push_back(i);
    }
  }
  return out;
}

inline ConsistencyFilterResult consistency_filter(const Network& net, const Dataset& data) {
  return consistency_filter(net.predict(data.features), data.labels, data.class_count);
}

// ceil(fraction * n) without picking up floating-point dust (0.1 * 70 > 7).
inline std::size_t floor_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

// Ranks survivors by confidence (ties by index), takes all at or above the
// threshold, then extends down the ranking until ceil(floor * class_size)
// are selected or survivors run out. A threshold of 1 disables the threshold
// rule (saturated softmax outputs can equal 1.0 exactly), leaving the floor.
inline std::vector<std::size_t> rank_and_select(std::vector<Survivor> survivors, std::size_t class_size,
                                                const MiningConfig& cfg) {
  cfg.validate();
  std::stable_sort(survivors.begin(), survivors.end(), [](const Survivor& a, const Survivor& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.index < b.index;
  });
  std::size_t take = 0;
  if (cfg.confidence_threshold < 1.0) {
    while (take < survivors.size() && survivors[take].confidence >= cfg.confidence_threshold) ++take;
  }
  const std::size_t floor_n = floor_count(cfg.floor_fraction, class_size);
  if (take < floor_n) take = std::min(floor_n, survivors.size());
  std::vector<std::size_t> out;
  out.reserve(take);
  for (std::size_t k = 0; k < take; ++k) out.push_back(survivors[k].index);
  return out;
}

namespace detail {

inline std::pair<MinedSplit, MiningReport> finish_split(const Dataset& data, std::vector<bool> keep) {
  MinedSplit split;
  split.source_size = data.size();
  MiningReport report;
  report.retained_per_class.assign(static_cast<std::size_t>(data.class_count), 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (keep[i]) {
      split.labeled.push_back({i, data.labels[i]});
      ++report.retained_per_class[static_cast<std::size_t>(data.labels[i])];
    } else {
      split.unlabeled.push_back(i);
    }
  }
  if (data.has_true_labels()) {
    report.audit = audit_stats(data.labels, data.true_labels(AuditAccess{}), keep);
  }
  return {std::move(split), std::move(report)};
}

}  // namespace detail

// Self-refining mining: consistency filter, then per-class rank and select.
// Class sizes for the floor rule are noisy-label counts.
inline std::pair<MinedSplit, MiningReport> mine(const Dataset& data, const Tensor& probs, const MiningConfig& cfg) {
  cfg.validate();
  const auto filtered = consistency_filter(probs, data.labels, data.class_count);
  const auto sizes = class_counts(data.labels, data.class_count);
  std::vector<bool> keep(data.size(), false);
  for (int c = 0; c < data.class_count; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    for (auto i : rank_and_select(filtered.per_class[cu], sizes[cu], cfg)) keep[i] = true;
  }
  return detail::finish_split(data, std::move(keep));
}

inline std::pair<MinedSplit, MiningReport> mine(const Dataset& data, const Network& net, const MiningConfig& cfg) {
  return mine(data, net.predict(data.features), cfg);
}

// Keeps only the mined (labeled) part of a validation set.
inline Dataset refine_validation(const Dataset& val, const Network& net, const MiningConfig& cfg) {
  auto [split, report] = mine(val, net, cfg);
  if (split.labeled.empty()) {
    throw ConfigError("refined validation set is empty; lower mining.confidence_threshold");
  }
  std::vector<std::size_t> rows;
  rows.reserve(split.labeled.size());
  for (const auto& e : split.labeled) rows.push_back(e.index);
  Dataset out = val.subset(rows);
  out.name = val.name + "/refined";
  return out;
}

// Clean-set mining: for each class c a binary classifier (clean c positive,
// clean other classes negative) screens the noisy examples labeled c; those
// it calls negative lose their labels.
inline std::pair<MinedSplit, MiningReport> train_binary_filters(const Dataset& clean, const Dataset& noisy,
                                                                const MlpSpec& spec,
                                                                const BaselineConfig& train_cfg) {
  if (clean.dim() != noisy.dim()) throw DimensionError("clean and noisy feature widths differ");
  if (clean.class_count != noisy.class_count) throw ArgumentError("clean and noisy class counts differ");
  std::vector<bool> keep(noisy.size(), false);
  std::vector<std::string> warnings;
  const auto clean_counts = class_counts(clean.labels, clean.class_count);
  const Dataset no_validation;

  for (int c = 0; c < noisy.class_count; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < noisy.size(); ++i) {
      if (noisy.labels[i] == c) members.push_back(i);
    }
    if (members.empty()) continue;
    if (clean_counts[static_cast<std::size_t>(c)] == 0) {
      warnings.push_back("class " + std::to_string(c) + " absent from clean set; its noisy labels were removed");
      continue;
    }
    if (clean_counts[static_cast<std::size_t>(c)] == clean.size()) {
      warnings.push_back("class " + std::to_string(c) + " has no clean negatives; all its labels kept");
      for (auto i : members) keep[i] = true;
      continue;
    }
    Dataset binary = clean;
    binary.class_count = 2;
    for (auto& y : binary.labels) y = y == c ? 1 : 0;
    binary.clear_true_labels();
    BaselineConfig cfg = train_cfg;
    cfg.balance_classes = true;
    cfg.seed = train_cfg.seed + static_cast<std::uint64_t>(c) + 1;
    const Network init = spec.build(clean.dim(), 2, cfg.seed);
    const Network filter = train_baseline(init, binary, no_validation, cfg).network;
    const Tensor probs = filter.predict(gather_rows(noisy.features, members));
    for (std::size_t k = 0; k < members.size(); ++k) {
      if (probs(static_cast<Eigen::Index>(k), 1) >= probs(static_cast<Eigen::Index>(k), 0)) keep[members[k]] = true;
    }
  }
  auto result = detail::finish_split(noisy, std::move(keep));
  result.second.warnings = std::move(warnings);
  return result;
}

}  // namespace twostage
