#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "twostage/errors.hpp"
#include "twostage/nn/tensor.hpp"

namespace twostage {

// Height, width, channels of image-shaped feature rows. Pixels are stored
// channel-planar: channel, then row, then column.
struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;

  std::size_t size() const { return height * width * channels; }
  bool operator==(const ImageShape&) const = default;
};

// Passkey for reading ground-truth labels. Only audit and evaluation code
// constructs one; the training path never does.
struct AuditAccess {
  explicit AuditAccess() = default;
};

class Dataset {
 public:
  Tensor features;
  std::vector<int> labels;
  int class_count = 0;
  std::string name;
  std::optional<ImageShape> image_shape;

  Dataset() = default;
  Dataset(Tensor x, std::vector<int> y, int classes, std::string dataset_name = {})
      : features(std::move(x)), labels(std::move(y)), class_count(classes),
        name(std::move(dataset_name)) {
    validate();
  }

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
  bool has_true_labels() const { return true_labels_.has_value(); }

  const std::vector<int>& true_labels(AuditAccess) const {
    if (!true_labels_) throw StateError("dataset '" + name + "' carries no true labels");
    return *true_labels_;
  }

  void set_true_labels(std::vector<int> truth) {
    if (truth.size() != labels.size()) {
      throw ConsistencyError("true labels length differs from labels");
    }
    true_labels_ = std::move(truth);
  }

  void clear_true_labels() { true_labels_.reset(); }

  // Rows `idx` in order, with labels and true labels carried along.
  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.features = gather_rows(features, idx);
    out.labels.reserve(idx.size());
    for (auto i : idx) out.labels.push_back(labels[i]);
    out.class_count = class_count;
    out.name = name;
    out.image_shape = image_shape;
    if (true_labels_) {
      std::vector<int> t;
      t.reserve(idx.size());
      for (auto i : idx) t.push_back((*true_labels_)[i]);
      out.true_labels_ = std::move(t);
    }
    return out;
  }

  void validate() const {
    if (static_cast<std::size_t>(features.rows()) != labels.size()) {
      throw ConsistencyError("dataset '" + name + "': " + std::to_string(features.rows()) +
                             " feature rows but " + std::to_string(labels.size()) + " labels");
    }
    if (class_count <= 0) throw ArgumentError("dataset '" + name + "': class count must be positive");
    for (int y : labels) {
      if (y < 0 || y >= class_count) {
        throw ArgumentError("dataset '" + name + "': label " + std::to_string(y) + " out of range");
      }
    }
    if (image_shape && image_shape->size() != dim()) {
      throw DimensionError("dataset '" + name + "': image shape does not match feature width");
    }
  }

 private:
  std::optional<std::vector<int>> true_labels_;
};

// Per-class example counts.
inline std::vector<std::size_t> class_counts(const std::vector<int>& labels, int classes) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

struct SplitPair {
  Dataset train;
  Dataset validation;
  std::uint64_t seed = 0;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> validation_indices;
};

// Uniformly random disjoint split; round(fraction * n) examples go to validation.
inline SplitPair split_train_val(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ArgumentError("validation fraction must be in (0, 1)");
  }
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  SplitPair out;
  out.seed = seed;
  out.validation_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  out.train_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(out.validation_indices.begin(), out.validation_indices.end());
  std::sort(out.train_indices.begin(), out.train_indices.end());
  out.train = data.subset(out.train_indices);
  out.validation = data.subset(out.validation_indices);
  out.train.name = data.name + "/train";
  out.validation.name = data.name + "/validation";
  return out;
}

// Subtracts the per-feature mean of `train` from `train` and every dataset in
// `others`. Returns the mean.
inline RowVector normalize(Dataset& train, std::vector<Dataset*> others = {}) {
  if (train.size() == 0) throw ArgumentError("normalize: empty training set");
  const RowVector mean = train.features.colwise().mean();
  for (Dataset* d : others) {
    if (d->dim() != train.dim()) throw DimensionError("normalize: feature dimensions differ");
  }
  train.features.rowwise() -= mean;
  for (Dataset* d : others) d->features.rowwise() -= mean;
  return mean;
}

// Gaussian blobs, one per class, centred on separation * (random unit vector).
// Unit-variance isotropic noise around each centre.
inline Dataset make_synthetic(int classes, std::size_t per_class, std::size_t dim, double separation,
                              std::uint64_t seed) {
  if (!(separation > 0.0)) throw ArgumentError("make_synthetic: separation must be positive");
  if (classes <= 0 || dim == 0) throw ArgumentError("make_synthetic: need classes and dimensions");
  Rng rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  Tensor centres(classes, static_cast<Eigen::Index>(dim));
  for (int c = 0; c < classes; ++c) {
    for (Eigen::Index k = 0; k < centres.cols(); ++k) centres(c, k) = unit(rng);
    centres.row(c) *= separation / centres.row(c).norm();
  }
  const std::size_t n = per_class * static_cast<std::size_t>(classes);
  Tensor x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(classes));
    y[i] = c;
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
      x(static_cast<Eigen::Index>(i), k) = centres(c, k) + unit(rng);
    }
  }
  Dataset out(std::move(x), y, classes, "synthetic");
  out.set_true_labels(std::move(y));
  return out;
}

// CSV layout: header `label,true_label,f0,...,f{d-1}`, one example per line.
// true_label is left empty when the dataset carries none.
inline void write_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "label,true_label";
  for (std::size_t k = 0; k < data.dim(); ++k) out << ",f" << k;
  out << '\n';
  out.precision(17);
  const std::vector<int>* truth = data.has_true_labels() ? &data.true_labels(AuditAccess{}) : nullptr;
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.labels[i] << ',';
    if (truth) out << (*truth)[i];
    for (std::size_t k = 0; k < data.dim(); ++k) {
      out << ',' << data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    }
    out << '\n';
  }
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline Dataset read_csv(const std::string& path, int classes = 0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("label,true_label", 0) != 0) {
    throw FormatError("'" + path + "': missing label,true_label header");
  }
  const auto dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',') - 1);
  std::vector<int> labels;
  std::vector<int> truth;
  std::vector<double> values;
  bool any_truth = false;
  bool all_truth = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    labels.push_back(std::stoi(cell));
    std::getline(ss, cell, ',');
    if (cell.empty()) {
      all_truth = false;
      truth.push_back(-1);
    } else {
      any_truth = true;
      truth.push_back(std::stoi(cell));
    }
    std::size_t got = 0;
    while (std::getline(ss, cell, ',')) {
      values.push_back(std::stod(cell));
      ++got;
    }
    if (got != dim) throw FormatError("'" + path + "': row " + std::to_string(labels.size()) + " has wrong width");
  }
  const auto n = static_cast<Eigen::Index>(labels.size());
  Tensor x = Eigen::Map<Tensor>(values.data(), n, static_cast<Eigen::Index>(dim));
  if (classes == 0) {
    int top = 0;
    for (int y : labels) top = std::max(top, y);
    for (int y : truth) top = std::max(top, y);
    classes = top + 1;
  }
  Dataset out(std::move(x), std::move(labels), classes, path);
  if (any_truth) {
    if (!all_truth) throw FormatError("'" + path + "': true_label present on some rows only");
    out.set_true_labels(std::move(truth));
  }
  return out;
}

}  // namespace twostage
