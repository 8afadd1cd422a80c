#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "twostage/data/dataset.hpp"
#include "twostage/errors.hpp"
#include "twostage/nn/losses.hpp"
#include "twostage/nn/metrics.hpp"
#include "twostage/nn/network.hpp"
#include "twostage/nn/optimizer.hpp"
#include "twostage/ssl/sampling.hpp"

namespace twostage {

struct BaselineConfig {
  int epochs = 40;
  std::size_t batch_size = 100;
  // Oversample minority (noisy) classes each epoch.
  bool balance_classes = false;
  bool early_stopping = true;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double val_acc = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainOutcome {
  Network network;  // best-validation parameters
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 0 means the initial parameters
  double best_val_acc = 0.0;
  double best_val_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&, const Network&)>;

// Cross-entropy training on the (noisy) labels with plateau learning-rate
// halving and early stopping driven by validation accuracy.
inline TrainOutcome train_baseline(const Network& init, const Dataset& train, const Dataset& val,
                                   const BaselineConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (cfg.batch_size == 0) throw ArgumentError("batch size must be positive");
  if (train.dim() != init.input_dim()) throw DimensionError("training features do not match network input");

  TrainOutcome out;
  out.network = init;
  if (cfg.epochs <= 0 || train.size() == 0) return out;

  Network net = init;
  OptimizerState opt(cfg.optimizer, net);
  Rng rng(cfg.seed);
  std::vector<double> val_history;
  bool have_best = false;

  std::vector<LabeledEntry> all(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) all[i] = {i, train.labels[i]};

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<LabeledEntry> order =
        cfg.balance_classes ? balance_classes(all, train.class_count, rng).entries : all;
    if (!cfg.balance_classes) std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    std::vector<std::size_t> rows;
    std::vector<int> labels;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      rows.clear();
      labels.clear();
      for (std::size_t k = start; k < end; ++k) {
        rows.push_back(order[k].index);
        labels.push_back(order[k].label);
      }
      const Tensor x = gather_rows(train.features, rows);
      net.zero_grad();
      Trace trace = net.forward(x, Mode::train, &rng);
      auto ce = cross_entropy(trace.output, labels);
      if (!std::isfinite(ce.loss)) throw TrainingError("non-finite cross-entropy loss", epoch);
      net.backward(trace, ce.grad_logits, GradientOf::logits);
      optimizer_step(net, opt);
      loss_sum += ce.loss;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    rec.lr = opt.learning_rate;
    const ValidationScore score = validation_score(net, val.features, val.labels);
    rec.val_acc = score.accuracy;
    rec.val_loss = score.loss;
    val_history.push_back(rec.val_acc);
    // Without validation data the latest parameters are kept.
    if (!have_best || score.better_than({out.best_val_acc, out.best_val_loss}) || val.size() == 0) {
      have_best = true;
      out.best_val_acc = rec.val_acc;
      out.best_val_loss = rec.val_loss;
      out.best_epoch = epoch;
      out.network = net;
    }
    const auto decision = val.size() ? lr_schedule_update(opt, val_history) : ScheduleDecision{};
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.history.push_back(rec);
    if (on_epoch) on_epoch(rec, net);
    if (cfg.early_stopping && decision.stop) break;
  }
  return out;
}

}  // namespace twostage
