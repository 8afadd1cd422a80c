#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "twostage/data/augment.hpp"
#include "twostage/data/dataset.hpp"
#include "twostage/errors.hpp"
#include "twostage/mining/mining.hpp"
#include "twostage/nn/losses.hpp"
#include "twostage/nn/metrics.hpp"
#include "twostage/nn/network.hpp"
#include "twostage/nn/optimizer.hpp"
#include "twostage/ssl/sampling.hpp"

namespace twostage {

enum class AlphaSchedule { fixed, ramp };

struct SslConfig {
  std::size_t batch_size = 100;  // N; half labeled, half unlabeled
  double alpha = 1.0;
  AlphaSchedule schedule = AlphaSchedule::ramp;
  int ramp_up_epochs = 10;
  int ramp_down_start = -1;  // sub-epoch where ramp-down begins; < 0 disables
  int sub_epochs = 40;       // budget
  bool temporal_ensembling = false;
  double ema_decay = 0.6;
  bool early_stopping = true;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
  AugmentationSpec augmentation;

  void validate() const {
    if (batch_size == 0 || batch_size % 2 != 0) throw ArgumentError("ssl batch size must be positive and even");
    if (!(alpha >= 0.0)) throw ArgumentError("alpha must be >= 0");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ArgumentError("ema decay must be in [0, 1)");
    if (schedule == AlphaSchedule::ramp) {
      if (ramp_up_epochs < 0) throw ArgumentError("ramp-up length must be >= 0");
      if (ramp_up_epochs > sub_epochs) throw ArgumentError("ramp-up exceeds the sub-epoch budget");
      if (ramp_down_start >= 0 && ramp_down_start < ramp_up_epochs) {
        throw ArgumentError("ramp-down starts before ramp-up ends");
      }
    }
  }
};

// Balance weight at a (possibly fractional) sub-epoch index. The ramp is
// alpha * exp(-5 (1 - tau)^2) with tau = min(1, epoch / ramp_up), held at alpha,
// then alpha * exp(-5 tau^2) with tau running 0 -> 1 from ramp_down_start to
// the end of the budget.
inline double ramp_alpha(double epoch, const SslConfig& cfg) {
  if (cfg.schedule == AlphaSchedule::fixed) return cfg.alpha;
  double w = 1.0;
  if (cfg.ramp_up_epochs > 0 && epoch < cfg.ramp_up_epochs) {
    const double tau = std::max(0.0, epoch) / cfg.ramp_up_epochs;
    w = std::exp(-5.0 * (1.0 - tau) * (1.0 - tau));
  }
  if (cfg.ramp_down_start >= 0 && cfg.sub_epochs > cfg.ramp_down_start && epoch > cfg.ramp_down_start) {
    const double tau = std::min(1.0, (epoch - cfg.ramp_down_start) / (cfg.sub_epochs - cfg.ramp_down_start));
    w *= std::exp(-5.0 * tau * tau);
  }
  return cfg.alpha * w;
}

// Components of the combined objective for one batch.
struct LossBreakdown {
  double supervised = 0.0;
  double unsupervised = 0.0;
  double alpha = 0.0;
  double total = 0.0;  // supervised + alpha * unsupervised
  std::size_t labeled_count = 0;  // M
  std::size_t batch_size = 0;     // N
};

// Accumulates gradients of
//   L = -(1/M) sum_j log z1_j[y_j] + alpha (1/N) sum_i ||z1_i - z2_i||^2
// for a batch whose first M rows are labeled. Each row is augmented and
// forwarded twice with independent draws from `rng`; the supervised term uses
// the first pass. When `targets` is given (temporal ensembling) the second
// pass is replaced by those fixed rows and only z1 carries gradient.
// `first_pass`, when given, receives z1.
inline LossBreakdown ssl_loss_and_gradients(Network& net, const Tensor& batch, std::span<const int> labels,
                                            double alpha, const AugmentationSpec& aug, Rng& rng,
                                            const Tensor* targets = nullptr, Tensor* first_pass = nullptr) {
  const std::size_t n = static_cast<std::size_t>(batch.rows());
  const std::size_t m = labels.size();
  if (m > n) throw DimensionError("ssl step: more labels than batch rows");

  LossBreakdown out;
  out.alpha = alpha;
  out.labeled_count = m;
  out.batch_size = n;

  const Tensor x1 = augment_batch(batch, aug, rng);
  const Trace pass1 = net.forward(x1, Mode::train, &rng);

  const Tensor labeled_probs = pass1.output.topRows(static_cast<Eigen::Index>(m));
  const auto ce = cross_entropy(labeled_probs, labels);
  out.supervised = ce.loss;

  Tensor grad1_logits = Tensor::Zero(pass1.output.rows(), pass1.output.cols());
  if (m > 0) grad1_logits.topRows(static_cast<Eigen::Index>(m)) = ce.grad_logits;

  if (targets != nullptr) {
    require_same_shape(pass1.output, *targets, "temporal ensembling targets");
    const auto cons = consistency_loss(pass1.output, *targets);
    out.unsupervised = cons.loss;
    grad1_logits += softmax_backward(pass1.output, alpha * cons.grad_first);
    net.backward(pass1, grad1_logits, GradientOf::logits);
  } else {
    const Tensor x2 = augment_batch(batch, aug, rng);
    const Trace pass2 = net.forward(x2, Mode::train, &rng);
    const auto cons = consistency_loss(pass1.output, pass2.output);
    out.unsupervised = cons.loss;
    grad1_logits += softmax_backward(pass1.output, alpha * cons.grad_first);
    net.backward(pass1, grad1_logits, GradientOf::logits);
    net.backward(pass2, alpha * cons.grad_second, GradientOf::probabilities);
  }
  out.total = out.supervised + alpha * out.unsupervised;
  if (first_pass != nullptr) *first_pass = pass1.output;
  return out;
}

// One optimizer update on the combined objective.
inline LossBreakdown ssl_step(Network& net, OptimizerState& opt, const Tensor& batch, std::span<const int> labels,
                              double alpha, const AugmentationSpec& aug, Rng& rng, const Tensor* targets = nullptr,
                              Tensor* first_pass = nullptr) {
  net.zero_grad();
  const LossBreakdown loss = ssl_loss_and_gradients(net, batch, labels, alpha, aug, rng, targets, first_pass);
  if (!std::isfinite(loss.total)) throw NumericError("non-finite ssl loss");
  optimizer_step(net, opt);
  return loss;
}

// Exponential moving average of per-example outputs with bias correction.
struct EmaState {
  Tensor accumulated;  // Z, (n, C)
  int epochs = 0;      // t
  double decay = 0.6;  // beta

  EmaState() = default;
  EmaState(std::size_t n, std::size_t classes, double beta)
      : accumulated(Tensor::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(classes))), decay(beta) {
    if (!(beta >= 0.0 && beta < 1.0)) throw ArgumentError("ema decay must be in [0, 1)");
  }

  // Z / (1 - beta^t)
  Tensor targets() const {
    if (epochs == 0) return accumulated;
    return accumulated / (1.0 - std::pow(decay, epochs));
  }
};

// Z <- beta Z + (1 - beta) z; t <- t + 1. Returns the corrected targets.
inline Tensor temporal_ensemble_update(EmaState& ema, const Tensor& outputs) {
  require_same_shape(ema.accumulated, outputs, "temporal_ensemble_update");
  ema.accumulated = ema.decay * ema.accumulated + (1.0 - ema.decay) * outputs;
  ++ema.epochs;
  return ema.targets();
}

// Averages over the batches of one sub-epoch, plus the schedule state.
struct SubEpochRecord {
  int sub_epoch = 0;
  double supervised = 0.0;
  double unsupervised = 0.0;
  double alpha = 0.0;
  double lr = 0.0;
  double val_acc = 0.0;
  double val_loss = 0.0;
  bool labeled_only = false;  // unlabeled pool was empty
};

struct SslOutcome {
  Network network;
  std::vector<SubEpochRecord> history;
  int best_sub_epoch = 0;  // 0 means the initial network
  double best_val_acc = 0.0;
  double best_val_loss = 0.0;
  std::vector<std::string> warnings;
};

using SubEpochCallback = std::function<void(const SubEpochRecord&, const Network&)>;

// Semi-supervised training over a mined split, continuing from `init`.
// Validation accuracy (on `val`, ideally the refined set) drives the plateau
// schedule, early stopping and the best-parameter checkpoint.
inline SslOutcome train_ssl(const Network& init, const MinedSplit& mined, const Dataset& data, const Dataset& val,
                            const SslConfig& cfg, const SubEpochCallback& on_sub_epoch = {}) {
  cfg.validate();
  mined.validate(&data.labels);
  if (mined.source_size != data.size()) throw ConsistencyError("mined split does not match the dataset");
  if (cfg.augmentation.enabled()) cfg.augmentation.validate(data.dim());

  SslOutcome out;
  out.network = init;
  if (cfg.sub_epochs <= 0) return out;
  if (mined.labeled.empty()) throw ArgumentError("train_ssl: mined split has no labeled examples");

  Rng rng(cfg.seed);
  Network net = init;
  OptimizerState opt(cfg.optimizer, net);
  BalancedPool pool = balance_classes(mined.labeled, data.class_count, rng);
  for (int c : pool.empty_classes) {
    out.warnings.push_back("class " + std::to_string(c) + " has no labeled examples after mining");
  }
  BatchSampler sampler(pool.entries, mined.unlabeled, cfg.batch_size);
  if (mined.unlabeled.empty()) out.warnings.push_back("unlabeled pool empty; batches are fully labeled");

  EmaState ema;
  Tensor latest;   // most recent first-pass output per example
  Tensor targets;  // bias-corrected ensemble targets
  if (cfg.temporal_ensembling) {
    ema = EmaState(data.size(), static_cast<std::size_t>(data.class_count), cfg.ema_decay);
    latest = init.predict(data.features);
    targets = temporal_ensemble_update(ema, latest);
  }

  std::vector<double> val_history;
  std::vector<std::size_t> rows;
  std::vector<int> labels;
  for (int sub = 1; sub <= cfg.sub_epochs; ++sub) {
    const double alpha = ramp_alpha(static_cast<double>(sub - 1), cfg);
    sampler.start_sub_epoch();
    const std::size_t batches = sampler.batches_per_sub_epoch();
    SubEpochRecord rec;
    rec.sub_epoch = sub;
    rec.alpha = alpha;
    for (std::size_t b = 0; b < batches; ++b) {
      const BatchComposition batch = sampler.next(rng);
      rec.labeled_only = batch.labeled_only;
      rows.clear();
      labels.clear();
      for (const auto& e : batch.labeled) {
        rows.push_back(e.index);
        labels.push_back(e.label);
      }
      rows.insert(rows.end(), batch.unlabeled.begin(), batch.unlabeled.end());
      const Tensor x = gather_rows(data.features, rows);

      LossBreakdown loss;
      try {
        if (cfg.temporal_ensembling) {
          const Tensor batch_targets = gather_rows(targets, rows);
          Tensor z1;
          loss = ssl_step(net, opt, x, labels, alpha, cfg.augmentation, rng, &batch_targets, &z1);
          for (std::size_t k = 0; k < rows.size(); ++k) {
            latest.row(static_cast<Eigen::Index>(rows[k])) = z1.row(static_cast<Eigen::Index>(k));
          }
        } else {
          loss = ssl_step(net, opt, x, labels, alpha, cfg.augmentation, rng);
        }
      } catch (const NumericError& e) {
        throw TrainingError(e.what(), sub);
      }
      rec.supervised += loss.supervised;
      rec.unsupervised += loss.unsupervised;
    }
    rec.supervised /= static_cast<double>(batches);
    rec.unsupervised /= static_cast<double>(batches);
    if (cfg.temporal_ensembling) targets = temporal_ensemble_update(ema, latest);

    const ValidationScore score = validation_score(net, val.features, val.labels);
    rec.val_acc = score.accuracy;
    rec.val_loss = score.loss;
    rec.lr = opt.learning_rate;
    val_history.push_back(rec.val_acc);
    if (out.best_sub_epoch == 0 || score.better_than({out.best_val_acc, out.best_val_loss}) || val.size() == 0) {
      out.best_val_acc = rec.val_acc;
      out.best_val_loss = rec.val_loss;
      out.best_sub_epoch = sub;
      out.network = net;
    }
    const auto decision = val.size() ? lr_schedule_update(opt, val_history) : ScheduleDecision{};
    out.history.push_back(rec);
    if (on_sub_epoch) on_sub_epoch(rec, net);
    if (cfg.early_stopping && decision.stop) break;
  }
  return out;
}

}  // namespace twostage
