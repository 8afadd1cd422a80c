#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "twostage/data/dataset.hpp"
#include "twostage/data/idx.hpp"
#include "twostage/errors.hpp"
#include "twostage/experiment/config.hpp"
#include "twostage/mining/baseline.hpp"
#include "twostage/mining/mining.hpp"
#include "twostage/nn/checkpoint.hpp"
#include "twostage/nn/metrics.hpp"
#include "twostage/noise/transition.hpp"
#include "twostage/ssl/pi_model.hpp"

namespace twostage {

// A pipeline failure tagged with the stage that raised it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what, int exit_code)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)), exit_code_(exit_code) {}

  const std::string& stage() const noexcept { return stage_; }
  int exit_code() const noexcept { return exit_code_; }

 private:
  std::string stage_;
  int exit_code_;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFlagged = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

inline int exit_code_for(const std::exception& e) {
  if (const auto* s = dynamic_cast<const StageError*>(&e)) return s->exit_code();
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  return kExitRuntime;
}

template <class F>
auto run_stage(const std::string& stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const ConfigError& e) {
    throw StageError(stage, e.what(), kExitConfig);
  } catch (const std::exception& e) {
    throw StageError(stage, e.what(), kExitRuntime);
  }
}

// Holds `<dir>/.lock` for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const std::string& dir) {
    std::filesystem::create_directories(dir);
    path_ = (std::filesystem::path(dir) / ".lock").string();
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      throw StateError("output directory '" + dir + "' is in use (remove " + path_ + " if stale)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;
  ~OutputLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }

 private:
  std::string path_;
};

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t z = base * 0x9E3779B97F4A7C15ULL + tag * 0xBF58476D1CE4E5B9ULL + 0x94D049BB133111EBULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace seed_tag {
inline constexpr std::uint64_t noise = 1, split = 2, plain = 3, preliminary = 4, improved = 5, ssl = 6,
                               synthetic = 7, filters = 8;
}

struct PreparedData {
  Dataset train;       // noisy labels, true labels attached
  Dataset validation;  // noisy labels
  Dataset test;        // clean
  NoiseAudit noise;
  RowVector mean;      // subtracted from every split
};

inline Dataset head(const Dataset& d, std::size_t limit) {
  if (limit == 0 || limit >= d.size()) return d;
  std::vector<std::size_t> rows(limit);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  Dataset out = d.subset(rows);
  out.name = d.name;
  return out;
}

// Clean train and test sets as described by the config.
inline std::pair<Dataset, Dataset> load_source(const ExperimentConfig& cfg) {
  const auto& dc = cfg.dataset;
  switch (dc.kind) {
    case DatasetKind::mnist:
      return {head(load_mnist(cfg.data_dir(), true), dc.train_limit),
              head(load_mnist(cfg.data_dir(), false), dc.test_limit)};
    case DatasetKind::cifar10: {
      namespace fs = std::filesystem;
      std::vector<std::string> batches;
      for (int k = 1; k <= 5; ++k) {
        batches.push_back((fs::path(cfg.data_dir()) / ("data_batch_" + std::to_string(k) + ".bin")).string());
      }
      return {head(load_cifar10(batches), dc.train_limit),
              head(load_cifar10({(fs::path(cfg.data_dir()) / "test_batch.bin").string()}), dc.test_limit)};
    }
    case DatasetKind::synthetic: {
      // One draw so train and test share class centres; rows cycle through
      // classes, so the first per_class * classes rows hold per_class each.
      const Dataset all = make_synthetic(dc.classes, dc.per_class + dc.test_per_class, dc.dim, dc.separation,
                                         derive_seed(cfg.seed_value(), seed_tag::synthetic));
      const std::size_t n_train = dc.per_class * static_cast<std::size_t>(dc.classes);
      std::vector<std::size_t> tr(n_train), te(all.size() - n_train);
      std::iota(tr.begin(), tr.end(), std::size_t{0});
      std::iota(te.begin(), te.end(), n_train);
      Dataset train = all.subset(tr), test = all.subset(te);
      train.name = "synthetic/train";
      test.name = "synthetic/test";
      test.clear_true_labels();
      return {std::move(train), std::move(test)};
    }
  }
  throw ConfigError("unsupported dataset kind");
}

// load -> normalize -> inject noise -> split.
inline PreparedData prepare_data(const ExperimentConfig& cfg) {
  auto [train, test] = run_stage("load", [&] { return load_source(cfg); });
  PreparedData out;
  out.mean = run_stage("normalize", [&] { return normalize(train, {&test}); });
  auto noisy = run_stage("inject-noise", [&] {
    return apply_noise(train, build_transition(cfg.noise.spec(), train.class_count),
                       derive_seed(cfg.seed_value(), seed_tag::noise));
  });
  out.noise = std::move(noisy.second);
  run_stage("split", [&] {
    if (cfg.dataset.validation_fraction > 0.0) {
      auto split = split_train_val(noisy.first, cfg.dataset.validation_fraction,
                                   derive_seed(cfg.seed_value(), seed_tag::split));
      out.train = std::move(split.train);
      out.validation = std::move(split.validation);
    } else {
      out.train = std::move(noisy.first);
      out.validation = out.train.subset({});
    }
    return 0;
  });
  out.test = std::move(test);
  return out;
}

inline BaselineConfig baseline_config(const ExperimentConfig& cfg, bool balanced, std::uint64_t tag) {
  BaselineConfig b = cfg.baseline;
  b.balance_classes = balanced;
  b.seed = derive_seed(cfg.seed_value(), tag);
  return b;
}

inline Network fresh_network(const ExperimentConfig& cfg, const PreparedData& data, std::uint64_t tag) {
  return cfg.net.build(data.train.dim(), static_cast<std::size_t>(data.train.class_count),
                       derive_seed(cfg.seed_value(), tag + 100));
}

using ProgressLog = std::function<void(const std::string&)>;

inline EpochCallback epoch_logger(const ProgressLog& log, const std::string& stage) {
  if (!log) return {};
  return [log, stage](const EpochRecord& r, const Network&) {
    std::ostringstream os;
    os << stage << " epoch " << r.epoch << " loss " << r.loss << " val " << r.val_acc << " lr " << r.lr;
    log(os.str());
  };
}

// Cross-entropy on the noisy labels, selected on the noisy validation set.
inline TrainOutcome train_plain(const ExperimentConfig& cfg, const PreparedData& data, const ProgressLog& log = {}) {
  return run_stage("train-baseline", [&] {
    return train_baseline(fresh_network(cfg, data, seed_tag::plain), data.train, data.validation,
                          baseline_config(cfg, false, seed_tag::plain), epoch_logger(log, "plain"));
  });
}

// Class-balanced cross-entropy selected on the noisy validation set. Its only
// job is to refine the validation set for the improved baseline.
inline TrainOutcome train_preliminary(const ExperimentConfig& cfg, const PreparedData& data,
                                      const ProgressLog& log = {}) {
  return run_stage("train-baseline", [&] {
    return train_baseline(fresh_network(cfg, data, seed_tag::preliminary), data.train, data.validation,
                          baseline_config(cfg, true, seed_tag::preliminary), epoch_logger(log, "preliminary"));
  });
}

struct RefinedValidation {
  Dataset data;
  std::vector<std::size_t> rows;  // into the noisy validation set
};

inline RefinedValidation refine(const ExperimentConfig& cfg, const PreparedData& data, const Network& preliminary) {
  return run_stage("refine-validation", [&] {
    RefinedValidation out;
    if (data.validation.size() == 0) {
      out.data = data.validation;
      return out;
    }
    auto [split, report] = mine(data.validation, preliminary, cfg.mining);
    if (split.labeled.empty()) {
      throw ConfigError("refined validation set is empty; lower mining.threshold");
    }
    for (const auto& e : split.labeled) out.rows.push_back(e.index);
    out.data = data.validation.subset(out.rows);
    out.data.name = data.validation.name + "/refined";
    return out;
  });
}

inline RefinedValidation refined_from_rows(const PreparedData& data, std::vector<std::size_t> rows) {
  RefinedValidation out;
  for (auto r : rows) {
    if (r >= data.validation.size()) throw ConsistencyError("refined validation row out of range");
  }
  out.rows = std::move(rows);
  out.data = data.validation.subset(out.rows);
  out.data.name = data.validation.name + "/refined";
  return out;
}

// Class-balanced cross-entropy selected on the refined validation set.
inline TrainOutcome train_improved(const ExperimentConfig& cfg, const PreparedData& data,
                                   const RefinedValidation& val, const ProgressLog& log = {}) {
  return run_stage("train-baseline", [&] {
    return train_baseline(fresh_network(cfg, data, seed_tag::improved), data.train, val.data,
                          baseline_config(cfg, true, seed_tag::improved), epoch_logger(log, "improved"));
  });
}

struct MiningResult {
  MinedSplit split;
  MiningReport report;
};

inline MiningResult run_mining(const ExperimentConfig& cfg, const PreparedData& data, const Network& net) {
  return run_stage("mine", [&] {
    auto [split, report] = mine(data.train, net, cfg.mining);
    return MiningResult{std::move(split), std::move(report)};
  });
}

inline SslConfig ssl_config(const ExperimentConfig& cfg, const PreparedData& data) {
  SslConfig s = cfg.ssl;
  s.seed = derive_seed(cfg.seed_value(), seed_tag::ssl);
  if (data.train.image_shape && !s.augmentation.image_shape) s.augmentation.image_shape = data.train.image_shape;
  if (s.augmentation.offset.size() == 0) s.augmentation.offset = data.mean;
  return s;
}

inline SslOutcome run_ssl(const ExperimentConfig& cfg, const PreparedData& data, const Network& stage1,
                          const MinedSplit& mined, const RefinedValidation& val, const SubEpochCallback& cb = {}) {
  return run_stage("train-ssl", [&] {
    return train_ssl(with_input_noise(stage1, cfg.ssl_input_noise), mined, data.train, val.data,
                     ssl_config(cfg, data), cb);
  });
}

struct Evaluation {
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // rows: true class
};

inline Evaluation evaluate(const Network& net, const Dataset& test) {
  if (net.input_dim() != test.dim()) {
    throw FormatError("checkpoint expects " + std::to_string(net.input_dim()) + " features, test set has " +
                      std::to_string(test.dim()));
  }
  if (net.class_count() < static_cast<std::size_t>(test.class_count)) {
    throw FormatError("checkpoint predicts fewer classes than the test set has");
  }
  const Tensor probs = net.predict(test.features);
  return {accuracy_pct(probs, test.labels), confusion_matrix(probs, test.labels, static_cast<int>(net.class_count()))};
}

inline nlohmann::json to_json(const Evaluation& e) { return {{"accuracy", e.accuracy}, {"confusion", e.confusion}}; }

// ---- artifacts -------------------------------------------------------------

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw IoError("write to '" + p.string() + "' failed");
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read '" + p.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + p.string() + "': " + e.what());
  }
}

inline std::string num(double d) { return fmt_double(d); }

}  // namespace detail

inline std::string baseline_csv(const std::vector<std::pair<std::string, const TrainOutcome*>>& runs) {
  std::string out = "stage,epoch,loss,val_acc,lr\n";
  for (const auto& [stage, run] : runs) {
    if (!run) continue;
    for (const auto& r : run->history) {
      out += stage + "," + std::to_string(r.epoch) + "," + detail::num(r.loss) + "," + detail::num(r.val_acc) + "," +
             detail::num(r.lr) + "\n";
    }
  }
  return out;
}

inline std::string ssl_csv(const SslOutcome& ssl) {
  std::string out = "sub_epoch,supervised,unsupervised,alpha,lr,val_acc\n";
  for (const auto& r : ssl.history) {
    out += std::to_string(r.sub_epoch) + "," + detail::num(r.supervised) + "," + detail::num(r.unsupervised) + "," +
           detail::num(r.alpha) + "," + detail::num(r.lr) + "," + detail::num(r.val_acc) + "\n";
  }
  return out;
}

// Everything train-ssl needs, reloaded from a pipeline output directory.
struct Stage1Artifacts {
  Network network;
  MinedSplit mined;
  std::vector<std::size_t> refined_rows;
};

inline Stage1Artifacts load_stage1(const std::string& dir) {
  namespace fs = std::filesystem;
  Stage1Artifacts a;
  a.network = load_checkpoint((fs::path(dir) / "improved.ck").string());
  a.mined = mined_split_from_json(detail::read_json(fs::path(dir) / "mined_split.json"));
  const auto rv = detail::read_json(fs::path(dir) / "refined_validation.json");
  try {
    a.refined_rows = rv.at("rows").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed refined_validation.json: ") + e.what());
  }
  return a;
}

struct PipelineOptions {
  ProgressLog log;
  bool write_artifacts = true;
};

// load -> normalize -> inject-noise -> split -> train-baseline -> mine ->
// refine-validation -> train-ssl -> evaluate. Every intermediate is written
// to cfg.output_dir; returns the summary.
inline nlohmann::json run_pipeline(const ExperimentConfig& cfg, const PipelineOptions& opt = {}) {
  namespace fs = std::filesystem;
  run_stage("config", [&] {
    cfg.validate();
    return 0;
  });
  if (opt.write_artifacts && cfg.output_dir.empty()) throw StageError("config", "output_dir is not set", kExitConfig);
  std::optional<OutputLock> lock;
  if (opt.write_artifacts) lock.emplace(cfg.output_dir);
  const fs::path dir(cfg.output_dir);
  auto save_text = [&](const char* name, const std::string& text) {
    if (opt.write_artifacts) run_stage("write", [&] {
        detail::write_text(dir / name, text);
        return 0;
      });
  };
  auto save_net = [&](const char* name, const Network& net) {
    if (opt.write_artifacts) run_stage("write", [&] {
        save_checkpoint(net, (dir / name).string());
        return 0;
      });
  };
  auto log = [&](const std::string& s) {
    if (opt.log) opt.log(s);
  };
  nlohmann::json timings;
  auto t0 = std::chrono::steady_clock::now();
  auto lap = [&](const char* name) {
    const auto t = std::chrono::steady_clock::now();
    timings[name] = std::chrono::duration<double>(t - t0).count();
    t0 = t;
  };

  save_text("config.txt", to_text(cfg));
  const PreparedData data = prepare_data(cfg);
  save_text("noise_audit.json", to_json(data.noise).dump(2) + "\n");
  lap("prepare");
  log("train " + std::to_string(data.train.size()) + ", validation " + std::to_string(data.validation.size()) +
      ", test " + std::to_string(data.test.size()));

  std::optional<TrainOutcome> plain;
  if (cfg.run_plain) {
    plain = train_plain(cfg, data, opt.log);
    save_net("plain.ck", plain->network);
    lap("plain");
  }
  const TrainOutcome prelim = train_preliminary(cfg, data, opt.log);
  save_net("preliminary.ck", prelim.network);
  lap("preliminary");
  const RefinedValidation rval = refine(cfg, data, prelim.network);
  save_text("refined_validation.json", nlohmann::json{{"rows", rval.rows}}.dump() + "\n");
  const TrainOutcome improved = train_improved(cfg, data, rval, opt.log);
  save_net("improved.ck", improved.network);
  save_text("baseline_metrics.csv",
            baseline_csv({{"plain", plain ? &*plain : nullptr}, {"preliminary", &prelim}, {"improved", &improved}}));
  lap("improved");

  const MiningResult mined = run_mining(cfg, data, improved.network);
  save_text("mined_split.json", to_json(mined.split).dump() + "\n");
  save_text("mining_report.json", to_json(mined.report).dump(2) + "\n");
  lap("mine");
  if (mined.report.audit) {
    std::ostringstream os;
    os << "mined: correct " << mined.report.audit->correct_pct() << "%, incorrect "
       << mined.report.audit->incorrect_pct() << "%, unlabeled " << mined.report.audit->unlabeled_pct() << "%";
    log(os.str());
  }

  const SslOutcome ssl = run_ssl(cfg, data, improved.network, mined.split, rval,
                                 [&](const SubEpochRecord& r, const Network&) {
                                   std::ostringstream os;
                                   os << "ssl sub-epoch " << r.sub_epoch << " sup " << r.supervised << " unsup "
                                      << r.unsupervised << " alpha " << r.alpha << " val " << r.val_acc;
                                   log(os.str());
                                 });
  save_net("two_stage.ck", ssl.network);
  save_text("ssl_metrics.csv", ssl_csv(ssl));
  lap("ssl");

  nlohmann::json acc;
  run_stage("evaluate", [&] {
    if (plain) acc["cross_entropy"] = evaluate(plain->network, data.test).accuracy;
    acc["preliminary"] = evaluate(prelim.network, data.test).accuracy;
    acc["improved_baseline"] = evaluate(improved.network, data.test).accuracy;
    acc["two_stage"] = evaluate(ssl.network, data.test).accuracy;
    return 0;
  });
  lap("evaluate");

  nlohmann::json summary = {
      {"preset", cfg.preset},
      {"dataset", to_string(cfg.dataset.kind)},
      {"setting", cfg.noise.setting()},
      {"noise", {{"kind", cfg.noise.kind}, {"p", cfg.noise.p}, {"pairs", cfg.noise.pairs}}},
      {"seed", cfg.seed_value()},
      {"extended", cfg.extended},
      {"sizes",
       {{"train", data.train.size()},
        {"validation", data.validation.size()},
        {"refined_validation", rval.data.size()},
        {"test", data.test.size()}}},
      {"test_accuracy", acc},
      {"best_epoch",
       {{"preliminary", prelim.best_epoch},
        {"improved_baseline", improved.best_epoch},
        {"two_stage", ssl.best_sub_epoch}}},
      {"mining", to_json(mined.report)},
      {"ssl_warnings", ssl.warnings},
  };
  if (plain) summary["best_epoch"]["cross_entropy"] = plain->best_epoch;
  save_text("summary.json", summary.dump(2) + "\n");
  save_text("timings.json", timings.dump(2) + "\n");
  return summary;
}

struct BaselineRun {
  TrainOutcome outcome;
  double test_accuracy = 0.0;
};

// improved = false: plain cross-entropy. improved = true: class balancing plus
// a validation set refined by a separate preliminary network.
inline BaselineRun run_baseline(const ExperimentConfig& cfg, bool improved, const ProgressLog& log = {}) {
  run_stage("config", [&] {
    cfg.validate();
    return 0;
  });
  const PreparedData data = prepare_data(cfg);
  BaselineRun out;
  if (!improved) {
    out.outcome = train_plain(cfg, data, log);
  } else {
    const TrainOutcome prelim = train_preliminary(cfg, data, log);
    out.outcome = train_improved(cfg, data, refine(cfg, data, prelim.network), log);
  }
  out.test_accuracy = run_stage("evaluate", [&] { return evaluate(out.outcome.network, data.test).accuracy; });
  return out;
}

}  // namespace twostage
