#pragma once

// Experiment configuration.
//
// Grammar, one setting per line:
//
//   line    := blank | comment | setting
//   comment := '#' anything
//   setting := key '=' value [comment]
//   key     := section '.' name | name        (e.g. noise.kind, seed)
//
// Whitespace around keys and values is ignored. `preset = NAME` may only
// appear as the first setting; it loads the named preset and later lines
// override it. Lists (net.hidden) are comma separated. Booleans accept
// true/false/1/0/yes/no.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "twostage/data/augment.hpp"
#include "twostage/errors.hpp"
#include "twostage/mining/baseline.hpp"
#include "twostage/mining/mining.hpp"
#include "twostage/nn/network.hpp"
#include "twostage/nn/optimizer.hpp"
#include "twostage/noise/transition.hpp"
#include "twostage/ssl/pi_model.hpp"

namespace twostage {

inline constexpr const char* kDataDirEnv = "TWOSTAGE_DATA_DIR";

enum class DatasetKind { mnist, cifar10, synthetic };

inline const char* to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::mnist: return "mnist";
    case DatasetKind::cifar10: return "cifar10";
    case DatasetKind::synthetic: return "synthetic";
  }
  return "?";
}

struct DatasetConfig {
  DatasetKind kind = DatasetKind::mnist;
  std::string path;  // empty: $TWOSTAGE_DATA_DIR
  std::size_t train_limit = 0;  // 0 keeps everything
  std::size_t test_limit = 0;
  double validation_fraction = 0.1;
  // synthetic only
  int classes = 4;
  std::size_t per_class = 150;
  std::size_t test_per_class = 100;
  std::size_t dim = 16;
  double separation = 3.0;
};

struct NoiseConfig {
  std::string kind = "none";    // none | symmetric | asymmetric
  double p = 0.0;
  std::string pairs = "mnist";  // mnist | cifar | list "2>7,3>8"

  NoiseSpec spec() const {
    if (kind == "none") return NoiseSpec::symmetric(0.0);
    if (kind == "symmetric") return NoiseSpec::symmetric(p);
    if (kind != "asymmetric") throw ConfigError("noise.kind must be none, symmetric or asymmetric");
    if (pairs == "mnist") return NoiseSpec::mnist_asymmetric(p);
    if (pairs == "cifar") return NoiseSpec::cifar_asymmetric(p);
    NoiseSpec s{NoiseKind::asymmetric, p, {}};
    std::stringstream ss(pairs);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto gt = item.find('>');
      if (gt == std::string::npos) throw ConfigError("noise.pairs entry '" + item + "' is not of the form A>B");
      try {
        s.pairs.emplace_back(std::stoi(item.substr(0, gt)), std::stoi(item.substr(gt + 1)));
      } catch (const std::exception&) {
        throw ConfigError("noise.pairs entry '" + item + "' is not of the form A>B");
      }
    }
    return s;
  }

  // Short tag used to group runs: clean, sym-0.2, asym-0.6.
  std::string setting() const {
    if (kind == "none" || p == 0.0) return "clean";
    std::ostringstream os;
    os << (kind == "symmetric" ? "sym-" : "asym-") << p;
    return os.str();
  }
};

struct ExperimentConfig {
  std::string preset;
  bool extended = false;  // excluded from the default acceptance suite
  std::optional<std::uint64_t> seed;
  std::string output_dir;

  DatasetConfig dataset;
  NoiseConfig noise;
  MiningConfig mining;
  MlpSpec net;
  BaselineConfig baseline;
  bool run_plain = true;
  SslConfig ssl;
  double ssl_input_noise = 0.15;

  std::uint64_t seed_value() const {
    if (!seed) throw ConfigError("seed is mandatory");
    return *seed;
  }

  std::string data_dir() const {
    if (!dataset.path.empty()) return dataset.path;
    const char* env = std::getenv(kDataDirEnv);
    return env ? env : "";
  }

  // Throws ConfigError for missing seed, unreadable data paths or
  // out-of-range numbers.
  void validate() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not a number");
  }
}

inline long long to_int(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not an integer");
  }
}

inline std::size_t to_size(const std::string& v, const std::string& key) {
  const auto n = to_int(v, key);
  if (n < 0) throw ConfigError(key + " must be >= 0");
  return static_cast<std::size_t>(n);
}

inline bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

inline std::string fmt_double(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline Algorithm to_algorithm(const std::string& v, const std::string& key) {
  try {
    return parse_algorithm(v);
  } catch (const ArgumentError&) {
    throw ConfigError(key + ": unknown optimizer '" + v + "'");
  }
}

#define TS_DOUBLE(name, member) \
  Field { name, [](ExperimentConfig& c, const std::string& v) { c.member = to_double(v, name); }, \
          [](const ExperimentConfig& c) { return fmt_double(c.member); } }
#define TS_INT(name, member) \
  Field { name, [](ExperimentConfig& c, const std::string& v) { c.member = static_cast<int>(to_int(v, name)); }, \
          [](const ExperimentConfig& c) { return std::to_string(c.member); } }
#define TS_SIZE(name, member) \
  Field { name, [](ExperimentConfig& c, const std::string& v) { c.member = to_size(v, name); }, \
          [](const ExperimentConfig& c) { return std::to_string(c.member); } }
#define TS_BOOL(name, member) \
  Field { name, [](ExperimentConfig& c, const std::string& v) { c.member = to_bool(v, name); }, \
          [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); } }
#define TS_STRING(name, member) \
  Field { name, [](ExperimentConfig& c, const std::string& v) { c.member = v; }, \
          [](const ExperimentConfig& c) { return c.member; } }
#define TS_OPTIMIZER(prefix, member)                                                                 \
  Field{prefix ".algorithm",                                                                       \
        [](ExperimentConfig& c, const std::string& v) { c.member.algorithm = to_algorithm(v, prefix ".algorithm"); }, \
        [](const ExperimentConfig& c) { return std::string(to_string(c.member.algorithm)); }},     \
      TS_DOUBLE(prefix ".learning_rate", member.learning_rate),                                    \
      TS_DOUBLE(prefix ".momentum", member.momentum),                                              \
      TS_DOUBLE(prefix ".min_learning_rate", member.min_learning_rate),                            \
      TS_INT(prefix ".patience", member.patience),                                                 \
      TS_INT(prefix ".stop_patience", member.stop_patience)

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"seed",
            [](ExperimentConfig& c, const std::string& v) {
              const auto n = to_int(v, "seed");
              if (n < 0) throw ConfigError("seed must be >= 0");
              c.seed = static_cast<std::uint64_t>(n);
            },
            [](const ExperimentConfig& c) { return c.seed ? std::to_string(*c.seed) : std::string(); }},
      TS_STRING("output_dir", output_dir),
      TS_BOOL("extended", extended),
      Field{"dataset.kind",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "mnist") c.dataset.kind = DatasetKind::mnist;
              else if (v == "cifar10") c.dataset.kind = DatasetKind::cifar10;
              else if (v == "synthetic") c.dataset.kind = DatasetKind::synthetic;
              else throw ConfigError("dataset.kind must be mnist, cifar10 or synthetic");
            },
            [](const ExperimentConfig& c) { return std::string(to_string(c.dataset.kind)); }},
      TS_STRING("dataset.path", dataset.path),
      TS_SIZE("dataset.train_limit", dataset.train_limit),
      TS_SIZE("dataset.test_limit", dataset.test_limit),
      TS_DOUBLE("dataset.validation_fraction", dataset.validation_fraction),
      TS_INT("dataset.classes", dataset.classes),
      TS_SIZE("dataset.per_class", dataset.per_class),
      TS_SIZE("dataset.test_per_class", dataset.test_per_class),
      TS_SIZE("dataset.dim", dataset.dim),
      TS_DOUBLE("dataset.separation", dataset.separation),
      TS_STRING("noise.kind", noise.kind),
      TS_DOUBLE("noise.p", noise.p),
      TS_STRING("noise.pairs", noise.pairs),
      TS_DOUBLE("mining.threshold", mining.confidence_threshold),
      TS_DOUBLE("mining.floor", mining.floor_fraction),
      Field{"net.hidden",
            [](ExperimentConfig& c, const std::string& v) {
              c.net.hidden.clear();
              std::stringstream ss(v);
              std::string item;
              while (std::getline(ss, item, ',')) c.net.hidden.push_back(to_size(trim(item), "net.hidden"));
            },
            [](const ExperimentConfig& c) {
              std::string out;
              for (std::size_t k = 0; k < c.net.hidden.size(); ++k) {
                out += (k ? "," : "") + std::to_string(c.net.hidden[k]);
              }
              return out;
            }},
      TS_DOUBLE("net.keep_prob", net.keep_prob),
      TS_DOUBLE("net.input_noise", net.input_noise),
      TS_INT("baseline.epochs", baseline.epochs),
      TS_SIZE("baseline.batch_size", baseline.batch_size),
      TS_BOOL("baseline.early_stopping", baseline.early_stopping),
      TS_BOOL("baseline.run_plain", run_plain),
      TS_OPTIMIZER("baseline.optimizer", baseline.optimizer),
      TS_SIZE("ssl.batch_size", ssl.batch_size),
      TS_DOUBLE("ssl.alpha", ssl.alpha),
      Field{"ssl.schedule",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "fixed") c.ssl.schedule = AlphaSchedule::fixed;
              else if (v == "ramp") c.ssl.schedule = AlphaSchedule::ramp;
              else throw ConfigError("ssl.schedule must be fixed or ramp");
            },
            [](const ExperimentConfig& c) {
              return std::string(c.ssl.schedule == AlphaSchedule::fixed ? "fixed" : "ramp");
            }},
      TS_INT("ssl.ramp_up", ssl.ramp_up_epochs),
      TS_INT("ssl.ramp_down_start", ssl.ramp_down_start),
      TS_INT("ssl.sub_epochs", ssl.sub_epochs),
      TS_BOOL("ssl.temporal_ensembling", ssl.temporal_ensembling),
      TS_DOUBLE("ssl.ema_decay", ssl.ema_decay),
      TS_BOOL("ssl.early_stopping", ssl.early_stopping),
      TS_DOUBLE("ssl.input_noise", ssl_input_noise),
      TS_BOOL("ssl.augment.flip", ssl.augmentation.horizontal_flip),
      TS_INT("ssl.augment.shift", ssl.augmentation.shift_pixels),
      TS_DOUBLE("ssl.augment.noise", ssl.augmentation.gaussian_stddev),
      TS_OPTIMIZER("ssl.optimizer", ssl.optimizer),
  };
  return table;
}

#undef TS_DOUBLE
#undef TS_INT
#undef TS_SIZE
#undef TS_BOOL
#undef TS_STRING
#undef TS_OPTIMIZER

}  // namespace detail

// Applies one `key = value` setting.
inline void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : detail::fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline ExperimentConfig preset_config(const std::string& name);

inline ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>") {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool any_setting = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    try {
      if (key == "preset") {
        if (any_setting) throw ConfigError("preset must be the first setting");
        cfg = preset_config(value);
      } else {
        apply_setting(cfg, key, value);
      }
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
    any_setting = true;
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

// Canonical text form; parse_config(to_text(c)) reproduces c.
inline std::string to_text(const ExperimentConfig& cfg) {
  std::string out;
  if (!cfg.preset.empty()) out += "# from preset " + cfg.preset + "\n";
  for (const auto& f : detail::fields()) {
    const std::string v = f.get(cfg);
    if (v.empty()) continue;
    out += std::string(f.key) + " = " + v + "\n";
  }
  return out;
}

namespace detail {

inline const char* kMnistCommon = R"(seed = 1
dataset.kind = mnist
dataset.validation_fraction = 0.1
net.hidden = 128,128
net.keep_prob = 0.8
baseline.epochs = 40
baseline.batch_size = 100
baseline.optimizer.algorithm = adagrad
baseline.optimizer.learning_rate = 0.1
mining.threshold = 0.9
mining.floor = 0.1
ssl.batch_size = 100
ssl.alpha = 10
ssl.schedule = ramp
ssl.ramp_up = 10
ssl.sub_epochs = 40
ssl.input_noise = 0.15
ssl.optimizer.algorithm = adagrad
ssl.optimizer.learning_rate = 0.02
)";

inline const char* kCifarCommon = R"(seed = 1
extended = true
dataset.kind = cifar10
dataset.validation_fraction = 0.1
net.hidden = 512,256
net.keep_prob = 0.8
baseline.epochs = 60
baseline.optimizer.algorithm = adagrad
baseline.optimizer.learning_rate = 0.05
ssl.alpha = 10
ssl.sub_epochs = 60
ssl.ramp_up = 15
ssl.augment.flip = true
ssl.augment.shift = 2
ssl.optimizer.algorithm = adagrad
ssl.optimizer.learning_rate = 0.01
noise.pairs = cifar
)";

struct PresetEntry {
  const char* name;
  const char* base;
  const char* extra;
};

inline const std::vector<PresetEntry>& presets() {
  static const std::vector<PresetEntry> table = {
      {"mnist-clean", kMnistCommon, "noise.kind = none\n"},
      {"mnist-sym-0.2", kMnistCommon, "noise.kind = symmetric\nnoise.p = 0.2\n"},
      {"mnist-asym-0.2", kMnistCommon, "noise.kind = asymmetric\nnoise.pairs = mnist\nnoise.p = 0.2\n"},
      {"mnist-asym-0.6", kMnistCommon, "noise.kind = asymmetric\nnoise.pairs = mnist\nnoise.p = 0.6\n"},
      {"synthetic", "", R"(seed = 1
dataset.kind = synthetic
dataset.classes = 4
dataset.per_class = 150
dataset.test_per_class = 100
dataset.dim = 16
dataset.separation = 3
dataset.validation_fraction = 0.2
noise.kind = symmetric
noise.p = 0.2
net.hidden = 32
net.keep_prob = 0.9
baseline.epochs = 15
baseline.batch_size = 20
baseline.optimizer.learning_rate = 0.05
ssl.batch_size = 20
ssl.alpha = 1
ssl.ramp_up = 3
ssl.sub_epochs = 6
ssl.input_noise = 0.1
ssl.optimizer.learning_rate = 0.02
)"},
      {"cifar10-clean", kCifarCommon, "noise.kind = none\n"},
      {"cifar10-asym-0.6", kCifarCommon, "noise.kind = asymmetric\nnoise.p = 0.6\n"},
  };
  return table;
}

}  // namespace detail

inline std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& p : detail::presets()) out.emplace_back(p.name);
  return out;
}

inline ExperimentConfig preset_config(const std::string& name) {
  for (const auto& p : detail::presets()) {
    if (name == p.name) {
      ExperimentConfig cfg = parse_config(std::string(p.base) + p.extra, "preset " + name);
      cfg.preset = name;
      return cfg;
    }
  }
  throw ConfigError("unknown preset '" + name + "'");
}

inline void ExperimentConfig::validate() const {
  seed_value();
  if (!(dataset.validation_fraction >= 0.0 && dataset.validation_fraction < 1.0)) {
    throw ConfigError("dataset.validation_fraction must be in [0, 1)");
  }
  if (!(noise.p >= 0.0 && noise.p <= 1.0)) throw ConfigError("noise.p must be in [0, 1]");
  noise.spec();
  if (net.hidden.empty()) throw ConfigError("net.hidden needs at least one layer");
  if (!(net.keep_prob > 0.0 && net.keep_prob <= 1.0)) throw ConfigError("net.keep_prob must be in (0, 1]");
  if (baseline.batch_size == 0) throw ConfigError("baseline.batch_size must be positive");
  if (ssl_input_noise < 0.0) throw ConfigError("ssl.input_noise must be >= 0");
  try {
    mining.validate();
    ssl.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  namespace fs = std::filesystem;
  const std::string dir = data_dir();
  auto need = [&](const std::string& file) {
    const fs::path p = fs::path(dir) / file;
    if (!fs::is_regular_file(p)) throw ConfigError("data file '" + p.string() + "' does not exist");
  };
  switch (dataset.kind) {
    case DatasetKind::mnist:
      if (dir.empty()) throw ConfigError("dataset.path unset and $" + std::string(kDataDirEnv) + " empty");
      for (const char* f : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                            "t10k-labels-idx1-ubyte"}) {
        need(f);
      }
      break;
    case DatasetKind::cifar10:
      if (dir.empty()) throw ConfigError("dataset.path unset and $" + std::string(kDataDirEnv) + " empty");
      for (int k = 1; k <= 5; ++k) need("data_batch_" + std::to_string(k) + ".bin");
      need("test_batch.bin");
      break;
    case DatasetKind::synthetic:
      if (dataset.classes < 2) throw ConfigError("dataset.classes must be >= 2");
      if (dataset.per_class == 0 || dataset.dim == 0) throw ConfigError("synthetic dataset is empty");
      break;
  }
}

}  // namespace twostage
