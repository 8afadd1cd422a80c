// twostage: command-line front end for the noisy-label pipeline.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "twostage/data/dataset.hpp"
#include "twostage/experiment/config.hpp"
#include "twostage/experiment/pipeline.hpp"
#include "twostage/experiment/report.hpp"
#include "twostage/mining/mining.hpp"
#include "twostage/nn/checkpoint.hpp"

#ifndef TWOSTAGE_DEFAULT_BANDS
#define TWOSTAGE_DEFAULT_BANDS "data/reference_bands.json"
#endif

namespace fs = std::filesystem;
using namespace twostage;

namespace {

struct ConfigArgs {
  std::string preset;
  std::string config;
  std::string out;
  std::string data_dir;
  std::vector<std::string> overrides;
  bool quiet = false;

  void attach(CLI::App* app) {
    auto* p = app->add_option("--preset", preset, "Named preset (see `twostage presets`)");
    auto* c = app->add_option("--config", config, "Config file (key = value lines)");
    p->excludes(c);
    app->add_option("--out", out, "Output directory (overrides output_dir)");
    app->add_option("--data-dir", data_dir, "Dataset directory (overrides dataset.path)");
    app->add_option("--set", overrides, "Extra KEY=VALUE setting, repeatable");
    app->add_flag("-q,--quiet", quiet, "No progress output");
  }

  ExperimentConfig load() const {
    ExperimentConfig cfg;
    if (!preset.empty()) {
      cfg = preset_config(preset);
    } else if (!config.empty()) {
      cfg = load_config(config);
    } else {
      throw ConfigError("one of --preset or --config is required");
    }
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
      apply_setting(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }
    if (!out.empty()) cfg.output_dir = out;
    if (!data_dir.empty()) cfg.dataset.path = data_dir;
    if (cfg.output_dir.empty()) cfg.output_dir = "runs/" + (cfg.preset.empty() ? std::string("custom") : cfg.preset);
    return cfg;
  }

  ProgressLog logger() const {
    if (quiet) return {};
    return [](const std::string& s) { std::cerr << s << '\n'; };
  }
};

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path().empty() ? fs::path(".") : p.parent_path());
  detail::write_text(p, text);
}

int cmd_inject_noise(const ConfigArgs& args) {
  const ExperimentConfig cfg = args.load();
  cfg.validate();
  OutputLock lock(cfg.output_dir);
  const PreparedData data = prepare_data(cfg);
  const fs::path dir(cfg.output_dir);
  nlohmann::json labels = {{"train", data.train.labels},
                           {"train_true", data.train.true_labels(AuditAccess{})},
                           {"validation", data.validation.labels}};
  write_file(dir / "noisy_labels.json", labels.dump() + "\n");
  write_file(dir / "noise_audit.json", to_json(data.noise).dump(2) + "\n");
  std::cout << "noise: " << 100.0 * data.noise.incorrect_fraction << "% of " << data.train.size() + data.validation.size()
            << " labels flipped; wrote " << (dir / "noisy_labels.json").string() << '\n';
  return kExitOk;
}

int cmd_train_baseline(const ConfigArgs& args, bool improved) {
  const ExperimentConfig cfg = args.load();
  cfg.validate();
  OutputLock lock(cfg.output_dir);
  const fs::path dir(cfg.output_dir);
  const PreparedData data = prepare_data(cfg);
  TrainOutcome outcome;
  const char* name = improved ? "improved" : "plain";
  if (improved) {
    const TrainOutcome prelim = train_preliminary(cfg, data, args.logger());
    save_checkpoint(prelim.network, (dir / "preliminary.ck").string());
    const RefinedValidation rval = refine(cfg, data, prelim.network);
    write_file(dir / "refined_validation.json", nlohmann::json{{"rows", rval.rows}}.dump() + "\n");
    outcome = train_improved(cfg, data, rval, args.logger());
  } else {
    outcome = train_plain(cfg, data, args.logger());
  }
  save_checkpoint(outcome.network, (dir / (std::string(name) + ".ck")).string());
  write_file(dir / (std::string(name) + "_metrics.csv"), baseline_csv({{name, &outcome}}));
  const double acc = evaluate(outcome.network, data.test).accuracy;
  std::cout << name << " baseline: best epoch " << outcome.best_epoch << ", test accuracy " << acc << "%\n";
  return kExitOk;
}

int cmd_mine(const ConfigArgs& args, const std::string& checkpoint, const std::string& clean_set) {
  const ExperimentConfig cfg = args.load();
  cfg.validate();
  OutputLock lock(cfg.output_dir);
  const fs::path dir(cfg.output_dir);
  const PreparedData data = prepare_data(cfg);
  MiningResult mined;
  if (!clean_set.empty()) {
    Dataset clean = read_csv(clean_set, data.train.class_count);
    if (clean.dim() != data.train.dim()) throw DimensionError("clean set feature width differs from the dataset");
    clean.features.rowwise() -= data.mean;
    BaselineConfig bc = baseline_config(cfg, true, seed_tag::filters);
    bc.early_stopping = false;
    auto [split, report] = train_binary_filters(clean, data.train, cfg.net, bc);
    mined = {std::move(split), std::move(report)};
  } else {
    const std::string ck = checkpoint.empty() ? (dir / "improved.ck").string() : checkpoint;
    mined = run_mining(cfg, data, load_checkpoint(ck));
  }
  write_file(dir / "mined_split.json", to_json(mined.split).dump() + "\n");
  write_file(dir / "mining_report.json", to_json(mined.report).dump(2) + "\n");
  std::cout << "retained " << mined.split.labeled.size() << " of " << mined.split.source_size << " labels";
  if (mined.report.audit) {
    std::cout << " (correct " << mined.report.audit->correct_pct() << "%, incorrect "
              << mined.report.audit->incorrect_pct() << "%, unlabeled " << mined.report.audit->unlabeled_pct() << "%)";
  }
  std::cout << '\n';
  for (const auto& w : mined.report.warnings) std::cerr << "warning: " << w << '\n';
  return kExitOk;
}

int cmd_train_ssl(const ConfigArgs& args) {
  const ExperimentConfig cfg = args.load();
  cfg.validate();
  OutputLock lock(cfg.output_dir);
  const fs::path dir(cfg.output_dir);
  const PreparedData data = prepare_data(cfg);
  Stage1Artifacts s1 = run_stage("load-stage1", [&] { return load_stage1(cfg.output_dir); });
  const RefinedValidation rval = refined_from_rows(data, s1.refined_rows);
  const auto log = args.logger();
  const SslOutcome ssl = run_ssl(cfg, data, s1.network, s1.mined, rval, [&](const SubEpochRecord& r, const Network&) {
    if (log) log("ssl sub-epoch " + std::to_string(r.sub_epoch) + " val " + std::to_string(r.val_acc));
  });
  save_checkpoint(ssl.network, (dir / "two_stage.ck").string());
  write_file(dir / "ssl_metrics.csv", ssl_csv(ssl));
  for (const auto& w : ssl.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "two-stage: best sub-epoch " << ssl.best_sub_epoch << ", test accuracy "
            << evaluate(ssl.network, data.test).accuracy << "%\n";
  return kExitOk;
}

int cmd_evaluate(const ConfigArgs& args, const std::string& checkpoint, bool as_json) {
  ExperimentConfig cfg = args.load();
  cfg.validate();
  const PreparedData data = prepare_data(cfg);
  const Evaluation e = evaluate(load_checkpoint(checkpoint), data.test);
  if (as_json) {
    std::cout << to_json(e).dump(2) << '\n';
    return kExitOk;
  }
  std::cout << "accuracy " << e.accuracy << "%\nconfusion (rows true, columns predicted):\n";
  for (const auto& row : e.confusion) {
    for (std::size_t k = 0; k < row.size(); ++k) std::cout << (k ? " " : "") << row[k];
    std::cout << '\n';
  }
  return kExitOk;
}

int cmd_run(const ConfigArgs& args) {
  const ExperimentConfig cfg = args.load();
  PipelineOptions opt;
  opt.log = args.logger();
  const auto summary = run_pipeline(cfg, opt);
  const auto& acc = summary["test_accuracy"];
  for (auto it = acc.begin(); it != acc.end(); ++it) std::cout << it.key() << ": " << it.value() << "%\n";
  std::cout << "artifacts in " << cfg.output_dir << '\n';
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& paths, const std::string& bands_path, const std::string& csv_out) {
  std::vector<nlohmann::json> summaries;
  for (const auto& p : paths) {
    fs::path path(p);
    if (fs::is_directory(path)) path /= "summary.json";
    summaries.push_back(detail::read_json(path));
  }
  const Report r = build_report(summaries, load_bands(bands_path));
  std::cout << r.text;
  if (!csv_out.empty()) write_file(csv_out, r.csv);
  return r.flagged ? kExitFlagged : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage training on noisy labels: mine a clean subset, then semi-supervised training"};
  app.require_subcommand(1);

  ConfigArgs args;
  auto* inject = app.add_subcommand("inject-noise", "Apply the configured label noise and write the noisy labels");
  args.attach(inject);

  bool improved = false;
  auto* baseline = app.add_subcommand("train-baseline", "Cross-entropy baseline on the noisy labels");
  args.attach(baseline);
  baseline->add_flag("--improved", improved, "Class balancing plus refined validation");

  std::string checkpoint, clean_set;
  auto* mine_cmd = app.add_subcommand("mine", "Split training labels into a kept set and an unlabeled pool");
  args.attach(mine_cmd);
  mine_cmd->add_option("--checkpoint", checkpoint, "Network used for mining (default <out>/improved.ck)");
  mine_cmd->add_option("--clean-set", clean_set, "CSV of clean examples; mines with per-class binary filters")
      ->check(CLI::ExistingFile);

  auto* ssl = app.add_subcommand("train-ssl", "Semi-supervised stage from <out>/improved.ck and mined_split.json");
  args.attach(ssl);

  bool as_json = false;
  std::string eval_checkpoint;
  auto* eval = app.add_subcommand("evaluate", "Test accuracy and confusion matrix of a checkpoint");
  args.attach(eval);
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_flag("--json", as_json, "Print JSON");

  auto* run = app.add_subcommand("run", "Full pipeline");
  args.attach(run);

  std::vector<std::string> summaries;
  std::string bands = TWOSTAGE_DEFAULT_BANDS, csv_out;
  auto* report = app.add_subcommand("report", "Accuracy grid of pipeline summaries against the reference bands");
  report->add_option("summaries", summaries, "summary.json files or run directories")->required();
  report->add_option("--bands", bands, "Reference bands file");
  report->add_option("--csv", csv_out, "Also write the grid as CSV");

  auto* presets = app.add_subcommand("presets", "List presets, or print one with --show");
  std::string show;
  presets->add_option("--show", show, "Preset to print");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*inject) return cmd_inject_noise(args);
    if (*baseline) return cmd_train_baseline(args, improved);
    if (*mine_cmd) return cmd_mine(args, checkpoint, clean_set);
    if (*ssl) return cmd_train_ssl(args);
    if (*eval) return cmd_evaluate(args, eval_checkpoint, as_json);
    if (*run) return cmd_run(args);
    if (*report) return cmd_report(summaries, bands, csv_out);
    if (*presets) {
      if (!show.empty()) {
        std::cout << to_text(preset_config(show));
      } else {
        for (const auto& n : preset_names()) {
          std::cout << n << (preset_config(n).extended ? "  (extended)" : "") << '\n';
        }
      }
      return kExitOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitOk;
}
