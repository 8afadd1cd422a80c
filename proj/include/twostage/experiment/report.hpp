#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twostage/errors.hpp"

namespace twostage {

struct BandCell {
  std::string method;
  std::string setting;
  double reference = 0.0;
  double std = 0.0;
  std::optional<double> min;
  std::optional<double> max;
  std::optional<std::pair<std::string, double>> min_over;  // (method, points)
};

struct ReferenceBands {
  int version = 0;
  std::string dataset;
  std::vector<std::pair<std::string, std::string>> settings;  // (id, header), column order
  std::vector<std::string> methods;                           // row order
  std::vector<BandCell> cells;

  const BandCell* find(const std::string& method, const std::string& setting) const {
    for (const auto& c : cells) {
      if (c.method == method && c.setting == setting) return &c;
    }
    return nullptr;
  }
};

inline ReferenceBands parse_bands(const nlohmann::json& j) {
  ReferenceBands b;
  try {
    b.version = j.at("version").get<int>();
    b.dataset = j.at("dataset").get<std::string>();
    for (const auto& s : j.at("settings")) b.settings.emplace_back(s.at("id"), s.at("header"));
    b.methods = j.at("methods").get<std::vector<std::string>>();
    for (const auto& c : j.at("cells")) {
      BandCell cell;
      cell.method = c.at("method");
      cell.setting = c.at("setting");
      cell.reference = c.at("reference");
      cell.std = c.value("std", 0.0);
      if (c.contains("min")) cell.min = c["min"].get<double>();
      if (c.contains("max")) cell.max = c["max"].get<double>();
      if (c.contains("min_over")) {
        cell.min_over = std::make_pair(c["min_over"].at("method").get<std::string>(),
                                       c["min_over"].at("points").get<double>());
      }
      b.cells.push_back(std::move(cell));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed reference bands: ") + e.what());
  }
  if (b.version != 1) throw FormatError("unsupported reference bands version " + std::to_string(b.version));
  return b;
}

inline ReferenceBands load_bands(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read reference bands '" + path + "'");
  try {
    return parse_bands(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
}

struct ReportCell {
  std::string method;
  std::string setting;
  double value = 0.0;  // median over runs
  std::size_t runs = 0;
  double lower = 0.0;  // effective band after relative terms
  std::optional<double> upper;
  bool flagged = false;
};

struct Report {
  std::vector<ReportCell> cells;
  std::string text;
  std::string csv;
  std::size_t flagged = 0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw ArgumentError("median of nothing");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Method x setting grid of test accuracies (median over seeds) checked
// against the bands. Summaries must all describe the bands' dataset.
inline Report build_report(const std::vector<nlohmann::json>& summaries, const ReferenceBands& bands) {
  if (summaries.empty()) throw ArgumentError("report needs at least one summary");
  std::map<std::pair<std::string, std::string>, std::vector<double>> values;  // (method, setting)
  for (const auto& s : summaries) {
    const std::string dataset = s.value("dataset", "");
    if (dataset != bands.dataset) {
      throw ArgumentError("summary for dataset '" + dataset + "' mixed into a '" + bands.dataset + "' report");
    }
    const std::string setting = s.value("setting", "");
    if (!s.contains("test_accuracy")) throw FormatError("summary lacks test_accuracy");
    for (const auto& m : bands.methods) {
      if (s["test_accuracy"].contains(m)) values[{m, setting}].push_back(s["test_accuracy"][m].get<double>());
    }
  }

  Report r;
  std::map<std::pair<std::string, std::string>, double> med;
  for (const auto& [key, v] : values) med[key] = median(v);
  for (const auto& [key, v] : values) {
    ReportCell c;
    c.method = key.first;
    c.setting = key.second;
    c.value = med[key];
    c.runs = v.size();
    c.lower = 0.0;
    if (const BandCell* b = bands.find(c.method, c.setting)) {
      if (b->min) c.lower = *b->min;
      c.upper = b->max;
      if (b->min_over) {
        const auto other = med.find({b->min_over->first, c.setting});
        if (other == med.end()) {
          c.flagged = true;  // cannot check the relative requirement
        } else {
          c.lower = std::max(c.lower, other->second + b->min_over->second);
        }
      }
      c.flagged = c.flagged || c.value < c.lower || (c.upper && c.value > *c.upper);
    }
    r.flagged += c.flagged;
    r.cells.push_back(c);
  }

  auto cell_at = [&](const std::string& m, const std::string& s) -> const ReportCell* {
    for (const auto& c : r.cells) {
      if (c.method == m && c.setting == s) return &c;
    }
    return nullptr;
  };
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-20s", "method");
  r.text = buf;
  for (const auto& [id, header] : bands.settings) {
    std::snprintf(buf, sizeof buf, " | %-13s", header.c_str());
    r.text += buf;
  }
  r.text += "\n";
  for (const auto& m : bands.methods) {
    std::snprintf(buf, sizeof buf, "%-20s", m.c_str());
    r.text += buf;
    for (const auto& [id, header] : bands.settings) {
      const ReportCell* c = cell_at(m, id);
      if (!c) {
        std::snprintf(buf, sizeof buf, " | %-13s", "-");
      } else {
        std::snprintf(buf, sizeof buf, " | %6.2f%s%-6s", c->value, c->flagged ? " *" : "  ",
                      c->runs > 1 ? ("(" + std::to_string(c->runs) + ")").c_str() : "");
      }
      r.text += buf;
    }
    r.text += "\n";
  }
  r.text += r.flagged ? std::to_string(r.flagged) + " cell(s) outside their band (*)\n" : "all cells within band\n";

  r.csv = "method,setting,value,runs,lower,upper,flagged\n";
  for (const auto& c : r.cells) {
    std::snprintf(buf, sizeof buf, "%.4f", c.value);
    std::string line = c.method + "," + c.setting + "," + buf + "," + std::to_string(c.runs) + ",";
    std::snprintf(buf, sizeof buf, "%.4f", c.lower);
    line += buf;
    line += ",";
    if (c.upper) {
      std::snprintf(buf, sizeof buf, "%.4f", *c.upper);
      line += buf;
    }
    line += c.flagged ? ",1\n" : ",0\n";
    r.csv += line;
  }
  return r;
}

}  // namespace twostage
