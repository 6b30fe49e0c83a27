#include "pipeline/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "common/errors.hpp"

namespace pipeline {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

std::string format_metrics_csv(std::span<const MetricsRow> rows, std::uint64_t manifest_hash) {
  std::string out = "# manifest_hash=" + std::to_string(manifest_hash) + "\n";
  out += kMetricsCsvHeader;
  out += "\n";
  for (const MetricsRow& r : rows) {
    out += r.method + "," + r.domain_tag + "," + std::to_string(r.k) + "," +
           format_double(r.temperature) + "," + format_double(r.tau) + "," +
           format_double(r.speedup_proxy) + "," + std::to_string(r.trainable_params) + "," +
           std::to_string(r.train_steps) + "," + format_double(r.data_fraction) + "\n";
  }
  return out;
}

void emit_report(std::span<const MetricsRow> rows, const std::filesystem::path& out_dir,
                 std::uint64_t manifest_hash) {
  if (rows.empty()) {
    throw err::ValidationError("emit_report: no metrics rows to write");
  }
  std::filesystem::create_directories(out_dir);

  {
    std::ofstream out(out_dir / "metrics.csv", std::ios::binary);
    if (!out) throw err::IoError("cannot write " + (out_dir / "metrics.csv").string());
    out << format_metrics_csv(rows, manifest_hash);
    if (!out) throw err::IoError("failed writing metrics.csv");
  }

  nlohmann::json plot;
  plot["manifest_hash"] = manifest_hash;
  auto row_json = [](const MetricsRow& r) {
    return nlohmann::json{{"method", r.method},
                          {"domain_tag", r.domain_tag},
                          {"K", r.k},
                          {"temperature", r.temperature},
                          {"tau", r.tau},
                          {"speedup_proxy", r.speedup_proxy},
                          {"trainable_params", r.trainable_params},
                          {"train_steps", r.train_steps},
                          {"data_fraction", r.data_fraction}};
  };
  // Comparison bars take the four canonical methods; every eda_selfgen_*
  // row additionally lands on its strategy's budget curve (the selected
  // method is the 50% point of the selected curve, so it appears in both).
  plot["method_comparison"] = nlohmann::json::array();
  plot["budget_sweep"] = nlohmann::json::object();
  for (const MetricsRow& r : rows) {
    if (r.method == "training_free" || r.method == "full_ft" || r.method == "eda_base" ||
        r.method == "eda_selfgen_selected") {
      plot["method_comparison"].push_back(row_json(r));
    }
    if (r.method.rfind("eda_selfgen_", 0) == 0) {
      const std::string strategy = r.method.substr(std::string("eda_selfgen_").size());
      plot["budget_sweep"][strategy].push_back(row_json(r));
    }
  }

  std::ofstream out(out_dir / "plotdata.json", std::ios::binary);
  if (!out) throw err::IoError("cannot write " + (out_dir / "plotdata.json").string());
  out << plot.dump(2) << "\n";
  if (!out) throw err::IoError("failed writing plotdata.json");
}

std::vector<MetricsRow> parse_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw err::IoError("cannot open " + path.string());
  std::vector<MetricsRow> rows;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != kMetricsCsvHeader) {
        throw err::ParseError(path.string() + ":" + std::to_string(line_no) +
                              ": unexpected metrics header");
      }
      header_seen = true;
      continue;
    }
    const auto fields = split_csv_line(line);
    if (fields.size() != 9) {
      throw err::ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 9 fields");
    }
    try {
      MetricsRow r;
      r.method = fields[0];
      r.domain_tag = fields[1];
      r.k = std::stoi(fields[2]);
      r.temperature = std::stod(fields[3]);
      r.tau = std::stod(fields[4]);
      r.speedup_proxy = std::stod(fields[5]);
      r.trainable_params = std::stol(fields[6]);
      r.train_steps = std::stol(fields[7]);
      r.data_fraction = std::stod(fields[8]);
      rows.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw err::ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!header_seen) throw err::ParseError(path.string() + ": missing metrics header");
  return rows;
}

}  // namespace pipeline
