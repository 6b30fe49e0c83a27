#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace pipeline {

/// One (method, domain, K, T) measurement cell. Budget-sweep rows reuse the
/// eda_selfgen_* method family with the selection strategy as suffix and the
/// fraction in data_fraction.
struct MetricsRow {
  std::string method;
  std::string domain_tag;
  int k = 0;
  double temperature = 0.0;
  double tau = 0.0;
  double speedup_proxy = 0.0;
  long trainable_params = 0;
  long train_steps = 0;
  double data_fraction = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

inline constexpr const char* kMetricsCsvHeader =
    "method,domain_tag,K,temperature,tau,speedup_proxy,trainable_params,train_steps,"
    "data_fraction";

std::string format_metrics_csv(std::span<const MetricsRow> rows, std::uint64_t manifest_hash);

/// Writes metrics.csv and plotdata.json. Rows must be non-empty; nothing is
/// written otherwise.
void emit_report(std::span<const MetricsRow> rows, const std::filesystem::path& out_dir,
                 std::uint64_t manifest_hash);

std::vector<MetricsRow> parse_metrics_csv(const std::filesystem::path& path);

}  // namespace pipeline
