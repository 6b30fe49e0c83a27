#pragma once

#include <span>
#include <string>
#include <vector>

#include "pipeline/manifest.hpp"
#include "pipeline/metrics.hpp"
#include "specdec/engine.hpp"

namespace pipeline {

/// Ordered stage list; presets run them front to back.
const std::vector<std::string>& stage_names();

/// Executes one named stage of the manifest. Inputs are checked first and a
/// missing artifact raises DependencyError naming the path; an unknown stage
/// name raises UsageError listing the valid stages. Reruns with an identical
/// manifest produce byte-identical artifacts.
void run_stage(const ExperimentManifest& manifest, const std::string& stage);

void run_all_stages(const ExperimentManifest& manifest);

struct MethodInfo {
  std::string name;
  long trainable_params = 0;
  long train_steps = 0;
  double data_fraction = 0.0;
};

/// Runs the decoding loop over a prompt set for every (K, T) grid cell and
/// aggregates acceptance-length and cost-proxy metrics into one row per
/// cell. The per-prompt seed schedule depends only on (seed, cell, prompt),
/// never on the models, so method comparisons share their randomness.
std::vector<MetricsRow> evaluate_grid(const lm::SequenceModel& target,
                                      const lm::SequenceModel& draft,
                                      std::span<const corpus::CorpusSample> prompts,
                                      const EvaluateStageConfig& cfg, const MethodInfo& info,
                                      std::uint64_t seed, int eos_token);

}  // namespace pipeline
