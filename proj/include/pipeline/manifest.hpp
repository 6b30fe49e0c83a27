#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "corpus/corpus.hpp"
#include "lm/config.hpp"
#include "train/training.hpp"

namespace pipeline {

struct CorpusStageConfig {
  corpus::CorpusSpec base_train;
  corpus::CorpusSpec domain_train;
  corpus::CorpusSpec domain_eval;
  // Fraction of the base training corpus drawn from the domain generator
  // with a disjoint seed. General-text corpora contain a sliver of every
  // domain; this is what gives an unadapted draft its non-zero overlap with
  // a fine-tuned target.
  double base_domain_mix_fraction = 0.08;
  // Self-generation prompt pool: domain prompts mixed with base-distribution
  // prompts, so sample values differ across the pool.
  int selfgen_domain_prompts = 600;
  int selfgen_base_prompts = 400;
  // Base prompts whose self-generations provide the reference statistics.
  int general_prompts = 300;
};

struct TargetStageConfig {
  lm::ModelConfig model = lm::ModelConfig::target_default();
  train::TrainConfig train;
};

struct FinetuneStageConfig {
  train::TrainConfig train;
};

struct DraftStageConfig {
  lm::ModelConfig model = lm::ModelConfig::draft_default();
  train::TrainConfig train;
};

struct SelfgenStageConfig {
  train::SelfGenConfig gen;
};

struct SelectStageConfig {
  int d_prime = 16;
  double rho = 0.9;
  double shrinkage_eps = 1e-4;
  double budget_fraction = 0.5;
};

struct AdaptStageConfig {
  train::TrainConfig train;
};

struct EvaluateStageConfig {
  std::vector<int> k_list = {5};
  std::vector<double> t_list = {0.0, 1.0};
  int max_new_tokens = 12;
  int n_prompts = 250;           // prompts per grid cell (0 = all)
  double draft_cost_ratio = -1;  // < 0: use the draft/target parameter ratio
};

struct SweepStageConfig {
  std::vector<double> fractions = {0.25, 0.5, 0.75, 1.0};
  std::vector<std::string> strategies = {"selected", "random", "reversed"};
  int k = 5;
  double temperature = 0.0;
  int max_new_tokens = 12;
  int n_prompts = 200;
  train::TrainConfig train;
};

struct ExperimentManifest {
  std::uint64_t seed = 0;
  std::string out_root;
  corpus::GeneratorKind domain = corpus::GeneratorKind::arithmetic;

  CorpusStageConfig corpus_stage;
  TargetStageConfig target_stage;
  FinetuneStageConfig finetune_stage;
  DraftStageConfig draft_stage;
  SelfgenStageConfig selfgen_stage;
  SelectStageConfig select_stage;
  AdaptStageConfig adapt_stage;
  EvaluateStageConfig evaluate_stage;
  SweepStageConfig sweep_stage;

  nlohmann::json to_json() const;
  static ExperimentManifest from_json(const nlohmann::json& j);

  void save(const std::filesystem::path& path) const;
  static ExperimentManifest load(const std::filesystem::path& path);

  /// Hash of the experiment-defining fields (everything but out_root);
  /// embedded in every artifact for provenance.
  std::uint64_t hash() const;

  std::filesystem::path artifact(const std::string& relative) const;
};

/// Fixed artifact layout under out_root.
namespace artifact_paths {
inline constexpr const char* manifest = "manifest.json";
inline constexpr const char* base_train = "corpora/base_train.jsonl";
inline constexpr const char* domain_train = "corpora/domain_train.jsonl";
inline constexpr const char* domain_eval = "corpora/domain_eval.jsonl";
inline constexpr const char* selfgen_prompts = "corpora/selfgen_prompts.jsonl";
inline constexpr const char* general_prompts = "corpora/general_prompts.jsonl";
inline constexpr const char* target_base = "models/target_base.ckpt";
inline constexpr const char* target_domain = "models/target_domain.ckpt";
inline constexpr const char* draft_base = "models/draft_base.ckpt";
inline constexpr const char* self_data = "selfgen/self_data.jsonl";
inline constexpr const char* self_traces = "selfgen/self_data.traces.bin";
inline constexpr const char* general_data = "selfgen/general_data.jsonl";
inline constexpr const char* general_traces = "selfgen/general_data.traces.bin";
inline constexpr const char* scored = "select/scored.jsonl";
inline constexpr const char* selected = "select/selected.jsonl";
inline constexpr const char* draft_full_ft = "adapt/draft_full_ft.ckpt";
inline constexpr const char* draft_eda_base = "adapt/draft_eda_base.ckpt";
inline constexpr const char* draft_eda_selected = "adapt/draft_eda_selfgen_selected.ckpt";
inline constexpr const char* adapt_meta = "adapt/adapt_meta.json";
inline constexpr const char* method_rows = "metrics/method_rows.csv";
inline constexpr const char* sweep_rows = "metrics/sweep_rows.csv";
inline constexpr const char* metrics_dir = "metrics";
}  // namespace artifact_paths

}  // namespace pipeline
