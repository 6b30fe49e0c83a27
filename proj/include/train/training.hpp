#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "corpus/corpus.hpp"
#include "corpus/traces.hpp"
#include "lm/model.hpp"
#include "nncore/rng.hpp"

namespace train {

struct TrainConfig {
  int batch_size = 16;
  double learning_rate = 4e-5;
  int epochs = 20;
  double lambda_reg = 0.1;
  std::uint64_t seed = 0;
};

struct SelfGenConfig {
  double sample_temperature = 1.0;
  int max_completion_len = 64;
  bool record_hiddens = true;
};

struct LossBreakdown {
  double total = 0.0;
  double cross_entropy = 0.0;
  double hidden_mse = 0.0;
};

struct TrainStats {
  double initial_loss = 0.0;  // mean batch loss over the first epoch
  double final_loss = 0.0;    // mean batch loss over the last epoch
  long steps = 0;
};

/// Distillation loss for one batch of token sequences: soft cross-entropy
/// between the teacher's and the draft's next-token distributions at every
/// prediction position, plus lambda times the mean squared difference of
/// their post-norm hidden states at the same positions. Averaged over all
/// prediction positions pooled across the batch. The teacher runs without
/// gradients; only draft parameters accumulate when with_grad is set.
LossBreakdown draft_loss(lm::DraftModel& draft, const lm::TargetModel& target,
                         std::span<const std::vector<int>> batch, double lambda_reg,
                         bool with_grad);

/// Token sequences usable for next-token training: full prompt+answer
/// streams clipped to the context window; sequences without a prediction
/// pair are rejected.
std::vector<std::vector<int>> training_sequences(std::span<const corpus::CorpusSample> samples,
                                                 int max_seq_len);

struct TrainedTarget {
  lm::TargetModel model;
  TrainStats stats;
};

struct TrainedDraft {
  lm::DraftModel model;
  TrainStats stats;
};

/// Next-token cross-entropy training of a fresh target on ground-truth text.
TrainedTarget train_target(std::span<const corpus::CorpusSample> corpus_samples,
                           const lm::ModelConfig& cfg, const TrainConfig& tc);

/// Supervised fine-tuning continued from existing weights.
TrainedTarget finetune_target(const lm::TargetModel& base,
                              std::span<const corpus::CorpusSample> domain_samples,
                              const TrainConfig& tc);

/// Distills a fresh plain-FFN draft against a frozen target.
TrainedDraft pretrain_draft(const lm::TargetModel& target,
                            std::span<const corpus::CorpusSample> corpus_samples,
                            const lm::ModelConfig& draft_cfg, const TrainConfig& tc);

struct SelfGenDataset {
  std::vector<corpus::CorpusSample> samples;
  corpus::HiddenTraces traces;  // one |A| x d block per sample when recorded
};

/// Samples a completion for every prompt from the target itself and, when
/// requested, stores the target's post-norm hidden state for every answer
/// position. Per-prompt randomness derives from (rng, sample_id).
SelfGenDataset self_generate(const lm::TargetModel& target,
                             std::span<const corpus::CorpusSample> prompts,
                             const SelfGenConfig& cfg, nncore::Rng& rng, int eos_token);

/// Adapts a gated draft against a fine-tuned target under the given freeze
/// mode (eda trains private experts + routing only; full_ft trains all).
TrainedDraft adapt_draft(const lm::DraftModel& draft, const lm::TargetModel& target,
                         std::span<const corpus::CorpusSample> dataset, const TrainConfig& tc,
                         lm::FreezeMode mode);

/// Mean draft_loss over a sample set at the given lambda, without gradients.
LossBreakdown evaluate_draft_loss(lm::DraftModel& draft, const lm::TargetModel& target,
                                  std::span<const corpus::CorpusSample> samples,
                                  double lambda_reg);

/// Mean next-token cross-entropy of a target model on ground-truth text.
double evaluate_target_loss(const lm::TargetModel& target,
                            std::span<const corpus::CorpusSample> samples);

struct Provenance {
  std::vector<std::string> corpora;
  std::string config_summary;
  std::uint64_t seed = 0;
};

struct TrainedPair {
  lm::TargetModel target;
  lm::DraftModel draft;
  Provenance provenance;
};

}  // namespace train
