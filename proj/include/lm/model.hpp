#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "lm/config.hpp"
#include "nncore/rng.hpp"
#include "nncore/tape.hpp"

namespace lm {

/// Bottleneck MLP expert E(h) = U * silu(V * h).
struct ExpertParams {
  nncore::Parameter v_down;  // m x d
  nncore::Parameter u_up;    // d x m
};

/// Two-expert gated FFN. The shared expert is always present; the private
/// expert and the routing rows are empty until the block is gated.
struct GatedExpertBlock {
  ExpertParams shared_expert;
  ExpertParams private_expert;
  nncore::Parameter w_shared;   // 1 x d routing row
  nncore::Parameter w_private;  // 1 x d routing row

  bool gated() const { return !w_shared.empty(); }
};

struct AttentionParams {
  nncore::Parameter wq, wk, wv, wo;  // each d x d
};

struct TransformerBlock {
  nncore::Parameter norm_attn_gain;  // 1 x d
  nncore::Parameter norm_ffn_gain;   // 1 x d
  AttentionParams attn;
  GatedExpertBlock ffn;
};

/// Pre-norm decoder-only stack shared by both models. The draft's FFNs may
/// be gated; the target's never are.
struct TransformerCore {
  ModelConfig cfg;
  nncore::Parameter token_embed;     // |V| x d
  nncore::Parameter pos_embed;       // max_seq_len x d
  std::vector<TransformerBlock> blocks;
  nncore::Parameter final_norm_gain;  // 1 x d
  nncore::Parameter output_head;      // |V| x d

  std::vector<std::pair<std::string, nncore::Parameter*>> named_parameters();
  std::vector<const nncore::Parameter*> parameters() const;
  std::vector<nncore::Parameter*> parameters();
  std::size_t parameter_count() const;
};

struct ForwardRefs {
  nncore::TapeRef logits;
  nncore::TapeRef hiddens;
};

TransformerCore make_core(const ModelConfig& cfg, nncore::Rng& rng);

/// Training-path forward: parameters are registered on the tape so backward
/// accumulates into their gradients.
ForwardRefs forward_on_tape(TransformerCore& core, nncore::GradTape& tape,
                            std::span<const int> tokens);

/// Inference forward on a private non-recording tape.
ForwardResult forward_inference(const TransformerCore& core, std::span<const int> tokens);

class TargetModel final : public SequenceModel {
 public:
  TargetModel() = default;
  static TargetModel create(const ModelConfig& cfg, nncore::Rng& rng);

  ForwardResult forward(std::span<const int> tokens) const override;
  const ModelConfig& config() const override { return core.cfg; }
  std::size_t parameter_count() const override { return core.parameter_count(); }

  TransformerCore core;
};

class DraftModel final : public SequenceModel {
 public:
  DraftModel() = default;
  static DraftModel create_plain(const ModelConfig& cfg, nncore::Rng& rng);

  ForwardResult forward(std::span<const int> tokens) const override;
  const ModelConfig& config() const override { return core.cfg; }
  std::size_t parameter_count() const override { return core.parameter_count(); }

  bool gated() const;

  TransformerCore core;
};

/// A drafter whose distribution is uniform over the vocabulary (all-zero
/// logits); the degradation baseline for acceptance-length comparisons.
class UniformModel final : public SequenceModel {
 public:
  explicit UniformModel(ModelConfig cfg) : cfg_(std::move(cfg)) {}
  ForwardResult forward(std::span<const int> tokens) const override;
  const ModelConfig& config() const override { return cfg_; }
  std::size_t parameter_count() const override { return 0; }

 private:
  ModelConfig cfg_;
};

/// Position-wise gated mix g_s*E_s(h) + g_p*E_p(h) with gates
/// softmax([h w_s, h w_p]). Standalone entry point over the same tape ops
/// the model forward uses.
nncore::Matrix2D gated_ffn_forward(const nncore::Matrix2D& h, const GatedExpertBlock& block);

/// Wraps every plain FFN of a pretrained draft into a gated block: shared
/// expert = pretrained FFN, private expert = deep copy, routing rows = 0.
/// The wrapped model's output distribution is unchanged.
DraftModel build_gated_draft_from_pretrained(const DraftModel& pretrained);

enum class FreezeMode { eda, full_ft, none };

std::string to_string(FreezeMode mode);

/// Per-parameter trainable flags, aligned with core.parameters() order.
struct FreezeMask {
  std::vector<std::uint8_t> trainable;
};

FreezeMask make_freeze_mask(const DraftModel& model, FreezeMode mode);
void apply_freeze_mask(DraftModel& model, const FreezeMask& mask);
std::size_t trainable_scalar_count(const DraftModel& model, const FreezeMask& mask);

/// T=0: argmax with lowest-index tie-break. T>0: sample from
/// softmax(logits / T).
int sample_token(std::span<const double> logits_row, double temperature, nncore::Rng& rng);

int argmax_lowest_index(std::span<const double> row);

}  // namespace lm
