#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "nncore/matrix.hpp"

namespace lm {

enum class ModelRole { target, draft };

std::string to_string(ModelRole role);
ModelRole role_from_string(const std::string& s);

struct ModelConfig {
  int vocab_size = 64;
  int model_dim = 96;
  int ffn_dim = 256;
  int n_layers = 4;
  int n_heads = 4;
  int max_seq_len = 128;
  ModelRole role = ModelRole::target;

  void validate() const;

  static ModelConfig target_default();
  static ModelConfig draft_default();
  bool operator==(const ModelConfig&) const = default;
};

struct ForwardResult {
  nncore::Matrix2D logits;   // L x |V|
  nncore::Matrix2D hiddens;  // L x d, post-final-norm pre-head states
};

/// Shared inference surface of target and draft models, so the decoding
/// engine can pair any two of them (including a model with itself). Forward
/// calls are counted for the training-free-selection instrumentation.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;
  virtual ForwardResult forward(std::span<const int> tokens) const = 0;
  virtual const ModelConfig& config() const = 0;
  virtual std::size_t parameter_count() const = 0;

  std::uint64_t forward_calls() const { return forward_calls_; }
  void reset_forward_calls() const { forward_calls_ = 0; }

 protected:
  mutable std::uint64_t forward_calls_ = 0;
};

}  // namespace lm
