#pragma once

#include <span>
#include <vector>

#include "nncore/matrix.hpp"
#include "nncore/tape.hpp"

namespace nncore {

struct AdamConfig {
  double learning_rate = 4e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam moments, shape-congruent with the parameter list the
/// state was initialized against.
class AdamState {
 public:
  AdamState() = default;
  AdamState(AdamConfig config, std::span<Parameter* const> params);

  const AdamConfig& config() const { return config_; }
  long step_count() const { return step_count_; }

  /// One update over all trainable parameters, reading Parameter::grad.
  /// Frozen parameters are left bit-identical. Throws TrainingError on a
  /// non-finite gradient.
  void step(std::span<Parameter* const> params);

 private:
  AdamConfig config_;
  long step_count_ = 0;
  std::vector<Matrix2D> m_;
  std::vector<Matrix2D> v_;
};

void adam_step(std::span<Parameter* const> params, AdamState& state);

}  // namespace nncore
