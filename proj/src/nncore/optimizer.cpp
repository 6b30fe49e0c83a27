#include "nncore/optimizer.hpp"

#include <cmath>

#include "common/errors.hpp"

namespace nncore {

AdamState::AdamState(AdamConfig config, std::span<Parameter* const> params) : config_(config) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Parameter* p : params) {
    m_.emplace_back(p->value.rows, p->value.cols);
    v_.emplace_back(p->value.rows, p->value.cols);
  }
}

void AdamState::step(std::span<Parameter* const> params) {
  if (params.size() != m_.size()) {
    throw err::ConfigError("AdamState::step: parameter list does not match optimizer state");
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    if (!p.trainable) continue;
    Matrix2D& m = m_[pi];
    Matrix2D& v = v_[pi];
    for (std::size_t i = 0; i < p.value.values.size(); ++i) {
      const double g = p.grad.values[i];
      if (!std::isfinite(g)) {
        throw err::TrainingError("non-finite gradient in parameter '" + p.name + "'");
      }
      m.values[i] = config_.beta1 * m.values[i] + (1.0 - config_.beta1) * g;
      v.values[i] = config_.beta2 * v.values[i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m.values[i] / bc1;
      const double v_hat = v.values[i] / bc2;
      p.value.values[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

void adam_step(std::span<Parameter* const> params, AdamState& state) { state.step(params); }

}  // namespace nncore
