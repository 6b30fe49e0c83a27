#include "specdec/engine.hpp"

#include <algorithm>
#include <cmath>

#include "common/errors.hpp"
#include "lm/model.hpp"

namespace specdec {

namespace {

constexpr double kResidualFloor = 1e-15;

void validate_config(const SpecConfig& cfg) {
  if (cfg.k < 1) throw err::ValidationError("spec config: K must be >= 1");
  if (cfg.max_new_tokens < 1) throw err::ValidationError("spec config: max_new_tokens must be >= 1");
  if (cfg.temperature < 0.0) throw err::ValidationError("spec config: temperature must be >= 0");
}

}  // namespace

std::vector<double> distribution_row(std::span<const double> logits, double temperature) {
  std::vector<double> row(logits.size(), 0.0);
  if (temperature == 0.0) {
    row[static_cast<std::size_t>(lm::argmax_lowest_index(logits))] = 1.0;
    return row;
  }
  double mx = logits[0] / temperature;
  for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i] / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    row[i] = std::exp(logits[i] / temperature - mx);
    sum += row[i];
  }
  for (double& v : row) v /= sum;
  return row;
}

int sample_from_probs(std::span<const double> probs, nncore::Rng& rng) {
  const double r = rng.next_double();
  double cdf = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cdf += probs[i];
    if (r < cdf) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

bool accept_decision(std::span<const double> p, std::span<const double> q, int candidate,
                     double coin) {
  const double pc = p[static_cast<std::size_t>(candidate)];
  const double qc = q[static_cast<std::size_t>(candidate)];
  if (qc <= 0.0) return true;
  return coin < std::min(1.0, pc / qc);
}

std::vector<double> residual_distribution(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw err::ShapeError("residual_distribution: length mismatch");
  std::vector<double> r(p.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double v = p[i] - q[i];
    if (v < kResidualFloor) v = 0.0;
    r[i] = v;
    sum += v;
  }
  if (sum == 0.0) return {};
  for (double& v : r) v /= sum;
  return r;
}

SpeculationResult speculate(const lm::SequenceModel& draft, std::span<const int> prefix,
                            const SpecConfig& cfg, nncore::Rng& rng) {
  validate_config(cfg);
  if (prefix.empty()) throw err::ValidationError("speculate: empty prefix");
  const int max_len = draft.config().max_seq_len;
  if (static_cast<int>(prefix.size()) + cfg.k > max_len) {
    throw err::LengthError("speculate: prefix length " + std::to_string(prefix.size()) +
                           " + K " + std::to_string(cfg.k) + " overflows context of " +
                           std::to_string(max_len));
  }

  SpeculationResult result;
  result.draft_probs = nncore::Matrix2D(cfg.k, draft.config().vocab_size);
  std::vector<int> tokens(prefix.begin(), prefix.end());
  for (int i = 0; i < cfg.k; ++i) {
    const lm::ForwardResult fr = draft.forward(tokens);
    const std::vector<double> probs =
        distribution_row(fr.logits.row_span(fr.logits.rows - 1), cfg.temperature);
    const int token = cfg.temperature == 0.0
                          ? lm::argmax_lowest_index(probs)
                          : sample_from_probs(probs, rng);
    std::copy(probs.begin(), probs.end(), result.draft_probs.row(i));
    result.candidates.push_back(token);
    tokens.push_back(token);
  }
  return result;
}

VerifyResult verify(const lm::SequenceModel& target, std::span<const int> prefix,
                    std::span<const int> candidates, const nncore::Matrix2D& draft_probs,
                    const SpecConfig& cfg, nncore::Rng& rng) {
  validate_config(cfg);
  if (static_cast<int>(candidates.size()) != cfg.k) {
    throw err::ValidationError("verify: expected K=" + std::to_string(cfg.k) + " candidates, got " +
                               std::to_string(candidates.size()));
  }
  if (draft_probs.rows != cfg.k || draft_probs.cols != target.config().vocab_size) {
    throw err::ShapeError("verify: draft_probs must be K x |V|");
  }

  std::vector<int> tokens(prefix.begin(), prefix.end());
  tokens.insert(tokens.end(), candidates.begin(), candidates.end());
  const lm::ForwardResult fr = target.forward(tokens);
  const int prefix_len = static_cast<int>(prefix.size());

  VerifyResult result;
  for (int i = 0; i < cfg.k; ++i) {
    const int candidate = candidates[static_cast<std::size_t>(i)];
    const std::vector<double> p =
        distribution_row(fr.logits.row_span(prefix_len - 1 + i), cfg.temperature);

    bool accepted;
    if (cfg.temperature == 0.0) {
      accepted = candidate == lm::argmax_lowest_index(p);
    } else {
      accepted = accept_decision(p, draft_probs.row_span(i), candidate, rng.next_double());
      if (!accepted) {
        const std::vector<double> residual = residual_distribution(p, draft_probs.row_span(i));
        // Numerically identical distributions: the acceptance probability is
        // 1, the residual is never sampled.
        if (residual.empty()) {
          accepted = true;
        } else {
          result.emitted.push_back(sample_from_probs(residual, rng));
          return result;
        }
      }
    }
    if (!accepted) {
      // Greedy rejection: replace with the target argmax.
      result.emitted.push_back(lm::argmax_lowest_index(p));
      return result;
    }
    ++result.accepted_count;
    result.emitted.push_back(candidate);
  }

  // Full acceptance: bonus token from the target's next-step distribution.
  const std::vector<double> bonus =
      distribution_row(fr.logits.row_span(prefix_len + cfg.k - 1), cfg.temperature);
  result.emitted.push_back(cfg.temperature == 0.0 ? lm::argmax_lowest_index(bonus)
                                                  : sample_from_probs(bonus, rng));
  return result;
}

GenerateResult generate(const lm::SequenceModel& target, const lm::SequenceModel& draft,
                        std::span<const int> prompt, const SpecConfig& cfg) {
  validate_config(cfg);
  if (prompt.empty()) throw err::ValidationError("generate: prompt must be non-empty");

  GenerateResult result;
  result.output.assign(prompt.begin(), prompt.end());
  const nncore::Rng base_rng(cfg.seed);
  const int max_len =
      std::min(target.config().max_seq_len, draft.config().max_seq_len);

  int remaining = cfg.max_new_tokens;
  std::uint64_t round_index = 0;
  while (remaining > 0) {
    if (static_cast<int>(result.output.size()) + cfg.k > max_len) break;  // context full

    const nncore::Rng round_rng = base_rng.derive(round_index);
    nncore::Rng draft_rng = round_rng.derive("draft");
    nncore::Rng verify_rng = round_rng.derive("verify");

    const SpeculationResult spec = speculate(draft, result.output, cfg, draft_rng);
    const VerifyResult ver =
        verify(target, result.output, spec.candidates, spec.draft_probs, cfg, verify_rng);

    std::vector<int> kept = ver.emitted;
    bool stop = false;
    if (static_cast<int>(kept.size()) > remaining) kept.resize(static_cast<std::size_t>(remaining));
    if (cfg.eos_token >= 0) {
      for (std::size_t i = 0; i < kept.size(); ++i) {
        if (kept[i] == cfg.eos_token) {
          kept.resize(i + 1);
          stop = true;
          break;
        }
      }
    }

    RoundRecord round;
    round.accepted_count = ver.accepted_count;
    round.draft_calls = cfg.k;
    round.target_calls = 1;
    round.tokens_kept = static_cast<int>(kept.size());
    round.truncated = kept.size() != ver.emitted.size();
    round.bonus_emitted = !round.truncated;
    result.record.rounds.push_back(round);

    result.output.insert(result.output.end(), kept.begin(), kept.end());
    result.record.tokens_generated += static_cast<int>(kept.size());
    remaining -= static_cast<int>(kept.size());
    ++round_index;
    if (stop) break;
  }
  return result;
}

std::vector<int> generate_autoregressive(const lm::SequenceModel& model,
                                         std::span<const int> prompt, const SpecConfig& cfg) {
  validate_config(cfg);
  if (prompt.empty()) throw err::ValidationError("generate_autoregressive: empty prompt");
  std::vector<int> tokens(prompt.begin(), prompt.end());
  const nncore::Rng base_rng(cfg.seed);
  for (int step = 0; step < cfg.max_new_tokens; ++step) {
    if (static_cast<int>(tokens.size()) + 1 > model.config().max_seq_len) break;
    const lm::ForwardResult fr = model.forward(tokens);
    const std::vector<double> probs =
        distribution_row(fr.logits.row_span(fr.logits.rows - 1), cfg.temperature);
    nncore::Rng step_rng = base_rng.derive(static_cast<std::uint64_t>(step));
    const int token = cfg.temperature == 0.0 ? lm::argmax_lowest_index(probs)
                                             : sample_from_probs(probs, step_rng);
    tokens.push_back(token);
    if (cfg.eos_token >= 0 && token == cfg.eos_token) break;
  }
  return tokens;
}

double measure_tau(std::span<const AcceptanceRecord> records) {
  long long rounds = 0;
  long long accepted = 0;
  for (const AcceptanceRecord& record : records) {
    for (const RoundRecord& round : record.rounds) {
      if (round.truncated) continue;
      ++rounds;
      accepted += round.accepted_count;
    }
  }
  if (rounds == 0) {
    throw err::MetricError("measure_tau: no complete verification rounds recorded");
  }
  return static_cast<double>(accepted) / static_cast<double>(rounds);
}

double speedup_proxy(const AcceptanceRecord& record, double draft_cost_ratio) {
  if (draft_cost_ratio < 0.0) {
    throw err::ValidationError("speedup_proxy: draft cost ratio must be >= 0");
  }
  long long target_calls = 0;
  long long draft_calls = 0;
  for (const RoundRecord& round : record.rounds) {
    target_calls += round.target_calls;
    draft_calls += round.draft_calls;
  }
  const double cost = static_cast<double>(target_calls) +
                      draft_cost_ratio * static_cast<double>(draft_calls);
  if (cost <= 0.0) throw err::MetricError("speedup_proxy: no model calls recorded");
  return static_cast<double>(record.tokens_generated) / cost;
}

}  // namespace specdec
