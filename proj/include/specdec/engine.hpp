#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lm/config.hpp"
#include "nncore/matrix.hpp"
#include "nncore/rng.hpp"

namespace specdec {

struct SpecConfig {
  int k = 4;                  // draft tokens proposed per round
  double temperature = 0.0;   // 0 = greedy, > 0 = stochastic sampling
  int max_new_tokens = 64;
  std::uint64_t seed = 0;
  int eos_token = -1;         // negative disables end-of-sequence stopping
};

struct RoundRecord {
  int accepted_count = 0;   // in [0, K]
  bool bonus_emitted = false;
  int target_calls = 1;
  int draft_calls = 0;      // = K
  bool truncated = false;   // emitted tokens were cut (token budget or EOS mid-round)
  int tokens_kept = 0;
};

struct AcceptanceRecord {
  std::vector<RoundRecord> rounds;
  int tokens_generated = 0;
};

struct SpeculationResult {
  std::vector<int> candidates;
  nncore::Matrix2D draft_probs;  // K x |V|; at T=0, one-hot rows
};

/// Autoregressively proposes K candidate tokens from the draft at the
/// configured temperature; draft_probs[i] is the exact distribution
/// candidate i was drawn from.
SpeculationResult speculate(const lm::SequenceModel& draft, std::span<const int> prefix,
                            const SpecConfig& cfg, nncore::Rng& rng);

struct VerifyResult {
  int accepted_count = 0;
  std::vector<int> emitted;  // accepted prefix of candidates + one target-sourced token
};

/// One parallel target forward over prefix+candidates, then the lossless
/// accept/reject rule: token c is kept with probability min(1, p[c]/q[c]);
/// the first rejection is replaced by a sample from norm(max(0, p - q)); a
/// fully accepted round appends a bonus token from the target's next-step
/// distribution. At T=0 all three reduce to argmax agreement.
VerifyResult verify(const lm::SequenceModel& target, std::span<const int> prefix,
                    std::span<const int> candidates, const nncore::Matrix2D& draft_probs,
                    const SpecConfig& cfg, nncore::Rng& rng);

struct GenerateResult {
  std::vector<int> output;  // prompt followed by generated tokens
  AcceptanceRecord record;
};

/// Repeats speculate/verify until max_new_tokens, an emitted EOS, or a full
/// context window. Per-round randomness derives from (seed, round index), so
/// draft sampling and verification coin flips are independent streams.
GenerateResult generate(const lm::SequenceModel& target, const lm::SequenceModel& draft,
                        std::span<const int> prompt, const SpecConfig& cfg);

/// Plain token-by-token sampling from one model; the correctness baseline
/// speculative output is compared against. Uses the same per-step stream
/// derivation as generate so T>0 runs are reproducible.
std::vector<int> generate_autoregressive(const lm::SequenceModel& model,
                                         std::span<const int> prompt, const SpecConfig& cfg);

/// Mean accepted count over complete (non-truncated) rounds; the one
/// target-sourced token per round is excluded.
double measure_tau(std::span<const AcceptanceRecord> records);

/// tokens_generated / (target_calls + c * draft_calls).
double speedup_proxy(const AcceptanceRecord& record, double draft_cost_ratio);

// ---- decision primitives, exposed for direct property testing ----

/// Accept iff coin < min(1, p[candidate]/q[candidate]); a zero draft
/// probability accepts unconditionally.
bool accept_decision(std::span<const double> p, std::span<const double> q, int candidate,
                     double coin);

/// norm(max(0, p - q)) with entries below 1e-15 clamped to zero first.
/// Returns an empty vector when the residual is numerically all-zero.
std::vector<double> residual_distribution(std::span<const double> p, std::span<const double> q);

int sample_from_probs(std::span<const double> probs, nncore::Rng& rng);

/// Distribution row for one logits row at temperature T (one-hot at T=0).
std::vector<double> distribution_row(std::span<const double> logits, double temperature);

}  // namespace specdec
