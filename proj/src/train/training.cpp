#include "train/training.hpp"

#include <algorithm>
#include <cmath>

#include "common/errors.hpp"
#include "nncore/optimizer.hpp"
#include "nncore/tape.hpp"

namespace train {

namespace {

using nncore::GradTape;
using nncore::Matrix2D;
using nncore::TapeRef;

void validate_train_config(const TrainConfig& tc) {
  if (tc.batch_size < 1) throw err::ConfigError("train config: batch_size must be >= 1");
  if (tc.epochs < 0) throw err::ConfigError("train config: epochs must be >= 0");
  if (tc.lambda_reg < 0.0) throw err::ConfigError("train config: lambda_reg must be >= 0");
  if (!(tc.learning_rate > 0.0)) throw err::ConfigError("train config: learning_rate must be > 0");
}

/// loss = sum over sequences of per-position loss nodes, then / positions.
struct BatchLossRefs {
  TapeRef total;
  TapeRef cross_entropy;
  TapeRef hidden_mse;
};

BatchLossRefs draft_loss_on_tape(lm::DraftModel& draft, const lm::TargetModel& target,
                                 GradTape& tape, std::span<const std::vector<int>> batch,
                                 double lambda_reg) {
  TapeRef ce_sum = tape.constant(Matrix2D::scalar(0.0));
  TapeRef mse_sum = tape.constant(Matrix2D::scalar(0.0));
  long positions = 0;
  for (const std::vector<int>& seq : batch) {
    if (seq.size() < 2) {
      throw err::ValidationError("draft_loss: sequence of length " + std::to_string(seq.size()) +
                                 " has no next-token pair");
    }
    const std::span<const int> inputs(seq.data(), seq.size() - 1);

    const lm::ForwardResult teacher = target.forward(inputs);
    const Matrix2D teacher_probs = nncore::softmax_rows_matrix(teacher.logits);

    const lm::ForwardRefs student = lm::forward_on_tape(draft.core, tape, inputs);
    ce_sum = add(tape, ce_sum, soft_cross_entropy_sum(tape, teacher_probs, student.logits));
    mse_sum = add(tape, mse_sum,
                  squared_diff_row_mean_sum(tape, student.hiddens, teacher.hiddens));
    positions += static_cast<long>(inputs.size());
  }
  const double inv = 1.0 / static_cast<double>(positions);
  const TapeRef ce_mean = scale(tape, ce_sum, inv);
  const TapeRef mse_mean = scale(tape, mse_sum, inv);
  const TapeRef total = add_scaled(tape, ce_mean, lambda_reg, mse_mean);
  return {total, ce_mean, mse_mean};
}

double hard_loss_on_tape(lm::TargetModel& model, GradTape& tape,
                         std::span<const std::vector<int>> batch, TapeRef& out_loss) {
  TapeRef sum = tape.constant(Matrix2D::scalar(0.0));
  long positions = 0;
  for (const std::vector<int>& seq : batch) {
    if (seq.size() < 2) {
      throw err::ValidationError("train_target: sequence has no next-token pair");
    }
    const std::span<const int> inputs(seq.data(), seq.size() - 1);
    const std::span<const int> targets(seq.data() + 1, seq.size() - 1);
    const lm::ForwardRefs refs = lm::forward_on_tape(model.core, tape, inputs);
    sum = add(tape, sum, hard_cross_entropy_sum(tape, refs.logits, targets));
    positions += static_cast<long>(inputs.size());
  }
  out_loss = scale(tape, sum, 1.0 / static_cast<double>(positions));
  return tape.value(out_loss).values[0];
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size,
                                                    nncore::Rng rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

void check_finite_loss(double loss) {
  if (!std::isfinite(loss)) {
    throw err::TrainingError("loss diverged to a non-finite value");
  }
}

}  // namespace

std::vector<std::vector<int>> training_sequences(std::span<const corpus::CorpusSample> samples,
                                                 int max_seq_len) {
  std::vector<std::vector<int>> sequences;
  sequences.reserve(samples.size());
  for (const corpus::CorpusSample& s : samples) {
    std::vector<int> seq = s.full_tokens();
    if (static_cast<int>(seq.size()) > max_seq_len) {
      seq.resize(static_cast<std::size_t>(max_seq_len));
    }
    if (seq.size() < 2) {
      throw err::ValidationError("training sample " + std::to_string(s.sample_id) +
                                 " is too short to train on");
    }
    sequences.push_back(std::move(seq));
  }
  return sequences;
}

LossBreakdown draft_loss(lm::DraftModel& draft, const lm::TargetModel& target,
                         std::span<const std::vector<int>> batch, double lambda_reg,
                         bool with_grad) {
  if (batch.empty()) throw err::ValidationError("draft_loss: empty batch");
  GradTape tape(with_grad);
  const BatchLossRefs refs = draft_loss_on_tape(draft, target, tape, batch, lambda_reg);
  if (with_grad) tape.backward(refs.total);
  return {tape.value(refs.total).values[0], tape.value(refs.cross_entropy).values[0],
          tape.value(refs.hidden_mse).values[0]};
}

TrainedTarget train_target(std::span<const corpus::CorpusSample> corpus_samples,
                           const lm::ModelConfig& cfg, const TrainConfig& tc) {
  validate_train_config(tc);
  nncore::Rng init_rng = nncore::Rng(tc.seed).derive("target-init");
  TrainedTarget out{lm::TargetModel::create(cfg, init_rng), {}};
  out.stats = [&] {
    TrainStats stats;
    if (tc.epochs == 0 || corpus_samples.empty()) return stats;
    const auto sequences = training_sequences(corpus_samples, cfg.max_seq_len);
    auto params = out.model.core.parameters();
    nncore::AdamState adam({.learning_rate = tc.learning_rate}, params);
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
      double epoch_loss = 0.0;
      long epoch_batches_n = 0;
      for (const auto& batch_ids :
           epoch_batches(sequences.size(), tc.batch_size,
                         nncore::Rng(tc.seed).derive("target-epoch").derive(
                             static_cast<std::uint64_t>(epoch)))) {
        std::vector<std::vector<int>> batch;
        batch.reserve(batch_ids.size());
        for (std::size_t id : batch_ids) batch.push_back(sequences[id]);
        GradTape tape;
        TapeRef loss_ref = 0;
        const double loss = hard_loss_on_tape(out.model, tape, batch, loss_ref);
        check_finite_loss(loss);
        for (nncore::Parameter* p : params) p->zero_grad();
        tape.backward(loss_ref);
        adam.step(params);
        epoch_loss += loss;
        ++epoch_batches_n;
        ++stats.steps;
      }
      const double mean = epoch_loss / static_cast<double>(epoch_batches_n);
      if (epoch == 0) stats.initial_loss = mean;
      stats.final_loss = mean;
    }
    return stats;
  }();
  return out;
}

TrainedTarget finetune_target(const lm::TargetModel& base,
                              std::span<const corpus::CorpusSample> domain_samples,
                              const TrainConfig& tc) {
  validate_train_config(tc);
  TrainedTarget out{base, {}};
  if (tc.epochs == 0 || domain_samples.empty()) return out;
  const auto sequences = training_sequences(domain_samples, base.config().max_seq_len);
  auto params = out.model.core.parameters();
  nncore::AdamState adam({.learning_rate = tc.learning_rate}, params);
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    double epoch_loss = 0.0;
    long n_batches = 0;
    for (const auto& batch_ids :
         epoch_batches(sequences.size(), tc.batch_size,
                       nncore::Rng(tc.seed).derive("finetune-epoch").derive(
                           static_cast<std::uint64_t>(epoch)))) {
      std::vector<std::vector<int>> batch;
      batch.reserve(batch_ids.size());
      for (std::size_t id : batch_ids) batch.push_back(sequences[id]);
      GradTape tape;
      TapeRef loss_ref = 0;
      const double loss = hard_loss_on_tape(out.model, tape, batch, loss_ref);
      check_finite_loss(loss);
      for (nncore::Parameter* p : params) p->zero_grad();
      tape.backward(loss_ref);
      adam.step(params);
      epoch_loss += loss;
      ++n_batches;
      ++out.stats.steps;
    }
    const double mean = epoch_loss / static_cast<double>(n_batches);
    if (epoch == 0) out.stats.initial_loss = mean;
    out.stats.final_loss = mean;
  }
  return out;
}

namespace {

TrainedDraft run_draft_training(lm::DraftModel model, const lm::TargetModel& target,
                                std::span<const corpus::CorpusSample> samples,
                                const TrainConfig& tc, const std::string& stream_label) {
  TrainedDraft out{std::move(model), {}};
  if (tc.epochs == 0 || samples.empty()) return out;
  const auto sequences = training_sequences(samples, out.model.config().max_seq_len);
  auto params = out.model.core.parameters();
  nncore::AdamState adam({.learning_rate = tc.learning_rate}, params);
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    double epoch_loss = 0.0;
    long n_batches = 0;
    for (const auto& batch_ids :
         epoch_batches(sequences.size(), tc.batch_size,
                       nncore::Rng(tc.seed).derive(stream_label).derive(
                           static_cast<std::uint64_t>(epoch)))) {
      std::vector<std::vector<int>> batch;
      batch.reserve(batch_ids.size());
      for (std::size_t id : batch_ids) batch.push_back(sequences[id]);
      for (nncore::Parameter* p : params) p->zero_grad();
      const LossBreakdown loss = draft_loss(out.model, target, batch, tc.lambda_reg, true);
      check_finite_loss(loss.total);
      adam.step(params);
      epoch_loss += loss.total;
      ++n_batches;
      ++out.stats.steps;
    }
    const double mean = epoch_loss / static_cast<double>(n_batches);
    if (epoch == 0) out.stats.initial_loss = mean;
    out.stats.final_loss = mean;
  }
  return out;
}

}  // namespace

TrainedDraft pretrain_draft(const lm::TargetModel& target,
                            std::span<const corpus::CorpusSample> corpus_samples,
                            const lm::ModelConfig& draft_cfg, const TrainConfig& tc) {
  validate_train_config(tc);
  if (draft_cfg.vocab_size != target.config().vocab_size ||
      draft_cfg.model_dim != target.config().model_dim) {
    throw err::ConfigError(
        "pretrain_draft: draft and target must share vocab_size and model_dim");
  }
  nncore::Rng init_rng = nncore::Rng(tc.seed).derive("draft-init");
  lm::DraftModel draft = lm::DraftModel::create_plain(draft_cfg, init_rng);
  return run_draft_training(std::move(draft), target, corpus_samples, tc, "pretrain-epoch");
}

TrainedDraft adapt_draft(const lm::DraftModel& draft, const lm::TargetModel& target,
                         std::span<const corpus::CorpusSample> dataset, const TrainConfig& tc,
                         lm::FreezeMode mode) {
  validate_train_config(tc);
  if (mode != lm::FreezeMode::eda && mode != lm::FreezeMode::full_ft) {
    throw err::ConfigError("adapt_draft: mode must be eda or full_ft");
  }
  lm::DraftModel adapted = draft;
  apply_freeze_mask(adapted, make_freeze_mask(adapted, mode));
  return run_draft_training(std::move(adapted), target, dataset, tc, "adapt-epoch");
}

SelfGenDataset self_generate(const lm::TargetModel& target,
                             std::span<const corpus::CorpusSample> prompts,
                             const SelfGenConfig& cfg, nncore::Rng& rng, int eos_token) {
  if (cfg.max_completion_len < 1) {
    throw err::ConfigError("self_generate: max_completion_len must be >= 1");
  }
  if (cfg.sample_temperature < 0.0) {
    throw err::ConfigError("self_generate: sample_temperature must be >= 0");
  }
  SelfGenDataset dataset;
  dataset.traces.width = target.config().model_dim;
  const int max_len = target.config().max_seq_len;
  for (const corpus::CorpusSample& prompt : prompts) {
    if (prompt.prompt_tokens.empty()) {
      throw err::ValidationError("self_generate: sample " + std::to_string(prompt.sample_id) +
                                 " has an empty prompt");
    }
    nncore::Rng sample_rng = rng.derive(static_cast<std::uint64_t>(prompt.sample_id));
    std::vector<int> tokens = prompt.prompt_tokens;
    const int prompt_len = static_cast<int>(tokens.size());
    const int budget = std::min(cfg.max_completion_len, max_len - prompt_len);
    if (budget < 1) {
      throw err::LengthError("self_generate: prompt " + std::to_string(prompt.sample_id) +
                             " leaves no room for a completion");
    }
    for (int step = 0; step < budget; ++step) {
      const lm::ForwardResult fr = target.forward(tokens);
      const int token = lm::sample_token(fr.logits.row_span(fr.logits.rows - 1),
                                         cfg.sample_temperature, sample_rng);
      tokens.push_back(token);
      if (token == eos_token) break;
    }

    corpus::CorpusSample generated;
    generated.sample_id = prompt.sample_id;
    generated.domain_tag = prompt.domain_tag;
    generated.prompt_tokens = prompt.prompt_tokens;
    generated.answer_tokens.assign(tokens.begin() + prompt_len, tokens.end());
    dataset.samples.push_back(std::move(generated));

    if (cfg.record_hiddens) {
      // One closing forward so the last sampled token has a hidden state too.
      const lm::ForwardResult fr = target.forward(tokens);
      const int answer_len = static_cast<int>(tokens.size()) - prompt_len;
      Matrix2D trace(answer_len, target.config().model_dim);
      for (int r = 0; r < answer_len; ++r) {
        const double* src = fr.hiddens.row(prompt_len + r);
        std::copy(src, src + fr.hiddens.cols, trace.row(r));
      }
      dataset.traces.by_sample.emplace(prompt.sample_id, std::move(trace));
    }
  }
  return dataset;
}

LossBreakdown evaluate_draft_loss(lm::DraftModel& draft, const lm::TargetModel& target,
                                  std::span<const corpus::CorpusSample> samples,
                                  double lambda_reg) {
  const auto sequences = training_sequences(samples, draft.config().max_seq_len);
  return draft_loss(draft, target, sequences, lambda_reg, false);
}

double evaluate_target_loss(const lm::TargetModel& target,
                            std::span<const corpus::CorpusSample> samples) {
  const auto sequences = training_sequences(samples, target.config().max_seq_len);
  double total = 0.0;
  long positions = 0;
  for (const std::vector<int>& seq : sequences) {
    const std::span<const int> inputs(seq.data(), seq.size() - 1);
    const lm::ForwardResult fr = target.forward(inputs);
    const Matrix2D probs = nncore::softmax_rows_matrix(fr.logits);
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      const double p = probs.at(static_cast<int>(t), seq[t + 1]);
      total += -std::log(std::max(p, 1e-300));
      ++positions;
    }
  }
  return total / static_cast<double>(positions);
}

}  // namespace train
