#include "pipeline/presets.hpp"

#include "common/errors.hpp"

namespace pipeline {

ExperimentManifest make_transfer_preset(corpus::GeneratorKind domain, std::string out_root,
                                        std::uint64_t seed, PresetScale scale) {
  if (domain == corpus::GeneratorKind::base_text) {
    throw err::ConfigError("transfer preset: the domain generator cannot be base_text");
  }
  ExperimentManifest m;
  m.seed = seed;
  m.out_root = std::move(out_root);
  m.domain = domain;

  const bool quick = scale == PresetScale::quick;

  corpus::CorpusSpec base;
  base.generator = corpus::GeneratorKind::base_text;
  base.size = quick ? 160 : 3000;
  base.min_length = 4;
  base.max_length = 12;

  corpus::CorpusSpec dom;
  dom.generator = domain;
  dom.size = quick ? 120 : 2000;
  dom.min_operand = 0;
  dom.max_operand = 99;
  dom.min_length = 4;
  dom.max_length = 12;

  corpus::CorpusSpec eval = dom;
  eval.size = quick ? 40 : 500;

  m.corpus_stage.base_train = base;
  m.corpus_stage.domain_train = dom;
  m.corpus_stage.domain_eval = eval;
  m.corpus_stage.selfgen_domain_prompts = quick ? 60 : 600;
  m.corpus_stage.selfgen_base_prompts = quick ? 40 : 400;
  m.corpus_stage.general_prompts = quick ? 40 : 300;

  if (quick) {
    m.target_stage.model = lm::ModelConfig{.vocab_size = 64, .model_dim = 16, .ffn_dim = 24,
                                           .n_layers = 2, .n_heads = 2, .max_seq_len = 96,
                                           .role = lm::ModelRole::target};
    m.draft_stage.model = lm::ModelConfig{.vocab_size = 64, .model_dim = 16, .ffn_dim = 16,
                                          .n_layers = 1, .n_heads = 2, .max_seq_len = 96,
                                          .role = lm::ModelRole::draft};
  } else {
    m.target_stage.model = lm::ModelConfig::target_default();
    m.draft_stage.model = lm::ModelConfig::draft_default();
  }

  // The desk-scale presets override the reference hyperparameters (batch 16,
  // lr 4e-5, 20 epochs) explicitly: these model sizes want a larger step.
  auto tc = [&](int epochs, double lr) {
    train::TrainConfig t;
    t.batch_size = 16;
    t.learning_rate = lr;
    t.epochs = quick ? std::max(1, epochs / 3) : epochs;
    t.lambda_reg = 0.1;
    return t;
  };
  m.target_stage.train = tc(6, 3e-3);
  m.finetune_stage.train = tc(12, 3e-3);
  m.draft_stage.train = tc(8, 3e-3);
  m.adapt_stage.train = tc(12, 3e-3);

  m.selfgen_stage.gen.sample_temperature = 1.0;
  m.selfgen_stage.gen.max_completion_len = 16;
  m.selfgen_stage.gen.record_hiddens = true;

  m.select_stage.d_prime = quick ? 8 : 16;
  m.select_stage.rho = 0.9;
  m.select_stage.shrinkage_eps = 1e-4;
  m.select_stage.budget_fraction = 0.5;

  m.evaluate_stage.k_list = {5};
  m.evaluate_stage.t_list = {0.0, 1.0};
  m.evaluate_stage.max_new_tokens = 10;
  m.evaluate_stage.n_prompts = quick ? 25 : 250;
  m.evaluate_stage.draft_cost_ratio = -1;

  m.sweep_stage.fractions = {0.25, 0.5, 0.75, 1.0};
  m.sweep_stage.strategies = {"selected", "random", "reversed"};
  m.sweep_stage.k = 5;
  m.sweep_stage.temperature = 0.0;
  m.sweep_stage.max_new_tokens = 10;
  m.sweep_stage.n_prompts = quick ? 20 : 150;
  m.sweep_stage.train = tc(6, 3e-3);

  return m;
}

}  // namespace pipeline
