#include "pipeline/stages.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "common/errors.hpp"
#include "dsel/select.hpp"
#include "lm/checkpoint.hpp"

namespace pipeline {

namespace {

namespace ap = artifact_paths;
using corpus::CorpusSample;

std::uint64_t stage_seed(const ExperimentManifest& m, std::string_view stream) {
  return nncore::Rng(m.seed).derive(stream).seed();
}

void require_inputs(const ExperimentManifest& m, std::span<const char* const> inputs) {
  for (const char* rel : inputs) {
    const auto path = m.artifact(rel);
    if (!std::filesystem::exists(path)) {
      throw err::DependencyError("missing artifact " + path.string());
    }
  }
}

void ensure_parent(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

void save_samples(const ExperimentManifest& m, const char* rel,
                  std::span<const CorpusSample> samples) {
  const auto path = m.artifact(rel);
  ensure_parent(path);
  corpus::save_jsonl(samples, path);
}

// Prompt pools are fresh draws re-keyed with file-local unique ids.
std::vector<CorpusSample> fresh_prompt_pool(const ExperimentManifest& m,
                                            std::span<const corpus::CorpusSpec> parts) {
  std::vector<CorpusSample> pool;
  const corpus::Tokenizer tok;
  for (const corpus::CorpusSpec& spec : parts) {
    for (CorpusSample s : corpus::generate_corpus(spec, tok)) {
      s.sample_id = static_cast<std::int64_t>(pool.size());
      pool.push_back(std::move(s));
    }
  }
  return pool;
}

void stage_gen_corpus(const ExperimentManifest& m) {
  const corpus::Tokenizer tok;
  const CorpusStageConfig& cfg = m.corpus_stage;

  auto with_seed = [&m](corpus::CorpusSpec spec, std::string_view stream) {
    spec.seed = stage_seed(m, stream);
    return spec;
  };

  {
    corpus::CorpusSpec base = with_seed(cfg.base_train, "corpus-base");
    const int n_mix = static_cast<int>(
        std::lround(base.size * cfg.base_domain_mix_fraction));
    base.size -= n_mix;
    std::vector<CorpusSample> base_samples = corpus::generate_corpus(base, tok);
    if (n_mix > 0) {
      corpus::CorpusSpec mix = with_seed(cfg.domain_train, "corpus-base-mix");
      mix.size = n_mix;
      for (CorpusSample s : corpus::generate_corpus(mix, tok)) {
        s.sample_id = static_cast<std::int64_t>(base_samples.size());
        base_samples.push_back(std::move(s));
      }
    }
    save_samples(m, ap::base_train, base_samples);
  }
  save_samples(m, ap::domain_train,
               corpus::generate_corpus(with_seed(cfg.domain_train, "corpus-domain"), tok));
  save_samples(m, ap::domain_eval,
               corpus::generate_corpus(with_seed(cfg.domain_eval, "corpus-eval"), tok));

  corpus::CorpusSpec selfgen_domain = with_seed(cfg.domain_train, "corpus-selfgen-domain");
  selfgen_domain.size = cfg.selfgen_domain_prompts;
  corpus::CorpusSpec selfgen_base = with_seed(cfg.base_train, "corpus-selfgen-base");
  selfgen_base.size = cfg.selfgen_base_prompts;
  const corpus::CorpusSpec pool_parts[] = {selfgen_domain, selfgen_base};
  save_samples(m, ap::selfgen_prompts, fresh_prompt_pool(m, pool_parts));

  corpus::CorpusSpec general = with_seed(cfg.base_train, "corpus-general");
  general.size = cfg.general_prompts;
  const corpus::CorpusSpec general_parts[] = {general};
  save_samples(m, ap::general_prompts, fresh_prompt_pool(m, general_parts));
}

void stage_train_target(const ExperimentManifest& m) {
  const char* const inputs[] = {ap::base_train};
  require_inputs(m, inputs);
  const auto samples = corpus::load_jsonl(m.artifact(ap::base_train));
  train::TrainConfig tc = m.target_stage.train;
  tc.seed = stage_seed(m, "train-target");
  const auto trained = train::train_target(samples, m.target_stage.model, tc);
  ensure_parent(m.artifact(ap::target_base));
  lm::save_target(m.artifact(ap::target_base), trained.model, m.hash());
}

void stage_finetune_target(const ExperimentManifest& m) {
  const char* const inputs[] = {ap::target_base, ap::domain_train};
  require_inputs(m, inputs);
  const auto base = lm::load_target(m.artifact(ap::target_base));
  const auto samples = corpus::load_jsonl(m.artifact(ap::domain_train));
  train::TrainConfig tc = m.finetune_stage.train;
  tc.seed = stage_seed(m, "finetune-target");
  const auto tuned = train::finetune_target(base, samples, tc);
  ensure_parent(m.artifact(ap::target_domain));
  lm::save_target(m.artifact(ap::target_domain), tuned.model, m.hash());
}

void stage_pretrain_draft(const ExperimentManifest& m) {
  const char* const inputs[] = {ap::target_base, ap::base_train};
  require_inputs(m, inputs);
  const auto target = lm::load_target(m.artifact(ap::target_base));
  const auto samples = corpus::load_jsonl(m.artifact(ap::base_train));
  train::TrainConfig tc = m.draft_stage.train;
  tc.seed = stage_seed(m, "pretrain-draft");
  const auto drafted = train::pretrain_draft(target, samples, m.draft_stage.model, tc);
  ensure_parent(m.artifact(ap::draft_base));
  lm::save_draft(m.artifact(ap::draft_base), drafted.model, m.hash());
}

void run_selfgen_split(const ExperimentManifest& m, const lm::TargetModel& target,
                       const char* prompts_rel, const char* data_rel, const char* traces_rel,
                       std::string_view stream) {
  const corpus::Tokenizer tok;
  const auto prompts = corpus::load_jsonl(m.artifact(prompts_rel));
  nncore::Rng rng(stage_seed(m, stream));
  train::SelfGenDataset dataset =
      train::self_generate(target, prompts, m.selfgen_stage.gen, rng, tok.eos());
  const auto traces_path = m.artifact(traces_rel);
  ensure_parent(traces_path);
  corpus::save_traces(dataset.traces, traces_path);
  for (CorpusSample& s : dataset.samples) {
    s.hidden_trace_ref = traces_path.filename().string();
  }
  save_samples(m, data_rel, dataset.samples);
}

void stage_selfgen(const ExperimentManifest& m) {
  const char* const inputs[] = {ap::target_domain, ap::selfgen_prompts, ap::general_prompts};
  require_inputs(m, inputs);
  const auto target = lm::load_target(m.artifact(ap::target_domain));
  run_selfgen_split(m, target, ap::selfgen_prompts, ap::self_data, ap::self_traces, "selfgen");
  run_selfgen_split(m, target, ap::general_prompts, ap::general_data, ap::general_traces,
                    "selfgen-general");
}

nncore::Matrix2D pooled_answer_hiddens(const corpus::HiddenTraces& traces) {
  int rows = 0;
  for (const auto& [id, block] : traces.by_sample) rows += block.rows;
  nncore::Matrix2D pooled(rows, traces.width);
  int at = 0;
  for (const auto& [id, block] : traces.by_sample) {
    std::copy(block.values.begin(), block.values.end(), pooled.row(at));
    at += block.rows;
  }
  return pooled;
}

void stage_score_select(const ExperimentManifest& m) {
  const char* const inputs[] = {ap::self_data, ap::self_traces, ap::general_traces};
  require_inputs(m, inputs);
  auto samples = corpus::load_jsonl(m.artifact(ap::self_data));
  const auto self_traces = corpus::load_traces(m.artifact(ap::self_traces));
  const auto general_traces = corpus::load_traces(m.artifact(ap::general_traces));

  const SelectStageConfig& cfg = m.select_stage;
  const dsel::PcaBasis basis =
      dsel::fit_pca(pooled_answer_hiddens(general_traces), cfg.d_prime);
  const dsel::ReferenceStats stats = dsel::fit_reference_stats(
      dsel::project_rows(basis, pooled_answer_hiddens(general_traces)), cfg.shrinkage_eps);

  std::vector<dsel::SampleScoreCard> cards;
  cards.reserve(samples.size());
  for (const CorpusSample& s : samples) {
    cards.push_back(dsel::score_sample(s.sample_id, self_traces.rows_for(s.sample_id), basis,
                                       stats, cfg.rho));
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].selection_meta =
        corpus::SelectionMeta{.aggregate_score = cards[i].aggregate,
                              .rho = cfg.rho,
                              .budget_fraction = cfg.budget_fraction,
                              .basis_hash = basis.hash()};
    samples[i].hidden_trace_ref = "../selfgen/self_data.traces.bin";
  }
  save_samples(m, ap::scored, samples);

  const auto picked = dsel::select_topk_indices(cards, cfg.budget_fraction);
  std::vector<CorpusSample> compact;
  compact.reserve(picked.size());
  for (std::size_t idx : picked) compact.push_back(samples[idx]);
  save_samples(m, ap::selected, compact);
}

long steps_for(std::size_t n_samples, const train::TrainConfig& tc) {
  const long batches =
      static_cast<long>((n_samples + static_cast<std::size_t>(tc.batch_size) - 1) /
                        static_cast<std::size_t>(tc.batch_size));
  return batches * tc.epochs;
}

void stage_adapt(const ExperimentManifest& m) {
  const char* const inputs[] = {ap::target_domain, ap::draft_base, ap::domain_train,
                                ap::selected};
  require_inputs(m, inputs);
  const auto target = lm::load_target(m.artifact(ap::target_domain));
  const auto base_draft = lm::load_draft(m.artifact(ap::draft_base));
  const auto domain_train = corpus::load_jsonl(m.artifact(ap::domain_train));
  const auto selected = corpus::load_jsonl(m.artifact(ap::selected));

  const lm::DraftModel gated = lm::build_gated_draft_from_pretrained(base_draft);
  nlohmann::json meta;

  struct Job {
    const char* method;
    const char* out_rel;
    lm::FreezeMode mode;
    std::span<const CorpusSample> data;
    double data_fraction;
  };
  const Job jobs[] = {
      {"full_ft", ap::draft_full_ft, lm::FreezeMode::full_ft, domain_train, 1.0},
      {"eda_base", ap::draft_eda_base, lm::FreezeMode::eda, domain_train, 1.0},
      {"eda_selfgen_selected", ap::draft_eda_selected, lm::FreezeMode::eda, selected,
       m.select_stage.budget_fraction},
  };
  for (const Job& job : jobs) {
    train::TrainConfig tc = m.adapt_stage.train;
    tc.seed = stage_seed(m, std::string("adapt-") + job.method);
    const auto adapted = train::adapt_draft(gated, target, job.data, tc, job.mode);
    ensure_parent(m.artifact(job.out_rel));
    lm::save_draft(m.artifact(job.out_rel), adapted.model, m.hash());
    meta[job.method] = nlohmann::json{
        {"trainable_params",
         static_cast<long>(trainable_scalar_count(gated, make_freeze_mask(gated, job.mode)))},
        {"train_steps", adapted.stats.steps},
        {"data_fraction", job.data_fraction},
        {"final_loss", adapted.stats.final_loss}};
  }
  const auto meta_path = m.artifact(ap::adapt_meta);
  ensure_parent(meta_path);
  std::ofstream out(meta_path, std::ios::binary);
  if (!out) throw err::IoError("cannot write " + meta_path.string());
  out << meta.dump(2) << "\n";
}

void write_rows_csv(const ExperimentManifest& m, const char* rel,
                    std::span<const MetricsRow> rows) {
  const auto path = m.artifact(rel);
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw err::IoError("cannot write " + path.string());
  out << format_metrics_csv(rows, m.hash());
  if (!out) throw err::IoError("failed writing " + path.string());
}

void stage_evaluate(const ExperimentManifest& m) {
  const char* const inputs[] = {ap::target_domain, ap::draft_base,    ap::draft_full_ft,
                                ap::draft_eda_base, ap::draft_eda_selected, ap::domain_eval,
                                ap::adapt_meta};
  require_inputs(m, inputs);
  const corpus::Tokenizer tok;
  const auto target = lm::load_target(m.artifact(ap::target_domain));
  const auto eval_prompts = corpus::load_jsonl(m.artifact(ap::domain_eval));

  nlohmann::json meta;
  {
    std::ifstream in(m.artifact(ap::adapt_meta));
    in >> meta;
  }

  std::vector<MetricsRow> rows;
  auto run_method = [&](const std::string& method, const lm::DraftModel& draft) {
    MethodInfo info;
    info.name = method;
    if (meta.contains(method)) {
      info.trainable_params = meta[method]["trainable_params"].get<long>();
      info.train_steps = meta[method]["train_steps"].get<long>();
      info.data_fraction = meta[method]["data_fraction"].get<double>();
    }
    const auto method_rows = evaluate_grid(target, draft, eval_prompts, m.evaluate_stage, info,
                                           stage_seed(m, "evaluate"), tok.eos());
    rows.insert(rows.end(), method_rows.begin(), method_rows.end());
  };

  run_method("training_free", lm::load_draft(m.artifact(ap::draft_base)));
  run_method("full_ft", lm::load_draft(m.artifact(ap::draft_full_ft)));
  run_method("eda_base", lm::load_draft(m.artifact(ap::draft_eda_base)));
  run_method("eda_selfgen_selected", lm::load_draft(m.artifact(ap::draft_eda_selected)));
  write_rows_csv(m, ap::method_rows, rows);
}

void stage_sweep(const ExperimentManifest& m) {
  const char* const inputs[] = {ap::target_domain, ap::draft_base, ap::scored, ap::domain_eval};
  require_inputs(m, inputs);
  const corpus::Tokenizer tok;
  const auto target = lm::load_target(m.artifact(ap::target_domain));
  const auto base_draft = lm::load_draft(m.artifact(ap::draft_base));
  const auto scored = corpus::load_jsonl(m.artifact(ap::scored));
  const auto eval_prompts = corpus::load_jsonl(m.artifact(ap::domain_eval));
  const lm::DraftModel gated = lm::build_gated_draft_from_pretrained(base_draft);
  const SweepStageConfig& cfg = m.sweep_stage;

  for (const CorpusSample& s : scored) {
    if (!s.selection_meta) {
      throw err::DependencyError("sweep: sample " + std::to_string(s.sample_id) +
                                 " in " + std::string(ap::scored) + " carries no score");
    }
  }

  // Descending by score, ties toward the lower id (shared with select_topk).
  std::vector<std::size_t> by_score(scored.size());
  std::iota(by_score.begin(), by_score.end(), 0);
  std::sort(by_score.begin(), by_score.end(), [&scored](std::size_t a, std::size_t b) {
    const double sa = scored[a].selection_meta->aggregate_score;
    const double sb = scored[b].selection_meta->aggregate_score;
    if (sa != sb) return sa > sb;
    return scored[a].sample_id < scored[b].sample_id;
  });

  std::vector<MetricsRow> rows;
  for (std::size_t fi = 0; fi < cfg.fractions.size(); ++fi) {
    const double fraction = cfg.fractions[fi];
    if (!(fraction > 0.0) || fraction > 1.0) {
      throw err::ConfigError("sweep: fractions must lie in (0, 1]");
    }
    const std::size_t k_count = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(scored.size())));
    for (const std::string& strategy : cfg.strategies) {
      std::vector<std::size_t> picked;
      if (strategy == "selected") {
        picked.assign(by_score.begin(), by_score.begin() + static_cast<std::ptrdiff_t>(k_count));
      } else if (strategy == "reversed") {
        picked.assign(by_score.rbegin(), by_score.rbegin() + static_cast<std::ptrdiff_t>(k_count));
      } else if (strategy == "random") {
        picked.resize(scored.size());
        std::iota(picked.begin(), picked.end(), 0);
        nncore::Rng shuffler(stage_seed(m, "sweep-random"));
        shuffler.shuffle(picked);
        picked.resize(k_count);
      } else {
        throw err::ConfigError("sweep: unknown strategy '" + strategy + "'");
      }
      std::sort(picked.begin(), picked.end());
      std::vector<CorpusSample> subset;
      subset.reserve(picked.size());
      for (std::size_t idx : picked) subset.push_back(scored[idx]);

      train::TrainConfig tc = cfg.train;
      // Seeded per fraction, not per strategy: strategies at the same budget
      // share their batch-shuffle stream, so a full-budget subset trains
      // identically no matter which strategy produced it.
      tc.seed = stage_seed(m, "sweep-adapt-" + std::to_string(fi));
      const auto adapted = train::adapt_draft(gated, target, subset, tc, lm::FreezeMode::eda);

      EvaluateStageConfig ecfg;
      ecfg.k_list = {cfg.k};
      ecfg.t_list = {cfg.temperature};
      ecfg.max_new_tokens = cfg.max_new_tokens;
      ecfg.n_prompts = cfg.n_prompts;
      MethodInfo info;
      info.name = "eda_selfgen_" + strategy;
      info.trainable_params = static_cast<long>(
          trainable_scalar_count(gated, make_freeze_mask(gated, lm::FreezeMode::eda)));
      info.train_steps = adapted.stats.steps;
      info.data_fraction = fraction;
      const auto cell_rows = evaluate_grid(target, adapted.model, eval_prompts, ecfg, info,
                                           stage_seed(m, "sweep-evaluate"), tok.eos());
      rows.insert(rows.end(), cell_rows.begin(), cell_rows.end());
    }
  }
  write_rows_csv(m, ap::sweep_rows, rows);
}

void stage_report(const ExperimentManifest& m) {
  const char* const inputs[] = {ap::method_rows, ap::sweep_rows};
  require_inputs(m, inputs);
  std::vector<MetricsRow> rows = parse_metrics_csv(m.artifact(ap::method_rows));
  const auto sweep = parse_metrics_csv(m.artifact(ap::sweep_rows));
  rows.insert(rows.end(), sweep.begin(), sweep.end());
  emit_report(rows, m.artifact(ap::metrics_dir), m.hash());
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {
      "gen-corpus", "train-target", "finetune-target", "pretrain-draft", "selfgen",
      "score-select", "adapt", "evaluate", "sweep", "report"};
  return names;
}

void run_stage(const ExperimentManifest& manifest, const std::string& stage) {
  if (stage == "gen-corpus") {
    stage_gen_corpus(manifest);
  } else if (stage == "train-target") {
    stage_train_target(manifest);
  } else if (stage == "finetune-target") {
    stage_finetune_target(manifest);
  } else if (stage == "pretrain-draft") {
    stage_pretrain_draft(manifest);
  } else if (stage == "selfgen") {
    stage_selfgen(manifest);
  } else if (stage == "score-select") {
    stage_score_select(manifest);
  } else if (stage == "adapt") {
    stage_adapt(manifest);
  } else if (stage == "evaluate") {
    stage_evaluate(manifest);
  } else if (stage == "sweep") {
    stage_sweep(manifest);
  } else if (stage == "report") {
    stage_report(manifest);
  } else {
    std::string valid;
    for (const std::string& name : stage_names()) {
      if (!valid.empty()) valid += ", ";
      valid += name;
    }
    throw err::UsageError("unknown stage '" + stage + "' (valid stages: " + valid + ")");
  }
}

void run_all_stages(const ExperimentManifest& manifest) {
  for (const std::string& stage : stage_names()) run_stage(manifest, stage);
}

std::vector<MetricsRow> evaluate_grid(const lm::SequenceModel& target,
                                      const lm::SequenceModel& draft,
                                      std::span<const corpus::CorpusSample> prompts,
                                      const EvaluateStageConfig& cfg, const MethodInfo& info,
                                      std::uint64_t seed, int eos_token) {
  if (prompts.empty()) throw err::ValidationError("evaluate: no prompts");
  if (cfg.k_list.empty() || cfg.t_list.empty()) {
    throw err::ValidationError("evaluate: empty (K, T) grid");
  }
  const std::size_t n_prompts =
      cfg.n_prompts > 0 ? std::min(prompts.size(), static_cast<std::size_t>(cfg.n_prompts))
                        : prompts.size();
  double cost_ratio = cfg.draft_cost_ratio;
  if (cost_ratio < 0.0) {
    // Default cost model: the draft/target parameter ratio.
    cost_ratio = static_cast<double>(draft.parameter_count()) /
                 static_cast<double>(target.parameter_count());
  }

  std::vector<MetricsRow> rows;
  const nncore::Rng base(seed);
  std::uint64_t cell = 0;
  for (int k : cfg.k_list) {
    for (double t : cfg.t_list) {
      specdec::SpecConfig sc;
      sc.k = k;
      sc.temperature = t;
      sc.max_new_tokens = cfg.max_new_tokens;
      sc.eos_token = eos_token;
      const nncore::Rng cell_rng = base.derive(cell++);

      std::vector<specdec::AcceptanceRecord> records;
      long long total_tokens = 0, target_calls = 0, draft_calls = 0;
      for (std::size_t p = 0; p < n_prompts; ++p) {
        sc.seed = cell_rng.derive(p).seed();
        const auto out = specdec::generate(target, draft, prompts[p].prompt_tokens, sc);
        total_tokens += out.record.tokens_generated;
        for (const auto& round : out.record.rounds) {
          target_calls += round.target_calls;
          draft_calls += round.draft_calls;
        }
        records.push_back(std::move(out.record));
      }

      MetricsRow row;
      row.method = info.name;
      row.domain_tag = prompts[0].domain_tag;
      row.k = k;
      row.temperature = t;
      row.tau = specdec::measure_tau(records);
      row.speedup_proxy = static_cast<double>(total_tokens) /
                          (static_cast<double>(target_calls) +
                           cost_ratio * static_cast<double>(draft_calls));
      row.trainable_params = info.trainable_params;
      row.train_steps = info.train_steps;
      row.data_fraction = info.data_fraction;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace pipeline
