#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "common/errors.hpp"
#include "lm/checkpoint.hpp"
#include "pipeline/manifest.hpp"
#include "pipeline/metrics.hpp"
#include "pipeline/presets.hpp"
#include "pipeline/stages.hpp"

namespace fs = std::filesystem;
namespace ap = pipeline::artifact_paths;
using pipeline::ExperimentManifest;
using pipeline::MetricsRow;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentManifest quick_manifest(const fs::path& root, std::uint64_t seed) {
  return pipeline::make_transfer_preset(corpus::GeneratorKind::arithmetic, root.string(), seed,
                                        pipeline::PresetScale::quick);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<MetricsRow> sample_rows() {
  std::vector<MetricsRow> rows(2);
  rows[0] = {"training_free", "arithmetic", 5, 0.0, 1.25, 0.8, 0, 0, 0.0};
  rows[1] = {"eda_selfgen_selected", "arithmetic", 5, 1.0, 3.5, 1.9, 74112, 120, 0.5};
  return rows;
}

}  // namespace

TEST_CASE("manifest: json round-trip preserves every field") {
  const ExperimentManifest m = quick_manifest("/tmp/x", 99);
  const ExperimentManifest back = ExperimentManifest::from_json(m.to_json());
  CHECK(back.to_json() == m.to_json());
  CHECK(back.hash() == m.hash());
  ExperimentManifest other = m;
  other.seed += 1;
  CHECK(other.hash() != m.hash());
}

TEST_CASE("run_stage: unknown stage raises a usage error listing valid stages") {
  const ExperimentManifest m = quick_manifest(temp_dir("specadapt_pl_unknown"), 1);
  try {
    pipeline::run_stage(m, "mystery-stage");
    FAIL("expected usage error");
  } catch (const err::UsageError& e) {
    const std::string what = e.what();
    CHECK(what.find("mystery-stage") != std::string::npos);
    CHECK(what.find("gen-corpus") != std::string::npos);
    CHECK(what.find("report") != std::string::npos);
  }
  fs::remove_all(m.out_root);
}

TEST_CASE("run_stage: missing dependency raises a dependency error naming the artifact") {
  const ExperimentManifest m = quick_manifest(temp_dir("specadapt_pl_dep"), 2);
  try {
    pipeline::run_stage(m, "train-target");
    FAIL("expected dependency error");
  } catch (const err::DependencyError& e) {
    CHECK(std::string(e.what()).find("base_train.jsonl") != std::string::npos);
  }
  fs::remove_all(m.out_root);
}

TEST_CASE("gen-corpus: rerunning the stage is byte-identical") {
  const ExperimentManifest m = quick_manifest(temp_dir("specadapt_pl_gen"), 3);
  pipeline::run_stage(m, "gen-corpus");
  const std::string first = slurp(m.artifact(ap::selfgen_prompts));
  pipeline::run_stage(m, "gen-corpus");
  CHECK(slurp(m.artifact(ap::selfgen_prompts)) == first);

  // The self-generation pool mixes domain and base prompts with unique ids.
  const auto pool = corpus::load_jsonl(m.artifact(ap::selfgen_prompts));
  bool has_domain = false, has_base = false;
  std::set<std::int64_t> ids;
  for (const auto& s : pool) {
    ids.insert(s.sample_id);
    has_domain = has_domain || s.domain_tag == "arithmetic";
    has_base = has_base || s.domain_tag == "base_text";
  }
  CHECK(has_domain);
  CHECK(has_base);
  CHECK(ids.size() == pool.size());
  fs::remove_all(m.out_root);
}

TEST_CASE("evaluate_grid: self-drafting rows read tau = K at T=0 and a 2x2 grid is 4 rows") {
  nncore::Rng rng(5);
  const auto cfg = lm::ModelConfig{.vocab_size = 64, .model_dim = 16, .ffn_dim = 16,
                                   .n_layers = 1, .n_heads = 2, .max_seq_len = 64,
                                   .role = lm::ModelRole::target};
  const lm::TargetModel target = lm::TargetModel::create(cfg, rng);
  const corpus::Tokenizer tok;
  const auto prompts = corpus::gen_domain_corpus(
      {.generator = corpus::GeneratorKind::arithmetic, .size = 12, .seed = 5}, tok);

  pipeline::EvaluateStageConfig ecfg;
  ecfg.k_list = {3, 5};
  ecfg.t_list = {0.0, 1.0};
  ecfg.max_new_tokens = 8;
  ecfg.n_prompts = 12;
  ecfg.draft_cost_ratio = 0.0;
  const auto rows = pipeline::evaluate_grid(target, target, prompts, ecfg, {.name = "self"}, 1,
                                            -1 /* no eos stop */);
  REQUIRE(rows.size() == 4);
  for (const MetricsRow& r : rows) {
    CHECK(r.domain_tag == "arithmetic");
    if (r.temperature == 0.0) CHECK(r.tau == doctest::Approx(static_cast<double>(r.k)));
    CHECK(r.tau <= r.k);
    CHECK(r.tau >= 0.0);
  }
}

TEST_CASE("evaluate_grid: a uniform drafter scores tau below 0.2 on a 64-way vocabulary") {
  nncore::Rng rng(7);
  const auto tcfg = lm::ModelConfig{.vocab_size = 64, .model_dim = 16, .ffn_dim = 16,
                                    .n_layers = 1, .n_heads = 2, .max_seq_len = 64,
                                    .role = lm::ModelRole::target};
  const lm::TargetModel target = lm::TargetModel::create(tcfg, rng);
  auto dcfg = tcfg;
  dcfg.role = lm::ModelRole::draft;
  const lm::UniformModel uniform(dcfg);
  const corpus::Tokenizer tok;
  const auto prompts = corpus::gen_domain_corpus(
      {.generator = corpus::GeneratorKind::arithmetic, .size = 40, .seed = 9}, tok);
  pipeline::EvaluateStageConfig ecfg;
  ecfg.k_list = {4};
  ecfg.t_list = {0.0};
  ecfg.max_new_tokens = 10;
  ecfg.n_prompts = 40;
  ecfg.draft_cost_ratio = 0.0;
  const auto rows =
      pipeline::evaluate_grid(target, uniform, prompts, ecfg, {.name = "uniform"}, 2, -1);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].tau < 0.2);
}

TEST_CASE("emit_report: csv round-trips, header is byte-stable, empty rows rejected") {
  const fs::path dir = temp_dir("specadapt_pl_report");
  const auto rows = sample_rows();
  pipeline::emit_report(rows, dir, 0x77);
  const auto parsed = pipeline::parse_metrics_csv(dir / "metrics.csv");
  CHECK(parsed == rows);

  const std::string text = slurp(dir / "metrics.csv");
  CHECK(text.find(pipeline::kMetricsCsvHeader) != std::string::npos);
  CHECK(text.find("# manifest_hash=119") != std::string::npos);

  CHECK_THROWS_AS(pipeline::emit_report({}, dir / "sub", 0), err::ValidationError);
  CHECK_FALSE(fs::exists(dir / "sub" / "metrics.csv"));

  // plotdata groups sweep strategies under budget_sweep.
  const std::string plot = slurp(dir / "plotdata.json");
  CHECK(plot.find("budget_sweep") != std::string::npos);
  CHECK(plot.find("method_comparison") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("full quick pipeline twice: metrics.csv is byte-identical") {
  const fs::path root_a = temp_dir("specadapt_pl_e2e_a");
  const fs::path root_b = temp_dir("specadapt_pl_e2e_b");
  const ExperimentManifest a = quick_manifest(root_a, 42);
  ExperimentManifest b = a;
  b.out_root = root_b.string();

  pipeline::run_all_stages(a);
  pipeline::run_all_stages(b);

  // Identical configuration and seed, different output roots: the metrics
  // and every intermediate artifact agree byte for byte.
  CHECK(slurp(a.artifact("metrics/metrics.csv")) == slurp(b.artifact("metrics/metrics.csv")));
  CHECK(slurp(a.artifact(ap::self_data)) == slurp(b.artifact(ap::self_data)));
  CHECK(slurp(a.artifact(ap::self_traces)) == slurp(b.artifact(ap::self_traces)));
  CHECK(slurp(a.artifact(ap::selected)) == slurp(b.artifact(ap::selected)));
  CHECK(slurp(a.artifact(ap::target_domain)) == slurp(b.artifact(ap::target_domain)));
  CHECK(slurp(a.artifact(ap::draft_eda_selected)) == slurp(b.artifact(ap::draft_eda_selected)));

  // The checkpoint carries the manifest hash of its producing run; out_root
  // is not experiment-defining, so both runs share one hash.
  CHECK(lm::checkpoint_manifest_hash(a.artifact(ap::target_base)) == a.hash());
  CHECK(a.hash() == b.hash());

  // Method rows cover the full 1x2 grid for each of the four methods.
  const auto rows = pipeline::parse_metrics_csv(a.artifact(ap::method_rows));
  CHECK(rows.size() == 4 * 1 * 2);
  fs::remove_all(root_a);
  fs::remove_all(root_b);
}

TEST_CASE("sweep rows: fraction 1.0 gives every strategy the same training set") {
  const fs::path root = temp_dir("specadapt_pl_sweep");
  ExperimentManifest m = quick_manifest(root, 21);
  m.sweep_stage.fractions = {1.0};
  pipeline::run_all_stages(m);
  const auto rows = pipeline::parse_metrics_csv(m.artifact(ap::sweep_rows));
  REQUIRE(rows.size() == 3);
  // Same subset, same seeds: identical adapted drafts, identical metrics.
  CHECK(rows[0].tau == rows[1].tau);
  CHECK(rows[1].tau == rows[2].tau);
  CHECK(rows[0].data_fraction == 1.0);
  fs::remove_all(root);
}

TEST_CASE("training-free contract: scoring touches no model forward passes") {
  const fs::path root = temp_dir("specadapt_pl_trainfree");
  ExperimentManifest m = quick_manifest(root, 33);
  for (const std::string& stage :
       {"gen-corpus", "train-target", "finetune-target", "pretrain-draft", "selfgen"}) {
    pipeline::run_stage(m, stage);
  }
  // Load the only models that exist and watch their call counters across the
  // scoring stage.
  const auto target = lm::load_target(m.artifact(ap::target_domain));
  const auto draft = lm::load_draft(m.artifact(ap::draft_base));
  const auto target_calls = target.forward_calls();
  const auto draft_calls = draft.forward_calls();
  pipeline::run_stage(m, "score-select");
  CHECK(target.forward_calls() == target_calls);
  CHECK(draft.forward_calls() == draft_calls);

  // The scored dataset carries scores for every sample and the compact
  // subset is the configured fraction.
  const auto scored = corpus::load_jsonl(m.artifact(ap::scored));
  const auto selected = corpus::load_jsonl(m.artifact(ap::selected));
  for (const auto& s : scored) CHECK(s.selection_meta.has_value());
  CHECK(selected.size() ==
        static_cast<std::size_t>(std::ceil(0.5 * static_cast<double>(scored.size()))));
  fs::remove_all(root);
}
