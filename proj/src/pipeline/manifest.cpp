#include "pipeline/manifest.hpp"

#include <fstream>

#include "common/errors.hpp"
#include "nncore/rng.hpp"

namespace pipeline {

namespace {

using nlohmann::json;

json corpus_spec_to_json(const corpus::CorpusSpec& s) {
  return json{{"generator", corpus::to_string(s.generator)},
              {"size", s.size},
              {"seed", s.seed},
              {"min_length", s.min_length},
              {"max_length", s.max_length},
              {"min_operand", s.min_operand},
              {"max_operand", s.max_operand}};
}

corpus::CorpusSpec corpus_spec_from_json(const json& j) {
  corpus::CorpusSpec s;
  s.generator = corpus::generator_from_string(j.at("generator").get<std::string>());
  s.size = j.at("size").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.min_length = j.at("min_length").get<int>();
  s.max_length = j.at("max_length").get<int>();
  s.min_operand = j.at("min_operand").get<int>();
  s.max_operand = j.at("max_operand").get<int>();
  return s;
}

json model_config_to_json(const lm::ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size},   {"model_dim", c.model_dim},
              {"ffn_dim", c.ffn_dim},         {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},         {"max_seq_len", c.max_seq_len},
              {"role", lm::to_string(c.role)}};
}

lm::ModelConfig model_config_from_json(const json& j) {
  lm::ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.model_dim = j.at("model_dim").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.role = lm::role_from_string(j.at("role").get<std::string>());
  return c;
}

json train_config_to_json(const train::TrainConfig& t) {
  return json{{"batch_size", t.batch_size},
              {"learning_rate", t.learning_rate},
              {"epochs", t.epochs},
              {"lambda_reg", t.lambda_reg}};
}

train::TrainConfig train_config_from_json(const json& j) {
  train::TrainConfig t;
  t.batch_size = j.at("batch_size").get<int>();
  t.learning_rate = j.at("learning_rate").get<double>();
  t.epochs = j.at("epochs").get<int>();
  t.lambda_reg = j.at("lambda_reg").get<double>();
  return t;
}

}  // namespace

json ExperimentManifest::to_json() const {
  json j;
  j["seed"] = seed;
  j["out_root"] = out_root;
  j["domain"] = corpus::to_string(domain);

  j["stages"]["gen-corpus"] = json{
      {"base_train", corpus_spec_to_json(corpus_stage.base_train)},
      {"domain_train", corpus_spec_to_json(corpus_stage.domain_train)},
      {"domain_eval", corpus_spec_to_json(corpus_stage.domain_eval)},
      {"base_domain_mix_fraction", corpus_stage.base_domain_mix_fraction},
      {"selfgen_domain_prompts", corpus_stage.selfgen_domain_prompts},
      {"selfgen_base_prompts", corpus_stage.selfgen_base_prompts},
      {"general_prompts", corpus_stage.general_prompts}};
  j["stages"]["train-target"] = json{{"model", model_config_to_json(target_stage.model)},
                                     {"train", train_config_to_json(target_stage.train)}};
  j["stages"]["finetune-target"] = json{{"train", train_config_to_json(finetune_stage.train)}};
  j["stages"]["pretrain-draft"] = json{{"model", model_config_to_json(draft_stage.model)},
                                       {"train", train_config_to_json(draft_stage.train)}};
  j["stages"]["selfgen"] =
      json{{"sample_temperature", selfgen_stage.gen.sample_temperature},
           {"max_completion_len", selfgen_stage.gen.max_completion_len},
           {"record_hiddens", selfgen_stage.gen.record_hiddens}};
  j["stages"]["score-select"] = json{{"d_prime", select_stage.d_prime},
                                     {"rho", select_stage.rho},
                                     {"shrinkage_eps", select_stage.shrinkage_eps},
                                     {"budget_fraction", select_stage.budget_fraction}};
  j["stages"]["adapt"] = json{{"train", train_config_to_json(adapt_stage.train)}};
  j["stages"]["evaluate"] = json{{"k_list", evaluate_stage.k_list},
                                 {"t_list", evaluate_stage.t_list},
                                 {"max_new_tokens", evaluate_stage.max_new_tokens},
                                 {"n_prompts", evaluate_stage.n_prompts},
                                 {"draft_cost_ratio", evaluate_stage.draft_cost_ratio}};
  j["stages"]["sweep"] = json{{"fractions", sweep_stage.fractions},
                              {"strategies", sweep_stage.strategies},
                              {"K", sweep_stage.k},
                              {"temperature", sweep_stage.temperature},
                              {"max_new_tokens", sweep_stage.max_new_tokens},
                              {"n_prompts", sweep_stage.n_prompts},
                              {"train", train_config_to_json(sweep_stage.train)}};
  return j;
}

ExperimentManifest ExperimentManifest::from_json(const json& j) {
  try {
    ExperimentManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.out_root = j.at("out_root").get<std::string>();
    m.domain = corpus::generator_from_string(j.at("domain").get<std::string>());

    const json& stages = j.at("stages");
    const json& gc = stages.at("gen-corpus");
    m.corpus_stage.base_train = corpus_spec_from_json(gc.at("base_train"));
    m.corpus_stage.domain_train = corpus_spec_from_json(gc.at("domain_train"));
    m.corpus_stage.domain_eval = corpus_spec_from_json(gc.at("domain_eval"));
    m.corpus_stage.base_domain_mix_fraction =
        gc.at("base_domain_mix_fraction").get<double>();
    m.corpus_stage.selfgen_domain_prompts = gc.at("selfgen_domain_prompts").get<int>();
    m.corpus_stage.selfgen_base_prompts = gc.at("selfgen_base_prompts").get<int>();
    m.corpus_stage.general_prompts = gc.at("general_prompts").get<int>();

    m.target_stage.model = model_config_from_json(stages.at("train-target").at("model"));
    m.target_stage.train = train_config_from_json(stages.at("train-target").at("train"));
    m.finetune_stage.train = train_config_from_json(stages.at("finetune-target").at("train"));
    m.draft_stage.model = model_config_from_json(stages.at("pretrain-draft").at("model"));
    m.draft_stage.train = train_config_from_json(stages.at("pretrain-draft").at("train"));

    const json& sg = stages.at("selfgen");
    m.selfgen_stage.gen.sample_temperature = sg.at("sample_temperature").get<double>();
    m.selfgen_stage.gen.max_completion_len = sg.at("max_completion_len").get<int>();
    m.selfgen_stage.gen.record_hiddens = sg.at("record_hiddens").get<bool>();

    const json& sel = stages.at("score-select");
    m.select_stage.d_prime = sel.at("d_prime").get<int>();
    m.select_stage.rho = sel.at("rho").get<double>();
    m.select_stage.shrinkage_eps = sel.at("shrinkage_eps").get<double>();
    m.select_stage.budget_fraction = sel.at("budget_fraction").get<double>();

    m.adapt_stage.train = train_config_from_json(stages.at("adapt").at("train"));

    const json& ev = stages.at("evaluate");
    m.evaluate_stage.k_list = ev.at("k_list").get<std::vector<int>>();
    m.evaluate_stage.t_list = ev.at("t_list").get<std::vector<double>>();
    m.evaluate_stage.max_new_tokens = ev.at("max_new_tokens").get<int>();
    m.evaluate_stage.n_prompts = ev.at("n_prompts").get<int>();
    m.evaluate_stage.draft_cost_ratio = ev.at("draft_cost_ratio").get<double>();

    const json& sw = stages.at("sweep");
    m.sweep_stage.fractions = sw.at("fractions").get<std::vector<double>>();
    m.sweep_stage.strategies = sw.at("strategies").get<std::vector<std::string>>();
    m.sweep_stage.k = sw.at("K").get<int>();
    m.sweep_stage.temperature = sw.at("temperature").get<double>();
    m.sweep_stage.max_new_tokens = sw.at("max_new_tokens").get<int>();
    m.sweep_stage.n_prompts = sw.at("n_prompts").get<int>();
    m.sweep_stage.train = train_config_from_json(sw.at("train"));
    return m;
  } catch (const json::exception& e) {
    throw err::ParseError(std::string("manifest: ") + e.what());
  }
}

void ExperimentManifest::save(const std::filesystem::path& path) const {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw err::IoError("cannot write manifest " + path.string());
  out << to_json().dump(2) << "\n";
  if (!out) throw err::IoError("failed writing manifest " + path.string());
}

ExperimentManifest ExperimentManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw err::IoError("cannot open manifest " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw err::ParseError("manifest " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::uint64_t ExperimentManifest::hash() const {
  // The hash identifies the experiment configuration; the output location
  // is deliberately not part of it, so the same experiment written to two
  // roots produces identical artifacts.
  json j = to_json();
  j.erase("out_root");
  return nncore::hash_label(j.dump());
}

std::filesystem::path ExperimentManifest::artifact(const std::string& relative) const {
  return std::filesystem::path(out_root) / relative;
}

}  // namespace pipeline
