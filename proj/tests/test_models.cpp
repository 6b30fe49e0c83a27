#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "common/errors.hpp"
#include "lm/checkpoint.hpp"
#include "lm/model.hpp"
#include "nncore/rng.hpp"

using lm::DraftModel;
using lm::FreezeMode;
using lm::ModelConfig;
using lm::ModelRole;
using lm::TargetModel;
using nncore::Matrix2D;
using nncore::Rng;

namespace {

ModelConfig tiny_draft_config() {
  return ModelConfig{.vocab_size = 11, .model_dim = 12, .ffn_dim = 10, .n_layers = 2,
                     .n_heads = 3, .max_seq_len = 24, .role = ModelRole::draft};
}

ModelConfig tiny_target_config() {
  return ModelConfig{.vocab_size = 11, .model_dim = 12, .ffn_dim = 14, .n_layers = 2,
                     .n_heads = 3, .max_seq_len = 24, .role = ModelRole::target};
}

Matrix2D random_matrix(int r, int c, Rng& rng, double scale = 1.0) {
  Matrix2D m(r, c);
  for (double& v : m.values) v = rng.next_gaussian() * scale;
  return m;
}

lm::GatedExpertBlock random_gated_block(int d, int m, Rng& rng) {
  lm::GatedExpertBlock block;
  block.shared_expert.v_down = nncore::Parameter("s.v", random_matrix(m, d, rng, 0.4));
  block.shared_expert.u_up = nncore::Parameter("s.u", random_matrix(d, m, rng, 0.4));
  block.private_expert.v_down = nncore::Parameter("p.v", random_matrix(m, d, rng, 0.4));
  block.private_expert.u_up = nncore::Parameter("p.u", random_matrix(d, m, rng, 0.4));
  block.w_shared = nncore::Parameter("ws", random_matrix(1, d, rng, 0.4));
  block.w_private = nncore::Parameter("wp", random_matrix(1, d, rng, 0.4));
  return block;
}

// Position-by-position scalar-loop reference for the gated FFN.
Matrix2D gated_ffn_oracle(const Matrix2D& h, const lm::GatedExpertBlock& b) {
  const int d = h.cols;
  const int m = b.shared_expert.v_down.value.rows;
  auto silu_scalar = [](double x) { return x / (1.0 + std::exp(-x)); };
  auto expert = [&](const lm::ExpertParams& e, const double* row, std::vector<double>& out) {
    std::vector<double> mid(static_cast<std::size_t>(m), 0.0);
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += e.v_down.value.at(i, j) * row[j];
      mid[static_cast<std::size_t>(i)] = silu_scalar(acc);
    }
    for (int i = 0; i < d; ++i) {
      double acc = 0.0;
      for (int j = 0; j < m; ++j) acc += e.u_up.value.at(i, j) * mid[static_cast<std::size_t>(j)];
      out[static_cast<std::size_t>(i)] = acc;
    }
  };
  Matrix2D y(h.rows, d);
  std::vector<double> us(static_cast<std::size_t>(d)), up(static_cast<std::size_t>(d));
  for (int t = 0; t < h.rows; ++t) {
    const double* row = h.row(t);
    expert(b.shared_expert, row, us);
    expert(b.private_expert, row, up);
    double ls = 0.0, lp = 0.0;
    for (int j = 0; j < d; ++j) {
      ls += row[j] * b.w_shared.value.values[static_cast<std::size_t>(j)];
      lp += row[j] * b.w_private.value.values[static_cast<std::size_t>(j)];
    }
    const double mx = std::max(ls, lp);
    const double es = std::exp(ls - mx), ep = std::exp(lp - mx);
    const double gs = es / (es + ep), gp = ep / (es + ep);
    CHECK(std::abs(gs + gp - 1.0) < 1e-12);  // gate normalization
    for (int j = 0; j < d; ++j) {
      y.at(t, j) = gs * us[static_cast<std::size_t>(j)] + gp * up[static_cast<std::size_t>(j)];
    }
  }
  return y;
}

std::vector<int> random_tokens(int n, int vocab, Rng& rng) {
  std::vector<int> t(static_cast<std::size_t>(n));
  for (int& v : t) v = rng.next_int(vocab);
  return t;
}

}  // namespace

TEST_CASE("gated_ffn_forward: zero routing weights give 0.5/0.5 gates") {
  Rng rng(3);
  lm::GatedExpertBlock block = random_gated_block(6, 5, rng);
  block.w_shared.value.set_zero();
  block.w_private.value.set_zero();
  const Matrix2D h = random_matrix(4, 6, rng);
  const Matrix2D mixed = lm::gated_ffn_forward(h, block);

  lm::GatedExpertBlock plain = block;
  plain.w_shared = {};
  plain.w_private = {};
  lm::GatedExpertBlock swapped = plain;  // shared-only path
  const Matrix2D shared_only = lm::gated_ffn_forward(h, swapped);
  std::swap(swapped.shared_expert, swapped.private_expert);
  const Matrix2D private_only = lm::gated_ffn_forward(h, swapped);

  for (int i = 0; i < mixed.rows; ++i)
    for (int j = 0; j < mixed.cols; ++j) {
      CHECK(mixed.at(i, j) ==
            doctest::Approx(0.5 * (shared_only.at(i, j) + private_only.at(i, j))).epsilon(1e-12));
    }
}

TEST_CASE("gated_ffn_forward: private copy of shared collapses to the shared expert") {
  Rng rng(5);
  lm::GatedExpertBlock block = random_gated_block(6, 5, rng);
  block.private_expert.v_down.value = block.shared_expert.v_down.value;
  block.private_expert.u_up.value = block.shared_expert.u_up.value;
  const Matrix2D h = random_matrix(4, 6, rng);
  const Matrix2D mixed = lm::gated_ffn_forward(h, block);
  lm::GatedExpertBlock plain = block;
  plain.w_shared = {};
  plain.w_private = {};
  const Matrix2D shared_only = lm::gated_ffn_forward(h, plain);
  CHECK(nncore::max_abs_diff(mixed, shared_only) < 1e-12);
}

TEST_CASE("gated_ffn_forward: matches the per-position scalar oracle to 1e-12") {
  Rng rng(7);
  const lm::GatedExpertBlock block = random_gated_block(9, 7, rng);
  const Matrix2D h = random_matrix(5, 9, rng);
  CHECK(nncore::max_abs_diff(lm::gated_ffn_forward(h, block), gated_ffn_oracle(h, block)) < 1e-12);
}

TEST_CASE("gated_ffn_forward: width mismatch raises shape error") {
  Rng rng(9);
  const lm::GatedExpertBlock block = random_gated_block(6, 5, rng);
  CHECK_THROWS_AS((void)lm::gated_ffn_forward(Matrix2D(3, 7), block), err::ShapeError);
}

TEST_CASE("draft forward: shapes, row normalization, causality") {
  Rng rng(11);
  const DraftModel draft = DraftModel::create_plain(tiny_draft_config(), rng);

  const std::vector<int> one = {4};
  const lm::ForwardResult single = draft.forward(one);
  CHECK(single.logits.rows == 1);
  CHECK(single.logits.cols == 11);
  CHECK(single.hiddens.cols == 12);

  const std::vector<int> tokens = random_tokens(9, 11, rng);
  const lm::ForwardResult full = draft.forward(tokens);
  const Matrix2D probs = nncore::softmax_rows_matrix(full.logits);
  for (int i = 0; i < probs.rows; ++i) {
    double sum = 0.0;
    for (int j = 0; j < probs.cols; ++j) sum += probs.at(i, j);
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }

  std::vector<int> extended = tokens;
  extended.push_back(2);
  const lm::ForwardResult longer = draft.forward(extended);
  for (int i = 0; i < full.logits.rows; ++i)
    for (int j = 0; j < full.logits.cols; ++j) {
      CHECK(full.logits.at(i, j) == longer.logits.at(i, j));
    }
}

TEST_CASE("forward: out-of-range token raises validation error") {
  Rng rng(13);
  const TargetModel target = TargetModel::create(tiny_target_config(), rng);
  const std::vector<int> bad = {3, 99};
  CHECK_THROWS_AS((void)target.forward(bad), err::ValidationError);
}

TEST_CASE("forward: context overflow raises length error") {
  Rng rng(13);
  const TargetModel target = TargetModel::create(tiny_target_config(), rng);
  const std::vector<int> long_seq(40, 1);
  CHECK_THROWS_AS((void)target.forward(long_seq), err::LengthError);
}

TEST_CASE("sample_token: greedy argmax and lowest-index tie-break") {
  Rng rng(17);
  const std::vector<double> a = {5, 1, 1};
  CHECK(lm::sample_token(a, 0.0, rng) == 0);
  const std::vector<double> tie = {2, 2, 0};
  CHECK(lm::sample_token(tie, 0.0, rng) == 0);
  const std::vector<double> b = {0, 1, 5};
  CHECK(lm::sample_token(b, 0.0, rng) == 2);
}

TEST_CASE("sample_token: empirical frequency within 3 sigma of a fair coin") {
  Rng rng(19);
  const std::vector<double> logits = {0.0, 0.0};
  const int n = 100000;
  int zeros = 0;
  for (int i = 0; i < n; ++i) {
    if (lm::sample_token(logits, 1.0, rng) == 0) ++zeros;
  }
  const double sigma = std::sqrt(0.25 * n);
  CHECK(std::abs(zeros - n / 2.0) < 3.0 * sigma);
}

TEST_CASE("build_gated_draft_from_pretrained: logits reproduced within 1e-10") {
  Rng rng(23);
  const DraftModel plain = DraftModel::create_plain(tiny_draft_config(), rng);
  const DraftModel gated = lm::build_gated_draft_from_pretrained(plain);
  CHECK(gated.gated());
  CHECK_FALSE(plain.gated());
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<int> tokens = random_tokens(2 + trial, 11, rng);
    const lm::ForwardResult a = plain.forward(tokens);
    const lm::ForwardResult b = gated.forward(tokens);
    CHECK(nncore::max_abs_diff(a.logits, b.logits) < 1e-10);
  }
}

TEST_CASE("build_gated_draft_from_pretrained: parameter count grows by n_layers*(2md+2d)") {
  Rng rng(29);
  const ModelConfig cfg = tiny_draft_config();
  const DraftModel plain = DraftModel::create_plain(cfg, rng);
  const DraftModel gated = lm::build_gated_draft_from_pretrained(plain);
  const std::size_t expected_growth = static_cast<std::size_t>(cfg.n_layers) *
      (2u * cfg.ffn_dim * cfg.model_dim + 2u * cfg.model_dim);
  CHECK(gated.core.parameter_count() == plain.core.parameter_count() + expected_growth);
}

TEST_CASE("make_freeze_mask: eda marks exactly the private experts and routing rows") {
  Rng rng(31);
  DraftModel gated = lm::build_gated_draft_from_pretrained(
      DraftModel::create_plain(tiny_draft_config(), rng));
  const lm::FreezeMask mask = make_freeze_mask(gated, FreezeMode::eda);
  auto named = gated.core.named_parameters();
  REQUIRE(named.size() == mask.trainable.size());
  for (std::size_t i = 0; i < named.size(); ++i) {
    const bool is_private = named[i].first.find(".ffn.private.") != std::string::npos ||
                            named[i].first.find(".ffn.gate.") != std::string::npos;
    CHECK(static_cast<bool>(mask.trainable[i]) == is_private);
  }
}

TEST_CASE("make_freeze_mask: trainable fraction under eda is below 0.4 for defaults") {
  Rng rng(37);
  DraftModel gated = lm::build_gated_draft_from_pretrained(
      DraftModel::create_plain(ModelConfig::draft_default(), rng));
  const lm::FreezeMask eda = make_freeze_mask(gated, FreezeMode::eda);
  const lm::FreezeMask full = make_freeze_mask(gated, FreezeMode::full_ft);
  const double ratio = static_cast<double>(trainable_scalar_count(gated, eda)) /
                       static_cast<double>(trainable_scalar_count(gated, full));
  CHECK(ratio < 0.4);
  CHECK(ratio > 0.0);
  CHECK(trainable_scalar_count(gated, full) == gated.core.parameter_count());
}

TEST_CASE("make_freeze_mask: full_ft flags everything, none flags nothing") {
  Rng rng(41);
  DraftModel gated = lm::build_gated_draft_from_pretrained(
      DraftModel::create_plain(tiny_draft_config(), rng));
  for (std::uint8_t f : make_freeze_mask(gated, FreezeMode::full_ft).trainable) CHECK(f == 1);
  for (std::uint8_t f : make_freeze_mask(gated, FreezeMode::none).trainable) CHECK(f == 0);
}

TEST_CASE("make_freeze_mask: eda on a plain draft raises config error") {
  Rng rng(43);
  const DraftModel plain = DraftModel::create_plain(tiny_draft_config(), rng);
  CHECK_THROWS_AS((void)make_freeze_mask(plain, FreezeMode::eda), err::ConfigError);
}

TEST_CASE("config validation rejects indivisible head counts") {
  ModelConfig cfg = tiny_target_config();
  cfg.n_heads = 5;
  CHECK_THROWS_AS(cfg.validate(), err::ConfigError);
}

TEST_CASE("checkpoint: target and gated draft round-trip bit-exactly") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "specadapt_ckpt_test";
  fs::create_directories(dir);

  Rng rng(47);
  const TargetModel target = TargetModel::create(tiny_target_config(), rng);
  save_target(dir / "t.ckpt", target, 0xabcdefULL);
  const TargetModel loaded_t = lm::load_target(dir / "t.ckpt");
  CHECK(loaded_t.config() == target.config());
  CHECK(lm::checkpoint_manifest_hash(dir / "t.ckpt") == 0xabcdefULL);
  {
    auto a = const_cast<TargetModel&>(target).core.named_parameters();
    auto b = const_cast<TargetModel&>(loaded_t).core.named_parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      CHECK(nncore::max_abs_diff(a[i].second->value, b[i].second->value) == 0.0);
    }
  }

  const DraftModel gated = lm::build_gated_draft_from_pretrained(
      DraftModel::create_plain(tiny_draft_config(), rng));
  save_draft(dir / "d.ckpt", gated);
  const DraftModel loaded_d = lm::load_draft(dir / "d.ckpt");
  CHECK(loaded_d.gated());
  {
    auto a = const_cast<DraftModel&>(gated).core.named_parameters();
    auto b = const_cast<DraftModel&>(loaded_d).core.named_parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(nncore::max_abs_diff(a[i].second->value, b[i].second->value) == 0.0);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("checkpoint: unknown version is rejected") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "specadapt_ckpt_ver";
  fs::create_directories(dir);
  Rng rng(53);
  save_target(dir / "t.ckpt", TargetModel::create(tiny_target_config(), rng));

  // Bump the version field (bytes 8..11).
  std::fstream f(dir / "t.ckpt", std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(8);
  const char high = 9;
  f.write(&high, 1);
  f.close();
  CHECK_THROWS_AS((void)lm::load_target(dir / "t.ckpt"), err::ParseError);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint: role mismatch is rejected") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "specadapt_ckpt_role";
  fs::create_directories(dir);
  Rng rng(59);
  save_draft(dir / "d.ckpt", DraftModel::create_plain(tiny_draft_config(), rng));
  CHECK_THROWS_AS((void)lm::load_target(dir / "d.ckpt"), err::ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("uniform model: logits are exactly zero") {
  lm::UniformModel uniform(tiny_draft_config());
  const std::vector<int> tokens = {1, 2, 3};
  const lm::ForwardResult fr = uniform.forward(tokens);
  for (double v : fr.logits.values) CHECK(v == 0.0);
  CHECK(uniform.forward_calls() == 1);
}
