#include "lm/model.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "common/errors.hpp"
#include "nncore/matrix.hpp"

namespace lm {

namespace {

constexpr double kInitStd = 0.08;

using nncore::GradTape;
using nncore::Matrix2D;
using nncore::Parameter;
using nncore::TapeRef;

using Binder = std::function<TapeRef(const Parameter&)>;

Matrix2D gaussian_matrix(int r, int c, nncore::Rng& rng, double std_dev) {
  Matrix2D m(r, c);
  for (double& v : m.values) v = rng.next_gaussian() * std_dev;
  return m;
}

Matrix2D ones_row(int d) {
  Matrix2D m(1, d);
  m.fill(1.0);
  return m;
}

ExpertParams make_expert(const std::string& prefix, const ModelConfig& cfg, nncore::Rng& rng) {
  ExpertParams e;
  e.v_down = Parameter(prefix + ".v_down",
                       gaussian_matrix(cfg.ffn_dim, cfg.model_dim, rng, kInitStd));
  e.u_up = Parameter(prefix + ".u_up",
                     gaussian_matrix(cfg.model_dim, cfg.ffn_dim, rng, kInitStd));
  return e;
}

void validate_tokens(const ModelConfig& cfg, std::span<const int> tokens) {
  if (tokens.empty()) {
    throw err::ValidationError("model forward: empty token sequence");
  }
  if (static_cast<int>(tokens.size()) > cfg.max_seq_len) {
    throw err::LengthError("model forward: sequence length " + std::to_string(tokens.size()) +
                           " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  for (int id : tokens) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw err::ValidationError("model forward: token id " + std::to_string(id) +
                                 " outside vocabulary of size " +
                                 std::to_string(cfg.vocab_size));
    }
  }
}

TapeRef expert_forward(GradTape& tape, TapeRef h, const ExpertParams& e, const Binder& bind) {
  const TapeRef bottleneck = silu(tape, linear(tape, h, bind(e.v_down)));
  return linear(tape, bottleneck, bind(e.u_up));
}

TapeRef ffn_forward(GradTape& tape, TapeRef h, const GatedExpertBlock& ffn, const Binder& bind) {
  const TapeRef shared_out = expert_forward(tape, h, ffn.shared_expert, bind);
  if (!ffn.gated()) return shared_out;
  const TapeRef private_out = expert_forward(tape, h, ffn.private_expert, bind);
  const TapeRef gate_map = concat_rows2(tape, bind(ffn.w_shared), bind(ffn.w_private));
  const TapeRef gates = softmax_rows(tape, linear(tape, h, gate_map));
  return mix_pair(tape, gates, shared_out, private_out);
}

ForwardRefs forward_core_impl(const TransformerCore& core, GradTape& tape,
                              std::span<const int> tokens, const Binder& bind) {
  validate_tokens(core.cfg, tokens);
  const int length = static_cast<int>(tokens.size());

  std::vector<int> positions(static_cast<std::size_t>(length));
  std::iota(positions.begin(), positions.end(), 0);

  TapeRef x = add(tape, embedding_rows(tape, bind(core.token_embed), tokens),
                  embedding_rows(tape, bind(core.pos_embed), positions));
  for (const TransformerBlock& block : core.blocks) {
    const TapeRef attn_in = rmsnorm(tape, x, bind(block.norm_attn_gain));
    x = add(tape, x,
            causal_attention(tape, attn_in, bind(block.attn.wq), bind(block.attn.wk),
                             bind(block.attn.wv), bind(block.attn.wo), core.cfg.n_heads));
    const TapeRef ffn_in = rmsnorm(tape, x, bind(block.norm_ffn_gain));
    x = add(tape, x, ffn_forward(tape, ffn_in, block.ffn, bind));
  }
  const TapeRef hiddens = rmsnorm(tape, x, bind(core.final_norm_gain));
  const TapeRef logits = linear(tape, hiddens, bind(core.output_head));
  return {logits, hiddens};
}

}  // namespace

std::string to_string(ModelRole role) {
  return role == ModelRole::target ? "target" : "draft";
}

ModelRole role_from_string(const std::string& s) {
  if (s == "target") return ModelRole::target;
  if (s == "draft") return ModelRole::draft;
  throw err::ConfigError("unknown model role '" + s + "'");
}

void ModelConfig::validate() const {
  if (vocab_size < 2) throw err::ConfigError("vocab_size must be >= 2");
  if (ffn_dim < 1) throw err::ConfigError("ffn_dim must be >= 1");
  if (n_layers < 1) throw err::ConfigError("n_layers must be >= 1");
  if (max_seq_len < 1) throw err::ConfigError("max_seq_len must be >= 1");
  if (n_heads < 1 || model_dim % n_heads != 0) {
    throw err::ConfigError("model_dim " + std::to_string(model_dim) +
                           " must be divisible by n_heads " + std::to_string(n_heads));
  }
}

ModelConfig ModelConfig::target_default() {
  return ModelConfig{.vocab_size = 64, .model_dim = 96, .ffn_dim = 256, .n_layers = 4,
                     .n_heads = 4, .max_seq_len = 128, .role = ModelRole::target};
}

ModelConfig ModelConfig::draft_default() {
  return ModelConfig{.vocab_size = 64, .model_dim = 96, .ffn_dim = 192, .n_layers = 2,
                     .n_heads = 4, .max_seq_len = 128, .role = ModelRole::draft};
}

std::vector<std::pair<std::string, Parameter*>> TransformerCore::named_parameters() {
  std::vector<std::pair<std::string, Parameter*>> out;
  auto push = [&out](Parameter& p) {
    if (!p.empty()) out.emplace_back(p.name, &p);
  };
  push(token_embed);
  push(pos_embed);
  for (TransformerBlock& b : blocks) {
    push(b.norm_attn_gain);
    push(b.attn.wq);
    push(b.attn.wk);
    push(b.attn.wv);
    push(b.attn.wo);
    push(b.norm_ffn_gain);
    push(b.ffn.shared_expert.v_down);
    push(b.ffn.shared_expert.u_up);
    push(b.ffn.private_expert.v_down);
    push(b.ffn.private_expert.u_up);
    push(b.ffn.w_shared);
    push(b.ffn.w_private);
  }
  push(final_norm_gain);
  push(output_head);
  return out;
}

std::vector<Parameter*> TransformerCore::parameters() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> TransformerCore::parameters() const {
  auto named = const_cast<TransformerCore*>(this)->named_parameters();
  std::vector<const Parameter*> out;
  out.reserve(named.size());
  for (auto& [name, p] : named) out.push_back(p);
  return out;
}

std::size_t TransformerCore::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

TransformerCore make_core(const ModelConfig& cfg, nncore::Rng& rng) {
  cfg.validate();
  TransformerCore core;
  core.cfg = cfg;
  core.token_embed =
      Parameter("token_embed", gaussian_matrix(cfg.vocab_size, cfg.model_dim, rng, kInitStd));
  core.pos_embed =
      Parameter("pos_embed", gaussian_matrix(cfg.max_seq_len, cfg.model_dim, rng, kInitStd));
  core.blocks.resize(static_cast<std::size_t>(cfg.n_layers));
  for (int i = 0; i < cfg.n_layers; ++i) {
    TransformerBlock& b = core.blocks[static_cast<std::size_t>(i)];
    const std::string prefix = "block" + std::to_string(i);
    b.norm_attn_gain = Parameter(prefix + ".norm_attn.gain", ones_row(cfg.model_dim));
    b.norm_ffn_gain = Parameter(prefix + ".norm_ffn.gain", ones_row(cfg.model_dim));
    b.attn.wq = Parameter(prefix + ".attn.wq",
                          gaussian_matrix(cfg.model_dim, cfg.model_dim, rng, kInitStd));
    b.attn.wk = Parameter(prefix + ".attn.wk",
                          gaussian_matrix(cfg.model_dim, cfg.model_dim, rng, kInitStd));
    b.attn.wv = Parameter(prefix + ".attn.wv",
                          gaussian_matrix(cfg.model_dim, cfg.model_dim, rng, kInitStd));
    b.attn.wo = Parameter(prefix + ".attn.wo",
                          gaussian_matrix(cfg.model_dim, cfg.model_dim, rng, kInitStd));
    b.ffn.shared_expert = make_expert(prefix + ".ffn.shared", cfg, rng);
  }
  core.final_norm_gain = Parameter("final_norm.gain", ones_row(cfg.model_dim));
  core.output_head =
      Parameter("output_head", gaussian_matrix(cfg.vocab_size, cfg.model_dim, rng, kInitStd));
  return core;
}

ForwardRefs forward_on_tape(TransformerCore& core, GradTape& tape, std::span<const int> tokens) {
  const Binder bind = [&tape](const Parameter& p) -> TapeRef {
    // The core is non-const here; parameters are genuinely mutable.
    return tape.parameter(const_cast<Parameter&>(p));
  };
  return forward_core_impl(core, tape, tokens, bind);
}

ForwardResult forward_inference(const TransformerCore& core, std::span<const int> tokens) {
  GradTape tape(false);
  const Binder bind = [&tape](const Parameter& p) -> TapeRef {
    return tape.constant_view(p.value);
  };
  const ForwardRefs refs = forward_core_impl(core, tape, tokens, bind);
  return {tape.value(refs.logits), tape.value(refs.hiddens)};
}

TargetModel TargetModel::create(const ModelConfig& cfg, nncore::Rng& rng) {
  if (cfg.role != ModelRole::target) {
    throw err::ConfigError("TargetModel::create: config role must be 'target'");
  }
  TargetModel m;
  m.core = make_core(cfg, rng);
  return m;
}

ForwardResult TargetModel::forward(std::span<const int> tokens) const {
  ++forward_calls_;
  return forward_inference(core, tokens);
}

DraftModel DraftModel::create_plain(const ModelConfig& cfg, nncore::Rng& rng) {
  if (cfg.role != ModelRole::draft) {
    throw err::ConfigError("DraftModel::create_plain: config role must be 'draft'");
  }
  DraftModel m;
  m.core = make_core(cfg, rng);
  return m;
}

ForwardResult DraftModel::forward(std::span<const int> tokens) const {
  ++forward_calls_;
  return forward_inference(core, tokens);
}

bool DraftModel::gated() const {
  return !core.blocks.empty() && core.blocks.front().ffn.gated();
}

ForwardResult UniformModel::forward(std::span<const int> tokens) const {
  ++forward_calls_;
  validate_tokens(cfg_, tokens);
  const int length = static_cast<int>(tokens.size());
  return {Matrix2D(length, cfg_.vocab_size), Matrix2D(length, cfg_.model_dim)};
}

Matrix2D gated_ffn_forward(const Matrix2D& h, const GatedExpertBlock& block) {
  if (h.cols != block.shared_expert.v_down.value.cols) {
    throw err::ShapeError("gated_ffn_forward: input width " + std::to_string(h.cols) +
                          " does not match expert width " +
                          std::to_string(block.shared_expert.v_down.value.cols));
  }
  GradTape tape(false);
  const Binder bind = [&tape](const Parameter& p) -> TapeRef {
    return tape.constant_view(p.value);
  };
  return tape.value(ffn_forward(tape, tape.constant(h), block, bind));
}

DraftModel build_gated_draft_from_pretrained(const DraftModel& pretrained) {
  DraftModel gated = pretrained;
  const int d = gated.core.cfg.model_dim;
  for (std::size_t i = 0; i < gated.core.blocks.size(); ++i) {
    GatedExpertBlock& ffn = gated.core.blocks[i].ffn;
    const std::string prefix = "block" + std::to_string(i) + ".ffn";
    ffn.private_expert.v_down =
        Parameter(prefix + ".private.v_down", ffn.shared_expert.v_down.value);
    ffn.private_expert.u_up = Parameter(prefix + ".private.u_up", ffn.shared_expert.u_up.value);
    ffn.w_shared = Parameter(prefix + ".gate.w_shared", Matrix2D(1, d));
    ffn.w_private = Parameter(prefix + ".gate.w_private", Matrix2D(1, d));
  }
  return gated;
}

std::string to_string(FreezeMode mode) {
  switch (mode) {
    case FreezeMode::eda: return "eda";
    case FreezeMode::full_ft: return "full_ft";
    case FreezeMode::none: return "none";
  }
  return "unknown";
}

FreezeMask make_freeze_mask(const DraftModel& model, FreezeMode mode) {
  if (mode == FreezeMode::eda && !model.gated()) {
    throw err::ConfigError("make_freeze_mask: eda mode requires a gated draft model");
  }
  auto named = const_cast<DraftModel&>(model).core.named_parameters();
  FreezeMask mask;
  mask.trainable.reserve(named.size());
  for (auto& [name, p] : named) {
    bool trainable = false;
    switch (mode) {
      case FreezeMode::full_ft:
        trainable = true;
        break;
      case FreezeMode::none:
        trainable = false;
        break;
      case FreezeMode::eda:
        trainable = name.find(".ffn.private.") != std::string::npos ||
                    name.find(".ffn.gate.") != std::string::npos;
        break;
    }
    mask.trainable.push_back(trainable ? 1 : 0);
  }
  return mask;
}

void apply_freeze_mask(DraftModel& model, const FreezeMask& mask) {
  auto params = model.core.parameters();
  if (params.size() != mask.trainable.size()) {
    throw err::ConfigError("apply_freeze_mask: mask does not match the model's parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i]->trainable = mask.trainable[i] != 0;
  }
}

std::size_t trainable_scalar_count(const DraftModel& model, const FreezeMask& mask) {
  auto params = const_cast<DraftModel&>(model).core.parameters();
  if (params.size() != mask.trainable.size()) {
    throw err::ConfigError("trainable_scalar_count: mask does not match the parameter list");
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (mask.trainable[i]) n += params[i]->value.size();
  }
  return n;
}

int argmax_lowest_index(std::span<const double> row) {
  if (row.empty()) throw err::ValidationError("argmax_lowest_index: empty row");
  int best = 0;
  for (int i = 1; i < static_cast<int>(row.size()); ++i) {
    if (row[static_cast<std::size_t>(i)] > row[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

int sample_token(std::span<const double> logits_row, double temperature, nncore::Rng& rng) {
  if (temperature < 0.0) {
    throw err::ValidationError("sample_token: temperature must be >= 0");
  }
  if (temperature == 0.0) return argmax_lowest_index(logits_row);

  Matrix2D scaled(1, static_cast<int>(logits_row.size()));
  for (std::size_t i = 0; i < logits_row.size(); ++i) {
    scaled.values[i] = logits_row[i] / temperature;
  }
  const Matrix2D probs = nncore::softmax_rows_matrix(scaled);
  const double r = rng.next_double();
  double cdf = 0.0;
  for (int i = 0; i < probs.cols; ++i) {
    cdf += probs.values[static_cast<std::size_t>(i)];
    if (r < cdf) return i;
  }
  return probs.cols - 1;
}

}  // namespace lm
