#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nncore/matrix.hpp"

namespace nncore {

/// A named trainable tensor. Gradients accumulate into `grad` when a tape
/// that touched the parameter runs backward; frozen parameters keep a zero
/// gradient and are skipped by the optimizer.
struct Parameter {
  std::string name;
  Matrix2D value;
  Matrix2D grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Matrix2D v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}

  bool empty() const { return value.empty(); }
  void zero_grad() { grad.set_zero(); }
};

using TapeRef = std::int32_t;

/// Reverse-mode tape over Matrix2D primitives. Rebuilt per forward pass; a
/// node records its value plus a closure that scatters the node's gradient
/// to its inputs. Replaying the tape backward yields gradients for every
/// parameter touched in the forward pass; untouched parameters keep an
/// exactly zero gradient.
class GradTape {
 public:
  explicit GradTape(bool recording = true) : recording_(recording) {}

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  bool recording() const { return recording_; }

  TapeRef constant(Matrix2D value);
  /// Non-owning leaf; the referenced matrix must outlive the tape. Used on
  /// inference paths to avoid copying weight matrices.
  TapeRef constant_view(const Matrix2D& value);
  TapeRef parameter(Parameter& p);

  const Matrix2D& value(TapeRef r) const;
  Matrix2D& grad(TapeRef r);

  /// Runs reverse accumulation from a 1x1 loss node, then adds each
  /// trainable parameter leaf's gradient into Parameter::grad.
  void backward(TapeRef scalar_loss);

  std::size_t node_count() const { return nodes_.size(); }

  /// Op implementations only: create a node, then attach its backward.
  TapeRef emit(Matrix2D value);
  void set_back(TapeRef r, std::function<void(GradTape&)> back);

 private:
  struct Node {
    Matrix2D value;
    const Matrix2D* view = nullptr;
    Matrix2D grad;
    std::function<void(GradTape&)> back;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, TapeRef> param_cache_;
  bool recording_ = true;
};

// ---- primitive operations ----

/// y = x * W^T (+ bias broadcast per row). W is out x in, bias 1 x out.
TapeRef linear(GradTape& t, TapeRef x, TapeRef w);
TapeRef linear(GradTape& t, TapeRef x, TapeRef w, TapeRef bias);

TapeRef add(GradTape& t, TapeRef a, TapeRef b);
TapeRef scale(GradTape& t, TapeRef a, double alpha);
/// a + alpha * b, elementwise.
TapeRef add_scaled(GradTape& t, TapeRef a, double alpha, TapeRef b);

TapeRef silu(GradTape& t, TapeRef x);
TapeRef softmax_rows(GradTape& t, TapeRef x);

/// Per-row RMS normalization with a learnable 1 x d gain.
TapeRef rmsnorm(GradTape& t, TapeRef x, TapeRef gain);

/// Gathers table rows by id; backward scatter-adds into the table.
TapeRef embedding_rows(GradTape& t, TapeRef table, std::span<const int> ids);

/// Stacks two 1 x d rows into a 2 x d matrix (routing weights -> gate map).
TapeRef concat_rows2(GradTape& t, TapeRef a, TapeRef b);

/// y[i,:] = gates[i,0]*u0[i,:] + gates[i,1]*u1[i,:].
TapeRef mix_pair(GradTape& t, TapeRef gates, TapeRef u0, TapeRef u1);

/// Multi-head causal self-attention. x: L x d; weights d x d each.
/// Output row i depends only on input rows <= i, bit-exactly.
TapeRef causal_attention(GradTape& t, TapeRef x, TapeRef wq, TapeRef wk, TapeRef wv, TapeRef wo,
                         int n_heads);

/// Sum over rows of -sum_v p[v] * log softmax(logits)[v]. 1x1 output.
/// Validates that every target row is normalized to 1 within 1e-6.
TapeRef soft_cross_entropy_sum(GradTape& t, const Matrix2D& target_probs, TapeRef logits);

/// Sum over rows of -log softmax(logits)[target]. 1x1 output.
TapeRef hard_cross_entropy_sum(GradTape& t, TapeRef logits, std::span<const int> targets);

/// Sum over rows of mean over columns of (a - b)^2; b carries no gradient.
TapeRef squared_diff_row_mean_sum(GradTape& t, TapeRef a, const Matrix2D& b);

// ---- standalone helpers mirroring the tape math ----

struct CrossEntropyRowResult {
  double loss = 0.0;
  std::vector<double> grad_logits;  // softmax(logits) - p_target
};

/// -sum_v p[v] * log softmax(logits)[v] for one row, with its gradient.
CrossEntropyRowResult cross_entropy_row(std::span<const double> p_target,
                                        std::span<const double> logits);

}  // namespace nncore
