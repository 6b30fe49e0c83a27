#include "nncore/tape.hpp"

#include <cmath>

#include "common/errors.hpp"

namespace nncore {

namespace {

constexpr double kRmsNormEps = 1e-8;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void row_softmax(const double* x, int n, double* out) {
  double mx = x[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (int j = 0; j < n; ++j) {
    out[j] = std::exp(x[j] - mx);
    sum += out[j];
  }
  const double inv = 1.0 / sum;
  for (int j = 0; j < n; ++j) out[j] *= inv;
}

double row_log_partition(const double* x, int n) {
  double mx = x[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (int j = 0; j < n; ++j) sum += std::exp(x[j] - mx);
  return mx + std::log(sum);
}

}  // namespace

TapeRef GradTape::constant(Matrix2D value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, nullptr, nullptr});
  return static_cast<TapeRef>(nodes_.size() - 1);
}

TapeRef GradTape::constant_view(const Matrix2D& value) {
  nodes_.push_back(Node{{}, &value, {}, nullptr, nullptr});
  return static_cast<TapeRef>(nodes_.size() - 1);
}

TapeRef GradTape::parameter(Parameter& p) {
  auto it = param_cache_.find(&p);
  if (it != param_cache_.end()) return it->second;
  nodes_.push_back(Node{{}, &p.value, {}, nullptr, &p});
  const TapeRef r = static_cast<TapeRef>(nodes_.size() - 1);
  param_cache_.emplace(&p, r);
  return r;
}

const Matrix2D& GradTape::value(TapeRef r) const {
  const Node& n = nodes_[static_cast<std::size_t>(r)];
  return n.view ? *n.view : n.value;
}

Matrix2D& GradTape::grad(TapeRef r) { return nodes_[static_cast<std::size_t>(r)].grad; }

TapeRef GradTape::emit(Matrix2D value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, nullptr, nullptr});
  return static_cast<TapeRef>(nodes_.size() - 1);
}

void GradTape::set_back(TapeRef r, std::function<void(GradTape&)> back) {
  if (recording_) nodes_[static_cast<std::size_t>(r)].back = std::move(back);
}

void GradTape::backward(TapeRef scalar_loss) {
  if (!recording_) {
    throw err::ValidationError("GradTape::backward called on a non-recording tape");
  }
  const Matrix2D& loss_value = value(scalar_loss);
  if (loss_value.rows != 1 || loss_value.cols != 1) {
    throw err::ShapeError("GradTape::backward: loss must be 1x1");
  }
  for (Node& n : nodes_) {
    const Matrix2D& v = n.view ? *n.view : n.value;
    n.grad = Matrix2D(v.rows, v.cols);
  }
  nodes_[static_cast<std::size_t>(scalar_loss)].grad.values[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].back) nodes_[i].back(*this);
  }
  for (Node& n : nodes_) {
    if (n.param != nullptr && n.param->trainable) {
      add_in_place(n.param->grad, n.grad);
    }
  }
}

// ---- ops ----

TapeRef linear(GradTape& t, TapeRef x, TapeRef w) {
  const Matrix2D& xv = t.value(x);
  const Matrix2D& wv = t.value(w);
  if (xv.cols != wv.cols) {
    throw err::ShapeError("linear: input width " + std::to_string(xv.cols) +
                          " does not match weight width " + std::to_string(wv.cols));
  }
  const TapeRef self = t.emit(matmul_nt(xv, wv));
  t.set_back(self, [self, x, w](GradTape& tp) {
    const Matrix2D& dy = tp.grad(self);
    matmul_nn_acc(dy, tp.value(w), tp.grad(x));
    matmul_tn_acc(dy, tp.value(x), tp.grad(w));
  });
  return self;
}

TapeRef linear(GradTape& t, TapeRef x, TapeRef w, TapeRef bias) {
  const Matrix2D& bv = t.value(bias);
  const TapeRef base = linear(t, x, w);
  const Matrix2D& yv = t.value(base);
  if (bv.rows != 1 || bv.cols != yv.cols) {
    throw err::ShapeError("linear: bias must be 1x" + std::to_string(yv.cols));
  }
  Matrix2D y = yv;
  for (int i = 0; i < y.rows; ++i) {
    double* yi = y.row(i);
    for (int j = 0; j < y.cols; ++j) yi[j] += bv.values[static_cast<std::size_t>(j)];
  }
  const TapeRef self = t.emit(std::move(y));
  t.set_back(self, [self, base, bias](GradTape& tp) {
    const Matrix2D& dy = tp.grad(self);
    add_in_place(tp.grad(base), dy);
    Matrix2D& db = tp.grad(bias);
    for (int i = 0; i < dy.rows; ++i) {
      const double* di = dy.row(i);
      for (int j = 0; j < dy.cols; ++j) db.values[static_cast<std::size_t>(j)] += di[j];
    }
  });
  return self;
}

TapeRef add(GradTape& t, TapeRef a, TapeRef b) {
  const TapeRef self = t.emit(nncore::add(t.value(a), t.value(b)));
  t.set_back(self, [self, a, b](GradTape& tp) {
    const Matrix2D& dy = tp.grad(self);
    add_in_place(tp.grad(a), dy);
    add_in_place(tp.grad(b), dy);
  });
  return self;
}

TapeRef scale(GradTape& t, TapeRef a, double alpha) {
  Matrix2D y = t.value(a);
  for (double& v : y.values) v *= alpha;
  const TapeRef self = t.emit(std::move(y));
  t.set_back(self, [self, a, alpha](GradTape& tp) {
    add_scaled_in_place(tp.grad(a), alpha, tp.grad(self));
  });
  return self;
}

TapeRef add_scaled(GradTape& t, TapeRef a, double alpha, TapeRef b) {
  Matrix2D y = t.value(a);
  add_scaled_in_place(y, alpha, t.value(b));
  const TapeRef self = t.emit(std::move(y));
  t.set_back(self, [self, a, alpha, b](GradTape& tp) {
    const Matrix2D& dy = tp.grad(self);
    add_in_place(tp.grad(a), dy);
    add_scaled_in_place(tp.grad(b), alpha, dy);
  });
  return self;
}

TapeRef silu(GradTape& t, TapeRef x) {
  const Matrix2D& xv = t.value(x);
  Matrix2D y(xv.rows, xv.cols);
  for (std::size_t i = 0; i < xv.values.size(); ++i) {
    y.values[i] = xv.values[i] * sigmoid(xv.values[i]);
  }
  const TapeRef self = t.emit(std::move(y));
  t.set_back(self, [self, x](GradTape& tp) {
    const Matrix2D& xv2 = tp.value(x);
    const Matrix2D& dy = tp.grad(self);
    Matrix2D& dx = tp.grad(x);
    for (std::size_t i = 0; i < xv2.values.size(); ++i) {
      const double s = sigmoid(xv2.values[i]);
      dx.values[i] += dy.values[i] * s * (1.0 + xv2.values[i] * (1.0 - s));
    }
  });
  return self;
}

TapeRef softmax_rows(GradTape& t, TapeRef x) {
  const Matrix2D& xv = t.value(x);
  Matrix2D y(xv.rows, xv.cols);
  for (int i = 0; i < xv.rows; ++i) row_softmax(xv.row(i), xv.cols, y.row(i));
  const TapeRef self = t.emit(std::move(y));
  t.set_back(self, [self, x](GradTape& tp) {
    const Matrix2D& yv = tp.value(self);
    const Matrix2D& dy = tp.grad(self);
    Matrix2D& dx = tp.grad(x);
    for (int i = 0; i < yv.rows; ++i) {
      const double* yi = yv.row(i);
      const double* di = dy.row(i);
      double dot = 0.0;
      for (int j = 0; j < yv.cols; ++j) dot += yi[j] * di[j];
      double* oi = dx.row(i);
      for (int j = 0; j < yv.cols; ++j) oi[j] += yi[j] * (di[j] - dot);
    }
  });
  return self;
}

TapeRef rmsnorm(GradTape& t, TapeRef x, TapeRef gain) {
  const Matrix2D& xv = t.value(x);
  const Matrix2D& gv = t.value(gain);
  if (gv.rows != 1 || gv.cols != xv.cols) {
    throw err::ShapeError("rmsnorm: gain must be 1x" + std::to_string(xv.cols));
  }
  const int d = xv.cols;
  Matrix2D y(xv.rows, d);
  std::vector<double> inv_rms(static_cast<std::size_t>(xv.rows));
  for (int i = 0; i < xv.rows; ++i) {
    const double* xi = xv.row(i);
    double ms = 0.0;
    for (int j = 0; j < d; ++j) ms += xi[j] * xi[j];
    const double inv = 1.0 / std::sqrt(ms / d + kRmsNormEps);
    inv_rms[static_cast<std::size_t>(i)] = inv;
    double* yi = y.row(i);
    for (int j = 0; j < d; ++j) yi[j] = xi[j] * inv * gv.values[static_cast<std::size_t>(j)];
  }
  const TapeRef self = t.emit(std::move(y));
  t.set_back(self, [self, x, gain, inv_rms = std::move(inv_rms)](GradTape& tp) {
    const Matrix2D& xv2 = tp.value(x);
    const Matrix2D& gv2 = tp.value(gain);
    const Matrix2D& dy = tp.grad(self);
    Matrix2D& dx = tp.grad(x);
    Matrix2D& dg = tp.grad(gain);
    const int d2 = xv2.cols;
    for (int i = 0; i < xv2.rows; ++i) {
      const double* xi = xv2.row(i);
      const double* di = dy.row(i);
      const double inv = inv_rms[static_cast<std::size_t>(i)];
      double dot = 0.0;  // sum_j dy_j * g_j * x_j
      for (int j = 0; j < d2; ++j) dot += di[j] * gv2.values[static_cast<std::size_t>(j)] * xi[j];
      const double k = dot * inv * inv * inv / d2;
      double* oi = dx.row(i);
      for (int j = 0; j < d2; ++j) {
        oi[j] += di[j] * gv2.values[static_cast<std::size_t>(j)] * inv - k * xi[j];
        dg.values[static_cast<std::size_t>(j)] += di[j] * xi[j] * inv;
      }
    }
  });
  return self;
}

TapeRef embedding_rows(GradTape& t, TapeRef table, std::span<const int> ids) {
  const Matrix2D& tv = t.value(table);
  Matrix2D y(static_cast<int>(ids.size()), tv.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= tv.rows) {
      throw err::ValidationError("embedding_rows: id " + std::to_string(id) +
                                 " out of range [0, " + std::to_string(tv.rows) + ")");
    }
    const double* src = tv.row(id);
    double* dst = y.row(static_cast<int>(i));
    std::copy(src, src + tv.cols, dst);
  }
  const TapeRef self = t.emit(std::move(y));
  t.set_back(self, [self, table, ids_copy = std::vector<int>(ids.begin(), ids.end())](GradTape& tp) {
    const Matrix2D& dy = tp.grad(self);
    Matrix2D& dt = tp.grad(table);
    for (std::size_t i = 0; i < ids_copy.size(); ++i) {
      const double* src = dy.row(static_cast<int>(i));
      double* dst = dt.row(ids_copy[i]);
      for (int j = 0; j < dy.cols; ++j) dst[j] += src[j];
    }
  });
  return self;
}

TapeRef concat_rows2(GradTape& t, TapeRef a, TapeRef b) {
  const Matrix2D& av = t.value(a);
  const Matrix2D& bv = t.value(b);
  if (av.rows != 1 || bv.rows != 1 || av.cols != bv.cols) {
    throw err::ShapeError("concat_rows2: expects two 1xd rows of equal width");
  }
  Matrix2D y(2, av.cols);
  std::copy(av.values.begin(), av.values.end(), y.row(0));
  std::copy(bv.values.begin(), bv.values.end(), y.row(1));
  const TapeRef self = t.emit(std::move(y));
  t.set_back(self, [self, a, b](GradTape& tp) {
    const Matrix2D& dy = tp.grad(self);
    Matrix2D& da = tp.grad(a);
    Matrix2D& db = tp.grad(b);
    for (int j = 0; j < dy.cols; ++j) {
      da.values[static_cast<std::size_t>(j)] += dy.at(0, j);
      db.values[static_cast<std::size_t>(j)] += dy.at(1, j);
    }
  });
  return self;
}

TapeRef mix_pair(GradTape& t, TapeRef gates, TapeRef u0, TapeRef u1) {
  const Matrix2D& gv = t.value(gates);
  const Matrix2D& v0 = t.value(u0);
  const Matrix2D& v1 = t.value(u1);
  if (gv.cols != 2 || gv.rows != v0.rows || !v0.same_shape(v1)) {
    throw err::ShapeError("mix_pair: gates must be Lx2 and expert outputs Lxd");
  }
  Matrix2D y(v0.rows, v0.cols);
  for (int i = 0; i < y.rows; ++i) {
    const double g0 = gv.at(i, 0);
    const double g1 = gv.at(i, 1);
    const double* a = v0.row(i);
    const double* b = v1.row(i);
    double* yi = y.row(i);
    for (int j = 0; j < y.cols; ++j) yi[j] = g0 * a[j] + g1 * b[j];
  }
  const TapeRef self = t.emit(std::move(y));
  t.set_back(self, [self, gates, u0, u1](GradTape& tp) {
    const Matrix2D& gv2 = tp.value(gates);
    const Matrix2D& a = tp.value(u0);
    const Matrix2D& b = tp.value(u1);
    const Matrix2D& dy = tp.grad(self);
    Matrix2D& dg = tp.grad(gates);
    Matrix2D& d0 = tp.grad(u0);
    Matrix2D& d1 = tp.grad(u1);
    for (int i = 0; i < dy.rows; ++i) {
      const double* di = dy.row(i);
      const double* ai = a.row(i);
      const double* bi = b.row(i);
      double* p0 = d0.row(i);
      double* p1 = d1.row(i);
      double acc0 = 0.0;
      double acc1 = 0.0;
      const double g0 = gv2.at(i, 0);
      const double g1 = gv2.at(i, 1);
      for (int j = 0; j < dy.cols; ++j) {
        p0[j] += g0 * di[j];
        p1[j] += g1 * di[j];
        acc0 += ai[j] * di[j];
        acc1 += bi[j] * di[j];
      }
      dg.at(i, 0) += acc0;
      dg.at(i, 1) += acc1;
    }
  });
  return self;
}

TapeRef causal_attention(GradTape& t, TapeRef x, TapeRef wq, TapeRef wk, TapeRef wv, TapeRef wo,
                         int n_heads) {
  const Matrix2D& xv = t.value(x);
  const int length = xv.rows;
  const int d = xv.cols;
  if (length < 1) throw err::ValidationError("causal_attention: sequence length must be >= 1");
  if (d % n_heads != 0) {
    throw err::ShapeError("causal_attention: model dim " + std::to_string(d) +
                          " not divisible by " + std::to_string(n_heads) + " heads");
  }
  const int head_dim = d / n_heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Matrix2D q = matmul_nt(xv, t.value(wq));
  Matrix2D k = matmul_nt(xv, t.value(wk));
  Matrix2D v = matmul_nt(xv, t.value(wv));

  // att[h] is L x L, strictly lower-triangular-plus-diagonal.
  std::vector<Matrix2D> att(static_cast<std::size_t>(n_heads));
  Matrix2D ctx(length, d);
  std::vector<double> scores(static_cast<std::size_t>(length));
  for (int h = 0; h < n_heads; ++h) {
    Matrix2D& ah = att[static_cast<std::size_t>(h)];
    ah = Matrix2D(length, length);
    const int off = h * head_dim;
    for (int i = 0; i < length; ++i) {
      const double* qi = q.row(i) + off;
      for (int j = 0; j <= i; ++j) {
        const double* kj = k.row(j) + off;
        double dot = 0.0;
        for (int p = 0; p < head_dim; ++p) dot += qi[p] * kj[p];
        scores[static_cast<std::size_t>(j)] = dot * scale_factor;
      }
      row_softmax(scores.data(), i + 1, ah.row(i));
      double* ci = ctx.row(i) + off;
      for (int j = 0; j <= i; ++j) {
        const double a = ah.at(i, j);
        const double* vj = v.row(j) + off;
        for (int p = 0; p < head_dim; ++p) ci[p] += a * vj[p];
      }
    }
  }

  const TapeRef self = t.emit(matmul_nt(ctx, t.value(wo)));
  if (!t.recording()) return self;

  t.set_back(self, [self, x, wq, wk, wv, wo, n_heads, head_dim, scale_factor,
                    q = std::move(q), k = std::move(k), v = std::move(v), ctx = std::move(ctx),
                    att = std::move(att)](GradTape& tp) {
    const Matrix2D& xv2 = tp.value(x);
    const Matrix2D& dy = tp.grad(self);
    const int length2 = xv2.rows;

    // Through the output projection.
    Matrix2D dctx(length2, xv2.cols);
    matmul_nn_acc(dy, tp.value(wo), dctx);
    matmul_tn_acc(dy, ctx, tp.grad(wo));

    Matrix2D dq(length2, xv2.cols);
    Matrix2D dk(length2, xv2.cols);
    Matrix2D dv(length2, xv2.cols);
    std::vector<double> datt(static_cast<std::size_t>(length2));
    for (int h = 0; h < n_heads; ++h) {
      const Matrix2D& ah = att[static_cast<std::size_t>(h)];
      const int off = h * head_dim;
      for (int i = 0; i < length2; ++i) {
        const double* dci = dctx.row(i) + off;
        // datt and value gradient.
        for (int j = 0; j <= i; ++j) {
          const double* vj = v.row(j) + off;
          double dot = 0.0;
          for (int p = 0; p < head_dim; ++p) dot += dci[p] * vj[p];
          datt[static_cast<std::size_t>(j)] = dot;
          const double a = ah.at(i, j);
          double* dvj = dv.row(j) + off;
          for (int p = 0; p < head_dim; ++p) dvj[p] += a * dci[p];
        }
        // Softmax backward per row.
        double mix = 0.0;
        for (int j = 0; j <= i; ++j) mix += datt[static_cast<std::size_t>(j)] * ah.at(i, j);
        const double* qi = q.row(i) + off;
        double* dqi = dq.row(i) + off;
        for (int j = 0; j <= i; ++j) {
          const double ds = ah.at(i, j) * (datt[static_cast<std::size_t>(j)] - mix) * scale_factor;
          const double* kj = k.row(j) + off;
          double* dkj = dk.row(j) + off;
          for (int p = 0; p < head_dim; ++p) {
            dqi[p] += ds * kj[p];
            dkj[p] += ds * qi[p];
          }
        }
      }
    }

    Matrix2D& dx = tp.grad(x);
    matmul_nn_acc(dq, tp.value(wq), dx);
    matmul_nn_acc(dk, tp.value(wk), dx);
    matmul_nn_acc(dv, tp.value(wv), dx);
    matmul_tn_acc(dq, xv2, tp.grad(wq));
    matmul_tn_acc(dk, xv2, tp.grad(wk));
    matmul_tn_acc(dv, xv2, tp.grad(wv));
  });
  return self;
}

TapeRef soft_cross_entropy_sum(GradTape& t, const Matrix2D& target_probs, TapeRef logits) {
  const Matrix2D& lv = t.value(logits);
  if (!target_probs.same_shape(lv)) {
    throw err::ShapeError("soft_cross_entropy_sum: target/logits shape mismatch");
  }
  Matrix2D smax(lv.rows, lv.cols);
  double loss = 0.0;
  for (int i = 0; i < lv.rows; ++i) {
    const double* pi = target_probs.row(i);
    double psum = 0.0;
    for (int j = 0; j < lv.cols; ++j) psum += pi[j];
    if (std::abs(psum - 1.0) > 1e-6) {
      throw err::ValidationError("soft_cross_entropy_sum: target row " + std::to_string(i) +
                                 " sums to " + std::to_string(psum));
    }
    const double* li = lv.row(i);
    row_softmax(li, lv.cols, smax.row(i));
    const double log_z = row_log_partition(li, lv.cols);
    for (int j = 0; j < lv.cols; ++j) {
      if (pi[j] != 0.0) loss += pi[j] * (log_z - li[j]);
    }
  }
  const TapeRef self = t.emit(Matrix2D::scalar(loss));
  t.set_back(self, [self, logits, target = target_probs, smax = std::move(smax)](GradTape& tp) {
    const double dy = tp.grad(self).values[0];
    Matrix2D& dl = tp.grad(logits);
    for (std::size_t i = 0; i < dl.values.size(); ++i) {
      dl.values[i] += dy * (smax.values[i] - target.values[i]);
    }
  });
  return self;
}

TapeRef hard_cross_entropy_sum(GradTape& t, TapeRef logits, std::span<const int> targets) {
  const Matrix2D& lv = t.value(logits);
  if (static_cast<int>(targets.size()) != lv.rows) {
    throw err::ShapeError("hard_cross_entropy_sum: one target id per logits row required");
  }
  Matrix2D smax(lv.rows, lv.cols);
  double loss = 0.0;
  for (int i = 0; i < lv.rows; ++i) {
    const int target = targets[static_cast<std::size_t>(i)];
    if (target < 0 || target >= lv.cols) {
      throw err::ValidationError("hard_cross_entropy_sum: target id out of range");
    }
    const double* li = lv.row(i);
    row_softmax(li, lv.cols, smax.row(i));
    loss += row_log_partition(li, lv.cols) - li[target];
  }
  const TapeRef self = t.emit(Matrix2D::scalar(loss));
  t.set_back(self, [self, logits, smax = std::move(smax),
                    ids = std::vector<int>(targets.begin(), targets.end())](GradTape& tp) {
    const double dy = tp.grad(self).values[0];
    Matrix2D& dl = tp.grad(logits);
    for (int i = 0; i < dl.rows; ++i) {
      const double* si = smax.row(i);
      double* di = dl.row(i);
      for (int j = 0; j < dl.cols; ++j) di[j] += dy * si[j];
      di[ids[static_cast<std::size_t>(i)]] -= dy;
    }
  });
  return self;
}

TapeRef squared_diff_row_mean_sum(GradTape& t, TapeRef a, const Matrix2D& b) {
  const Matrix2D& av = t.value(a);
  if (!av.same_shape(b)) {
    throw err::ShapeError("squared_diff_row_mean_sum: shape mismatch");
  }
  const double inv_cols = 1.0 / av.cols;
  double loss = 0.0;
  for (std::size_t i = 0; i < av.values.size(); ++i) {
    const double d = av.values[i] - b.values[i];
    loss += d * d * inv_cols;
  }
  const TapeRef self = t.emit(Matrix2D::scalar(loss));
  t.set_back(self, [self, a, other = b, inv_cols](GradTape& tp) {
    const double dy = tp.grad(self).values[0];
    const Matrix2D& av2 = tp.value(a);
    Matrix2D& da = tp.grad(a);
    for (std::size_t i = 0; i < av2.values.size(); ++i) {
      da.values[i] += dy * 2.0 * (av2.values[i] - other.values[i]) * inv_cols;
    }
  });
  return self;
}

CrossEntropyRowResult cross_entropy_row(std::span<const double> p_target,
                                        std::span<const double> logits) {
  if (p_target.size() != logits.size()) {
    throw err::ShapeError("cross_entropy_row: length mismatch");
  }
  double psum = 0.0;
  for (double p : p_target) psum += p;
  if (std::abs(psum - 1.0) > 1e-6) {
    throw err::ValidationError("cross_entropy_row: target distribution sums to " +
                               std::to_string(psum) + ", expected 1 within 1e-6");
  }
  const int n = static_cast<int>(logits.size());
  CrossEntropyRowResult result;
  result.grad_logits.resize(logits.size());
  row_softmax(logits.data(), n, result.grad_logits.data());
  const double log_z = row_log_partition(logits.data(), n);
  for (int j = 0; j < n; ++j) {
    if (p_target[j] != 0.0) result.loss += p_target[j] * (log_z - logits[j]);
    result.grad_logits[static_cast<std::size_t>(j)] -= p_target[j];
  }
  return result;
}

}  // namespace nncore
