#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "common/errors.hpp"
#include "nncore/gradcheck.hpp"
#include "nncore/linalg.hpp"
#include "nncore/matrix.hpp"
#include "nncore/optimizer.hpp"
#include "nncore/rng.hpp"
#include "nncore/tape.hpp"

using nncore::GradTape;
using nncore::Matrix2D;
using nncore::Parameter;
using nncore::Rng;
using nncore::TapeRef;

namespace {

Matrix2D random_matrix(int r, int c, Rng& rng, double scale = 1.0) {
  Matrix2D m(r, c);
  for (double& v : m.values) v = rng.next_gaussian() * scale;
  return m;
}

// Naive triple-loop y = x * W^T, independent of the library kernels.
Matrix2D naive_linear(const Matrix2D& x, const Matrix2D& w) {
  Matrix2D y(x.rows, w.rows);
  for (int i = 0; i < x.rows; ++i)
    for (int o = 0; o < w.rows; ++o) {
      double acc = 0.0;
      for (int k = 0; k < x.cols; ++k) acc += x.at(i, k) * w.at(o, k);
      y.at(i, o) = acc;
    }
  return y;
}

}  // namespace

TEST_CASE("linear: identity weight returns input") {
  GradTape t;
  Matrix2D x = Matrix2D::from_rows(1, 2, {1, 2});
  Matrix2D w = Matrix2D::from_rows(2, 2, {1, 0, 0, 1});
  const TapeRef y = linear(t, t.constant(x), t.constant(w));
  CHECK(t.value(y).at(0, 0) == doctest::Approx(1.0));
  CHECK(t.value(y).at(0, 1) == doctest::Approx(2.0));
}

TEST_CASE("linear: 1x2 weight acts as dot product") {
  GradTape t;
  const TapeRef x = t.constant(Matrix2D::from_rows(1, 2, {1, 1}));
  const TapeRef w = t.constant(Matrix2D::from_rows(1, 2, {2, 3}));
  const TapeRef y = linear(t, x, w);
  CHECK(t.value(y).rows == 1);
  CHECK(t.value(y).cols == 1);
  CHECK(t.value(y).values[0] == doctest::Approx(5.0));
}

TEST_CASE("linear: random case matches triple-loop oracle to 1e-12") {
  Rng rng(41);
  Matrix2D x = random_matrix(3, 4, rng);
  Matrix2D w = random_matrix(5, 4, rng);
  GradTape t;
  const TapeRef y = linear(t, t.constant(x), t.constant(w));
  CHECK(nncore::max_abs_diff(t.value(y), naive_linear(x, w)) < 1e-12);
}

TEST_CASE("linear: dimension mismatch raises shape error") {
  GradTape t;
  const TapeRef x = t.constant(Matrix2D(2, 3));
  const TapeRef w = t.constant(Matrix2D(4, 5));
  CHECK_THROWS_AS((void)linear(t, x, w), err::ShapeError);
}

TEST_CASE("softmax_rows: symmetry, closed form, large-magnitude stability") {
  GradTape t;
  const TapeRef y1 = softmax_rows(t, t.constant(Matrix2D::from_rows(1, 2, {0, 0})));
  CHECK(t.value(y1).values[0] == doctest::Approx(0.5));
  CHECK(t.value(y1).values[1] == doctest::Approx(0.5));

  const TapeRef y2 = softmax_rows(t, t.constant(Matrix2D::from_rows(1, 2, {std::log(2.0), 0})));
  CHECK(t.value(y2).values[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(t.value(y2).values[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  const TapeRef y3 = softmax_rows(t, t.constant(Matrix2D::from_rows(1, 2, {1000, 0})));
  CHECK(t.value(y3).all_finite());
  CHECK(t.value(y3).values[0] == doctest::Approx(1.0));
  CHECK(t.value(y3).values[1] == doctest::Approx(0.0));
}

TEST_CASE("softmax_rows: rows sum to 1 within 1e-12 for magnitudes up to 1e3") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    GradTape t(false);
    Matrix2D x = random_matrix(4, 9, rng, 1000.0 * rng.next_double());
    const TapeRef y = softmax_rows(t, t.constant(std::move(x)));
    for (int i = 0; i < 4; ++i) {
      double sum = 0.0;
      for (int j = 0; j < 9; ++j) sum += t.value(y).at(i, j);
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("cross_entropy_row: one-hot loss vanishes as the margin grows") {
  std::vector<double> p = {0, 1, 0};
  double previous = 1e300;
  for (double margin : {2.0, 8.0, 32.0}) {
    std::vector<double> logits = {0.0, margin, 0.0};
    const auto r = nncore::cross_entropy_row(p, logits);
    CHECK(r.loss < previous);
    previous = r.loss;
  }
  CHECK(previous < 1e-10);
}

TEST_CASE("cross_entropy_row: uniform target over 8 with equal logits gives ln 8") {
  std::vector<double> p(8, 1.0 / 8.0);
  std::vector<double> logits(8, 0.37);
  const auto r = nncore::cross_entropy_row(p, logits);
  CHECK(r.loss == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("cross_entropy_row: rejects unnormalized target") {
  std::vector<double> p = {0.5, 0.6};
  std::vector<double> logits = {0.0, 0.0};
  CHECK_THROWS_AS((void)nncore::cross_entropy_row(p, logits), err::ValidationError);
}

TEST_CASE("cross_entropy gradient matches finite differences") {
  Rng rng(11);
  Parameter logits("logits", random_matrix(1, 6, rng));
  Matrix2D target(1, 6);
  {
    Matrix2D raw = random_matrix(1, 6, rng);
    target = nncore::softmax_rows_matrix(raw);
  }
  std::vector<Parameter*> params = {&logits};
  auto loss = [&] {
    GradTape t;
    const TapeRef l = t.parameter(logits);
    const TapeRef ce = soft_cross_entropy_sum(t, target, l);
    t.backward(ce);
    return t.value(ce).values[0];
  };
  Rng check_rng(5);
  const double rel = nncore::finite_diff_check(loss, params, 1e-5, 64, check_rng);
  CHECK(rel < 1e-4);
}

TEST_CASE("attention: single-position input depends only on that token") {
  Rng rng(13);
  const int d = 8;
  Matrix2D wq = random_matrix(d, d, rng, 0.3), wk = random_matrix(d, d, rng, 0.3);
  Matrix2D wv = random_matrix(d, d, rng, 0.3), wo = random_matrix(d, d, rng, 0.3);
  GradTape t(false);
  const TapeRef y = causal_attention(t, t.constant(random_matrix(1, d, rng)), t.constant(wq),
                                     t.constant(wk), t.constant(wv), t.constant(wo), 2);
  CHECK(t.value(y).rows == 1);
  CHECK(t.value(y).all_finite());
}

TEST_CASE("attention: perturbing the last position leaves earlier outputs bit-identical") {
  Rng rng(17);
  const int d = 8, L = 6;
  Matrix2D wq = random_matrix(d, d, rng, 0.3), wk = random_matrix(d, d, rng, 0.3);
  Matrix2D wv = random_matrix(d, d, rng, 0.3), wo = random_matrix(d, d, rng, 0.3);
  Matrix2D x = random_matrix(L, d, rng);

  auto run = [&](const Matrix2D& input) {
    GradTape t(false);
    const TapeRef y = causal_attention(t, t.constant(input), t.constant(wq), t.constant(wk),
                                       t.constant(wv), t.constant(wo), 2);
    return t.value(y);
  };

  const Matrix2D base = run(x);
  Matrix2D perturbed = x;
  for (int j = 0; j < d; ++j) perturbed.at(L - 1, j) += 10.0 * rng.next_gaussian();
  const Matrix2D changed = run(perturbed);
  for (int i = 0; i < L - 1; ++i)
    for (int j = 0; j < d; ++j) CHECK(base.at(i, j) == changed.at(i, j));
}

TEST_CASE("attention gradient matches finite differences") {
  Rng rng(19);
  const int d = 6, L = 4;
  Parameter wq("wq", random_matrix(d, d, rng, 0.4));
  Parameter wk("wk", random_matrix(d, d, rng, 0.4));
  Parameter wv("wv", random_matrix(d, d, rng, 0.4));
  Parameter wo("wo", random_matrix(d, d, rng, 0.4));
  Parameter x("x", random_matrix(L, d, rng));
  std::vector<Parameter*> params = {&wq, &wk, &wv, &wo, &x};
  Matrix2D probe = random_matrix(L, d, rng);

  auto loss = [&] {
    GradTape t;
    const TapeRef y = causal_attention(t, t.parameter(x), t.parameter(wq), t.parameter(wk),
                                       t.parameter(wv), t.parameter(wo), 3);
    const TapeRef l = squared_diff_row_mean_sum(t, y, probe);
    t.backward(l);
    return t.value(l).values[0];
  };
  Rng check_rng(23);
  CHECK(nncore::finite_diff_check(loss, params, 1e-5, 80, check_rng) < 1e-4);
}

TEST_CASE("composite rmsnorm+silu+mix gradient matches finite differences") {
  Rng rng(29);
  const int d = 6, L = 5;
  Parameter gain("gain", random_matrix(1, d, rng, 0.2));
  for (double& v : gain.value.values) v += 1.0;
  Parameter w0("w0", random_matrix(d, d, rng, 0.4));
  Parameter w1("w1", random_matrix(d, d, rng, 0.4));
  Parameter ws("ws", random_matrix(1, d, rng, 0.4));
  Parameter wp("wp", random_matrix(1, d, rng, 0.4));
  Parameter x("x", random_matrix(L, d, rng));
  std::vector<Parameter*> params = {&gain, &w0, &w1, &ws, &wp, &x};
  Matrix2D probe = random_matrix(L, d, rng);

  auto loss = [&] {
    GradTape t;
    const TapeRef xr = t.parameter(x);
    const TapeRef normed = rmsnorm(t, xr, t.parameter(gain));
    const TapeRef u0 = silu(t, linear(t, normed, t.parameter(w0)));
    const TapeRef u1 = silu(t, linear(t, normed, t.parameter(w1)));
    const TapeRef gate_w = concat_rows2(t, t.parameter(ws), t.parameter(wp));
    const TapeRef gates = softmax_rows(t, linear(t, normed, gate_w));
    const TapeRef mixed = mix_pair(t, gates, u0, u1);
    const TapeRef l = squared_diff_row_mean_sum(t, mixed, probe);
    t.backward(l);
    return t.value(l).values[0];
  };
  Rng check_rng(31);
  CHECK(nncore::finite_diff_check(loss, params, 1e-5, 80, check_rng) < 1e-4);
}

TEST_CASE("embedding gradient scatters into touched rows only") {
  Rng rng(37);
  Parameter table("table", random_matrix(5, 3, rng));
  const std::vector<int> ids = {1, 3, 1};
  GradTape t;
  const TapeRef e = embedding_rows(t, t.parameter(table), ids);
  const TapeRef l = squared_diff_row_mean_sum(t, e, Matrix2D(3, 3));
  table.zero_grad();
  t.backward(l);
  for (int j = 0; j < 3; ++j) {
    CHECK(table.grad.at(0, j) == 0.0);
    CHECK(table.grad.at(2, j) == 0.0);
    CHECK(table.grad.at(4, j) == 0.0);
    CHECK(table.grad.at(1, j) != 0.0);
  }
}

TEST_CASE("tape: untouched parameter keeps an exactly zero gradient") {
  Rng rng(43);
  Parameter used("used", random_matrix(2, 2, rng));
  Parameter untouched("untouched", random_matrix(2, 2, rng));
  used.zero_grad();
  untouched.zero_grad();
  GradTape t;
  const TapeRef x = t.constant(random_matrix(3, 2, rng));
  const TapeRef y = linear(t, x, t.parameter(used));
  const TapeRef l = squared_diff_row_mean_sum(t, y, Matrix2D(3, 2));
  t.backward(l);
  for (double g : untouched.grad.values) CHECK(g == 0.0);
  double used_norm = 0.0;
  for (double g : used.grad.values) used_norm += std::abs(g);
  CHECK(used_norm > 0.0);
}

TEST_CASE("adam: zero gradient from fresh state leaves parameters unchanged") {
  Rng rng(47);
  Parameter p("p", random_matrix(2, 3, rng));
  const Matrix2D before = p.value;
  p.zero_grad();
  std::vector<Parameter*> params = {&p};
  nncore::AdamState state({.learning_rate = 0.1}, params);
  state.step(params);
  CHECK(nncore::max_abs_diff(before, p.value) == 0.0);
}

TEST_CASE("adam: one step on f(w)=w^2 decreases |w|") {
  Parameter p("w", Matrix2D::scalar(1.0));
  p.grad = Matrix2D::scalar(2.0);  // d/dw w^2 at w=1
  std::vector<Parameter*> params = {&p};
  nncore::AdamState state({.learning_rate = 0.05}, params);
  state.step(params);
  CHECK(std::abs(p.value.values[0]) < 1.0);
}

TEST_CASE("adam: matches a scalar reference over 10 steps to 1e-12") {
  const nncore::AdamConfig cfg{.learning_rate = 0.01, .beta1 = 0.9, .beta2 = 0.999,
                               .epsilon = 1e-8};
  Parameter p("w", Matrix2D::scalar(0.7));
  std::vector<Parameter*> params = {&p};
  nncore::AdamState state(cfg, params);

  // Independent scalar implementation.
  double w = 0.7, m = 0.0, v = 0.0;
  for (int step = 1; step <= 10; ++step) {
    const double g_lib = 2.0 * p.value.values[0];
    p.grad = Matrix2D::scalar(g_lib);
    state.step(params);

    const double g = 2.0 * w;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m / (1.0 - std::pow(cfg.beta1, step));
    const double v_hat = v / (1.0 - std::pow(cfg.beta2, step));
    w -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    CHECK(std::abs(w - p.value.values[0]) < 1e-12);
  }
}

TEST_CASE("adam: non-finite gradient raises training error") {
  Parameter p("w", Matrix2D::scalar(1.0));
  p.grad = Matrix2D::scalar(std::numeric_limits<double>::quiet_NaN());
  std::vector<Parameter*> params = {&p};
  nncore::AdamState state({}, params);
  CHECK_THROWS_AS(state.step(params), err::TrainingError);
}

TEST_CASE("finite_diff_check: exact for a linear loss") {
  Rng rng(53);
  Parameter p("w", random_matrix(3, 3, rng));
  std::vector<Parameter*> params = {&p};
  auto loss = [&] {
    double s = 0.0;
    for (double v : p.value.values) s += v;
    for (std::size_t i = 0; i < p.grad.values.size(); ++i) p.grad.values[i] += 1.0;
    return s;
  };
  Rng check_rng(59);
  CHECK(nncore::finite_diff_check(loss, params, 1e-5, 64, check_rng) < 1e-9);
}

TEST_CASE("frozen parameter receives an exactly zero analytic gradient") {
  Rng rng(61);
  Parameter frozen("frozen", random_matrix(2, 2, rng));
  frozen.trainable = false;
  frozen.zero_grad();
  GradTape t;
  const TapeRef y = linear(t, t.constant(random_matrix(3, 2, rng)), t.parameter(frozen));
  const TapeRef l = squared_diff_row_mean_sum(t, y, Matrix2D(3, 2));
  t.backward(l);
  for (double g : frozen.grad.values) CHECK(g == 0.0);
}

TEST_CASE("determinism: identical seeds give bit-identical results") {
  auto run = [] {
    Rng rng(1234);
    Matrix2D x = random_matrix(4, 6, rng);
    Matrix2D w = random_matrix(5, 6, rng);
    GradTape t(false);
    return t.value(linear(t, t.constant(std::move(x)), t.constant(std::move(w))));
  };
  const Matrix2D a = run();
  const Matrix2D b = run();
  CHECK(nncore::max_abs_diff(a, b) == 0.0);
}

TEST_CASE("rng: derive yields reproducible independent streams") {
  Rng a(99);
  (void)a.next_u64();  // consumption must not affect derivation
  Rng c1 = a.derive(3);
  Rng c2 = Rng(99).derive(3);
  for (int i = 0; i < 16; ++i) CHECK(c1.next_u64() == c2.next_u64());
  Rng other = a.derive(4);
  CHECK(other.next_u64() != Rng(99).derive(3).next_u64());
}

TEST_CASE("rng: uniform doubles land in [0,1) and gaussians have sane moments") {
  Rng rng(7);
  double sum = 0.0, sum_sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double g = rng.next_gaussian();
    sum += g;
    sum_sq += g * g;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sum_sq / n - 1.0) < 0.05);
}

TEST_CASE("symmetric_eigen: reconstruction and ordering invariants") {
  Matrix2D a = Matrix2D::from_rows(3, 3,
                                   {4.25, 1.299038105676658, 0.75,
                                    1.299038105676658, 3.25, -1.299038105676658,
                                    0.75, -1.299038105676658, 4.25});
  const auto eig = nncore::symmetric_eigen(a);
  Matrix2D recon(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k)
        s += eig.eigenvalues[k] * eig.eigenvectors.at(k, i) * eig.eigenvectors.at(k, j);
      recon.at(i, j) = s;
    }
  CHECK(nncore::max_abs_diff(a, recon) < 1e-10);
  CHECK(eig.eigenvalues[0] >= eig.eigenvalues[1]);
  CHECK(eig.eigenvalues[1] >= eig.eigenvalues[2]);
}

TEST_CASE("spd_inverse: inverse of an SPD matrix hits the identity") {
  Rng rng(67);
  Matrix2D b = random_matrix(5, 5, rng);
  Matrix2D a(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      double s = (i == j) ? 0.5 : 0.0;
      for (int k = 0; k < 5; ++k) s += b.at(i, k) * b.at(j, k);
      a.at(i, j) = s;
    }
  const Matrix2D inv = nncore::spd_inverse(a);
  const Matrix2D prod = nncore::matmul_nn(a, inv);
  CHECK(nncore::max_abs_diff(prod, nncore::identity(5)) < 1e-9);
}
