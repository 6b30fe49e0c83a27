#include "dsel/select.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "common/errors.hpp"
#include "nncore/linalg.hpp"

namespace dsel {

namespace {

using nncore::Matrix2D;

Matrix2D centered_covariance(const Matrix2D& rows, std::vector<double>& mean_out) {
  const int n = rows.rows;
  const int d = rows.cols;
  mean_out.assign(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < n; ++i) {
    const double* ri = rows.row(i);
    for (int j = 0; j < d; ++j) mean_out[static_cast<std::size_t>(j)] += ri[j];
  }
  for (double& v : mean_out) v /= n;
  Matrix2D centered(n, d);
  for (int i = 0; i < n; ++i) {
    const double* ri = rows.row(i);
    double* ci = centered.row(i);
    for (int j = 0; j < d; ++j) ci[j] = ri[j] - mean_out[static_cast<std::size_t>(j)];
  }
  Matrix2D cov = nncore::matmul_tn(centered, centered);
  const double inv = 1.0 / static_cast<double>(n - 1);
  for (double& v : cov.values) v *= inv;
  return cov;
}

}  // namespace

std::uint64_t PcaBasis::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (double v : mean_center) mix(v);
  for (double v : components.values) mix(v);
  return h;
}

PcaBasis fit_pca(const Matrix2D& hiddens, int d_prime) {
  const int n = hiddens.rows;
  const int d = hiddens.cols;
  if (d_prime < 1 || d_prime > d) {
    throw err::ValidationError("fit_pca: d' must lie in [1, " + std::to_string(d) + "]");
  }
  if (n <= d_prime) {
    throw err::InsufficientDataError("fit_pca: need more than " + std::to_string(d_prime) +
                                     " rows, got " + std::to_string(n));
  }

  PcaBasis basis;
  const Matrix2D cov = centered_covariance(hiddens, basis.mean_center);
  const nncore::SymmetricEigen eig = nncore::symmetric_eigen(cov);

  basis.components = Matrix2D(d_prime, d);
  basis.eigenvalues.resize(static_cast<std::size_t>(d_prime));
  for (int c = 0; c < d_prime; ++c) {
    basis.eigenvalues[static_cast<std::size_t>(c)] =
        std::max(0.0, eig.eigenvalues[static_cast<std::size_t>(c)]);
    const double* src = eig.eigenvectors.row(c);
    double* dst = basis.components.row(c);
    std::copy(src, src + d, dst);
    // Sign convention: the largest-magnitude entry is positive.
    int pivot = 0;
    for (int j = 1; j < d; ++j) {
      if (std::abs(dst[j]) > std::abs(dst[pivot])) pivot = j;
    }
    if (dst[pivot] < 0.0) {
      for (int j = 0; j < d; ++j) dst[j] = -dst[j];
    }
  }
  return basis;
}

std::vector<double> project(const PcaBasis& basis, std::span<const double> h) {
  const int d = basis.components.cols;
  if (static_cast<int>(h.size()) != d) {
    throw err::ShapeError("project: vector width " + std::to_string(h.size()) +
                          " does not match basis width " + std::to_string(d));
  }
  std::vector<double> out(static_cast<std::size_t>(basis.components.rows), 0.0);
  for (int c = 0; c < basis.components.rows; ++c) {
    const double* comp = basis.components.row(c);
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
      acc += comp[j] * (h[static_cast<std::size_t>(j)] - basis.mean_center[static_cast<std::size_t>(j)]);
    }
    out[static_cast<std::size_t>(c)] = acc;
  }
  return out;
}

Matrix2D project_rows(const PcaBasis& basis, const Matrix2D& rows) {
  Matrix2D out(rows.rows, basis.components.rows);
  for (int i = 0; i < rows.rows; ++i) {
    const std::vector<double> p = project(basis, rows.row_span(i));
    std::copy(p.begin(), p.end(), out.row(i));
  }
  return out;
}

ReferenceStats fit_reference_stats(const Matrix2D& projected, double shrinkage_eps) {
  const int m = projected.rows;
  const int d = projected.cols;
  if (shrinkage_eps < 0.0) {
    throw err::ValidationError("fit_reference_stats: shrinkage must be >= 0");
  }
  // Two rows are the floor for an unbiased covariance; rank deficiency below
  // d'+1 rows is handled by the shrinkage term.
  if (m < 2) {
    throw err::InsufficientDataError("fit_reference_stats: need at least 2 rows, got " +
                                     std::to_string(m));
  }
  ReferenceStats stats;
  stats.shrinkage_eps = shrinkage_eps;
  stats.sigma = centered_covariance(projected, stats.mu);

  double trace = 0.0;
  for (int i = 0; i < d; ++i) trace += stats.sigma.at(i, i);
  double scale = trace / d;
  if (scale <= 0.0) scale = 1.0;  // degenerate data: shrinkage alone defines the metric

  Matrix2D shrunk = stats.sigma;
  for (int i = 0; i < d; ++i) shrunk.at(i, i) += shrinkage_eps * scale;
  stats.sigma_inv = nncore::spd_inverse(shrunk);
  return stats;
}

double mahalanobis(std::span<const double> h_prime, const ReferenceStats& stats) {
  const int d = static_cast<int>(stats.mu.size());
  if (static_cast<int>(h_prime.size()) != d) {
    throw err::ShapeError("mahalanobis: vector width mismatch");
  }
  std::vector<double> delta(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) delta[static_cast<std::size_t>(i)] = h_prime[static_cast<std::size_t>(i)] - stats.mu[static_cast<std::size_t>(i)];
  double total = 0.0;
  for (int i = 0; i < d; ++i) {
    const double* row = stats.sigma_inv.row(i);
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += row[j] * delta[static_cast<std::size_t>(j)];
    total += delta[static_cast<std::size_t>(i)] * acc;
  }
  return std::max(0.0, total);
}

SampleScoreCard score_sample(std::int64_t sample_id, const Matrix2D& answer_hiddens,
                             const PcaBasis& basis, const ReferenceStats& stats, double rho) {
  if (answer_hiddens.rows < 1) {
    throw err::ValidationError("score_sample: sample " + std::to_string(sample_id) +
                               " has no answer tokens");
  }
  if (!(rho > 0.0) || rho > 1.0) {
    throw err::ValidationError("score_sample: rho must lie in (0, 1]");
  }
  SampleScoreCard card;
  card.sample_id = sample_id;
  card.rho_used = rho;
  card.token_scores.reserve(static_cast<std::size_t>(answer_hiddens.rows));
  for (int i = 0; i < answer_hiddens.rows; ++i) {
    card.token_scores.push_back(mahalanobis(project(basis, answer_hiddens.row_span(i)), stats));
  }
  // Nearest-rank quantile: the ceil(rho*n)-th smallest observed score.
  std::vector<double> sorted = card.token_scores;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(rho * static_cast<double>(sorted.size())));
  card.aggregate = sorted[std::max<std::size_t>(rank, 1) - 1];
  return card;
}

std::vector<std::size_t> select_topk_indices(std::span<const SampleScoreCard> cards,
                                             double budget_fraction) {
  if (cards.empty()) throw err::ValidationError("select_topk: empty dataset");
  if (!(budget_fraction > 0.0) || budget_fraction > 1.0) {
    throw err::ValidationError("select_topk: budget fraction must lie in (0, 1]");
  }
  const std::size_t k = static_cast<std::size_t>(
      std::ceil(budget_fraction * static_cast<double>(cards.size())));
  std::vector<std::size_t> order(cards.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&cards](std::size_t a, std::size_t b) {
    if (cards[a].aggregate != cards[b].aggregate) {
      return cards[a].aggregate > cards[b].aggregate;
    }
    return cards[a].sample_id < cards[b].sample_id;
  });
  order.resize(std::min(k, order.size()));
  std::sort(order.begin(), order.end());  // back to original dataset order
  return order;
}

}  // namespace dsel
