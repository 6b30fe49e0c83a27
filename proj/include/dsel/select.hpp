#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nncore/matrix.hpp"

namespace dsel {

struct PcaBasis {
  std::vector<double> mean_center;  // d
  nncore::Matrix2D components;      // d' x d, orthonormal rows, descending eigenvalue order
  std::vector<double> eigenvalues;  // d', nonincreasing, >= 0

  std::uint64_t hash() const;
};

/// Fits the top-d' principal directions of the rows of `hiddens`.
/// Deterministic sign convention: each component's largest-magnitude entry
/// is positive.
PcaBasis fit_pca(const nncore::Matrix2D& hiddens, int d_prime);

std::vector<double> project(const PcaBasis& basis, std::span<const double> h);
nncore::Matrix2D project_rows(const PcaBasis& basis, const nncore::Matrix2D& rows);

struct ReferenceStats {
  std::vector<double> mu;       // d'
  nncore::Matrix2D sigma;       // d' x d', unbiased sample covariance
  nncore::Matrix2D sigma_inv;   // inverse of the shrunk covariance
  double shrinkage_eps = 0.0;
};

/// Mean and unbiased covariance of projected reference vectors; the inverse
/// is taken of sigma + eps * (trace(sigma)/d') * I so small reference sets
/// stay invertible (a unit scale substitutes when the trace is zero).
ReferenceStats fit_reference_stats(const nncore::Matrix2D& projected, double shrinkage_eps);

/// (h' - mu)^T  sigma_inv  (h' - mu); nonnegative.
double mahalanobis(std::span<const double> h_prime, const ReferenceStats& stats);

struct SampleScoreCard {
  std::int64_t sample_id = 0;
  std::vector<double> token_scores;  // one Mahalanobis score per answer token
  double aggregate = 0.0;            // nearest-rank rho-quantile of token_scores
  double rho_used = 0.0;
};

/// Scores one sample's answer-token hidden trace. The quantile is
/// nearest-rank: the ceil(rho*|A|)-th smallest token score.
SampleScoreCard score_sample(std::int64_t sample_id, const nncore::Matrix2D& answer_hiddens,
                             const PcaBasis& basis, const ReferenceStats& stats, double rho);

/// Indices (into the card list's order) of the ceil(budget*N) samples with
/// the highest aggregate scores, ties broken toward lower sample_id, output
/// in original dataset order. Selections nest across growing budgets.
std::vector<std::size_t> select_topk_indices(std::span<const SampleScoreCard> cards,
                                             double budget_fraction);

}  // namespace dsel
