#include "nncore/gradcheck.hpp"

#include <cmath>
#include <utility>
#include <vector>

#include "common/errors.hpp"

namespace nncore {

double finite_diff_check(const std::function<double()>& loss_with_grad,
                         std::span<Parameter* const> params, double h, int n_coords, Rng& rng) {
  if (h <= 0.0) throw err::ValidationError("finite_diff_check: step h must be positive");

  auto zero_grads = [&] {
    for (Parameter* p : params) p->zero_grad();
  };

  zero_grads();
  loss_with_grad();
  std::vector<Matrix2D> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    if (!params[pi]->trainable) continue;
    for (std::size_t i = 0; i < params[pi]->value.values.size(); ++i) coords.emplace_back(pi, i);
  }
  if (coords.empty()) return 0.0;
  rng.shuffle(coords);
  if (static_cast<int>(coords.size()) > n_coords) {
    coords.resize(static_cast<std::size_t>(n_coords));
  }

  double max_rel = 0.0;
  for (const auto& [pi, i] : coords) {
    double& w = params[pi]->value.values[i];
    const double w0 = w;
    w = w0 + h;
    const double loss_plus = loss_with_grad();
    w = w0 - h;
    const double loss_minus = loss_with_grad();
    w = w0;
    const double fd = (loss_plus - loss_minus) / (2.0 * h);
    const double an = analytic[pi].values[i];
    const double rel = std::abs(an - fd) / (std::abs(an) + std::abs(fd) + 1e-12);
    max_rel = std::max(max_rel, rel);
  }
  zero_grads();
  return max_rel;
}

}  // namespace nncore
