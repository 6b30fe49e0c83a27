#pragma once

#include <functional>
#include <span>

#include "nncore/rng.hpp"
#include "nncore/tape.hpp"

namespace nncore {

/// Compares analytic gradients against central finite differences on up to
/// `n_coords` randomly sampled trainable coordinates and returns the maximum
/// relative error |analytic - fd| / (|analytic| + |fd| + 1e-12).
///
/// `loss_with_grad` must be deterministic: it evaluates the loss at the
/// current parameter values and accumulates analytic gradients into
/// Parameter::grad (which this function zeroes before each use).
double finite_diff_check(const std::function<double()>& loss_with_grad,
                         std::span<Parameter* const> params, double h, int n_coords, Rng& rng);

}  // namespace nncore
