// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "mgf/tensor.hpp"

namespace mgf {

using VectorMap = std::function<std::vector<double>(const std::vector<double>&)>;

/// Central-difference Jacobian J[i][j] = d fn_i / d x_j, returned as an
/// [m, n] tensor. Test oracle only; nothing in training calls it.
/// Requires eps in [1e-7, 1e-3] and an output length that does not change
/// between evaluations.
Tensor finite_diff_jacobian(const VectorMap& fn, const std::vector<double>& x0, double eps);

/// log|det A| of a square [n, n] tensor by LU with partial pivoting.
/// Returns -inf for a singular matrix.
double log_abs_det(const Tensor& a);

/// Central difference of a scalar function along coordinate `index`.
double finite_diff_partial(const std::function<double(const std::vector<double>&)>& fn,
                           std::vector<double> x0, std::size_t index, double eps);

}  // namespace mgf
