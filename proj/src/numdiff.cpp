// SPDX-License-Identifier: Apache-2.0
#include "mgf/numdiff.hpp"

#include <cmath>
#include <limits>

#include "mgf/errors.hpp"

namespace mgf {

Tensor finite_diff_jacobian(const VectorMap& fn, const std::vector<double>& x0, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw ContractError("finite_diff_jacobian: eps must lie in [1e-7, 1e-3]");
  if (x0.empty()) throw ContractError("finite_diff_jacobian: empty input");
  const std::size_t m = fn(x0).size();
  const std::size_t n = x0.size();
  if (m == 0) throw ContractError("finite_diff_jacobian: empty output");
  Tensor jac({m, n});
  std::vector<double> x = x0;
  for (std::size_t j = 0; j < n; ++j) {
    x[j] = x0[j] + eps;
    const auto fp = fn(x);
    x[j] = x0[j] - eps;
    const auto fm = fn(x);
    x[j] = x0[j];
    if (fp.size() != m || fm.size() != m)
      throw ContractError("finite_diff_jacobian: output length varies with input");
    for (std::size_t i = 0; i < m; ++i) jac[i * n + j] = (fp[i] - fm[i]) / (2.0 * eps);
  }
  return jac;
}

double log_abs_det(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) throw DimensionError("log_abs_det: square matrix required");
  const std::size_t n = a.dim(0);
  std::vector<double> lu(a.values().begin(), a.values().end());
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(lu[i * n + k]) > std::abs(lu[piv * n + k])) piv = i;
    if (lu[piv * n + k] == 0.0) return -std::numeric_limits<double>::infinity();
    if (piv != k)
      for (std::size_t j = 0; j < n; ++j) std::swap(lu[k * n + j], lu[piv * n + j]);
    const double d = lu[k * n + k];
    acc += std::log(std::abs(d));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = lu[i * n + k] / d;
      for (std::size_t j = k; j < n; ++j) lu[i * n + j] -= f * lu[k * n + j];
    }
  }
  return acc;
}

double finite_diff_partial(const std::function<double(const std::vector<double>&)>& fn, std::vector<double> x0,
                           std::size_t index, double eps) {
  const double base = x0.at(index);
  x0[index] = base + eps;
  const double fp = fn(x0);
  x0[index] = base - eps;
  const double fm = fn(x0);
  return (fp - fm) / (2.0 * eps);
}

}  // namespace mgf
