// SPDX-License-Identifier: Apache-2.0
// Independent reference computations used only by tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <functional>

#include "mgf/numdiff.hpp"
#include "mgf/rng.hpp"
#include "mgf/tensor.hpp"

namespace mgf::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

/// Explicitly zero-pads the input, then evaluates the defining sum.
inline Tensor brute_force_conv(const Tensor& x, const Tensor& k, std::size_t ph, std::size_t pw) {
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t hp = h + 2 * ph, wp = w + 2 * pw;
  std::vector<double> padded(cin * hp * wp, 0.0);
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) padded[(c * hp + i + ph) * wp + j + pw] = x.at(c, i, j);
  const std::size_t ho = hp - kh + 1, wo = wp - kw + 1;
  Tensor out({cout, ho, wo});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v)
              s += k[((o * cin + c) * kh + u) * kw + v] * padded[(c * hp + i + u) * wp + j + v];
        out.at(o, i, j) = s;
      }
  return out;
}

/// Relative error with a small absolute floor so near-zero gradients are
/// compared on an absolute scale of 1e-3.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

/// log|det| of the central-difference Jacobian of a tensor-to-tensor map.
inline double fd_logdet(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x0, double eps = 1e-5) {
  const Shape shape = x0.shape();
  VectorMap f = [&](const std::vector<double>& v) {
    const Tensor out = fn(Tensor(shape, v));
    return std::vector<double>(out.values().begin(), out.values().end());
  };
  return log_abs_det(finite_diff_jacobian(f, std::vector<double>(x0.values().begin(), x0.values().end()), eps));
}

}  // namespace mgf::testing
