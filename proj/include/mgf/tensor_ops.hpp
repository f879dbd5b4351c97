// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>

#include "mgf/tensor.hpp"

namespace mgf {

/// Direct cross-correlation of a [Cin,H,W] input with a [Cout,Cin,kh,kw]
/// kernel and zero padding. Output is [Cout, H+2*pad_h-kh+1, W+2*pad_w-kw+1].
/// Sums over (c, u, v) in that nesting order.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t pad_h, std::size_t pad_w);
/// "Same" convolution: odd kernel, padding (k-1)/2.
Tensor conv2d_same(const Tensor& input, const Tensor& kernel);

/// Accumulates d(out)/d(input) and d(out)/d(kernel) contracted with
/// `grad_out` into the given buffers (either may be null).
void conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                     std::size_t pad_h, std::size_t pad_w, Tensor* grad_input, Tensor* grad_kernel);

/// Space-to-depth: [C,H,W] -> [4C,H/2,W/2]. Output channel 4c+k holds the
/// k-th sub-pixel of input channel c, with k = 0 top-left, 1 top-right,
/// 2 bottom-left, 3 bottom-right.
Tensor squeeze2x2(const Tensor& x);
Tensor unsqueeze2x2(const Tensor& x);

/// Channel split into (first half, second half) and its inverse.
std::pair<Tensor, Tensor> split_channels(const Tensor& x);
Tensor merge_channels(const Tensor& keep, const Tensor& out);

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Elementwise helpers on equal shapes.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor map(const Tensor& a, double (*fn)(double));

/// Elementwise log N(v; 0, 1).
Tensor log_standard_normal(const Tensor& z);

}  // namespace mgf
