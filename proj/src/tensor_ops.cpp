// SPDX-License-Identifier: Apache-2.0
#include "mgf/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mgf/errors.hpp"

namespace mgf {

namespace {

struct ConvGeom {
  std::size_t cin, h, w, cout, kh, kw, ho, wo;
};

ConvGeom conv_geometry(const Tensor& input, const Tensor& kernel, std::size_t ph, std::size_t pw) {
  if (input.rank() != 3) throw DimensionError("conv2d: input must be [C,H,W], got " + shape_string(input.shape()));
  if (kernel.rank() != 4) throw DimensionError("conv2d: kernel must be [Cout,Cin,kh,kw]");
  ConvGeom g{input.dim(0), input.dim(1), input.dim(2), kernel.dim(0), kernel.dim(2), kernel.dim(3), 0, 0};
  if (kernel.dim(1) != g.cin)
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, input has " +
                         std::to_string(g.cin));
  if (g.h + 2 * ph < g.kh || g.w + 2 * pw < g.kw) throw DimensionError("conv2d: kernel larger than padded input");
  g.ho = g.h + 2 * ph - g.kh + 1;
  g.wo = g.w + 2 * pw - g.kw + 1;
  return g;
}

// Output rows i for which input row i+u-p is inside [0, n).
inline std::size_t lo_range(std::size_t p, std::size_t u) { return p > u ? p - u : 0; }
inline std::size_t hi_range(std::size_t n_out, std::size_t n_in, std::size_t p, std::size_t u) {
  const std::size_t lim = n_in + p > u ? n_in + p - u : 0;
  return std::min(n_out, lim);
}

// Kernel taps (u, v) that touch the unpadded input, with the output
// row/column ranges they affect. Taps landing only in padding are dropped.
struct Tap {
  std::size_t u, v, i0, i1, j0, j1;
};

std::vector<Tap> live_taps(const ConvGeom& g, std::size_t ph, std::size_t pw) {
  std::vector<Tap> taps;
  for (std::size_t u = 0; u < g.kh; ++u)
    for (std::size_t v = 0; v < g.kw; ++v) {
      Tap t{u, v, lo_range(ph, u), hi_range(g.ho, g.h, ph, u), lo_range(pw, v), hi_range(g.wo, g.w, pw, v)};
      if (t.i0 < t.i1 && t.j0 < t.j1) taps.push_back(t);
    }
  return taps;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t ph, std::size_t pw) {
  const auto g = conv_geometry(input, kernel, ph, pw);
  const auto taps = live_taps(g, ph, pw);
  Tensor out({g.cout, g.ho, g.wo});
  const double* in = input.data();
  const double* k = kernel.data();
  double* o = out.data();
  if (g.ho * g.wo == 1 && taps.size() == 1) {
    // Single output site fed by a single tap: a dense matrix-vector
    // product, same summation order as the general loop.
    const std::size_t kt = taps[0].u * g.kw + taps[0].v, stride = g.kh * g.kw;
    const std::size_t site = (taps[0].u - ph) * g.w + taps[0].v - pw;
    for (std::size_t oc = 0; oc < g.cout; ++oc) {
      double acc = 0.0;
      for (std::size_t c = 0; c < g.cin; ++c) acc += k[(oc * g.cin + c) * stride + kt] * in[c * g.h * g.w + site];
      o[oc] = acc;
    }
    return out;
  }
  for (std::size_t oc = 0; oc < g.cout; ++oc) {
    double* oplane = o + oc * g.ho * g.wo;
    for (std::size_t c = 0; c < g.cin; ++c) {
      const double* iplane = in + c * g.h * g.w;
      const double* kc = k + (oc * g.cin + c) * g.kh * g.kw;
      for (const Tap& tp : taps) {
        const double wt = kc[tp.u * g.kw + tp.v];
        for (std::size_t i = tp.i0; i < tp.i1; ++i) {
          const double* irow = iplane + (i + tp.u - ph) * g.w;
          double* orow = oplane + i * g.wo;
          for (std::size_t j = tp.j0; j < tp.j1; ++j) orow[j] += wt * irow[j + tp.v - pw];
        }
      }
    }
  }
  return out;
}

Tensor conv2d_same(const Tensor& input, const Tensor& kernel) {
  if (kernel.rank() != 4 || kernel.dim(2) % 2 == 0 || kernel.dim(3) % 2 == 0)
    throw DimensionError("conv2d_same: kernel sizes must be odd");
  return conv2d(input, kernel, (kernel.dim(2) - 1) / 2, (kernel.dim(3) - 1) / 2);
}

void conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out, std::size_t ph,
                     std::size_t pw, Tensor* grad_input, Tensor* grad_kernel) {
  const auto g = conv_geometry(input, kernel, ph, pw);
  const auto taps = live_taps(g, ph, pw);
  const double* in = input.data();
  const double* k = kernel.data();
  const double* go = grad_out.data();
  for (std::size_t oc = 0; oc < g.cout; ++oc) {
    const double* gplane = go + oc * g.ho * g.wo;
    for (std::size_t c = 0; c < g.cin; ++c) {
      const std::size_t ioff = c * g.h * g.w;
      const std::size_t kbase = (oc * g.cin + c) * g.kh * g.kw;
      for (const Tap& tp : taps) {
        const std::size_t kidx = kbase + tp.u * g.kw + tp.v;
        if (grad_input) {
          const double wt = k[kidx];
          double* gi = grad_input->data() + ioff;
          for (std::size_t i = tp.i0; i < tp.i1; ++i) {
            double* grow = gi + (i + tp.u - ph) * g.w;
            const double* orow = gplane + i * g.wo;
            for (std::size_t j = tp.j0; j < tp.j1; ++j) grow[j + tp.v - pw] += wt * orow[j];
          }
        }
        if (grad_kernel) {
          double acc = 0.0;
          for (std::size_t i = tp.i0; i < tp.i1; ++i) {
            const double* irow = in + ioff + (i + tp.u - ph) * g.w;
            const double* orow = gplane + i * g.wo;
            for (std::size_t j = tp.j0; j < tp.j1; ++j) acc += orow[j] * irow[j + tp.v - pw];
          }
          (*grad_kernel)[kidx] += acc;
        }
      }
    }
  }
}

Tensor squeeze2x2(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("squeeze: expected [C,H,W]");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 || w % 2) throw DimensionError("squeeze: H and W must be even, got " + shape_string(x.shape()));
  Tensor y({4 * c, h / 2, w / 2});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h / 2; ++i)
      for (std::size_t j = 0; j < w / 2; ++j)
        for (std::size_t k = 0; k < 4; ++k) y.at(4 * ch + k, i, j) = x.at(ch, 2 * i + k / 2, 2 * j + k % 2);
  return y;
}

Tensor unsqueeze2x2(const Tensor& x) {
  if (x.rank() != 3 || x.dim(0) % 4) throw DimensionError("unsqueeze: channel count must be a multiple of 4");
  const std::size_t c = x.dim(0) / 4, h = x.dim(1), w = x.dim(2);
  Tensor y({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t k = 0; k < 4; ++k) y.at(ch, 2 * i + k / 2, 2 * j + k % 2) = x.at(4 * ch + k, i, j);
  return y;
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() != 3 || begin >= end || end > x.dim(0)) throw DimensionError("slice_channels: bad range");
  const std::size_t plane = x.dim(1) * x.dim(2);
  std::vector<double> v(x.values().begin() + static_cast<std::ptrdiff_t>(begin * plane),
                        x.values().begin() + static_cast<std::ptrdiff_t>(end * plane));
  return Tensor({end - begin, x.dim(1), x.dim(2)}, std::move(v));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw DimensionError("concat_channels: spatial shapes differ");
  std::vector<double> v(a.values().begin(), a.values().end());
  v.insert(v.end(), b.values().begin(), b.values().end());
  return Tensor({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(v));
}

std::pair<Tensor, Tensor> split_channels(const Tensor& x) {
  if (x.rank() != 3 || x.dim(0) % 2) throw DimensionError("split: channel count must be even, got " + shape_string(x.shape()));
  const std::size_t half = x.dim(0) / 2;
  return {slice_channels(x, 0, half), slice_channels(x, half, x.dim(0))};
}

Tensor merge_channels(const Tensor& keep, const Tensor& out) {
  if (keep.shape() != out.shape()) throw DimensionError("merge: halves differ in shape");
  return concat_channels(keep, out);
}

namespace {
template <typename Op>
Tensor zip(const Tensor& a, const Tensor& b, Op op, const char* name) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(name) + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Tensor r(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = op(a[i], b[i]);
  return r;
}
}  // namespace

Tensor operator+(const Tensor& a, const Tensor& b) { return zip(a, b, std::plus<>{}, "add"); }
Tensor operator-(const Tensor& a, const Tensor& b) { return zip(a, b, std::minus<>{}, "sub"); }
Tensor operator*(const Tensor& a, const Tensor& b) { return zip(a, b, std::multiplies<>{}, "mul"); }

Tensor operator*(double s, const Tensor& a) {
  Tensor r(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = s * a[i];
  return r;
}

Tensor map(const Tensor& a, double (*fn)(double)) {
  Tensor r(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = fn(a[i]);
  return r;
}

Tensor log_standard_normal(const Tensor& z) {
  const double c = -0.5 * std::log(2.0 * std::numbers::pi);
  Tensor r(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) r[i] = c - 0.5 * z[i] * z[i];
  return r;
}

}  // namespace mgf
