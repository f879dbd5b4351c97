// SPDX-License-Identifier: Apache-2.0
#include "mgf/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "mgf/errors.hpp"
#include "mgf/tensor_ops.hpp"

namespace mgf::ad {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  value.check_finite("constant");
  nodes_.push_back(Node{std::move(value), {}, {}, -1, false});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::parameter(Tensor value, int param_id) {
  if (!value.all_finite()) throw NumericalError("non-finite value in parameter " + std::to_string(param_id));
  nodes_.push_back(Node{std::move(value), {}, {}, param_id, record_});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::push_node(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn, const char* op) {
  value.check_finite(op);
  bool rg = false;
  for (const auto& in : inputs) {
    if (in.tape != this) throw ContractError(std::string(op) + ": input from a different tape");
    rg = rg || requires_grad(in.id);
  }
  rg = rg && record_;
  nodes_.push_back(Node{std::move(value), {}, rg ? std::move(fn) : BackwardFn{}, -1, rg});
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buffer(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Gradients Tape::backward(Var loss) {
  if (!record_) throw ContractError("backward on a non-recording tape");
  if (loss.tape != this) throw ContractError("backward: loss from a different tape");
  if (loss.value().size() != 1)
    throw ContractError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  grad_buffer(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && !n.grad.empty()) n.backward(*this, n.grad, n.value);
  }
  Gradients out;
  for (const auto& n : nodes_) {
    if (n.param_id < 0) continue;
    auto [it, fresh] = out.try_emplace(n.param_id, n.value.shape());
    if (!n.grad.empty()) {
      auto& g = it->second;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    (void)fresh;
  }
  return out;
}

namespace {

void need_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

bool rg(const Var& v) { return v.tape->requires_grad(v.id); }

void need_chw(const Var& x, const char* op) {
  if (x.value().rank() != 3) throw DimensionError(std::string(op) + ": expected [C,H,W], got " + shape_string(x.shape()));
}

template <typename F>
Tensor unary(const Tensor& a, F f) {
  Tensor r(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = f(a[i]);
  return r;
}

}  // namespace

#define MGF_BWD [=](Tape & t, const Tensor& g, [[maybe_unused]] const Tensor& y)

Var add(Var a, Var b) {
  need_same(a, b, "add");
  return a.tape->push(a.value() + b.value(), {a, b}, MGF_BWD {
    for (Var v : {a, b}) {
      if (!rg(v)) continue;
      auto& gv = t.grad_buffer(v.id);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  }, "add");
}

Var sub(Var a, Var b) {
  need_same(a, b, "sub");
  return a.tape->push(a.value() - b.value(), {a, b}, MGF_BWD {
    if (rg(a)) {
      auto& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (rg(b)) {
      auto& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  }, "sub");
}

Var mul(Var a, Var b) {
  need_same(a, b, "mul");
  return a.tape->push(a.value() * b.value(), {a, b}, MGF_BWD {
    if (rg(a)) {
      auto& ga = t.grad_buffer(a.id);
      const auto& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (rg(b)) {
      auto& gb = t.grad_buffer(b.id);
      const auto& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  }, "mul");
}

Var mul_const(Var a, const Tensor& m) {
  if (a.shape() != m.shape()) throw DimensionError("mul_const: shape mismatch");
  return a.tape->push(a.value() * m, {a}, MGF_BWD {
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * m[i];
  }, "mul_const");
}

Var add_const(Var a, const Tensor& m) {
  if (a.shape() != m.shape()) throw DimensionError("add_const: shape mismatch");
  return a.tape->push(a.value() + m, {a}, MGF_BWD {
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  }, "add_const");
}

Var scale(Var a, double s) {
  return a.tape->push(s * a.value(), {a}, MGF_BWD {
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  }, "scale");
}

Var exp(Var a) {
  return a.tape->push(unary(a.value(), [](double v) { return std::exp(v); }), {a}, MGF_BWD {
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  }, "exp");
}

Var tanh(Var a) {
  return a.tape->push(unary(a.value(), [](double v) { return std::tanh(v); }), {a}, MGF_BWD {
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  }, "tanh");
}

Var silu(Var a) {
  return a.tape->push(unary(a.value(), [](double v) { return v / (1.0 + std::exp(-v)); }), {a}, MGF_BWD {
    auto& ga = t.grad_buffer(a.id);
    const auto& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-x[i]));
      ga[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
    }
  }, "silu");
}

Var square(Var a) {
  return a.tape->push(unary(a.value(), [](double v) { return v * v; }), {a}, MGF_BWD {
    auto& ga = t.grad_buffer(a.id);
    const auto& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * g[i] * x[i];
  }, "square");
}

Var soft_clamp(Var a, double s_max) {
  if (!(s_max > 0.0)) throw ContractError("soft_clamp: bound must be positive");
  return scale(tanh(scale(a, 1.0 / s_max)), s_max);
}

Var sum(Var a) {
  return a.tape->push(Tensor::scalar(mgf::sum(a.value())), {a}, MGF_BWD {
    auto& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  }, "sum");
}

Var log_normal_sum(Var a) {
  return a.tape->push(Tensor::scalar(mgf::sum(log_standard_normal(a.value()))), {a}, MGF_BWD {
    auto& ga = t.grad_buffer(a.id);
    const auto& z = a.value();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] -= g[0] * z[i];
  }, "log_normal_sum");
}

Var conv2d(Var x, Var kernel) {
  need_chw(x, "conv2d");
  const auto& k = kernel.value();
  if (k.rank() != 4 || k.dim(2) % 2 == 0 || k.dim(3) % 2 == 0)
    throw DimensionError("conv2d: kernel must be [Cout,Cin,k,k] with odd k");
  const std::size_t ph = (k.dim(2) - 1) / 2, pw = (k.dim(3) - 1) / 2;
  return x.tape->push(mgf::conv2d(x.value(), k, ph, pw), {x, kernel}, MGF_BWD {
    Tensor* gx = rg(x) ? &t.grad_buffer(x.id) : nullptr;
    Tensor* gk = rg(kernel) ? &t.grad_buffer(kernel.id) : nullptr;
    conv2d_backward(x.value(), kernel.value(), g, ph, pw, gx, gk);
  }, "conv2d");
}

Var add_channel_bias(Var x, Var b) {
  need_chw(x, "add_channel_bias");
  const auto& xv = x.value();
  const std::size_t c = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  if (b.value().size() != c) throw DimensionError("add_channel_bias: bias length mismatch");
  Tensor out = xv;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < plane; ++p) out[ch * plane + p] += b.value()[ch];
  return x.tape->push(std::move(out), {x, b}, MGF_BWD {
    if (rg(x)) {
      auto& gx = t.grad_buffer(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (rg(b)) {
      auto& gb = t.grad_buffer(b.id);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t p = 0; p < plane; ++p) s += g[ch * plane + p];
        gb[ch] += s;
      }
    }
  }, "add_channel_bias");
}

Var film(Var h, Var gamma, Var beta) {
  need_chw(h, "film");
  const auto& hv = h.value();
  const std::size_t c = hv.dim(0), plane = hv.dim(1) * hv.dim(2);
  if (gamma.value().size() != c || beta.value().size() != c)
    throw DimensionError("film: gamma/beta length must equal channel count " + std::to_string(c));
  Tensor out(hv.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double ga = gamma.value()[ch], be = beta.value()[ch];
    for (std::size_t p = 0; p < plane; ++p) out[ch * plane + p] = ga * hv[ch * plane + p] + be;
  }
  return h.tape->push(std::move(out), {h, gamma, beta}, MGF_BWD {
    const auto& hv = h.value();
    const auto& gav = gamma.value();
    if (rg(h)) {
      auto& gh = t.grad_buffer(h.id);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p) gh[ch * plane + p] += gav[ch] * g[ch * plane + p];
    }
    if (rg(gamma)) {
      auto& gg = t.grad_buffer(gamma.id);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t p = 0; p < plane; ++p) s += g[ch * plane + p] * hv[ch * plane + p];
        gg[ch] += s;
      }
    }
    if (rg(beta)) {
      auto& gb = t.grad_buffer(beta.id);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t p = 0; p < plane; ++p) s += g[ch * plane + p];
        gb[ch] += s;
      }
    }
  }, "film");
}

Var channel_mix(Var w, Var x) {
  need_chw(x, "channel_mix");
  const auto& wv = w.value();
  const auto& xv = x.value();
  const std::size_t c = xv.dim(0), plane = xv.dim(1) * xv.dim(2);
  if (wv.rank() != 2 || wv.dim(0) != c || wv.dim(1) != c)
    throw DimensionError("channel_mix: weight must be [C,C] for C=" + std::to_string(c));
  Tensor out(xv.shape());
  for (std::size_t o = 0; o < c; ++o)
    for (std::size_t d = 0; d < c; ++d) {
      const double a = wv[o * c + d];
      for (std::size_t p = 0; p < plane; ++p) out[o * plane + p] += a * xv[d * plane + p];
    }
  return x.tape->push(std::move(out), {w, x}, MGF_BWD {
    const auto& wv = w.value();
    const auto& xv = x.value();
    if (rg(x)) {
      auto& gx = t.grad_buffer(x.id);
      for (std::size_t o = 0; o < c; ++o)
        for (std::size_t d = 0; d < c; ++d) {
          const double a = wv[o * c + d];
          for (std::size_t p = 0; p < plane; ++p) gx[d * plane + p] += a * g[o * plane + p];
        }
    }
    if (rg(w)) {
      auto& gw = t.grad_buffer(w.id);
      for (std::size_t o = 0; o < c; ++o)
        for (std::size_t d = 0; d < c; ++d) {
          double s = 0.0;
          for (std::size_t p = 0; p < plane; ++p) s += g[o * plane + p] * xv[d * plane + p];
          gw[o * c + d] += s;
        }
    }
  }, "channel_mix");
}

Var matvec(Var w, Var v) {
  const auto& wv = w.value();
  const auto& vv = v.value();
  if (wv.rank() != 2 || vv.rank() != 1 || wv.dim(1) != vv.dim(0))
    throw DimensionError("matvec: " + shape_string(wv.shape()) + " x " + shape_string(vv.shape()));
  const std::size_t m = wv.dim(0), n = wv.dim(1);
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += wv[i * n + j] * vv[j];
    out[i] = s;
  }
  return w.tape->push(std::move(out), {w, v}, MGF_BWD {
    const auto& wv = w.value();
    const auto& vv = v.value();
    if (rg(w)) {
      auto& gw = t.grad_buffer(w.id);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gw[i * n + j] += g[i] * vv[j];
    }
    if (rg(v)) {
      auto& gv = t.grad_buffer(v.id);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gv[j] += wv[i * n + j] * g[i];
    }
  }, "matvec");
}

Var matmul(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw DimensionError("matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < k; ++l) s += av[i * k + l] * bv[l * n + j];
      out[i * n + j] = s;
    }
  return a.tape->push(std::move(out), {a, b}, MGF_BWD {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (rg(a)) {
      auto& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[l * n + j];
          ga[i * k + l] += s;
        }
    }
    if (rg(b)) {
      auto& gb = t.grad_buffer(b.id);
      for (std::size_t l = 0; l < k; ++l)
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < m; ++i) s += av[i * k + l] * g[i * n + j];
          gb[l * n + j] += s;
        }
    }
  }, "matmul");
}

Var diag_embed(Var v) {
  const auto& vv = v.value();
  if (vv.rank() != 1) throw DimensionError("diag_embed: expected a vector");
  const std::size_t c = vv.dim(0);
  Tensor out({c, c});
  for (std::size_t i = 0; i < c; ++i) out[i * c + i] = vv[i];
  return v.tape->push(std::move(out), {v}, MGF_BWD {
    auto& gv = t.grad_buffer(v.id);
    for (std::size_t i = 0; i < c; ++i) gv[i] += g[i * c + i];
  }, "diag_embed");
}

Var row(Var table, std::size_t k) {
  const auto& tv = table.value();
  if (tv.rank() != 2 || k >= tv.dim(0)) throw ContractError("row: index out of range");
  const std::size_t e = tv.dim(1);
  std::vector<double> r(tv.values().begin() + static_cast<std::ptrdiff_t>(k * e),
                        tv.values().begin() + static_cast<std::ptrdiff_t>((k + 1) * e));
  return table.tape->push(Tensor({e}, std::move(r)), {table}, MGF_BWD {
    auto& gt = t.grad_buffer(table.id);
    for (std::size_t i = 0; i < e; ++i) gt[k * e + i] += g[i];
  }, "row");
}

Var reshape(Var x, Shape shape) {
  return x.tape->push(x.value().reshaped(std::move(shape)), {x}, MGF_BWD {
    auto& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  }, "reshape");
}

Var concat_channels(Var a, Var b) {
  need_chw(a, "concat_channels");
  need_chw(b, "concat_channels");
  const std::size_t na = a.value().size();
  return a.tape->push(mgf::concat_channels(a.value(), b.value()), {a, b}, MGF_BWD {
    if (rg(a)) {
      auto& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
    }
    if (rg(b)) {
      auto& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
    }
  }, "concat_channels");
}

Var slice_channels(Var x, std::size_t begin, std::size_t end) {
  need_chw(x, "slice_channels");
  const std::size_t off = begin * x.value().dim(1) * x.value().dim(2);
  return x.tape->push(mgf::slice_channels(x.value(), begin, end), {x}, MGF_BWD {
    auto& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
  }, "slice_channels");
}

Var broadcast_spatial(Var v, std::size_t h, std::size_t w) {
  const auto& vv = v.value();
  if (vv.rank() != 1) throw DimensionError("broadcast_spatial: expected a vector");
  const std::size_t e = vv.dim(0), plane = h * w;
  Tensor out({e, h, w});
  for (std::size_t c = 0; c < e; ++c)
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] = vv[c];
  return v.tape->push(std::move(out), {v}, MGF_BWD {
    auto& gv = t.grad_buffer(v.id);
    for (std::size_t c = 0; c < e; ++c) {
      double s = 0.0;
      for (std::size_t p = 0; p < plane; ++p) s += g[c * plane + p];
      gv[c] += s;
    }
  }, "broadcast_spatial");
}

Var layer_norm(Var x, double eps) {
  const auto& xv = x.value();
  const std::size_t n = xv.size();
  double mean = 0.0;
  for (double v : xv.values()) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : xv.values()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double inv_std = 1.0 / std::sqrt(var + eps);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = (xv[i] - mean) * inv_std;
  return x.tape->push(std::move(out), {x}, MGF_BWD {
    double mg = 0.0, mgy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mg += g[i];
      mgy += g[i] * y[i];
    }
    mg /= static_cast<double>(n);
    mgy /= static_cast<double>(n);
    auto& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < n; ++i) gx[i] += inv_std * (g[i] - mg - y[i] * mgy);
  }, "layer_norm");
}

Var squeeze2x2(Var x) {
  need_chw(x, "squeeze");
  return x.tape->push(mgf::squeeze2x2(x.value()), {x}, MGF_BWD {
    auto& gx = t.grad_buffer(x.id);
    const Tensor back = unsqueeze2x2(g);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += back[i];
  }, "squeeze");
}

Var unsqueeze2x2(Var x) {
  need_chw(x, "unsqueeze");
  return x.tape->push(mgf::unsqueeze2x2(x.value()), {x}, MGF_BWD {
    auto& gx = t.grad_buffer(x.id);
    const Tensor back = mgf::squeeze2x2(g);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += back[i];
  }, "unsqueeze");
}

#undef MGF_BWD

}  // namespace mgf::ad
