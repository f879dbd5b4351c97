// SPDX-License-Identifier: Apache-2.0
#include "mgf/layers.hpp"

#include <cmath>
#include <numeric>

#include "mgf/errors.hpp"

namespace mgf {

// ---------------------------------------------------------------- ActNorm

ActNorm ActNorm::make(std::size_t channels, const std::string& prefix) {
  ActNorm a;
  a.log_scale = {prefix + ".log_scale", Tensor({channels}), -1};
  a.bias = {prefix + ".bias", Tensor({channels}), -1};
  return a;
}

void actnorm_init(ActNorm& layer, const Tensor& batch) {
  if (layer.initialized) throw ContractError("actnorm_init: layer already initialized");
  if (batch.rank() != 4 || batch.dim(1) != layer.channels())
    throw DimensionError("actnorm_init: batch must be [B," + std::to_string(layer.channels()) + ",H,W], got " +
                         shape_string(batch.shape()));
  const std::size_t b = batch.dim(0), c = batch.dim(1), plane = batch.dim(2) * batch.dim(3);
  const std::size_t n = b * plane;
  if (n < 2) throw ContractError("actnorm_init: need at least two values per channel");
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0;
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t p = 0; p < plane; ++p) mean += batch[(s * c + ch) * plane + p];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t p = 0; p < plane; ++p) {
        const double d = batch[(s * c + ch) * plane + p] - mean;
        var += d * d;
      }
    var /= static_cast<double>(n);
    if (!(var > 1e-24))
      throw NumericalError("actnorm_init: degenerate statistics (zero variance) in channel " + std::to_string(ch));
    const double sd = std::sqrt(var);
    layer.log_scale.value[ch] = -std::log(sd);
    layer.bias.value[ch] = -mean / sd;
  }
  layer.initialized = true;
}

void actnorm_init_identity(ActNorm& layer) {
  for (auto& v : layer.log_scale.value.values()) v = 0.0;
  for (auto& v : layer.bias.value.values()) v = 0.0;
  layer.initialized = true;
}

ad::Var actnorm_forward(const ActNorm& layer, ad::Var x, ad::Var& logdet) {
  if (!layer.initialized) throw ContractError("actnorm: used before initialization");
  auto& tape = *x.tape;
  auto ls = layer.log_scale.on(tape);
  auto y = ad::film(x, ad::exp(ls), layer.bias.on(tape));
  const auto& s = x.shape();
  logdet = ad::scale(ad::sum(ls), static_cast<double>(s.at(1) * s.at(2)));
  return y;
}

LayerResult actnorm_apply(const ActNorm& layer, const Tensor& x, Direction dir) {
  if (!layer.initialized) throw ContractError("actnorm: used before initialization");
  if (x.rank() != 3 || x.dim(0) != layer.channels()) throw DimensionError("actnorm: channel mismatch");
  if (dir == Direction::Forward) {
    ad::Tape tape(false);
    ad::Var ld;
    auto y = actnorm_forward(layer, tape.constant(x), ld);
    return {y.value(), ld.value().item()};
  }
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  Tensor y(x.shape());
  double logdet = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double inv_scale = std::exp(-layer.log_scale.value[ch]);
    const double b = layer.bias.value[ch];
    for (std::size_t p = 0; p < plane; ++p) y[ch * plane + p] = (x[ch * plane + p] - b) * inv_scale;
    logdet += layer.log_scale.value[ch];
  }
  y.check_finite("actnorm inverse");
  return {std::move(y), -static_cast<double>(plane) * logdet};
}

// ------------------------------------------------------ invertible 1x1 conv

InvConv InvConv::make(std::size_t channels, Rng& rng, double init_scale, const std::string& prefix) {
  InvConv l;
  l.perm.resize(channels);
  std::iota(l.perm.begin(), l.perm.end(), std::size_t{0});
  rng.shuffle(l.perm);
  l.lower = {prefix + ".lower", Tensor({channels, channels}), -1};
  l.upper = {prefix + ".upper", Tensor({channels, channels}), -1};
  l.log_diag = {prefix + ".log_diag", Tensor({channels}), -1};
  if (init_scale > 0.0) {
    for (std::size_t i = 0; i < channels; ++i)
      for (std::size_t j = 0; j < channels; ++j) {
        if (j < i) l.lower.value[i * channels + j] = init_scale * rng.normal();
        if (j > i) l.upper.value[i * channels + j] = init_scale * rng.normal();
      }
    for (auto& v : l.log_diag.value.values()) v = init_scale * rng.normal();
  }
  return l;
}

namespace {

Tensor permutation_matrix(const std::vector<std::size_t>& perm) {
  const std::size_t c = perm.size();
  Tensor p({c, c});
  for (std::size_t i = 0; i < c; ++i) p[i * c + perm[i]] = 1.0;
  return p;
}

Tensor triangle_mask(std::size_t c, bool lower) {
  Tensor m({c, c});
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) m[i * c + j] = (lower ? j < i : j > i) ? 1.0 : 0.0;
  return m;
}

Tensor identity_matrix(std::size_t c) {
  Tensor m({c, c});
  for (std::size_t i = 0; i < c; ++i) m[i * c + i] = 1.0;
  return m;
}

ad::Var weight_var(const InvConv& layer, ad::Tape& tape) {
  const std::size_t c = layer.channels();
  auto l = ad::add_const(ad::mul_const(layer.lower.on(tape), triangle_mask(c, true)), identity_matrix(c));
  auto u = ad::add(ad::mul_const(layer.upper.on(tape), triangle_mask(c, false)),
                   ad::diag_embed(ad::exp(layer.log_diag.on(tape))));
  return ad::matmul(tape.constant(permutation_matrix(layer.perm)), ad::matmul(l, u));
}

}  // namespace

Tensor InvConv::weight() const {
  ad::Tape tape(false);
  return weight_var(*this, tape).value();
}

ad::Var invconv_forward(const InvConv& layer, ad::Var x, ad::Var& logdet) {
  auto& tape = *x.tape;
  if (x.value().rank() != 3 || x.shape()[0] != layer.channels()) throw DimensionError("invconv: channel mismatch");
  auto y = ad::channel_mix(weight_var(layer, tape), x);
  const auto& s = x.shape();
  logdet = ad::scale(ad::sum(layer.log_diag.on(tape)), static_cast<double>(s[1] * s[2]));
  return y;
}

LayerResult invconv_apply(const InvConv& layer, const Tensor& x, Direction dir) {
  if (x.rank() != 3 || x.dim(0) != layer.channels()) throw DimensionError("invconv: channel mismatch");
  if (dir == Direction::Forward) {
    ad::Tape tape(false);
    ad::Var ld;
    auto y = invconv_forward(layer, tape.constant(x), ld);
    return {y.value(), ld.value().item()};
  }
  // x = U^{-1} L^{-1} P^T y, solved per site through the triangular factors.
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  const auto& lo = layer.lower.value;
  const auto& up = layer.upper.value;
  std::vector<double> diag(c);
  double sum_log_diag = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    diag[i] = std::exp(layer.log_diag.value[i]);
    sum_log_diag += layer.log_diag.value[i];
  }
  Tensor out(x.shape());
  std::vector<double> v(c);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t i = 0; i < c; ++i) v[layer.perm[i]] = x[i * plane + p];
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < i; ++j) v[i] -= lo[i * c + j] * v[j];
    for (std::size_t ii = c; ii-- > 0;) {
      for (std::size_t j = ii + 1; j < c; ++j) v[ii] -= up[ii * c + j] * v[j];
      v[ii] /= diag[ii];
    }
    for (std::size_t i = 0; i < c; ++i) out[i * plane + p] = v[i];
  }
  out.check_finite("invconv inverse");
  return {std::move(out), -static_cast<double>(plane) * sum_log_diag};
}

// ------------------------------------------------------------------- masks

std::string to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::Checkerboard: return "checkerboard";
    case MaskKind::Channelwise: return "channelwise";
    case MaskKind::Application: return "application";
  }
  return "?";
}

MaskKind mask_kind_from_string(const std::string& s) {
  if (s == "checkerboard") return MaskKind::Checkerboard;
  if (s == "channelwise") return MaskKind::Channelwise;
  if (s == "application") return MaskKind::Application;
  throw ContractError("unknown mask kind '" + s + "'");
}

Mask make_mask(MaskKind kind, std::size_t c, std::size_t h, std::size_t w, int parity) {
  if (parity != 0 && parity != 1) throw ContractError("make_mask: parity must be 0 or 1");
  Mask m{kind, parity, Tensor({c, h, w})};
  switch (kind) {
    case MaskKind::Checkerboard:
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j)
            m.values.at(ch, i, j) = static_cast<double>((i + j + static_cast<std::size_t>(parity)) % 2);
      break;
    case MaskKind::Channelwise:
      if (c % 2) throw ContractError("make_mask: channelwise mask needs an even channel count");
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < h * w; ++p)
          m.values[ch * h * w + p] = ch < c / 2 ? 1.0 - parity : static_cast<double>(parity);
      break;
    case MaskKind::Application: {
      const double ci = h / 2.0, cj = w / 2.0, ai = 0.8 * h / 2.0, aj = 0.8 * w / 2.0;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double di = (i + 0.5 - ci) / ai, dj = (j + 0.5 - cj) / aj;
          const bool inside = di * di + dj * dj <= 1.0;
          const double v = (inside != (parity == 1)) ? 1.0 : 0.0;
          for (std::size_t ch = 0; ch < c; ++ch) m.values.at(ch, i, j) = v;
        }
      break;
    }
  }
  return m;
}

bool is_binary(const Tensor& t) {
  for (double v : t.values())
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

}  // namespace mgf
