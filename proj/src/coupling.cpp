// SPDX-License-Identifier: Apache-2.0
#include "mgf/coupling.hpp"

#include <cmath>

#include "mgf/errors.hpp"

namespace mgf {

std::string to_string(CouplingVariant v) {
  return v == CouplingVariant::Generation ? "generation" : "classification";
}

CouplingVariant coupling_variant_from_string(const std::string& s) {
  if (s == "generation") return CouplingVariant::Generation;
  if (s == "classification") return CouplingVariant::Classification;
  throw ConfigError("unknown task '" + s + "' (expected generation or classification)");
}

ad::Var LabelEmbedding::embed(ad::Tape& tape, std::size_t label) const {
  if (label >= num_classes)
    throw ContractError("label " + std::to_string(label) + " out of range for " + std::to_string(num_classes) +
                        " classes");
  if (mode == Mode::OneHot) {
    Tensor e({num_classes});
    e[label] = 1.0;
    return tape.constant(std::move(e));
  }
  return ad::row(table.on(tape), label);
}

std::pair<ad::Var, ad::Var> FilmGenerator::operator()(ad::Tape& tape, ad::Var e) const {
  auto gamma = ad::add_const(ad::add(ad::matvec(wg.on(tape), e), bg.on(tape)), Tensor::ones(bg.value.shape()));
  auto beta = ad::add(ad::matvec(wb.on(tape), e), bb.on(tape));
  return {gamma, beta};
}

namespace {

Parameter normal_param(const std::string& name, Shape shape, Rng& rng, double sd) {
  Tensor t(std::move(shape));
  if (sd > 0.0)
    for (auto& v : t.values()) v = sd * rng.normal();
  return {name, std::move(t), -1};
}

Parameter conv_param(const std::string& name, std::size_t cout, std::size_t cin, std::size_t k, Rng& rng) {
  return normal_param(name, {cout, cin, k, k}, rng, 1.0 / std::sqrt(static_cast<double>(cin * k * k)));
}

FilmGenerator make_film(const std::string& prefix, std::size_t channels, std::size_t emb, Rng& rng) {
  return {normal_param(prefix + ".wg", {channels, emb}, rng, 0.1), normal_param(prefix + ".bg", {channels}, rng, 0.0),
          normal_param(prefix + ".wb", {channels, emb}, rng, 0.1), normal_param(prefix + ".bb", {channels}, rng, 0.0)};
}

ad::Var conv_bias(ad::Var x, const Parameter& k, const Parameter& b) {
  auto& tape = *x.tape;
  return ad::add_channel_bias(ad::conv2d(x, k.on(tape)), b.on(tape));
}

}  // namespace

CouplingNet CouplingNet::make(const CouplingNetConfig& cfg, Rng& rng, const std::string& prefix) {
  if (cfg.kernel % 2 == 0) throw ConfigError("coupling net kernel size must be odd");
  if (!(cfg.s_max > 0.0)) throw ConfigError("s_max must be positive");
  if (cfg.num_classes == 0) throw ConfigError("num_classes must be positive");
  CouplingNet n;
  n.config = cfg;
  const std::size_t c = cfg.channels, h = cfg.hidden, k = cfg.kernel;
  const bool cls = cfg.variant == CouplingVariant::Classification;
  n.embedding.num_classes = cfg.num_classes;
  std::size_t emb = cfg.num_classes;
  if (cls) {
    const std::size_t e = cfg.embed_dim;
    n.embedding.mode = LabelEmbedding::Mode::Learned;
    n.embedding.table = normal_param(prefix + ".embed", {cfg.num_classes, e}, rng, 1.0);
    n.emb_w1 = normal_param(prefix + ".emb_w1", {e, e}, rng, 1.0 / std::sqrt(static_cast<double>(e)));
    n.emb_b1 = normal_param(prefix + ".emb_b1", {e}, rng, 0.0);
    n.emb_w2 = normal_param(prefix + ".emb_w2", {e, e}, rng, 1.0 / std::sqrt(static_cast<double>(e)));
    n.emb_b2 = normal_param(prefix + ".emb_b2", {e}, rng, 0.0);
    emb = e;
  }
  n.in_k = conv_param(prefix + ".in_k", h, c, k, rng);
  n.in_b = normal_param(prefix + ".in_b", {h}, rng, 0.0);
  n.film1 = make_film(prefix + ".film1", h, emb, rng);
  const std::size_t nblocks = cls ? 1 : 2;
  for (std::size_t b = 0; b < nblocks; ++b) {
    const std::string p = prefix + ".res" + std::to_string(b);
    n.blocks.push_back({conv_param(p + ".k1", h, h, k, rng), normal_param(p + ".b1", {h}, rng, 0.0),
                        conv_param(p + ".k2", h, h, k, rng), normal_param(p + ".b2", {h}, rng, 0.0)});
  }
  if (!cls) n.film2 = make_film(prefix + ".film2", h, emb, rng);
  const std::size_t head_in = cls ? h + cfg.embed_dim : h;
  n.s_k = normal_param(prefix + ".s_k", {c, head_in, k, k}, rng, 0.0);
  n.s_b = normal_param(prefix + ".s_b", {c}, rng, 0.0);
  n.t_k = normal_param(prefix + ".t_k", {c, head_in, k, k}, rng, 0.0);
  n.t_b = normal_param(prefix + ".t_b", {c}, rng, 0.0);
  return n;
}

std::vector<Parameter*> CouplingNet::parameters() {
  std::vector<Parameter*> out;
  const bool cls = config.variant == CouplingVariant::Classification;
  if (cls) {
    for (auto* p : {&embedding.table, &emb_w1, &emb_b1, &emb_w2, &emb_b2}) out.push_back(p);
  }
  for (auto* p : {&in_k, &in_b, &film1.wg, &film1.bg, &film1.wb, &film1.bb}) out.push_back(p);
  for (auto& b : blocks)
    for (auto* p : {&b.k1, &b.b1, &b.k2, &b.b2}) out.push_back(p);
  if (!cls)
    for (auto* p : {&film2.wg, &film2.bg, &film2.wb, &film2.bb}) out.push_back(p);
  for (auto* p : {&s_k, &s_b, &t_k, &t_b}) out.push_back(p);
  return out;
}

std::vector<const Parameter*> CouplingNet::parameters() const {
  auto mut = const_cast<CouplingNet*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

ScaleShift coupling_net_eval(const CouplingNet& net, ad::Var x, std::size_t label, Rng* dropout_rng) {
  auto& tape = *x.tape;
  const auto& cfg = net.config;
  if (x.value().rank() != 3 || x.shape()[0] != cfg.channels)
    throw DimensionError("coupling net expects " + std::to_string(cfg.channels) + " channels, got " +
                         shape_string(x.shape()));
  const std::size_t hh = x.shape()[1], ww = x.shape()[2];
  const bool cls = cfg.variant == CouplingVariant::Classification;

  ad::Var e = net.embedding.embed(tape, label);
  if (cls) {
    auto inner = ad::silu(ad::add(ad::matvec(net.emb_w1.on(tape), e), net.emb_b1.on(tape)));
    e = ad::add(e, ad::add(ad::matvec(net.emb_w2.on(tape), inner), net.emb_b2.on(tape)));
  }

  auto [g1, b1] = net.film1(tape, e);
  auto h = ad::silu(ad::film(conv_bias(x, net.in_k, net.in_b), g1, b1));
  for (const auto& blk : net.blocks) h = ad::add(h, conv_bias(ad::silu(conv_bias(h, blk.k1, blk.b1)), blk.k2, blk.b2));

  if (cls) {
    h = ad::layer_norm(h);
    if (dropout_rng && cfg.dropout > 0.0) {
      Tensor keep(h.shape());
      const double inv = 1.0 / (1.0 - cfg.dropout);
      for (auto& v : keep.values()) v = dropout_rng->uniform() < cfg.dropout ? 0.0 : inv;
      h = ad::mul_const(h, keep);
    }
    h = ad::concat_channels(h, ad::broadcast_spatial(e, hh, ww));
  } else {
    auto [g2, b2] = net.film2(tape, e);
    h = ad::silu(ad::film(h, g2, b2));
  }
  auto s = ad::soft_clamp(conv_bias(h, net.s_k, net.s_b), cfg.s_max);
  auto t = conv_bias(h, net.t_k, net.t_b);
  return {s, t};
}

std::pair<Tensor, Tensor> coupling_net_eval(const CouplingNet& net, const Tensor& x_masked, std::size_t label) {
  ad::Tape tape(false);
  auto st = coupling_net_eval(net, tape.constant(x_masked), label, nullptr);
  return {st.s.value(), st.t.value()};
}

namespace {

void check_mask(const Mask& mask, const Shape& shape) {
  if (mask.values.shape() != shape)
    throw ContractError("coupling: mask shape " + shape_string(mask.values.shape()) + " differs from input " +
                        shape_string(shape));
  if (!is_binary(mask.values)) throw ContractError("coupling: mask is not binary");
}

Tensor complement(const Tensor& m) {
  Tensor r(m.shape());
  for (std::size_t i = 0; i < m.size(); ++i) r[i] = 1.0 - m[i];
  return r;
}

}  // namespace

CouplingForward coupling_forward(const CouplingLayer& layer, ad::Var x, std::size_t label, Rng* dropout_rng) {
  check_mask(layer.mask, x.shape());
  const Tensor& m = layer.mask.values;
  const Tensor mc = complement(m);

  auto st1 = coupling_net_eval(layer.net1, ad::mul_const(x, m), label, dropout_rng);
  auto s1 = ad::mul_const(st1.s, mc);
  auto u = ad::add(ad::mul(x, ad::exp(s1)), ad::mul_const(st1.t, mc));

  auto st2 = coupling_net_eval(layer.net2, ad::mul_const(u, mc), label, dropout_rng);
  auto s2 = ad::mul_const(st2.s, m);
  auto y = ad::add(ad::mul(u, ad::exp(s2)), ad::mul_const(st2.t, m));

  auto logdet = ad::add(ad::sum(s1), ad::sum(s2));
  return {y, logdet, s1.value() + s2.value()};
}

LayerResult coupling_apply(const CouplingLayer& layer, const Tensor& x, std::size_t label, Direction dir) {
  if (dir == Direction::Forward) {
    ad::Tape tape(false);
    auto f = coupling_forward(layer, tape.constant(x), label);
    return {f.y.value(), f.logdet.value().item()};
  }
  check_mask(layer.mask, x.shape());
  const Tensor& m = layer.mask.values;
  const Tensor mc = complement(m);
  const std::size_t n = x.size();

  auto [s2, t2] = coupling_net_eval(layer.net2, x * mc, label);
  Tensor u(x.shape());
  double logdet = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = s2[i] * m[i];
    u[i] = (x[i] - t2[i] * m[i]) * std::exp(-s);
    logdet -= s;
  }
  auto [s1, t1] = coupling_net_eval(layer.net1, u * m, label);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double s = s1[i] * mc[i];
    out[i] = (u[i] - t1[i] * mc[i]) * std::exp(-s);
    logdet -= s;
  }
  out.check_finite("coupling inverse");
  return {std::move(out), logdet};
}

Tensor film(const Tensor& h, const Tensor& gamma, const Tensor& beta) {
  ad::Tape tape(false);
  return ad::film(tape.constant(h), tape.constant(gamma), tape.constant(beta)).value();
}

}  // namespace mgf
