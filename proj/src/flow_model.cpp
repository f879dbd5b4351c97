// SPDX-License-Identifier: Apache-2.0
#include "mgf/flow_model.hpp"

#include <cmath>
#include <sstream>

#include "mgf/errors.hpp"
#include "mgf/tensor_ops.hpp"

namespace mgf {

namespace {

ScheduleItem step(MaskKind kind, int parity) { return {ScheduleItem::Kind::Step, kind, parity}; }
constexpr ScheduleItem kSqueeze{ScheduleItem::Kind::Squeeze, MaskKind::Checkerboard, 0};
constexpr ScheduleItem kSplit{ScheduleItem::Kind::Split, MaskKind::Checkerboard, 0};

void append_block(std::vector<ScheduleItem>& s, MaskKind kind) {
  for (int p : {0, 1, 0}) s.push_back(step(kind, p));
}

std::vector<ScheduleItem> default_schedule() {
  std::vector<ScheduleItem> s{step(MaskKind::Application, 0)};
  for (int block = 0; block < 3; ++block) {
    append_block(s, MaskKind::Checkerboard);
    s.push_back(kSqueeze);
    append_block(s, MaskKind::Channelwise);
    s.push_back(kSplit);
  }
  // Final stage at the coarsest resolution brings the total to 24 steps.
  for (auto [kind, parity] : {std::pair{MaskKind::Checkerboard, 0}, {MaskKind::Channelwise, 0},
                              {MaskKind::Checkerboard, 1}, {MaskKind::Channelwise, 1},
                              {MaskKind::Checkerboard, 0}})
    s.push_back(step(kind, parity));
  return s;
}

std::vector<ScheduleItem> reduced_schedule() {
  std::vector<ScheduleItem> s{step(MaskKind::Application, 0)};
  append_block(s, MaskKind::Checkerboard);
  s.push_back(kSqueeze);
  append_block(s, MaskKind::Channelwise);
  s.push_back(kSplit);
  s.push_back(step(MaskKind::Checkerboard, 0));
  return s;
}

std::string token(const ScheduleItem& item) {
  switch (item.kind) {
    case ScheduleItem::Kind::Squeeze:
      return "squeeze";
    case ScheduleItem::Kind::Split:
      return "split";
    case ScheduleItem::Kind::Step:
      break;
  }
  const char* prefix = item.mask == MaskKind::Application ? "app" : item.mask == MaskKind::Checkerboard ? "cb" : "ch";
  return prefix + std::to_string(item.parity);
}

std::string describe(const std::vector<ScheduleItem>& schedule, std::size_t index) {
  return "schedule item " + std::to_string(index) + " (" + token(schedule[index]) + ")";
}

}  // namespace

std::vector<ScheduleItem> parse_schedule(const std::string& text) {
  if (text == "default") return default_schedule();
  if (text == "reduced") return reduced_schedule();
  if (text.rfind("toy:", 0) == 0) {
    std::size_t n = 0;
    try {
      n = std::stoul(text.substr(4));
    } catch (const std::exception&) {
      throw ConfigError("bad toy schedule '" + text + "'");
    }
    if (n == 0) throw ConfigError("toy schedule needs at least one step");
    std::vector<ScheduleItem> s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(step(MaskKind::Channelwise, static_cast<int>(i % 2)));
    return s;
  }
  std::string cleaned = text;
  for (char& ch : cleaned)
    if (ch == ',') ch = ' ';
  std::istringstream in(cleaned);
  std::vector<ScheduleItem> s;
  std::string tok;
  while (in >> tok) {
    if (tok == "squeeze") {
      s.push_back(kSqueeze);
    } else if (tok == "split") {
      s.push_back(kSplit);
    } else {
      const auto digit = tok.empty() ? '?' : tok.back();
      const std::string kind = tok.substr(0, tok.size() - 1);
      if (digit != '0' && digit != '1') throw ConfigError("bad schedule token '" + tok + "'");
      const int parity = digit - '0';
      if (kind == "app")
        s.push_back(step(MaskKind::Application, parity));
      else if (kind == "cb")
        s.push_back(step(MaskKind::Checkerboard, parity));
      else if (kind == "ch")
        s.push_back(step(MaskKind::Channelwise, parity));
      else
        throw ConfigError("bad schedule token '" + tok + "'");
    }
  }
  if (s.empty()) throw ConfigError("empty schedule");
  return s;
}

std::string schedule_to_string(const std::vector<ScheduleItem>& schedule) {
  std::string out;
  for (const auto& item : schedule) {
    if (!out.empty()) out += ' ';
    out += token(item);
  }
  return out;
}

std::vector<Parameter*> FlowModel::parameters() {
  std::vector<Parameter*> out;
  for (auto& s : steps) {
    for (auto* p : {&s.actnorm.log_scale, &s.actnorm.bias, &s.invconv.lower, &s.invconv.upper, &s.invconv.log_diag})
      out.push_back(p);
    for (auto* p : s.coupling.net1.parameters()) out.push_back(p);
    for (auto* p : s.coupling.net2.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Parameter*> FlowModel::parameters() const {
  auto mut = const_cast<FlowModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

bool FlowModel::actnorms_initialized() const {
  for (const auto& s : steps)
    if (!s.actnorm.initialized) return false;
  return true;
}

FlowModel build_model(const FlowConfig& config) {
  const Shape& in = config.input_shape;
  if (in.size() != 3 || shape_volume(in) == 0) throw ConfigError("input shape must be (C,H,W), got " + shape_string(in));
  if (config.num_classes == 0) throw ConfigError("num_classes must be positive");
  if (config.hidden == 0) throw ConfigError("hidden width must be positive");

  FlowModel m;
  m.config = config;
  m.schedule = parse_schedule(config.schedule);
  Rng rng(config.seed);
  std::size_t c = in[0], h = in[1], w = in[2];
  for (std::size_t i = 0; i < m.schedule.size(); ++i) {
    const auto& item = m.schedule[i];
    switch (item.kind) {
      case ScheduleItem::Kind::Squeeze:
        if (h % 2 || w % 2)
          throw ConfigError(describe(m.schedule, i) + ": spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                            " is not even; input " + shape_string(in) + " is incompatible with schedule '" +
                            config.schedule + "'");
        c *= 4, h /= 2, w /= 2;
        break;
      case ScheduleItem::Kind::Split:
        if (c % 2)
          throw ConfigError(describe(m.schedule, i) + ": channel count " + std::to_string(c) + " is odd");
        c /= 2;
        m.latent_shapes.push_back({c, h, w});
        break;
      case ScheduleItem::Kind::Step: {
        if (item.mask == MaskKind::Channelwise && c % 2)
          throw ConfigError(describe(m.schedule, i) + ": channelwise mask needs an even channel count, got " +
                            std::to_string(c));
        const std::string prefix = "step" + std::to_string(m.steps.size());
        CouplingNetConfig nc;
        nc.variant = config.task;
        nc.channels = c;
        nc.hidden = config.hidden;
        nc.kernel = config.kernel;
        nc.num_classes = config.num_classes;
        nc.embed_dim = config.embed_dim;
        nc.s_max = config.s_max;
        nc.dropout = config.dropout;
        FlowStep s{ActNorm::make(c, prefix + ".actnorm"),
                   InvConv::make(c, rng, config.invconv_init, prefix + ".invconv"),
                   {make_mask(item.mask, c, h, w, item.parity), {}, {}}};
        s.coupling.net1 = CouplingNet::make(nc, rng, prefix + ".net1");
        s.coupling.net2 = CouplingNet::make(nc, rng, prefix + ".net2");
        m.steps.push_back(std::move(s));
        break;
      }
    }
  }
  m.latent_shapes.push_back({c, h, w});
  int id = 0;
  for (Parameter* p : m.parameters()) p->id = id++;
  return m;
}

std::vector<Shape> activation_shapes(const FlowModel& model) {
  std::vector<Shape> out;
  Shape s = model.config.input_shape;
  for (const auto& item : model.schedule) {
    out.push_back(s);
    if (item.kind == ScheduleItem::Kind::Squeeze) s = {s[0] * 4, s[1] / 2, s[2] / 2};
    if (item.kind == ScheduleItem::Kind::Split) s = {s[0] / 2, s[1], s[2]};
  }
  return out;
}

namespace {

void check_input(const FlowModel& model, const Shape& shape) {
  if (shape != model.config.input_shape)
    throw DimensionError("input shape " + shape_string(shape) + " does not match model " +
                         shape_string(model.config.input_shape));
}

void check_label(const FlowModel& model, std::size_t label) {
  if (label >= model.config.num_classes)
    throw ContractError("label " + std::to_string(label) + " out of range for " +
                        std::to_string(model.config.num_classes) + " classes");
}

Tensor per_channel_map(const Shape& shape, const Tensor& per_channel) {
  Tensor m(shape);
  const std::size_t plane = shape[1] * shape[2];
  for (std::size_t c = 0; c < shape[0]; ++c)
    for (std::size_t p = 0; p < plane; ++p) m[c * plane + p] = per_channel[c];
  return m;
}

struct TapePass {
  std::vector<ad::Var> latents;
  std::vector<ad::Var> logdets;
};

// Shared forward walk. Contributions are collected when `contribs` is set.
TapePass run_forward(const FlowModel& model, ad::Tape& tape, const Tensor& x, std::size_t label, Rng* dropout_rng,
                     std::vector<LayerContribution>* contribs) {
  check_input(model, x.shape());
  check_label(model, label);
  TapePass pass;
  ad::Var h = tape.constant(x);
  std::size_t step_index = 0;
  for (std::size_t i = 0; i < model.schedule.size(); ++i) {
    const auto& item = model.schedule[i];
    if (item.kind == ScheduleItem::Kind::Squeeze) {
      h = ad::squeeze2x2(h);
      continue;
    }
    if (item.kind == ScheduleItem::Kind::Split) {
      const std::size_t c = h.shape()[0];
      pass.latents.push_back(ad::slice_channels(h, c / 2, c));
      h = ad::slice_channels(h, 0, c / 2);
      continue;
    }
    const FlowStep& s = model.steps[step_index];
    const char* stage = "actnorm";
    try {
      ad::Var ld_a, ld_i;
      h = actnorm_forward(s.actnorm, h, ld_a);
      stage = "invconv";
      h = invconv_forward(s.invconv, h, ld_i);
      stage = "coupling";
      auto cf = coupling_forward(s.coupling, h, label, dropout_rng);
      h = cf.y;
      pass.logdets.insert(pass.logdets.end(), {ld_a, ld_i, cf.logdet});
      if (contribs) {
        const Shape& shape = h.shape();
        Tensor ld_share({shape[0]}, sum(s.invconv.log_diag.value) / static_cast<double>(shape[0]));
        contribs->push_back({LayerContribution::Layer::ActNorm, i, ld_a.value().item(),
                             per_channel_map(shape, s.actnorm.log_scale.value)});
        contribs->push_back({LayerContribution::Layer::InvConv, i, ld_i.value().item(), per_channel_map(shape, ld_share)});
        contribs->push_back({LayerContribution::Layer::Coupling, i, cf.logdet.value().item(), cf.contribution});
      }
    } catch (const NumericalError& e) {
      throw NumericalError("step " + std::to_string(step_index) + " " + stage + " (" +
                           describe(model.schedule, i) + ") produced a non-finite value: " + e.what());
    }
    ++step_index;
  }
  pass.latents.push_back(h);
  return pass;
}

}  // namespace

ForwardResult forward(const FlowModel& model, const Tensor& x, std::size_t label) {
  ad::Tape tape(false);
  ForwardResult r;
  auto pass = run_forward(model, tape, x, label, nullptr, &r.per_layer);
  for (const auto& z : pass.latents) r.latents.push_back(z.value());
  for (const auto& l : pass.logdets) r.total_logdet += l.value().item();
  return r;
}

ad::Var log_likelihood(const FlowModel& model, ad::Tape& tape, const Tensor& x, std::size_t label, Rng* dropout_rng) {
  auto pass = run_forward(model, tape, x, label, dropout_rng, nullptr);
  ad::Var total = ad::log_normal_sum(pass.latents[0]);
  for (std::size_t j = 1; j < pass.latents.size(); ++j) total = ad::add(total, ad::log_normal_sum(pass.latents[j]));
  for (const auto& l : pass.logdets) total = ad::add(total, l);
  return total;
}

double log_likelihood(const FlowModel& model, const Tensor& x, std::size_t label) {
  ad::Tape tape(false);
  return log_likelihood(model, tape, x, label).value().item();
}

Tensor inverse(const FlowModel& model, const LatentBundle& latents, std::size_t label) {
  check_label(model, label);
  if (latents.size() != model.latent_shapes.size())
    throw DimensionError("expected " + std::to_string(model.latent_shapes.size()) + " latents, got " +
                         std::to_string(latents.size()));
  for (std::size_t j = 0; j < latents.size(); ++j)
    if (latents[j].shape() != model.latent_shapes[j])
      throw DimensionError("latent " + std::to_string(j) + " has shape " + shape_string(latents[j].shape()) +
                           ", expected " + shape_string(model.latent_shapes[j]));
  Tensor h = latents.back();
  std::size_t split_index = latents.size() - 1;
  std::size_t step_index = model.steps.size();
  for (std::size_t i = model.schedule.size(); i-- > 0;) {
    const auto& item = model.schedule[i];
    if (item.kind == ScheduleItem::Kind::Squeeze) {
      h = unsqueeze2x2(h);
    } else if (item.kind == ScheduleItem::Kind::Split) {
      h = merge_channels(h, latents[--split_index]);
    } else {
      const FlowStep& s = model.steps[--step_index];
      h = coupling_apply(s.coupling, h, label, Direction::Inverse).y;
      h = invconv_apply(s.invconv, h, Direction::Inverse).y;
      h = actnorm_apply(s.actnorm, h, Direction::Inverse).y;
    }
  }
  return h;
}

LatentBundle zero_latents(const FlowModel& model) {
  LatentBundle z;
  for (const auto& s : model.latent_shapes) z.emplace_back(s);
  return z;
}

Tensor sample(const FlowModel& model, std::size_t label, Rng& rng, double temperature) {
  if (!(temperature > 0.0)) throw ContractError("sample: temperature must be positive");
  LatentBundle z = zero_latents(model);
  for (auto& t : z)
    for (auto& v : t.values()) v = temperature * rng.normal();
  return inverse(model, z, label);
}

std::size_t argmax_lowest(const std::vector<double>& scores) {
  if (scores.empty()) throw ContractError("argmax of an empty score vector");
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k)
    if (scores[k] > scores[best]) best = k;
  return best;
}

Classification classify(const FlowModel& model, const Tensor& x) {
  Classification c;
  for (std::size_t k = 0; k < model.config.num_classes; ++k) c.scores.push_back(log_likelihood(model, x, k));
  c.label = argmax_lowest(c.scores);
  return c;
}

void initialize_actnorms(FlowModel& model, const Tensor& batch, const std::vector<std::size_t>& labels) {
  if (batch.rank() != 4 || batch.dim(0) != labels.size())
    throw ContractError("actnorm initialization needs a [B,C,H,W] batch with one label per sample");
  std::vector<Tensor> acts;
  for (std::size_t b = 0; b < batch.dim(0); ++b) {
    acts.push_back(batch.slice0(b));
    check_input(model, acts.back().shape());
    check_label(model, labels[b]);
  }
  std::size_t step_index = 0;
  for (const auto& item : model.schedule) {
    if (item.kind == ScheduleItem::Kind::Squeeze) {
      for (auto& a : acts) a = squeeze2x2(a);
      continue;
    }
    if (item.kind == ScheduleItem::Kind::Split) {
      for (auto& a : acts) a = split_channels(a).first;
      continue;
    }
    FlowStep& s = model.steps[step_index++];
    if (!s.actnorm.initialized) actnorm_init(s.actnorm, stack(acts));
    for (std::size_t b = 0; b < acts.size(); ++b) {
      acts[b] = actnorm_apply(s.actnorm, acts[b], Direction::Forward).y;
      acts[b] = invconv_apply(s.invconv, acts[b], Direction::Forward).y;
      acts[b] = coupling_apply(s.coupling, acts[b], labels[b], Direction::Forward).y;
    }
  }
}

void initialize_actnorms_identity(FlowModel& model) {
  for (auto& s : model.steps) actnorm_init_identity(s.actnorm);
}

}  // namespace mgf
