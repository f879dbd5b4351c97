// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mgf/coupling.hpp"
#include "mgf/layers.hpp"

namespace mgf {

/// One entry of a flow schedule: a full flow step (ActNorm, InvConv,
/// coupling with the given mask), a squeeze, or a split.
struct ScheduleItem {
  enum class Kind { Step, Squeeze, Split };
  Kind kind = Kind::Step;
  MaskKind mask = MaskKind::Checkerboard;
  int parity = 0;

  bool operator==(const ScheduleItem&) const = default;
};

/// Parses a schedule description. Accepted forms:
///   "default"  24 steps, 3 squeezes, 3 splits (multiscale layout)
///   "reduced"  8 steps, 1 squeeze, 1 split (small Jacobian-oracle models)
///   "toy:N"    N channelwise steps with alternating parity (vector inputs)
///   otherwise  a whitespace/comma separated token list drawn from
///              app0 app1 cb0 cb1 ch0 ch1 squeeze split
std::vector<ScheduleItem> parse_schedule(const std::string& text);
std::string schedule_to_string(const std::vector<ScheduleItem>& schedule);

struct FlowConfig {
  Shape input_shape{1, 16, 16};
  std::size_t num_classes = 2;
  CouplingVariant task = CouplingVariant::Generation;
  std::string schedule = "default";
  std::size_t hidden = 8;
  std::size_t kernel = 3;
  std::size_t embed_dim = 16;
  double s_max = 2.0;
  double dropout = 0.1;
  double invconv_init = 0.05;
  std::uint64_t seed = 0;

  bool operator==(const FlowConfig&) const = default;
};

struct FlowStep {
  ActNorm actnorm;
  InvConv invconv;
  CouplingLayer coupling;
};

struct FlowModel {
  FlowConfig config;
  std::vector<ScheduleItem> schedule;
  std::vector<FlowStep> steps;       // one per Step item, in schedule order
  std::vector<Shape> latent_shapes;  // z_1 .. z_{S+1}
  std::uint64_t train_steps = 0;     // optimizer updates applied so far

  /// All trainable tensors in canonical order; `Parameter::id` equals the
  /// position in this list.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t num_splits() const { return latent_shapes.size() - 1; }
  bool actnorms_initialized() const;
};

using LatentBundle = std::vector<Tensor>;

/// Builds the model with identity couplings (zero heads), seeded
/// permutations and uninitialized ActNorms. Deterministic in config.seed.
FlowModel build_model(const FlowConfig& config);

/// Per-element log-det share of one layer, for attribution.
struct LayerContribution {
  enum class Layer { ActNorm, InvConv, Coupling };
  Layer layer = Layer::ActNorm;
  std::size_t schedule_index = 0;
  double logdet = 0.0;
  Tensor map;  // shape of the activation at this layer; sums to logdet
};

struct ForwardResult {
  LatentBundle latents;
  double total_logdet = 0.0;
  std::vector<LayerContribution> per_layer;  // forward order
};

ForwardResult forward(const FlowModel& model, const Tensor& x, std::size_t label);
Tensor inverse(const FlowModel& model, const LatentBundle& latents, std::size_t label);

/// log p(x | y) = sum_j log N(z_j; 0, I) + total_logdet.
double log_likelihood(const FlowModel& model, const Tensor& x, std::size_t label);

/// Differentiable log p(x | y) on `tape`. `dropout_rng` turns on
/// training-mode dropout in classification coupling nets.
ad::Var log_likelihood(const FlowModel& model, ad::Tape& tape, const Tensor& x, std::size_t label,
                       Rng* dropout_rng = nullptr);

/// z_j ~ temperature * N(0, I), drawn in latent order, then inverted.
Tensor sample(const FlowModel& model, std::size_t label, Rng& rng, double temperature = 1.0);
LatentBundle zero_latents(const FlowModel& model);

struct Classification {
  std::size_t label = 0;
  std::vector<double> scores;  // log p(x | k) for k = 0..K-1
};

/// Argmax of the K conditional log-likelihoods; ties go to the lowest index.
Classification classify(const FlowModel& model, const Tensor& x);
std::size_t argmax_lowest(const std::vector<double>& scores);

/// Data-dependent ActNorm initialization: pushes the batch [B,C,H,W]
/// through the model and initializes each uninitialized ActNorm from the
/// activations reaching it.
void initialize_actnorms(FlowModel& model, const Tensor& batch, const std::vector<std::size_t>& labels);
void initialize_actnorms_identity(FlowModel& model);

/// Shapes of the activation entering each schedule item.
std::vector<Shape> activation_shapes(const FlowModel& model);

}  // namespace mgf
