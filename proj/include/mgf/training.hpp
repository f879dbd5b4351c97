// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <vector>

#include "mgf/datagen.hpp"
#include "mgf/flow_model.hpp"

namespace mgf {

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 50.0;
  std::uint64_t seed = 0;
  /// Re-draw uniform dequantization noise every epoch (0 disables).
  int dequantize_bits = 0;
  /// Receives one `epoch=<n> nll=<float> seconds=<float>` line per epoch.
  std::ostream* log = nullptr;
};

struct TrainHistory {
  std::vector<double> epoch_nll;  // mean training NLL (nats per sample)
  std::vector<double> epoch_seconds;
};

/// Mean NLL of a batch and its gradient with respect to every model
/// parameter (indexed by Parameter::id). Per-sample gradients are summed in
/// sample order. `dropout_rngs` (optional) holds one stream per sample.
struct BatchGradient {
  double nll = 0.0;
  std::vector<double> sample_nll;
  std::vector<Tensor> grads;
};
BatchGradient batch_gradient(const FlowModel& model, const std::vector<Tensor>& xs,
                             const std::vector<std::size_t>& labels, std::vector<Rng>* dropout_rngs = nullptr);

/// Maximum-likelihood training with Adam and global-norm clipping. The
/// first batch initializes any uninitialized ActNorm. Deterministic in
/// opts.seed.
TrainHistory train(FlowModel& model, const Dataset& data, const TrainOptions& opts);

/// Mean NLL over a dataset in evaluation mode.
double mean_nll(const FlowModel& model, const Dataset& data);

/// Fraction of samples whose classify() argmax equals the label.
double accuracy(const FlowModel& model, const Dataset& data);

}  // namespace mgf
