// SPDX-License-Identifier: Apache-2.0
#include "mgf/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "mgf/errors.hpp"

namespace mgf {

BatchGradient batch_gradient(const FlowModel& model, const std::vector<Tensor>& xs,
                             const std::vector<std::size_t>& labels, std::vector<Rng>* dropout_rngs) {
  if (xs.empty() || xs.size() != labels.size()) throw ContractError("batch_gradient: empty or mismatched batch");
  const auto params = model.parameters();
  BatchGradient out;
  for (const Parameter* p : params) out.grads.emplace_back(p->value.shape());
  const double inv_b = 1.0 / static_cast<double>(xs.size());
  for (std::size_t b = 0; b < xs.size(); ++b) {
    ad::Tape tape;
    Rng* drop = dropout_rngs ? &(*dropout_rngs)[b] : nullptr;
    ad::Var ll;
    try {
      ll = log_likelihood(model, tape, xs[b], labels[b], drop);
    } catch (const NumericalError& e) {
      throw NumericalError("sample " + std::to_string(b) + " of batch: " + e.what());
    }
    out.sample_nll.push_back(-ll.value().item());
    out.nll -= ll.value().item() * inv_b;
    const ad::Gradients g = tape.backward(ll);
    for (const auto& [id, grad] : g) {
      Tensor& acc = out.grads[static_cast<std::size_t>(id)];
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] -= grad[i] * inv_b;
    }
  }
  return out;
}

namespace {

std::string format_line(std::size_t epoch, double nll, double seconds) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "epoch=%zu nll=%.6f seconds=%.3f", epoch, nll, seconds);
  return buf;
}

}  // namespace

TrainHistory train(FlowModel& model, const Dataset& data, const TrainOptions& opts) {
  if (data.size() == 0) throw ContractError("train: empty dataset");
  if (opts.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (data.image_shape() != model.config.input_shape)
    throw DimensionError("train: dataset images " + shape_string(data.image_shape()) + " do not match model " +
                         shape_string(model.config.input_shape));
  if (!(opts.learning_rate >= 0.0) || !(opts.clip_norm > 0.0)) throw ConfigError("invalid optimizer settings");

  auto params = model.parameters();
  std::vector<Tensor> m, v;
  for (const Parameter* p : params) {
    m.emplace_back(p->value.shape());
    v.emplace_back(p->value.shape());
  }
  const Rng root(opts.seed);
  TrainHistory history;
  const std::size_t n = data.size();
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const Rng epoch_rng = root.derive(epoch);
    Rng order_rng = epoch_rng.derive(0);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    order_rng.shuffle(order);

    // Indexed by dataset position so the epoch mean does not depend on the
    // shuffle order.
    std::vector<double> sample_nll(n, 0.0);
    for (std::size_t start = 0; start < n; start += opts.batch_size) {
      const std::size_t end = std::min(n, start + opts.batch_size);
      std::vector<Tensor> xs;
      std::vector<std::size_t> labels;
      std::vector<Rng> drop;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        Tensor x = data.image(idx);
        if (opts.dequantize_bits > 0) {
          Rng dq = epoch_rng.derive(1 + 2 * idx);
          x = dequantize(x, dq, opts.dequantize_bits);
        }
        xs.push_back(std::move(x));
        labels.push_back(data.labels[idx]);
        drop.push_back(epoch_rng.derive(2 + 2 * idx));
      }
      if (!model.actnorms_initialized()) initialize_actnorms(model, stack(xs), labels);

      BatchGradient bg;
      try {
        bg = batch_gradient(model, xs, labels, &drop);
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + ", batch at " + std::to_string(start) + ": " +
                             e.what());
      }
      for (std::size_t k = start; k < end; ++k) sample_nll[order[k]] = bg.sample_nll[k - start];

      double norm2 = 0.0;
      for (const auto& g : bg.grads)
        for (double x : g.values()) norm2 += x * x;
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm in epoch " + std::to_string(epoch));
      const double clip = norm > opts.clip_norm ? opts.clip_norm / norm : 1.0;

      ++model.train_steps;
      const double t = static_cast<double>(model.train_steps);
      const double c1 = 1.0 - std::pow(opts.beta1, t), c2 = 1.0 - std::pow(opts.beta2, t);
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto& theta = params[p]->value;
        for (std::size_t i = 0; i < theta.size(); ++i) {
          const double g = bg.grads[p][i] * clip;
          m[p][i] = opts.beta1 * m[p][i] + (1.0 - opts.beta1) * g;
          v[p][i] = opts.beta2 * v[p][i] + (1.0 - opts.beta2) * g * g;
          theta[i] -= opts.learning_rate * (m[p][i] / c1) / (std::sqrt(v[p][i] / c2) + opts.adam_eps);
        }
      }
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double total_nll = 0.0;
    for (double v : sample_nll) total_nll += v;
    history.epoch_nll.push_back(total_nll / static_cast<double>(n));
    history.epoch_seconds.push_back(seconds);
    if (opts.log) *opts.log << format_line(epoch, history.epoch_nll.back(), seconds) << std::endl;
  }
  return history;
}

double mean_nll(const FlowModel& model, const Dataset& data) {
  if (data.size() == 0) throw ContractError("mean_nll: empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) total -= log_likelihood(model, data.image(i), data.labels[i]);
  return total / static_cast<double>(data.size());
}

double accuracy(const FlowModel& model, const Dataset& data) {
  if (data.size() == 0) throw ContractError("accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += classify(model, data.image(i)).label == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace mgf
