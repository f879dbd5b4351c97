// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mgf/autodiff.hpp"
#include "mgf/rng.hpp"
#include "mgf/tensor.hpp"
#include "mgf/tensor_ops.hpp"

namespace mgf {

enum class Direction { Forward, Inverse };

/// A named trainable tensor. `id` indexes the owning model's canonical
/// parameter list (-1 when the layer is used on its own).
struct Parameter {
  std::string name;
  Tensor value;
  int id = -1;

  ad::Var on(ad::Tape& tape) const { return tape.parameter(value, id); }
};

/// Result of applying one invertible layer to a [C,H,W] tensor.
struct LayerResult {
  Tensor y;
  double logdet = 0.0;
};

// ---------------------------------------------------------------- ActNorm

/// Per-channel affine y = exp(log_scale[c]) * x + bias[c].
struct ActNorm {
  Parameter log_scale;
  Parameter bias;
  bool initialized = false;

  static ActNorm make(std::size_t channels, const std::string& prefix = "actnorm");
  std::size_t channels() const { return log_scale.value.size(); }
};

/// Data-dependent init from a [B,C,H,W] batch so the layer's output has
/// zero mean and unit (population) standard deviation per channel.
void actnorm_init(ActNorm& layer, const Tensor& batch);
/// Forces the identity transform and marks the layer initialized.
void actnorm_init_identity(ActNorm& layer);

LayerResult actnorm_apply(const ActNorm& layer, const Tensor& x, Direction dir);
ad::Var actnorm_forward(const ActNorm& layer, ad::Var x, ad::Var& logdet);

// ------------------------------------------------------ invertible 1x1 conv

/// W = P * L * (U + diag(exp(log_diag))) with P a frozen permutation, L
/// unit lower-triangular and U strictly upper-triangular.
struct InvConv {
  std::vector<std::size_t> perm;  // (P x)[i] = x[perm[i]]
  Parameter lower;                // [C,C], strictly-lower part used
  Parameter upper;                // [C,C], strictly-upper part used
  Parameter log_diag;             // [C]

  /// Seeded permutation; free parameters drawn N(0, init_scale^2).
  static InvConv make(std::size_t channels, Rng& rng, double init_scale = 0.0,
                      const std::string& prefix = "invconv");
  std::size_t channels() const { return perm.size(); }

  /// Dense W (for tests and diagnostics).
  Tensor weight() const;
};

LayerResult invconv_apply(const InvConv& layer, const Tensor& x, Direction dir);
ad::Var invconv_forward(const InvConv& layer, ad::Var x, ad::Var& logdet);

// ------------------------------------------------------------------- masks

enum class MaskKind { Checkerboard, Channelwise, Application };

std::string to_string(MaskKind kind);
MaskKind mask_kind_from_string(const std::string& s);

struct Mask {
  MaskKind kind = MaskKind::Checkerboard;
  int parity = 0;
  Tensor values;  // binary [C,H,W]
};

/// checkerboard: (i + j + parity) mod 2. channelwise: first C/2 channels
/// 1 - parity, rest parity. application: centered ellipse with semi-axes
/// 0.8*H/2 and 0.8*W/2 over pixel centers, 1 inside for parity 0.
Mask make_mask(MaskKind kind, std::size_t c, std::size_t h, std::size_t w, int parity);

bool is_binary(const Tensor& t);

}  // namespace mgf
