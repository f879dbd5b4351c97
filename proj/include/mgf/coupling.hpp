// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mgf/autodiff.hpp"
#include "mgf/layers.hpp"
#include "mgf/rng.hpp"

namespace mgf {

enum class CouplingVariant { Generation, Classification };

std::string to_string(CouplingVariant v);
CouplingVariant coupling_variant_from_string(const std::string& s);

struct CouplingNetConfig {
  CouplingVariant variant = CouplingVariant::Generation;
  std::size_t channels = 1;     // C of the coupled tensor
  std::size_t hidden = 8;       // feature width
  std::size_t kernel = 3;       // odd spatial kernel size
  std::size_t num_classes = 2;  // K
  std::size_t embed_dim = 16;   // learned embedding width (classification)
  double s_max = 2.0;
  double dropout = 0.1;         // classification, training only
};

/// Class label encoder: one-hot (generation nets) or a learned K x E table
/// followed by a residual MLP (classification nets).
struct LabelEmbedding {
  enum class Mode { OneHot, Learned };
  Mode mode = Mode::OneHot;
  std::size_t num_classes = 0;
  Parameter table;  // [K,E], learned mode only

  std::size_t width() const { return mode == Mode::OneHot ? num_classes : table.value.dim(1); }
  ad::Var embed(ad::Tape& tape, std::size_t label) const;
};

/// Maps a label embedding to per-channel FiLM (gamma, beta):
/// gamma = 1 + Wg e + bg, beta = Wb e + bb.
struct FilmGenerator {
  Parameter wg, bg, wb, bb;
  std::pair<ad::Var, ad::Var> operator()(ad::Tape& tape, ad::Var e) const;
};

struct ResidualBlock {
  Parameter k1, b1, k2, b2;
};

/// Conditioning network producing (s, t) for one affine half-step.
///
/// generation:     conv -> FiLM -> SiLU -> 2 residual blocks -> FiLM -> SiLU
///                 -> (s, t) heads
/// classification: learned embedding + residual MLP; conv -> FiLM -> SiLU
///                 -> residual block -> layer norm -> dropout -> concat with
///                 the embedding -> (s, t) heads
/// Scale heads are bounded: s = s_max * tanh(raw / s_max). Head weights
/// start at zero so a fresh coupling is the identity.
struct CouplingNet {
  CouplingNetConfig config;
  LabelEmbedding embedding;
  Parameter emb_w1, emb_b1, emb_w2, emb_b2;  // classification only
  Parameter in_k, in_b;
  FilmGenerator film1, film2;  // film2: generation only
  std::vector<ResidualBlock> blocks;
  Parameter s_k, s_b, t_k, t_b;

  static CouplingNet make(const CouplingNetConfig& config, Rng& rng, const std::string& prefix = "net");

  /// Every parameter in canonical order.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

struct ScaleShift {
  ad::Var s;
  ad::Var t;
};

/// Evaluates the net on an already-masked input. `dropout_rng` enables
/// training-mode dropout (classification variant); null means eval mode.
ScaleShift coupling_net_eval(const CouplingNet& net, ad::Var x_masked, std::size_t label, Rng* dropout_rng = nullptr);

/// Plain-tensor convenience wrapper of coupling_net_eval (eval mode).
std::pair<Tensor, Tensor> coupling_net_eval(const CouplingNet& net, const Tensor& x_masked, std::size_t label);

// ------------------------------------------------------------------ coupling

struct CouplingLayer {
  Mask mask;
  CouplingNet net1;  // predicts (s1, t1) from the masked part
  CouplingNet net2;  // predicts (s2, t2) from the updated complement
};

struct CouplingForward {
  ad::Var y;
  ad::Var logdet;
  /// (1 - M) * s1 + M * s2, the per-element log-det contribution.
  Tensor contribution;
};

CouplingForward coupling_forward(const CouplingLayer& layer, ad::Var x, std::size_t label, Rng* dropout_rng = nullptr);

LayerResult coupling_apply(const CouplingLayer& layer, const Tensor& x, std::size_t label, Direction dir);

/// out[c,i,j] = gamma[c] * h[c,i,j] + beta[c].
Tensor film(const Tensor& h, const Tensor& gamma, const Tensor& beta);

}  // namespace mgf
