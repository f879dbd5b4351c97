// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mgf/rng.hpp"
#include "mgf/tensor.hpp"

namespace mgf {

/// Acquisition-style corruption applied to the shared phantom anatomy.
struct ClassProfile {
  std::size_t label = 0;
  double noise_std = 0.0;
  double blur_sigma = 0.0;
  double bias_amplitude = 0.0;  // in [0, 1)
  std::uint64_t seed_offset = 0;
};

struct Dataset {
  Tensor images;  // [N,C,H,W]
  std::vector<std::size_t> labels;
  std::string split = "train";
  std::vector<std::pair<std::string, std::string>> meta;  // provenance

  std::size_t size() const { return labels.size(); }
  Shape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  Tensor image(std::size_t i) const { return images.slice0(i); }
  std::size_t num_classes() const;
  /// Samples at `indices`, in that order.
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

/// Three classes: (noise, blur, bias) = (0.02, 0, 0), (0.08, 0, 0.1),
/// (0.02, 1.5, 0.2).
std::vector<ClassProfile> scanner_profiles();
/// `k` profiles with every corruption zeroed (no class signal).
std::vector<ClassProfile> null_profiles(std::size_t k);

/// Phantom images [N,1,H,W]: concentric ellipses with per-sample
/// translation jitter of at most 2 px, times (1 + bias field), blurred,
/// plus Gaussian noise, clipped to [0,1] and rounded to the 8-bit grid.
/// Samples are ordered class by class.
Dataset gen_phantom_dataset(const std::vector<ClassProfile>& profiles, std::size_t n_per_class, std::size_t h,
                            std::size_t w, Rng& rng);

enum class Toy2DKind { ConditionalGaussians, TwoMoons };
Toy2DKind toy2d_kind_from_string(const std::string& s);
std::string to_string(Toy2DKind kind);

/// Points stored as [N,2,1,1]. Conditional Gaussians: class k ~ N(mu_k, I)
/// with mu_k at angle 2*pi*k/K on a circle of radius `separation`. Two
/// moons (K = 2): interleaved half circles with noise 0.1, scaled by
/// `separation`.
Dataset gen_toy2d(Toy2DKind kind, std::size_t num_classes, std::size_t n_per_class, double separation, Rng& rng);

/// Snaps [0,1] values to the grid k / (2^bits - 1).
Tensor quantize(const Tensor& images, int bits = 8);
/// Grid value k / (2^bits - 1) -> (k + u) / 2^bits with u ~ U[0,1).
/// floor(out * 2^bits) recovers k.
Tensor dequantize(const Tensor& images, Rng& rng, int bits = 8);

/// Log mean spectral power in `bands` equal-width radial frequency bands
/// (DC excluded), averaged over channels. Direct DFT.
std::vector<double> power_spectrum_statistic(const Tensor& image, std::size_t bands = 4);
/// Per-class mean of power_spectrum_statistic over a [N,C,H,W] stack.
std::vector<double> mean_power_spectrum(const Tensor& images, std::size_t bands = 4);

void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace mgf
