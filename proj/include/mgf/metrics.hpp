// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mgf/rng.hpp"
#include "mgf/tensor.hpp"

namespace mgf {

/// One feature vector per row.
using Vectors = std::vector<std::vector<double>>;

// ---------------------------------------------------------------- embeddings

/// Affine feature map x -> W (x - offset), fixed output dimension.
struct Embedding {
  std::string name;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<double> weight;  // out_dim x in_dim, row-major; empty = identity
  std::vector<double> offset;  // in_dim; empty = zero

  std::vector<double> apply(const Tensor& image) const;
  /// Rows of a [N,...] stack.
  Vectors apply_all(const Tensor& stack) const;
};

Embedding identity_embedding(std::size_t in_dim);
/// Gaussian matrix with N(0, 1/dim) entries drawn from Rng(seed).
Embedding random_projection_embedding(std::size_t in_dim, std::size_t dim, std::uint64_t seed);
/// Top `dim` principal axes of `fit` (centered at its mean). Axis signs are
/// fixed so the largest-magnitude component is positive.
Embedding pca_embedding(const Vectors& fit, std::size_t dim);
/// Parses "identity", "random-projection:<dim>:<seed>" or "pca:<dim>".
Embedding make_embedding(const std::string& spec, std::size_t in_dim, const Vectors& fit);

/// Flattens every sample of a [N,...] stack.
Vectors flatten_rows(const Tensor& stack);

// ------------------------------------------------------------------- metrics

/// ||mu_r - mu_f||^2 + tr(S_r + S_f - 2 (S_r S_f)^{1/2}) with unbiased
/// sample covariances. The trace of the root is taken from the eigenvalues
/// of the symmetric S_r^{1/2} S_f S_r^{1/2}; small negative eigenvalues
/// are clamped to 0.
double fid_gaussian(const Vectors& real, const Vectors& fake);

/// Unbiased squared MMD with k(a,b) = (a.b/d + 1)^degree. Equal set sizes
/// use the paired U-statistic form (exactly 0 on identical sets).
double kid_poly(const Vectors& real, const Vectors& fake, int degree = 3);

struct Prdc {
  double precision = 0.0, recall = 0.0, density = 0.0, coverage = 0.0;
};
/// Euclidean k-NN balls (strict inequality); density clamped to 1.
Prdc prdc(const Vectors& real, const Vectors& fake, std::size_t k = 5);
/// Distance from each point to its k-th nearest neighbour in the same set.
std::vector<double> knn_radii(const Vectors& set, std::size_t k);

/// MS-SSIM over [C,H,W] images with dynamic range 1, 11x11 Gaussian window
/// (sigma 1.5, valid filtering) and 2x2 mean downsampling. When the image
/// is too small for `levels` scales the level count is reduced (a note is
/// appended to `warnings`) and the leading exponents are renormalized.
/// Negative contrast-structure terms are clamped to 0.
double ms_ssim(const Tensor& a, const Tensor& b, int levels = 5, std::vector<std::string>* warnings = nullptr);
/// Number of scales actually used for an h x w image.
int ms_ssim_levels(std::size_t h, std::size_t w, int requested);

struct MsSsimReport {
  double intra_mean = 0.0, intra_std = 0.0;
  double inter_mean = 0.0, inter_std = 0.0;
  std::size_t intra_pairs = 0, inter_pairs = 0;
  std::vector<std::string> warnings;
};
/// `by_class[k]` holds class k's images [N_k,C,H,W]. Intra pairs pick a
/// class uniformly among those with >= 2 samples, then two distinct
/// samples; inter pairs pick two distinct classes and one sample of each.
MsSsimReport msssim_report(const std::vector<Tensor>& by_class, std::size_t n_pairs, Rng& rng);

struct Interval {
  double point = 0.0, lo = 0.0, hi = 0.0;
};
using SetMetric = std::function<double(const Vectors&, const Vectors&)>;
/// Percentile bootstrap: resample both sets with replacement at their
/// original sizes (resample b uses rng.derive(b)), linear-interpolated
/// quantiles at alpha/2 and 1 - alpha/2, widened if needed so that
/// lo <= point <= hi.
Interval bootstrap_ci(const SetMetric& metric, const Vectors& real, const Vectors& fake, std::size_t n_boot,
                      double alpha, Rng& rng);

// -------------------------------------------------------------------- report

struct MetricValue {
  std::string name;
  double value = 0.0;
  std::optional<std::pair<double, double>> ci95;
};

struct MetricReport {
  std::vector<MetricValue> values;
  std::size_t n_real = 0, n_fake = 0;
  std::string embedding;
  std::uint64_t seed = 0;

  void add(const std::string& name, double value);
  void add(const std::string& name, const Interval& iv);
  const MetricValue& at(const std::string& name) const;
  /// One `<name>=<value>[ ci95=<lo>,<hi>]` line per metric.
  std::string to_text() const;
  std::string to_json() const;
};

}  // namespace mgf
