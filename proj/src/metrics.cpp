// SPDX-License-Identifier: Apache-2.0
#include "mgf/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <json.hpp>
#include <sstream>

#include "mgf/errors.hpp"
#include "mgf/tensor_io.hpp"

namespace mgf {

namespace {

std::size_t common_dim(const Vectors& a, const Vectors& b, const char* what, std::size_t min_rows) {
  if (a.size() < min_rows || b.size() < min_rows)
    throw ContractError(std::string(what) + ": need at least " + std::to_string(min_rows) + " vectors per set");
  const std::size_t d = a.front().size();
  if (d == 0) throw DimensionError(std::string(what) + ": empty vectors");
  for (const auto* set : {&a, &b})
    for (const auto& v : *set)
      if (v.size() != d)
        throw DimensionError(std::string(what) + ": vectors of dimension " + std::to_string(v.size()) + " and " +
                             std::to_string(d));
  return d;
}

Eigen::MatrixXd to_matrix(const Vectors& rows) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

void mean_cov(const Vectors& rows, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
  const Eigen::MatrixXd m = to_matrix(rows);
  mean = m.colwise().mean().transpose();
  const Eigen::MatrixXd c = m.rowwise() - mean.transpose();
  cov = (c.transpose() * c) / static_cast<double>(rows.size() - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError("fid: eigendecomposition did not converge");
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double poly_kernel(const std::vector<double>& a, const std::vector<double>& b, double d, int degree) {
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return std::pow(dot / d + 1.0, degree);
}

[[noreturn]] void rethrow_prefixed(const std::string& prefix) {
  try {
    throw;
  } catch (const DimensionError& e) {
    throw DimensionError(prefix + e.what());
  } catch (const ContractError& e) {
    throw ContractError(prefix + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(prefix + e.what());
  } catch (const std::exception& e) {
    throw Error(prefix + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------- embeddings

std::vector<double> Embedding::apply(const Tensor& image) const {
  if (image.size() != in_dim)
    throw DimensionError("embedding " + name + ": expected " + std::to_string(in_dim) + " inputs, got " +
                         std::to_string(image.size()));
  std::vector<double> x(image.values().begin(), image.values().end());
  if (!offset.empty())
    for (std::size_t i = 0; i < in_dim; ++i) x[i] -= offset[i];
  if (weight.empty()) return x;
  std::vector<double> out(out_dim, 0.0);
  for (std::size_t r = 0; r < out_dim; ++r)
    for (std::size_t c = 0; c < in_dim; ++c) out[r] += weight[r * in_dim + c] * x[c];
  return out;
}

Vectors Embedding::apply_all(const Tensor& stack) const {
  Vectors out;
  for (std::size_t n = 0; n < stack.dim(0); ++n) out.push_back(apply(stack.slice0(n)));
  return out;
}

Embedding identity_embedding(std::size_t in_dim) { return {"identity", in_dim, in_dim, {}, {}}; }

Embedding random_projection_embedding(std::size_t in_dim, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw ContractError("random projection: dim must be positive");
  Embedding e{"random-projection:" + std::to_string(dim) + ":" + std::to_string(seed), in_dim, dim, {}, {}};
  Rng rng(seed);
  e.weight.resize(dim * in_dim);
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  for (auto& w : e.weight) w = s * rng.normal();
  return e;
}

Embedding pca_embedding(const Vectors& fit, std::size_t dim) {
  if (fit.size() < 2) throw ContractError("pca: need at least two vectors");
  const std::size_t d = common_dim(fit, fit, "pca", 2);
  if (dim == 0 || dim > d) throw ContractError("pca: dim must be in [1, " + std::to_string(d) + "]");
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  mean_cov(fit, mean, cov);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw NumericalError("pca: eigendecomposition did not converge");
  Embedding e{"pca:" + std::to_string(dim), d, dim, std::vector<double>(dim * d), std::vector<double>(d)};
  for (std::size_t i = 0; i < d; ++i) e.offset[i] = mean(static_cast<Eigen::Index>(i));
  for (std::size_t r = 0; r < dim; ++r) {
    Eigen::VectorXd axis = es.eigenvectors().col(static_cast<Eigen::Index>(d - 1 - r));
    Eigen::Index big = 0;
    axis.cwiseAbs().maxCoeff(&big);
    if (axis(big) < 0.0) axis = -axis;
    for (std::size_t c = 0; c < d; ++c) e.weight[r * d + c] = axis(static_cast<Eigen::Index>(c));
  }
  return e;
}

Embedding make_embedding(const std::string& spec, std::size_t in_dim, const Vectors& fit) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  try {
    if (parts.size() == 1 && parts[0] == "identity") return identity_embedding(in_dim);
    if (parts.size() == 3 && parts[0] == "random-projection")
      return random_projection_embedding(in_dim, std::stoul(parts[1]), std::stoull(parts[2]));
    if (parts.size() == 2 && parts[0] == "pca") return pca_embedding(fit, std::stoul(parts[1]));
  } catch (const std::logic_error&) {
  }
  throw ConfigError("unknown embedding '" + spec + "' (identity | random-projection:<dim>:<seed> | pca:<dim>)");
}

Vectors flatten_rows(const Tensor& stack) {
  if (stack.rank() < 1) throw DimensionError("flatten_rows: need a stacked tensor");
  Vectors out;
  for (std::size_t n = 0; n < stack.dim(0); ++n) {
    const Tensor s = stack.slice0(n);
    out.emplace_back(s.values().begin(), s.values().end());
  }
  return out;
}

// ------------------------------------------------------------------- FID/KID

double fid_gaussian(const Vectors& real, const Vectors& fake) {
  common_dim(real, fake, "fid", 2);
  Eigen::VectorXd mr, mf;
  Eigen::MatrixXd cr, cf;
  mean_cov(real, mr, cr);
  mean_cov(fake, mf, cf);
  const Eigen::MatrixXd root_r = psd_sqrt(cr);
  const Eigen::MatrixXd inner = root_r * cf * root_r;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("fid: eigendecomposition did not converge");
  double tr_root = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double lam = es.eigenvalues()(i);
    if (lam > 0.0) tr_root += std::sqrt(lam);  // negatives are rounding noise
  }
  const double value = (mr - mf).squaredNorm() + cr.trace() + cf.trace() - 2.0 * tr_root;
  if (!std::isfinite(value)) throw NumericalError("fid: non-finite result");
  return std::max(value, 0.0);
}

double kid_poly(const Vectors& real, const Vectors& fake, int degree) {
  const double d = static_cast<double>(common_dim(real, fake, "kid", 2));
  if (degree < 1) throw ContractError("kid: degree must be positive");
  const std::size_t m = real.size(), n = fake.size();
  if (m == n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        acc += poly_kernel(real[i], real[j], d, degree) + poly_kernel(fake[i], fake[j], d, degree) -
               poly_kernel(real[i], fake[j], d, degree) - poly_kernel(real[j], fake[i], d, degree);
      }
    return acc / static_cast<double>(n * (n - 1));
  }
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (i != j) kxx += poly_kernel(real[i], real[j], d, degree);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) kyy += poly_kernel(fake[i], fake[j], d, degree);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) kxy += poly_kernel(real[i], fake[j], d, degree);
  return kxx / static_cast<double>(m * (m - 1)) + kyy / static_cast<double>(n * (n - 1)) -
         2.0 * kxy / static_cast<double>(m * n);
}

// ---------------------------------------------------------------------- PRDC

std::vector<double> knn_radii(const Vectors& set, std::size_t k) {
  if (k == 0 || set.size() <= k)
    throw ContractError("knn: need more than k = " + std::to_string(k) + " points, got " + std::to_string(set.size()));
  std::vector<double> radii(set.size());
  std::vector<double> d;
  for (std::size_t i = 0; i < set.size(); ++i) {
    d.clear();
    for (std::size_t j = 0; j < set.size(); ++j)
      if (j != i) d.push_back(distance(set[i], set[j]));
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
    radii[i] = d[k - 1];
  }
  return radii;
}

Prdc prdc(const Vectors& real, const Vectors& fake, std::size_t k) {
  common_dim(real, fake, "prdc", 1);
  const auto rr = knn_radii(real, k);
  const auto rf = knn_radii(fake, k);
  const std::size_t n = real.size(), m = fake.size();
  std::vector<double> cross(n * m);  // real i, fake j
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) cross[i * m + j] = distance(real[i], fake[j]);

  Prdc out;
  std::size_t precise = 0, balls = 0;
  for (std::size_t j = 0; j < m; ++j) {
    std::size_t inside = 0;
    for (std::size_t i = 0; i < n; ++i) inside += cross[i * m + j] < rr[i];
    precise += inside > 0;
    balls += inside;
  }
  std::size_t recalled = 0, covered = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool in_fake_ball = false;
    double nearest = cross[i * m];
    for (std::size_t j = 0; j < m; ++j) {
      in_fake_ball = in_fake_ball || cross[i * m + j] < rf[j];
      nearest = std::min(nearest, cross[i * m + j]);
    }
    recalled += in_fake_ball;
    covered += nearest < rr[i];
  }
  out.precision = static_cast<double>(precise) / static_cast<double>(m);
  out.recall = static_cast<double>(recalled) / static_cast<double>(n);
  out.density = std::min(1.0, static_cast<double>(balls) / static_cast<double>(k * m));
  out.coverage = static_cast<double>(covered) / static_cast<double>(n);
  return out;
}

// ------------------------------------------------------------------- MS-SSIM

namespace {

constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
constexpr std::size_t kWindow = 11;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> g{};
  double s = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double u = static_cast<double>(i) - 5.0;
    g[i] = std::exp(-u * u / (2.0 * 1.5 * 1.5));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

// Valid separable filtering of one h x w plane.
std::vector<double> filter_valid(const double* p, std::size_t h, std::size_t w) {
  static const auto g = gaussian_window();
  const std::size_t ho = h - kWindow + 1, wo = w - kWindow + 1;
  std::vector<double> rows(h * wo, 0.0), out(ho * wo, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < wo; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < kWindow; ++t) s += g[t] * p[i * w + j + t];
      rows[i * wo + j] = s;
    }
  for (std::size_t i = 0; i < ho; ++i)
    for (std::size_t j = 0; j < wo; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < kWindow; ++t) s += g[t] * rows[(i + t) * wo + j];
      out[i * wo + j] = s;
    }
  return out;
}

// Means of the contrast-structure map and of the full SSIM map.
std::pair<double, double> ssim_terms(const Tensor& a, const Tensor& b) {
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2), plane = h * w;
  double cs_sum = 0.0, ssim_sum = 0.0;
  std::size_t count = 0;
  std::vector<double> aa(plane), bb(plane), ab(plane);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* pa = a.data() + ch * plane;
    const double* pb = b.data() + ch * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, h, w), mu_b = filter_valid(pb, h, w);
    const auto f_aa = filter_valid(aa.data(), h, w), f_bb = filter_valid(bb.data(), h, w),
               f_ab = filter_valid(ab.data(), h, w);
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double va = f_aa[i] - mu_a[i] * mu_a[i];
      const double vb = f_bb[i] - mu_b[i] * mu_b[i];
      const double cov = f_ab[i] - mu_a[i] * mu_b[i];
      const double cs = (2.0 * cov + c2) / (va + vb + c2);
      const double lum = (2.0 * mu_a[i] * mu_b[i] + c1) / (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1);
      cs_sum += cs;
      ssim_sum += lum * cs;
      ++count;
    }
  }
  return {cs_sum / static_cast<double>(count), ssim_sum / static_cast<double>(count)};
}

Tensor downsample2(const Tensor& x) {
  const std::size_t c = x.dim(0), h = x.dim(1) / 2, w = x.dim(2) / 2;
  Tensor y({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        y.at(ch, i, j) = 0.25 * (x.at(ch, 2 * i, 2 * j) + x.at(ch, 2 * i, 2 * j + 1) + x.at(ch, 2 * i + 1, 2 * j) +
                                 x.at(ch, 2 * i + 1, 2 * j + 1));
  return y;
}

}  // namespace

int ms_ssim_levels(std::size_t h, std::size_t w, int requested) {
  if (requested < 1 || requested > 5) throw ContractError("ms_ssim: levels must be in [1,5]");
  const std::size_t side = std::min(h, w);
  if (side < kWindow) throw DimensionError("ms_ssim: images must be at least 11x11");
  int levels = requested;
  while (levels > 1 && side < (std::size_t{1} << (levels - 1)) * kWindow) --levels;
  return levels;
}

double ms_ssim(const Tensor& a, const Tensor& b, int levels, std::vector<std::string>* warnings) {
  if (a.shape() != b.shape() || a.rank() != 3)
    throw DimensionError("ms_ssim: images must share a [C,H,W] shape, got " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  const int used = ms_ssim_levels(a.dim(1), a.dim(2), levels);
  if (used != levels && warnings)
    warnings->push_back("ms_ssim: " + std::to_string(a.dim(1)) + "x" + std::to_string(a.dim(2)) +
                        " images support " + std::to_string(used) + " of " + std::to_string(levels) + " levels");
  double wsum = 0.0;
  for (int l = 0; l < used; ++l) wsum += kMsSsimWeights[static_cast<std::size_t>(l)];
  Tensor x = a, y = b;
  double result = 1.0;
  for (int l = 0; l < used; ++l) {
    const auto [cs, ssim] = ssim_terms(x, y);
    const double term = l + 1 == used ? ssim : cs;
    result *= std::pow(std::max(term, 0.0), kMsSsimWeights[static_cast<std::size_t>(l)] / wsum);
    if (l + 1 < used) {
      x = downsample2(x);
      y = downsample2(y);
    }
  }
  return std::clamp(result, 0.0, 1.0);
}

namespace {
std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}
}  // namespace

MsSsimReport msssim_report(const std::vector<Tensor>& by_class, std::size_t n_pairs, Rng& rng) {
  if (by_class.size() < 2) throw ContractError("msssim_report: need at least two classes");
  MsSsimReport r;
  std::vector<std::size_t> intra_classes;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    if (by_class[k].rank() != 4) throw DimensionError("msssim_report: class stacks must be [N,C,H,W]");
    if (by_class[k].dim(0) >= 2)
      intra_classes.push_back(k);
    else
      r.warnings.push_back("msssim_report: class " + std::to_string(k) + " has fewer than 2 samples, skipped for intra");
    if (by_class[k].dim(0) == 0) throw ContractError("msssim_report: class " + std::to_string(k) + " is empty");
  }
  std::vector<double> intra, inter;
  std::vector<std::string> level_notes;
  for (std::size_t p = 0; p < n_pairs && !intra_classes.empty(); ++p) {
    const std::size_t k = intra_classes[rng.below(intra_classes.size())];
    const std::size_t n = by_class[k].dim(0);
    const std::size_t i = rng.below(n);
    std::size_t j = rng.below(n - 1);
    if (j >= i) ++j;
    intra.push_back(ms_ssim(by_class[k].slice0(i), by_class[k].slice0(j), 5, &level_notes));
  }
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const std::size_t k1 = rng.below(by_class.size());
    std::size_t k2 = rng.below(by_class.size() - 1);
    if (k2 >= k1) ++k2;
    const std::size_t i = rng.below(by_class[k1].dim(0)), j = rng.below(by_class[k2].dim(0));
    inter.push_back(ms_ssim(by_class[k1].slice0(i), by_class[k2].slice0(j), 5, &level_notes));
  }
  if (!level_notes.empty()) r.warnings.push_back(level_notes.front());
  std::tie(r.intra_mean, r.intra_std) = mean_std(intra);
  std::tie(r.inter_mean, r.inter_std) = mean_std(inter);
  r.intra_pairs = intra.size();
  r.inter_pairs = inter.size();
  return r;
}

// ----------------------------------------------------------------- bootstrap

Interval bootstrap_ci(const SetMetric& metric, const Vectors& real, const Vectors& fake, std::size_t n_boot,
                      double alpha, Rng& rng) {
  if (n_boot < 50) throw ContractError("bootstrap: need at least 50 resamples");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ContractError("bootstrap: alpha must be in (0,1)");
  if (real.empty() || fake.empty()) throw ContractError("bootstrap: empty set");
  Interval iv;
  iv.point = metric(real, fake);
  std::vector<double> stats;
  stats.reserve(n_boot);
  Vectors r(real.size()), f(fake.size());
  for (std::size_t b = 0; b < n_boot; ++b) {
    Rng sub = rng.derive(b);
    for (auto& v : r) v = real[sub.below(real.size())];
    for (auto& v : f) v = fake[sub.below(fake.size())];
    try {
      stats.push_back(metric(r, f));
    } catch (...) {
      rethrow_prefixed("bootstrap resample " + std::to_string(b) + ": ");
    }
  }
  std::sort(stats.begin(), stats.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(stats.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, stats.size() - 1);
    return stats[lo] + (pos - static_cast<double>(lo)) * (stats[hi] - stats[lo]);
  };
  iv.lo = std::min(quantile(alpha / 2.0), iv.point);
  iv.hi = std::max(quantile(1.0 - alpha / 2.0), iv.point);
  return iv;
}

// -------------------------------------------------------------------- report

void MetricReport::add(const std::string& name, double value) { values.push_back({name, value, std::nullopt}); }

void MetricReport::add(const std::string& name, const Interval& iv) {
  values.push_back({name, iv.point, std::make_pair(iv.lo, iv.hi)});
}

const MetricValue& MetricReport::at(const std::string& name) const {
  for (const auto& v : values)
    if (v.name == name) return v;
  throw ContractError("metric report has no entry '" + name + "'");
}

std::string MetricReport::to_text() const {
  std::string out;
  for (const auto& v : values) {
    out += v.name + "=" + io::format_double(v.value);
    if (v.ci95) out += " ci95=" + io::format_double(v.ci95->first) + "," + io::format_double(v.ci95->second);
    out += "\n";
  }
  return out;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["embedding"] = embedding;
  j["seed"] = seed;
  j["n_real"] = n_real;
  j["n_fake"] = n_fake;
  auto& metrics = j["metrics"] = nlohmann::ordered_json::array();
  for (const auto& v : values) {
    nlohmann::ordered_json m;
    m["name"] = v.name;
    m["value"] = v.value;
    if (v.ci95) m["ci95"] = {v.ci95->first, v.ci95->second};
    metrics.push_back(m);
  }
  return j.dump(2) + "\n";
}

}  // namespace mgf
