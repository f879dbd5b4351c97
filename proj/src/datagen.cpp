// SPDX-License-Identifier: Apache-2.0
#include "mgf/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mgf/errors.hpp"
#include "mgf/tensor_io.hpp"

namespace mgf {

std::size_t Dataset::num_classes() const {
  std::size_t k = 0;
  for (auto l : labels) k = std::max(k, l + 1);
  return k;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset d;
  d.split = split;
  d.meta = meta;
  std::vector<Tensor> items;
  for (auto i : indices) {
    if (i >= size()) throw ContractError("dataset index out of range");
    items.push_back(image(i));
    d.labels.push_back(labels[i]);
  }
  d.images = stack(items);
  return d;
}

std::vector<ClassProfile> scanner_profiles() {
  return {{0, 0.02, 0.0, 0.0, 0}, {1, 0.08, 0.0, 0.1, 0}, {2, 0.02, 1.5, 0.2, 0}};
}

std::vector<ClassProfile> null_profiles(std::size_t k) {
  std::vector<ClassProfile> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back({i, 0.0, 0.0, 0.0, 0});
  return out;
}

namespace {

struct Ellipse {
  double cu, cv, au, av, value;
};

// Normalized coordinates: u, v in [-1, 1] across the image.
constexpr Ellipse kAnatomy[] = {
    {0.0, 0.0, 0.75, 0.9, 0.55},    // outer contour
    {0.0, 0.05, 0.6, 0.72, 0.8},    // inner tissue
    {-0.2, -0.1, 0.12, 0.28, 0.3},  // left cavity
    {0.2, -0.1, 0.12, 0.28, 0.3},   // right cavity
};
constexpr double kBackground = 0.1;

Tensor gaussian_kernel(double sigma) {
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  Tensor k({2 * radius + 1});
  double total = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += k[i];
  }
  for (auto& v : k.values()) v /= total;
  return k;
}

// Separable blur with edge replication.
void blur(std::vector<double>& img, std::size_t h, std::size_t w, double sigma) {
  if (sigma <= 0.0) return;
  const Tensor k = gaussian_kernel(sigma);
  const auto r = static_cast<long>(k.size() / 2);
  std::vector<double> tmp(img.size());
  auto clampi = [](long v, long n) { return std::clamp(v, 0L, n - 1); };
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double s = 0.0;
      for (long d = -r; d <= r; ++d)
        s += k[static_cast<std::size_t>(d + r)] *
             img[i * w + static_cast<std::size_t>(clampi(static_cast<long>(j) + d, static_cast<long>(w)))];
      tmp[i * w + j] = s;
    }
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double s = 0.0;
      for (long d = -r; d <= r; ++d)
        s += k[static_cast<std::size_t>(d + r)] *
             tmp[static_cast<std::size_t>(clampi(static_cast<long>(i) + d, static_cast<long>(h))) * w + j];
      img[i * w + j] = s;
    }
}

std::vector<double> render_phantom(const ClassProfile& p, std::size_t h, std::size_t w, Rng& rng) {
  const double dx = rng.uniform(-2.0, 2.0), dy = rng.uniform(-2.0, 2.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double hh = static_cast<double>(h) / 2.0, hw = static_cast<double>(w) / 2.0;
  std::vector<double> img(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double u = (static_cast<double>(j) + 0.5 - hw - dx) / hw;
      const double v = (static_cast<double>(i) + 0.5 - hh - dy) / hh;
      double val = kBackground;
      for (const auto& e : kAnatomy) {
        const double a = (u - e.cu) / e.au, b = (v - e.cv) / e.av;
        if (a * a + b * b <= 1.0) val = e.value;
      }
      // Low-order cosine surface; u, v refer to the unjittered frame.
      const double u0 = (static_cast<double>(j) + 0.5 - hw) / hw, v0 = (static_cast<double>(i) + 0.5 - hh) / hh;
      const double field = p.bias_amplitude * std::cos(std::numbers::pi * 0.5 * (u0 + v0) + phase);
      img[i * w + j] = val * (1.0 + field);
    }
  blur(img, h, w, p.blur_sigma);
  for (auto& v : img) v = std::clamp(v + p.noise_std * rng.normal(), 0.0, 1.0);
  return img;
}

}  // namespace

Dataset gen_phantom_dataset(const std::vector<ClassProfile>& profiles, std::size_t n_per_class, std::size_t h,
                            std::size_t w, Rng& rng) {
  if (profiles.empty()) throw ContractError("gen_phantom_dataset: no class profiles");
  if (n_per_class == 0 || h == 0 || w == 0) throw ContractError("gen_phantom_dataset: empty geometry");
  for (const auto& p : profiles)
    if (p.noise_std < 0.0 || p.blur_sigma < 0.0 || p.bias_amplitude < 0.0 || p.bias_amplitude >= 1.0)
      throw ContractError("gen_phantom_dataset: profile " + std::to_string(p.label) + " out of range");
  Dataset d;
  d.images = Tensor({profiles.size() * n_per_class, 1, h, w});
  std::size_t n = 0;
  for (const auto& p : profiles) {
    const Rng base = rng.derive((static_cast<std::uint64_t>(p.label) << 32) ^ p.seed_offset);
    for (std::size_t i = 0; i < n_per_class; ++i, ++n) {
      Rng srng = base.derive(i);
      const auto img = render_phantom(p, h, w, srng);
      std::copy(img.begin(), img.end(), d.images.values().begin() + static_cast<std::ptrdiff_t>(n * h * w));
      d.labels.push_back(p.label);
    }
  }
  d.images = quantize(d.images, 8);
  d.meta.emplace_back("generator", "phantom");
  d.meta.emplace_back("seed", std::to_string(rng.seed()));
  d.meta.emplace_back("n_per_class", std::to_string(n_per_class));
  for (const auto& p : profiles) {
    std::ostringstream s;
    s << "noise=" << io::format_double(p.noise_std) << ",blur=" << io::format_double(p.blur_sigma)
      << ",bias=" << io::format_double(p.bias_amplitude) << ",offset=" << p.seed_offset;
    d.meta.emplace_back("profile" + std::to_string(p.label), s.str());
  }
  return d;
}

Toy2DKind toy2d_kind_from_string(const std::string& s) {
  if (s == "conditional-gaussians") return Toy2DKind::ConditionalGaussians;
  if (s == "two-moons-conditional") return Toy2DKind::TwoMoons;
  throw ConfigError("unknown toy kind '" + s + "'");
}

std::string to_string(Toy2DKind kind) {
  return kind == Toy2DKind::ConditionalGaussians ? "conditional-gaussians" : "two-moons-conditional";
}

Dataset gen_toy2d(Toy2DKind kind, std::size_t num_classes, std::size_t n_per_class, double separation, Rng& rng) {
  if (num_classes == 0 || n_per_class == 0) throw ContractError("gen_toy2d: empty dataset");
  if (kind == Toy2DKind::ConditionalGaussians && !(separation >= 0.0))
    throw ContractError("gen_toy2d: separation must be non-negative");
  if (kind == Toy2DKind::TwoMoons && num_classes != 2) throw ContractError("gen_toy2d: two moons needs K = 2");
  Dataset d;
  d.images = Tensor({num_classes * n_per_class, 2, 1, 1});
  std::size_t n = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (std::size_t i = 0; i < n_per_class; ++i, ++n) {
      double x = 0.0, y = 0.0;
      if (kind == Toy2DKind::ConditionalGaussians) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(num_classes);
        x = separation * std::cos(angle) + rng.normal();
        y = separation * std::sin(angle) + rng.normal();
      } else {
        const double t = rng.uniform(0.0, std::numbers::pi);
        if (k == 0) {
          x = std::cos(t), y = std::sin(t);
        } else {
          x = 1.0 - std::cos(t), y = 0.5 - std::sin(t);
        }
        x = separation * (x - 0.5 + 0.1 * rng.normal());
        y = separation * (y - 0.25 + 0.1 * rng.normal());
      }
      d.images[2 * n] = x;
      d.images[2 * n + 1] = y;
      d.labels.push_back(k);
    }
  }
  d.meta.emplace_back("generator", to_string(kind));
  d.meta.emplace_back("seed", std::to_string(rng.seed()));
  d.meta.emplace_back("separation", io::format_double(separation));
  d.meta.emplace_back("n_per_class", std::to_string(n_per_class));
  return d;
}

Tensor quantize(const Tensor& images, int bits) {
  if (bits < 1 || bits > 16) throw ContractError("quantize: bits must be in [1,16]");
  const double levels = std::ldexp(1.0, bits) - 1.0;
  Tensor out(images.shape());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const double v = images[i];
    if (v < 0.0 || v > 1.0) throw ContractError("quantize: value outside [0,1]");
    out[i] = std::round(v * levels) / levels;
  }
  return out;
}

Tensor dequantize(const Tensor& images, Rng& rng, int bits) {
  if (bits < 1 || bits > 16) throw ContractError("dequantize: bits must be in [1,16]");
  const double levels = std::ldexp(1.0, bits);
  Tensor out(images.shape());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const double k = images[i] * (levels - 1.0);
    const double kr = std::round(k);
    if (kr < 0.0 || kr > levels - 1.0 || std::abs(k - kr) > 1e-6)
      throw ContractError("dequantize: value " + io::format_double(images[i]) + " is not on the " +
                          std::to_string(bits) + "-bit grid");
    out[i] = (kr + rng.uniform()) / levels;
  }
  return out;
}

std::vector<double> power_spectrum_statistic(const Tensor& image, std::size_t bands) {
  if (image.rank() != 3) throw DimensionError("power spectrum expects [C,H,W]");
  if (bands == 0) throw ContractError("power spectrum needs at least one band");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const double pi2 = 2.0 * std::numbers::pi;
  std::vector<double> power(bands, 0.0);
  std::vector<std::size_t> count(bands, 0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    // Row transform then column transform.
    std::vector<double> rre(h * w), rim(h * w);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t kv = 0; kv < w; ++kv) {
        double sr = 0.0, si = 0.0;
        for (std::size_t j = 0; j < w; ++j) {
          const double a = -pi2 * static_cast<double>(kv * j % w) / static_cast<double>(w);
          const double v = image.at(ch, i, j);
          sr += v * std::cos(a);
          si += v * std::sin(a);
        }
        rre[i * w + kv] = sr;
        rim[i * w + kv] = si;
      }
    for (std::size_t ku = 0; ku < h; ++ku)
      for (std::size_t kv = 0; kv < w; ++kv) {
        double sr = 0.0, si = 0.0;
        for (std::size_t i = 0; i < h; ++i) {
          const double a = -pi2 * static_cast<double>(ku * i % h) / static_cast<double>(h);
          const double cr = std::cos(a), ci = std::sin(a);
          sr += rre[i * w + kv] * cr - rim[i * w + kv] * ci;
          si += rre[i * w + kv] * ci + rim[i * w + kv] * cr;
        }
        if (ku == 0 && kv == 0) continue;
        const double fu = static_cast<double>(std::min(ku, h - ku)) / static_cast<double>(h);
        const double fv = static_cast<double>(std::min(kv, w - kv)) / static_cast<double>(w);
        const double r = std::sqrt(fu * fu + fv * fv) / (0.5 * std::sqrt(2.0));
        const auto band = std::min(bands - 1, static_cast<std::size_t>(r * static_cast<double>(bands)));
        power[band] += (sr * sr + si * si) / static_cast<double>(h * w);
        ++count[band];
      }
  }
  std::vector<double> out(bands);
  for (std::size_t b = 0; b < bands; ++b)
    out[b] = count[b] ? std::log(power[b] / static_cast<double>(count[b]) + 1e-12) : 0.0;
  return out;
}

std::vector<double> mean_power_spectrum(const Tensor& images, std::size_t bands) {
  if (images.rank() != 4 || images.dim(0) == 0) throw DimensionError("mean power spectrum expects [N,C,H,W]");
  std::vector<double> acc(bands, 0.0);
  for (std::size_t n = 0; n < images.dim(0); ++n) {
    const auto s = power_spectrum_statistic(images.slice0(n), bands);
    for (std::size_t b = 0; b < bands; ++b) acc[b] += s[b];
  }
  for (auto& v : acc) v /= static_cast<double>(images.dim(0));
  return acc;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  Tensor labels({data.size()});
  for (std::size_t i = 0; i < data.size(); ++i) labels[i] = static_cast<double>(data.labels[i]);
  io::write_ten(dir / "images.ten", data.images);
  io::write_ten(dir / "labels.ten", labels);
  std::string meta = "split=" + data.split + "\n";
  for (const auto& [k, v] : data.meta) meta += k + "=" + v + "\n";
  io::write_text_atomic(dir / "meta.txt", meta);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.images = io::read_ten(dir / "images.ten");
  const Tensor labels = io::read_ten(dir / "labels.ten");
  if (d.images.rank() != 4 || labels.rank() != 1 || labels.size() != d.images.dim(0))
    throw DimensionError("dataset " + dir.string() + ": images must be [N,C,H,W] with N labels");
  for (double v : labels.values()) {
    if (v < 0.0 || v != std::floor(v)) throw ContractError("dataset " + dir.string() + ": bad label value");
    d.labels.push_back(static_cast<std::size_t>(v));
  }
  std::ifstream meta(dir / "meta.txt");
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    if (line.substr(0, eq) == "split")
      d.split = line.substr(eq + 1);
    else
      d.meta.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return d;
}

}  // namespace mgf
