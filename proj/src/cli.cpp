// SPDX-License-Identifier: Apache-2.0
#include "mgf/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <ostream>
#include <sstream>

#include "mgf/attribution.hpp"
#include "mgf/checkpoint.hpp"
#include "mgf/errors.hpp"
#include "mgf/metrics.hpp"
#include "mgf/tensor_io.hpp"
#include "mgf/training.hpp"

namespace fs = std::filesystem;

namespace mgf {

namespace {

std::uint64_t parse_seed(const std::string& text, const std::string& what) {
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || text[0] == '-')
    throw ConfigError(what + ": expected a non-negative integer seed, got '" + text + "'");
  return v;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// One named image to process.
struct NamedImage {
  std::string name;
  std::string stem;  // file-name friendly
  Tensor image;
  std::optional<std::size_t> label;
};

std::vector<NamedImage> read_inputs(const std::vector<std::string>& inputs) {
  std::vector<NamedImage> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      const Dataset d = load_dataset(p);
      const std::string base = p.filename().empty() ? p.parent_path().filename().string() : p.filename().string();
      for (std::size_t i = 0; i < d.size(); ++i)
        out.push_back({in + "#" + std::to_string(i), base + "_" + std::to_string(i), d.image(i), d.labels[i]});
    } else if (p.extension() == ".pgm") {
      out.push_back({in, p.stem().string(), io::read_pgm(p), std::nullopt});
    } else if (p.extension() == ".ten") {
      const Tensor t = io::read_ten(p);
      if (t.rank() == 4) {
        for (std::size_t i = 0; i < t.dim(0); ++i)
          out.push_back({in + "#" + std::to_string(i), p.stem().string() + "_" + std::to_string(i), t.slice0(i),
                         std::nullopt});
      } else {
        out.push_back({in, p.stem().string(), t, std::nullopt});
      }
    } else {
      throw IoError("unsupported input " + in + " (expected a dataset directory, .ten or .pgm)");
    }
  }
  if (out.empty()) throw ContractError("no input images");
  return out;
}

Dataset read_set(const std::string& path) {
  const fs::path p(path);
  if (fs::is_directory(p)) return load_dataset(p);
  Dataset d;
  d.images = io::read_ten(p);
  if (d.images.rank() != 4) throw DimensionError(path + ": expected an [N,C,H,W] stack");
  d.labels.assign(d.images.dim(0), 0);
  return d;
}

FlowModel open_model(const std::string& checkpoint, const std::string& config_path) {
  if (config_path.empty()) return load_checkpoint(checkpoint);
  return load_checkpoint(checkpoint, load_run_config(config_path).model);
}

void check_shape(const FlowModel& m, const Tensor& x, const std::string& name) {
  if (x.shape() != m.config.input_shape)
    throw DimensionError(name + ": image shape " + shape_string(x.shape()) + " does not match the model input " +
                         shape_string(m.config.input_shape));
}

// ------------------------------------------------------------- subcommands

struct TrainArgs {
  std::string config, output, seed;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = load_run_config(a.config);
  cfg.seed = resolve_seed(a.seed, cfg.seed);
  cfg.model.seed = cfg.seed;
  if (!a.output.empty()) cfg.output = a.output;
  const RunDatasets data = make_datasets(cfg);
  FlowModel model = build_model(cfg.model);
  TrainOptions opts = cfg.train;
  opts.seed = Rng(cfg.seed).derive(3).next_u64();
  opts.log = &out;
  const TrainHistory h = train(model, data.train, opts);

  ensure_dir(cfg.output);
  save_checkpoint(model, cfg.output / "model.mgfc");
  io::write_text_atomic(cfg.output / "run.ini", run_config_to_text(cfg));
  std::string history;
  for (std::size_t e = 0; e < h.epoch_nll.size(); ++e)
    history += "epoch=" + std::to_string(e + 1) + " nll=" + fmt6(h.epoch_nll[e]) + "\n";
  io::write_text_atomic(cfg.output / "history.txt", history);

  std::string metrics;
  if (!h.epoch_nll.empty()) metrics += "first_epoch_nll=" + fmt6(h.epoch_nll.front()) + "\n";
  metrics += "train_nll=" + fmt6(mean_nll(model, data.train)) + "\n";
  if (data.test.size() > 0) {
    metrics += "test_nll=" + fmt6(mean_nll(model, data.test)) + "\n";
    metrics += "test_accuracy=" + fmt6(accuracy(model, data.test)) + "\n";
  }
  io::write_text_atomic(cfg.output / "metrics.txt", metrics);
  out << metrics << "checkpoint=" << (cfg.output / "model.mgfc").string() << "\n";
  return kExitOk;
}

struct DataArgs {
  std::string config, output, seed, split = "train";
};

int cmd_generate(const DataArgs& a, std::ostream& out) {
  RunConfig cfg = load_run_config(a.config);
  cfg.seed = resolve_seed(a.seed, cfg.seed);
  if (cfg.data.kind == DataKind::Directory) throw ConfigError("generate-data needs a toy2d or phantom [data] section");
  if (a.split != "train" && a.split != "test") throw ConfigError("--split must be train or test");
  RunDatasets d = make_datasets(cfg);
  Dataset& chosen = a.split == "train" ? d.train : d.test;
  if (chosen.size() == 0) throw ConfigError("the config produces no " + a.split + " split");
  save_dataset(chosen, a.output);
  out << "wrote " << chosen.size() << " samples to " << a.output << "\n";
  return kExitOk;
}

struct SampleArgs {
  std::string checkpoint, config, output, seed;
  std::vector<std::size_t> labels;
  std::size_t n = 8;
  double temperature = 1.0;
};

int cmd_sample(const SampleArgs& a, std::ostream& out) {
  const FlowModel model = open_model(a.checkpoint, a.config);
  const std::uint64_t seed = resolve_seed(a.seed, model.config.seed);
  std::vector<std::size_t> labels = a.labels;
  if (labels.empty())
    for (std::size_t k = 0; k < model.config.num_classes; ++k) labels.push_back(k);
  ensure_dir(a.output);
  const Shape& s = model.config.input_shape;
  std::vector<Tensor> all;
  Dataset set;
  for (std::size_t label : labels) {
    if (label >= model.config.num_classes)
      throw ContractError("--label " + std::to_string(label) + " outside [0," +
                          std::to_string(model.config.num_classes) + ")");
    Rng rng = Rng(seed).derive(label);
    for (std::size_t i = 0; i < a.n; ++i) {
      const Tensor x = sample(model, label, rng, a.temperature);
      char stem[64];
      std::snprintf(stem, sizeof stem, "sample_y%zu_%03zu", label, i);
      io::write_ten(fs::path(a.output) / (std::string(stem) + ".ten"), x);
      io::write_pgm(fs::path(a.output) / (std::string(stem) + ".pgm"), s[2], s[0] * s[1], io::to_gray8(x));
      all.push_back(x);
      set.labels.push_back(label);
    }
  }
  set.images = stack(all);
  set.split = "generated";
  set.meta = {{"checkpoint", a.checkpoint}, {"seed", std::to_string(seed)},
              {"temperature", io::format_double(a.temperature)}};
  save_dataset(set, a.output);
  out << "wrote " << all.size() << " samples to " << a.output << "\n";
  return kExitOk;
}

struct ClassifyArgs {
  std::string checkpoint, config, output;
  std::vector<std::string> inputs;
};

int cmd_classify(const ClassifyArgs& a, std::ostream& out) {
  const FlowModel model = open_model(a.checkpoint, a.config);
  const auto images = read_inputs(a.inputs);
  std::string csv;
  std::size_t labelled = 0, correct = 0;
  for (const auto& im : images) {
    check_shape(model, im.image, im.name);
    const Classification c = classify(model, im.image);
    csv += im.name + "," + std::to_string(c.label);
    for (double s : c.scores) csv += "," + io::format_double(s);
    csv += "\n";
    if (im.label) {
      ++labelled;
      correct += *im.label == c.label;
    }
  }
  io::write_text_atomic(a.output, csv);
  out << "classified=" << images.size() << "\n";
  if (labelled > 0) out << "accuracy=" << fmt6(static_cast<double>(correct) / static_cast<double>(labelled)) << "\n";
  return kExitOk;
}

struct AttributeArgs {
  std::string checkpoint, config, output;
  std::vector<std::string> inputs;
  std::optional<std::size_t> label;
};

int cmd_attribute(const AttributeArgs& a, std::ostream& out) {
  const FlowModel model = open_model(a.checkpoint, a.config);
  const auto images = read_inputs(a.inputs);
  ensure_dir(a.output);
  for (const auto& im : images) {
    check_shape(model, im.image, im.name);
    // Without --label, explain the predicted class.
    const std::size_t label = a.label ? *a.label : classify(model, im.image).label;
    const AttributionMap map = attribution_map(model, im.image, label);
    export_heatmap(map, fs::path(a.output) / (im.stem + "_y" + std::to_string(label)));
    out << im.name << "," << label << "," << io::format_double(map.total) << "\n";
  }
  return kExitOk;
}

struct EvaluateArgs {
  std::string real, fake, embedding = "identity", output, seed;
  std::size_t k = 5, bootstrap = 0, pairs = 500;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
  const Dataset real = read_set(a.real), fake = read_set(a.fake);
  if (real.image_shape() != fake.image_shape())
    throw DimensionError("evaluate: real images " + shape_string(real.image_shape()) + " vs generated " +
                         shape_string(fake.image_shape()));
  const std::uint64_t seed = resolve_seed(a.seed, 0);
  const Vectors real_flat = flatten_rows(real.images);
  const Embedding emb = make_embedding(a.embedding, real_flat.front().size(), real_flat);
  const Vectors r = emb.apply_all(real.images), f = emb.apply_all(fake.images);

  MetricReport rep;
  rep.embedding = emb.name;
  rep.seed = seed;
  rep.n_real = r.size();
  rep.n_fake = f.size();
  const SetMetric kid = [](const Vectors& x, const Vectors& y) { return kid_poly(x, y); };
  if (a.bootstrap > 0) {
    Rng rf = Rng(seed).derive(1), rk = Rng(seed).derive(2);
    rep.add("fid", bootstrap_ci(fid_gaussian, r, f, a.bootstrap, 0.05, rf));
    rep.add("kid", bootstrap_ci(kid, r, f, a.bootstrap, 0.05, rk));
  } else {
    rep.add("fid", fid_gaussian(r, f));
    rep.add("kid", kid(r, f));
  }
  const Prdc p = prdc(r, f, a.k);
  rep.add("precision", p.precision);
  rep.add("recall", p.recall);
  rep.add("density", p.density);
  rep.add("coverage", p.coverage);

  const Shape s = fake.image_shape();
  const std::size_t classes = fake.num_classes();
  if (std::min(s[1], s[2]) >= 11 && classes >= 2) {
    std::vector<Tensor> by_class;
    for (std::size_t k = 0; k < classes; ++k) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < fake.size(); ++i)
        if (fake.labels[i] == k) idx.push_back(i);
      if (idx.empty()) continue;
      Tensor imgs = fake.subset(idx).images;
      for (auto& v : imgs.values()) v = std::clamp(v, 0.0, 1.0);
      by_class.push_back(std::move(imgs));
    }
    Rng rm = Rng(seed).derive(3);
    const MsSsimReport ms = msssim_report(by_class, a.pairs, rm);
    for (const auto& w : ms.warnings) err << "warning: " << w << "\n";
    rep.add("msssim_intra", ms.intra_mean);
    rep.add("msssim_intra_std", ms.intra_std);
    rep.add("msssim_inter", ms.inter_mean);
    rep.add("msssim_inter_std", ms.inter_std);
  } else {
    err << "warning: ms-ssim skipped (needs images of at least 11x11 and two labelled classes)\n";
  }
  out << rep.to_text();
  if (!a.output.empty()) {
    io::write_text_atomic(a.output + ".txt", rep.to_text());
    io::write_text_atomic(a.output + ".json", rep.to_json());
  }
  return kExitOk;
}

}  // namespace

std::uint64_t resolve_seed(const std::string& flag, std::uint64_t fallback) {
  if (!flag.empty()) return parse_seed(flag, "--seed");
  if (const char* env = std::getenv("MAGICFLOW_SEED"); env && *env) return parse_seed(env, "MAGICFLOW_SEED");
  return fallback;
}

RunDatasets make_datasets(const RunConfig& cfg) {
  RunDatasets d;
  const std::size_t k = cfg.model.num_classes;
  Rng train_rng = Rng(cfg.seed).derive(1), test_rng = Rng(cfg.seed).derive(2);
  switch (cfg.data.kind) {
    case DataKind::Toy2D:
      if (cfg.model.input_shape != Shape{2, 1, 1}) throw ConfigError("toy2d data needs [model] input_shape = 2,1,1");
      d.train = gen_toy2d(cfg.data.generator, k, cfg.data.n_per_class, cfg.data.separation, train_rng);
      if (cfg.data.test_per_class > 0)
        d.test = gen_toy2d(cfg.data.generator, k, cfg.data.test_per_class, cfg.data.separation, test_rng);
      break;
    case DataKind::Phantom: {
      const Shape& s = cfg.model.input_shape;
      if (s[0] != 1) throw ConfigError("phantom data is single-channel; set [model] input_shape = 1,H,W");
      auto profiles = cfg.data.profiles == "null" ? null_profiles(k) : scanner_profiles();
      if (profiles.size() != k)
        throw ConfigError("profiles = scanner defines " + std::to_string(profiles.size()) +
                          " classes but [model] num_classes = " + std::to_string(k));
      d.train = gen_phantom_dataset(profiles, cfg.data.n_per_class, s[1], s[2], train_rng);
      if (cfg.data.test_per_class > 0)
        d.test = gen_phantom_dataset(profiles, cfg.data.test_per_class, s[1], s[2], test_rng);
      break;
    }
    case DataKind::Directory:
      d.train = load_dataset(cfg.data.train_dir);
      if (!cfg.data.test_dir.empty()) d.test = load_dataset(cfg.data.test_dir);
      break;
  }
  d.test.split = "test";
  for (const Dataset* set : {&d.train, &d.test}) {
    if (set->size() == 0) continue;
    if (set->image_shape() != cfg.model.input_shape)
      throw DimensionError("dataset images " + shape_string(set->image_shape()) + " do not match [model] input_shape " +
                           shape_string(cfg.model.input_shape));
    for (std::size_t y : set->labels)
      if (y >= k) throw ContractError("dataset label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
  }
  if (d.train.size() == 0) throw ContractError("empty training set");
  return d;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conditional normalizing flows: training, sampling, classification and attribution", "magicflow"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", ta.config, "Run config (.ini)")->required();
  train_cmd->add_option("--output", ta.output, "Output directory (overrides [run] output)");
  train_cmd->add_option("--seed", ta.seed, "Seed (overrides MAGICFLOW_SEED and [run] seed)");

  DataArgs da;
  auto* gen_cmd = app.add_subcommand("generate-data", "Write the dataset a config describes");
  gen_cmd->add_option("--config", da.config, "Run config (.ini)")->required();
  gen_cmd->add_option("--output", da.output, "Dataset directory")->required();
  gen_cmd->add_option("--split", da.split, "train | test");
  gen_cmd->add_option("--seed", da.seed, "Seed");

  SampleArgs sa;
  auto* sample_cmd = app.add_subcommand("sample", "Draw class-conditional samples");
  sample_cmd->add_option("--checkpoint", sa.checkpoint, "Model checkpoint")->required();
  sample_cmd->add_option("--output", sa.output, "Output directory")->required();
  sample_cmd->add_option("--label", sa.labels, "Class label(s); default all");
  sample_cmd->add_option("--n", sa.n, "Samples per label");
  sample_cmd->add_option("--temperature", sa.temperature, "Latent temperature");
  sample_cmd->add_option("--seed", sa.seed, "Seed");
  sample_cmd->add_option("--config", sa.config, "Run config to check against the checkpoint");

  ClassifyArgs ca;
  auto* classify_cmd = app.add_subcommand("classify", "Argmax-likelihood classification");
  classify_cmd->add_option("--checkpoint", ca.checkpoint, "Model checkpoint")->required();
  classify_cmd->add_option("--input", ca.inputs, "Dataset directories, .ten or .pgm files")->required();
  classify_cmd->add_option("--output", ca.output, "Results CSV")->required();
  classify_cmd->add_option("--config", ca.config, "Run config to check against the checkpoint");

  AttributeArgs aa;
  auto* attr_cmd = app.add_subcommand("attribute", "Likelihood attribution maps");
  attr_cmd->add_option("--checkpoint", aa.checkpoint, "Model checkpoint")->required();
  attr_cmd->add_option("--input", aa.inputs, "Dataset directories, .ten or .pgm files")->required();
  attr_cmd->add_option("--output", aa.output, "Output directory")->required();
  attr_cmd->add_option("--label", aa.label, "Conditioning label (default: predicted class)");
  attr_cmd->add_option("--config", aa.config, "Run config to check against the checkpoint");

  EvaluateArgs ea;
  auto* eval_cmd = app.add_subcommand("evaluate", "Compare a real and a generated set");
  eval_cmd->add_option("--real", ea.real, "Real set (dataset directory or [N,C,H,W] .ten)")->required();
  eval_cmd->add_option("--fake", ea.fake, "Generated set")->required();
  eval_cmd->add_option("--embedding", ea.embedding, "identity | random-projection:<dim>:<seed> | pca:<dim>");
  eval_cmd->add_option("--k", ea.k, "PRDC neighbourhood size");
  eval_cmd->add_option("--bootstrap", ea.bootstrap, "Bootstrap resamples for FID/KID intervals (0 = off)");
  eval_cmd->add_option("--pairs", ea.pairs, "MS-SSIM pairs");
  eval_cmd->add_option("--seed", ea.seed, "Seed");
  eval_cmd->add_option("--output", ea.output, "Report path prefix (.txt and .json)");

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(ta, out);
    if (gen_cmd->parsed()) return cmd_generate(da, out);
    if (sample_cmd->parsed()) return cmd_sample(sa, out);
    if (classify_cmd->parsed()) return cmd_classify(ca, out);
    if (attr_cmd->parsed()) return cmd_attribute(aa, out);
    if (eval_cmd->parsed()) return cmd_evaluate(ea, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    err << "shape error: " << e.what() << "\n";
    return kExitContract;
  } catch (const ContractError& e) {
    err << "contract error: " << e.what() << "\n";
    return kExitContract;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace mgf
