// SPDX-License-Identifier: Apache-2.0
#include "mgf/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mgf/errors.hpp"
#include "mgf/tensor_io.hpp"

namespace mgf {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Where {
  const std::string& source;
  std::size_t line;
  const std::string& key;
  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(source + ":" + std::to_string(line) + ": " + key + ": " + msg);
  }
};

std::uint64_t to_u64(const std::string& v, const Where& w) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    w.fail("expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_f64(const std::string& v, const Where& w) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(out)) w.fail("expected a number, got '" + v + "'");
  return out;
}

Shape to_shape(const std::string& v, const Where& w) {
  Shape s;
  std::stringstream ss(v);
  for (std::string part; std::getline(ss, part, ',');) s.push_back(to_u64(trim(part), w));
  if (s.size() != 3) w.fail("expected C,H,W, got '" + v + "'");
  return s;
}

std::string shape_text(const Shape& s) {
  return std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]);
}

using Setter = std::function<void(const std::string&, const Where&)>;

std::map<std::string, Setter> flow_setters(FlowConfig& m) {
  return {
      {"input_shape", [&](auto& v, auto& w) { m.input_shape = to_shape(v, w); }},
      {"num_classes", [&](auto& v, auto& w) { m.num_classes = to_u64(v, w); }},
      {"schedule", [&](auto& v, auto&) { m.schedule = v; }},
      {"hidden", [&](auto& v, auto& w) { m.hidden = to_u64(v, w); }},
      {"kernel", [&](auto& v, auto& w) { m.kernel = to_u64(v, w); }},
      {"embed_dim", [&](auto& v, auto& w) { m.embed_dim = to_u64(v, w); }},
      {"s_max", [&](auto& v, auto& w) { m.s_max = to_f64(v, w); }},
      {"dropout", [&](auto& v, auto& w) { m.dropout = to_f64(v, w); }},
      {"invconv_init", [&](auto& v, auto& w) { m.invconv_init = to_f64(v, w); }},
  };
}

CouplingVariant to_task(const std::string& v, const Where& w) {
  try {
    return coupling_variant_from_string(v);
  } catch (const ConfigError& e) {
    w.fail(e.what());
  }
}

}  // namespace

std::vector<IniEntry> parse_ini(const std::string& text, const std::string& source) {
  std::vector<IniEntry> out;
  std::istringstream in(text);
  std::string section, raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(raw);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) throw ConfigError(source + ":" + std::to_string(line) + ": bad section header");
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(line) + ": expected key = value");
    if (section.empty()) throw ConfigError(source + ":" + std::to_string(line) + ": key outside of a section");
    IniEntry e{section, trim(s.substr(0, eq)), trim(s.substr(eq + 1)), line};
    if (e.key.empty()) throw ConfigError(source + ":" + std::to_string(line) + ": empty key");
    for (const auto& prev : out)
      if (prev.section == e.section && prev.key == e.key)
        throw ConfigError(source + ":" + std::to_string(line) + ": duplicate key '" + e.key + "' (first on line " +
                          std::to_string(prev.line) + ")");
    out.push_back(std::move(e));
  }
  return out;
}

std::string to_string(DataKind kind) {
  switch (kind) {
    case DataKind::Toy2D: return "toy2d";
    case DataKind::Phantom: return "phantom";
    case DataKind::Directory: return "directory";
  }
  return "?";
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  RunConfig c;
  std::map<std::string, std::map<std::string, Setter>> keys;
  keys["run"] = {
      {"task", [&](auto& v, auto& w) { c.model.task = to_task(v, w); }},
      {"seed", [&](auto& v, auto& w) { c.seed = to_u64(v, w); }},
      {"output", [&](auto& v, auto&) { c.output = v; }},
  };
  keys["model"] = flow_setters(c.model);
  keys["data"] = {
      {"kind",
       [&](auto& v, auto& w) {
         if (v == "toy2d")
           c.data.kind = DataKind::Toy2D;
         else if (v == "phantom")
           c.data.kind = DataKind::Phantom;
         else if (v == "directory")
           c.data.kind = DataKind::Directory;
         else
           w.fail("expected toy2d | phantom | directory, got '" + v + "'");
       }},
      {"generator",
       [&](auto& v, auto& w) {
         try {
           c.data.generator = toy2d_kind_from_string(v);
         } catch (const ConfigError& e) {
           w.fail(e.what());
         }
       }},
      {"separation", [&](auto& v, auto& w) { c.data.separation = to_f64(v, w); }},
      {"profiles",
       [&](auto& v, auto& w) {
         if (v != "scanner" && v != "null") w.fail("expected scanner | null, got '" + v + "'");
         c.data.profiles = v;
       }},
      {"n_per_class", [&](auto& v, auto& w) { c.data.n_per_class = to_u64(v, w); }},
      {"test_per_class", [&](auto& v, auto& w) { c.data.test_per_class = to_u64(v, w); }},
      {"train_dir", [&](auto& v, auto&) { c.data.train_dir = v; }},
      {"test_dir", [&](auto& v, auto&) { c.data.test_dir = v; }},
  };
  keys["train"] = {
      {"epochs", [&](auto& v, auto& w) { c.train.epochs = to_u64(v, w); }},
      {"batch_size", [&](auto& v, auto& w) { c.train.batch_size = to_u64(v, w); }},
      {"learning_rate", [&](auto& v, auto& w) { c.train.learning_rate = to_f64(v, w); }},
      {"beta1", [&](auto& v, auto& w) { c.train.beta1 = to_f64(v, w); }},
      {"beta2", [&](auto& v, auto& w) { c.train.beta2 = to_f64(v, w); }},
      {"adam_eps", [&](auto& v, auto& w) { c.train.adam_eps = to_f64(v, w); }},
      {"clip_norm", [&](auto& v, auto& w) { c.train.clip_norm = to_f64(v, w); }},
      {"dequantize_bits", [&](auto& v, auto& w) { c.train.dequantize_bits = static_cast<int>(to_u64(v, w)); }},
  };
  for (const auto& e : parse_ini(text, source)) {
    const Where w{source, e.line, e.key};
    const auto sec = keys.find(e.section);
    if (sec == keys.end())
      throw ConfigError(source + ":" + std::to_string(e.line) + ": unknown section [" + e.section + "]");
    const auto setter = sec->second.find(e.key);
    if (setter == sec->second.end()) w.fail("unknown key in [" + e.section + "]");
    setter->second(e.value, w);
  }
  c.model.seed = c.seed;
  if (c.data.kind == DataKind::Directory && c.data.train_dir.empty())
    throw ConfigError(source + ": [data] kind = directory needs train_dir");
  if (c.model.num_classes == 0) throw ConfigError(source + ": [model] num_classes must be positive");
  if (c.train.batch_size == 0) throw ConfigError(source + ": [train] batch_size must be positive");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string run_config_to_text(const RunConfig& c) {
  std::string s = "[run]\ntask = " + to_string(c.model.task) + "\nseed = " + std::to_string(c.seed) +
                  "\noutput = " + c.output.string() + "\n\n[model]\n";
  std::istringstream flow(flow_config_to_text(c.model));
  for (std::string line; std::getline(flow, line);) {
    const auto eq = line.find('=');
    const std::string key = line.substr(0, eq);
    if (key == "task" || key == "seed") continue;
    s += key + " = " + line.substr(eq + 1) + "\n";
  }
  s += "\n[data]\nkind = " + to_string(c.data.kind) + "\ngenerator = " + to_string(c.data.generator) +
       "\nseparation = " + io::format_double(c.data.separation) + "\nprofiles = " + c.data.profiles +
       "\nn_per_class = " + std::to_string(c.data.n_per_class) +
       "\ntest_per_class = " + std::to_string(c.data.test_per_class) + "\n";
  if (!c.data.train_dir.empty()) s += "train_dir = " + c.data.train_dir.string() + "\n";
  if (!c.data.test_dir.empty()) s += "test_dir = " + c.data.test_dir.string() + "\n";
  s += "\n[train]\nepochs = " + std::to_string(c.train.epochs) + "\nbatch_size = " + std::to_string(c.train.batch_size) +
       "\nlearning_rate = " + io::format_double(c.train.learning_rate) + "\nbeta1 = " + io::format_double(c.train.beta1) +
       "\nbeta2 = " + io::format_double(c.train.beta2) + "\nadam_eps = " + io::format_double(c.train.adam_eps) +
       "\nclip_norm = " + io::format_double(c.train.clip_norm) +
       "\ndequantize_bits = " + std::to_string(c.train.dequantize_bits) + "\n";
  return s;
}

std::string flow_config_to_text(const FlowConfig& m) {
  return "input_shape=" + shape_text(m.input_shape) + "\nnum_classes=" + std::to_string(m.num_classes) +
         "\ntask=" + to_string(m.task) + "\nschedule=" + m.schedule + "\nhidden=" + std::to_string(m.hidden) +
         "\nkernel=" + std::to_string(m.kernel) + "\nembed_dim=" + std::to_string(m.embed_dim) +
         "\ns_max=" + io::format_double(m.s_max) + "\ndropout=" + io::format_double(m.dropout) +
         "\ninvconv_init=" + io::format_double(m.invconv_init) + "\nseed=" + std::to_string(m.seed) + "\n";
}

FlowConfig flow_config_from_text(const std::string& text) {
  FlowConfig m;
  auto setters = flow_setters(m);
  setters["task"] = [&](const std::string& v, const Where& w) { m.task = to_task(v, w); };
  setters["seed"] = [&](const std::string& v, const Where& w) { m.seed = to_u64(v, w); };
  std::istringstream in(text);
  std::size_t n = 0;
  const std::string source = "config echo";
  for (std::string line; std::getline(in, line);) {
    ++n;
    const auto eq = line.find('=');
    const std::string key = line.substr(0, eq);
    if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(n) + ": expected key=value");
    const auto it = setters.find(key);
    const Where w{source, n, key};
    if (it == setters.end()) w.fail("unknown key");
    it->second(line.substr(eq + 1), w);
  }
  return m;
}

std::string flow_config_mismatch(const FlowConfig& have, const FlowConfig& want) {
  std::istringstream a(flow_config_to_text(have)), b(flow_config_to_text(want));
  for (std::string la, lb; std::getline(a, la) && std::getline(b, lb);) {
    if (la.rfind("seed=", 0) == 0) continue;
    if (la != lb) return la.substr(0, la.find('=')) + ": checkpoint has " + la.substr(la.find('=') + 1) +
                         ", expected " + lb.substr(lb.find('=') + 1);
  }
  return "";
}

}  // namespace mgf
