// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mgf/datagen.hpp"
#include "mgf/flow_model.hpp"
#include "mgf/training.hpp"

namespace mgf {

/// `[section]` headers and `key = value` lines; `#` or `;` start a comment
/// line. Entries keep file order and line numbers.
struct IniEntry {
  std::string section, key, value;
  std::size_t line = 0;
};
std::vector<IniEntry> parse_ini(const std::string& text, const std::string& source);

enum class DataKind { Toy2D, Phantom, Directory };
std::string to_string(DataKind kind);

struct DataConfig {
  DataKind kind = DataKind::Phantom;
  Toy2DKind generator = Toy2DKind::ConditionalGaussians;  // toy2d
  double separation = 6.0;                                 // toy2d
  std::string profiles = "scanner";                        // phantom: scanner | null
  std::size_t n_per_class = 200;
  std::size_t test_per_class = 60;
  std::filesystem::path train_dir, test_dir;  // directory
};

struct RunConfig {
  FlowConfig model;
  DataConfig data;
  TrainOptions train;
  std::filesystem::path output = "run";
  std::uint64_t seed = 0;
};

/// Every key has a default; unknown sections/keys, duplicates and
/// malformed values raise ConfigError naming source and line.
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical text form accepted by parse_run_config.
std::string run_config_to_text(const RunConfig& cfg);

/// `key=value` lines describing a FlowConfig (checkpoint config echo).
std::string flow_config_to_text(const FlowConfig& cfg);
FlowConfig flow_config_from_text(const std::string& text);
/// Empty when the configs describe the same architecture (the seed is
/// ignored); otherwise names the first differing field.
std::string flow_config_mismatch(const FlowConfig& have, const FlowConfig& want);

}  // namespace mgf
