// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mgf/flow_model.hpp"

namespace mgf {

// Layout (little-endian):
//   "MGFC" u32 version
//   u64 n + n bytes  config echo (flow_config_to_text)
//   u64 seed, u64 train_steps
//   u64 steps, per step: u32 actnorm_initialized, u64 c, c x u64 permutation
//   u64 params, per param: u64 n + name, u64 n + .ten bytes
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const FlowModel& model);
FlowModel decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Written atomically.
void save_checkpoint(const FlowModel& model, const std::filesystem::path& path);
/// Malformed files raise IoError (bad magic, version, truncation).
FlowModel load_checkpoint(const std::filesystem::path& path);
/// Also requires the stored architecture to match `expected` (seed
/// ignored); a mismatch raises ContractError.
FlowModel load_checkpoint(const std::filesystem::path& path, const FlowConfig& expected);

}  // namespace mgf
