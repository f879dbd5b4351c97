// SPDX-License-Identifier: Apache-2.0
#include "mgf/checkpoint.hpp"

#include "mgf/config.hpp"
#include "mgf/errors.hpp"
#include "mgf/tensor_io.hpp"

namespace mgf {

namespace {

void put_bytes(std::vector<std::uint8_t>& out, const std::string& s) {
  io::put_u64(out, s.size());
  out.insert(out.end(), s.begin(), s.end());
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const FlowModel& model) {
  std::vector<std::uint8_t> out{'M', 'G', 'F', 'C'};
  io::put_u32(out, kCheckpointVersion);
  put_bytes(out, flow_config_to_text(model.config));
  io::put_u64(out, model.config.seed);
  io::put_u64(out, model.train_steps);
  io::put_u64(out, model.steps.size());
  for (const auto& s : model.steps) {
    io::put_u32(out, s.actnorm.initialized ? 1 : 0);
    io::put_u64(out, s.invconv.perm.size());
    for (std::size_t p : s.invconv.perm) io::put_u64(out, p);
  }
  const auto params = model.parameters();
  io::put_u64(out, params.size());
  for (const Parameter* p : params) {
    put_bytes(out, p->name);
    const auto ten = io::encode_ten(p->value);
    io::put_u64(out, ten.size());
    out.insert(out.end(), ten.begin(), ten.end());
  }
  return out;
}

FlowModel decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "checkpoint");
  if (r.str(4) != "MGFC") throw IoError("checkpoint: bad magic (not an MGFC file)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: format version " + std::to_string(version) + ", this build reads version " +
                  std::to_string(kCheckpointVersion));
  auto length = [&](std::size_t unit) {
    const auto n = r.u64();
    if (n > r.remaining() / unit) throw IoError("checkpoint: corrupt length " + std::to_string(n));
    return static_cast<std::size_t>(n);
  };
  FlowConfig cfg;
  try {
    cfg = flow_config_from_text(r.str(length(1)));
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint: unreadable config echo: ") + e.what());
  }
  if (r.u64() != cfg.seed) throw IoError("checkpoint: seed field disagrees with config echo");
  FlowModel model;
  try {
    model = build_model(cfg);
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint: config echo describes no valid model: ") + e.what());
  }
  model.train_steps = r.u64();
  if (length(12) != model.steps.size()) throw IoError("checkpoint: step count does not match the config echo");
  for (auto& s : model.steps) {
    s.actnorm.initialized = r.u32() != 0;
    const std::size_t c = length(8);
    if (c != s.invconv.perm.size()) throw IoError("checkpoint: permutation size mismatch");
    std::vector<bool> seen(c, false);
    for (auto& p : s.invconv.perm) {
      p = r.u64();
      if (p >= c || seen[p]) throw IoError("checkpoint: invalid permutation");
      seen[p] = true;
    }
  }
  auto params = model.parameters();
  if (length(16) != params.size()) throw IoError("checkpoint: parameter count does not match the config echo");
  for (Parameter* p : params) {
    const std::string name = r.str(length(1));
    if (name != p->name) throw IoError("checkpoint: expected parameter " + p->name + ", found " + name);
    const std::string raw = r.str(length(1));
    Tensor t = io::decode_ten(std::vector<std::uint8_t>(raw.begin(), raw.end()));
    if (t.shape() != p->value.shape())
      throw IoError("checkpoint: parameter " + name + " has shape " + shape_string(t.shape()) + ", expected " +
                    shape_string(p->value.shape()));
    p->value = std::move(t);
  }
  if (r.remaining() != 0) throw IoError("checkpoint: corrupt length (" + std::to_string(r.remaining()) + " trailing bytes)");
  return model;
}

void save_checkpoint(const FlowModel& model, const std::filesystem::path& path) {
  io::write_atomic(path, encode_checkpoint(model));
}

FlowModel load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(io::read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

FlowModel load_checkpoint(const std::filesystem::path& path, const FlowConfig& expected) {
  FlowModel m = load_checkpoint(path);
  const std::string diff = flow_config_mismatch(m.config, expected);
  if (!diff.empty()) throw ContractError(path.string() + ": config echo mismatch: " + diff);
  return m;
}

}  // namespace mgf
