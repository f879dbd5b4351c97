// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

#include "mgf/flow_model.hpp"

namespace mgf {

/// Per-element decomposition of log p(x | y); values sum to total.
struct AttributionMap {
  Tensor values;  // input shape
  double total = 0.0;
};

/// Running-map bookkeeping at one schedule boundary (for checking the
/// shape chain).
struct AttributionStage {
  std::size_t schedule_index = 0;
  std::size_t running_elements = 0;
  std::size_t pending_latent_elements = 0;  // latents not yet concatenated
};

/// Back-accumulates per-element contributions: start from the elementwise
/// prior term of the last latent, add each layer's log-det map, concatenate
/// the factored latent's prior term after the running map at every split
/// (merge order) and unsqueeze at every squeeze, ending at input
/// resolution.
AttributionMap attribution_map(const FlowModel& model, const Tensor& x, std::size_t label,
                               std::vector<AttributionStage>* trace = nullptr);

/// Writes `<base>.ten` (raw map), `<base>.pgm` (min-max normalized 8-bit
/// rendering, channels stacked vertically) and `<base>.scale.txt`
/// (`min=<v> max=<v>`). Pixel = floor((v - min) * 255 / (max - min)); a
/// constant map renders as 128 everywhere.
void export_heatmap(const AttributionMap& map, const std::filesystem::path& base);

/// The 8-bit rendering used by export_heatmap.
std::vector<std::uint8_t> heatmap_pixels(const Tensor& values, double* min_out = nullptr, double* max_out = nullptr);

}  // namespace mgf
