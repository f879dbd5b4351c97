// SPDX-License-Identifier: Apache-2.0
#include "mgf/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "mgf/errors.hpp"
#include "mgf/tensor_io.hpp"
#include "mgf/tensor_ops.hpp"

namespace mgf {

AttributionMap attribution_map(const FlowModel& model, const Tensor& x, std::size_t label,
                               std::vector<AttributionStage>* trace) {
  const ForwardResult fr = forward(model, x, label);
  const std::size_t total_dims = x.size();
  std::size_t split = fr.latents.size() - 1;
  std::size_t pending = 0;
  for (std::size_t j = 0; j < split; ++j) pending += fr.latents[j].size();

  Tensor running = log_standard_normal(fr.latents.back());
  std::size_t layer = fr.per_layer.size();
  auto record = [&](std::size_t index) {
    if (running.size() + pending != total_dims)
      throw ContractError("attribution: running map has " + std::to_string(running.size()) + " elements with " +
                          std::to_string(pending) + " pending, expected " + std::to_string(total_dims));
    if (trace) trace->push_back({index, running.size(), pending});
  };
  record(model.schedule.size());

  for (std::size_t i = model.schedule.size(); i-- > 0;) {
    const auto& item = model.schedule[i];
    if (item.kind == ScheduleItem::Kind::Squeeze) {
      running = unsqueeze2x2(running);
      record(i);
    } else if (item.kind == ScheduleItem::Kind::Split) {
      const Tensor& z = fr.latents[--split];
      pending -= z.size();
      running = merge_channels(running, log_standard_normal(z));
      record(i);
    } else {
      // Coupling, InvConv, ActNorm maps of this step, latest first.
      for (int k = 0; k < 3; ++k) {
        const auto& c = fr.per_layer[--layer];
        if (c.schedule_index != i || c.map.shape() != running.shape())
          throw ContractError("attribution: layer bookkeeping out of step at schedule item " + std::to_string(i));
        running = running + c.map;
      }
    }
  }
  if (running.shape() != x.shape()) throw ContractError("attribution: map does not end at input resolution");
  AttributionMap out{std::move(running), 0.0};
  out.total = sum(out.values);
  return out;
}

std::vector<std::uint8_t> heatmap_pixels(const Tensor& values, double* min_out, double* max_out) {
  if (!values.all_finite()) throw NumericalError("heatmap: map contains non-finite values");
  const auto [lo_it, hi_it] = std::minmax_element(values.values().begin(), values.values().end());
  const double lo = *lo_it, hi = *hi_it;
  if (min_out) *min_out = lo;
  if (max_out) *max_out = hi;
  std::vector<std::uint8_t> px(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (hi == lo) {
      px[i] = 128;
      continue;
    }
    const double level = std::floor((values[i] - lo) * 255.0 / (hi - lo));
    px[i] = static_cast<std::uint8_t>(std::clamp(level, 0.0, 255.0));
  }
  return px;
}

void export_heatmap(const AttributionMap& map, const std::filesystem::path& base) {
  const Tensor& v = map.values;
  if (v.rank() != 3) throw DimensionError("heatmap: expected a [C,H,W] map");
  double lo = 0.0, hi = 0.0;
  const auto px = heatmap_pixels(v, &lo, &hi);
  std::filesystem::path ten = base, pgm = base, scale = base;
  ten += ".ten";
  pgm += ".pgm";
  scale += ".scale.txt";
  io::write_ten(ten, v);
  io::write_pgm(pgm, v.dim(2), v.dim(0) * v.dim(1), px);
  io::write_text_atomic(scale, "min=" + io::format_double(lo) + " max=" + io::format_double(hi) + "\n");
}

}  // namespace mgf
