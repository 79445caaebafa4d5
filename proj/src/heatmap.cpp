#include "simtrans/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "simtrans/error.hpp"

namespace simtrans {

AttentionMaps render_attention(const sil::FilteredAttention& fa, const PatchGrid& grid) {
  const std::size_t n = grid.count();
  if (fa.attention.size() != n || fa.filtered.size() != n) {
    throw DimensionError("attention has " + std::to_string(fa.attention.size()) + " entries, grid has " +
                         std::to_string(n));
  }
  AttentionMaps maps;
  maps.reference = fa.reference;
  maps.raw = {grid.n_w, grid.n_h, std::vector<std::uint8_t>(n, 0)};
  maps.filtered = maps.raw;

  const double hi = *std::max_element(fa.attention.begin(), fa.attention.end());
  const double lo = *std::min_element(fa.attention.begin(), fa.attention.end());
  if (hi == lo || !(hi > 0.0)) {
    std::fill(maps.raw.pixels.begin(), maps.raw.pixels.end(), std::uint8_t{128});
    return maps;
  }
  auto scale = [hi](double v) {
    if (!(v > 0.0)) return std::uint8_t{0};
    return static_cast<std::uint8_t>(std::clamp(std::ceil(255.0 * v / hi), 1.0, 255.0));
  };
  for (std::size_t i = 0; i < n; ++i) {
    maps.raw.pixels[i] = scale(fa.attention[i]);
    maps.filtered.pixels[i] = scale(fa.filtered[i]);
  }
  maps.filtered.pixels[fa.reference] = 255;
  return maps;
}

AttentionMaps attention_maps(const Model& model, const Tensor& patches, std::size_t layer) {
  const auto layers = model.config.sil_layers();
  if (std::find(layers.begin(), layers.end(), layer) == layers.end()) {
    std::string have;
    for (std::size_t l : layers) have += (have.empty() ? "" : ", ") + std::to_string(l);
    throw ConfigError("layer " + std::to_string(layer) + " has no structure module, so no attention is captured" +
                      (have.empty() ? std::string(" (this model has none)") : " (captured layers: " + have + ")"));
  }
  ad::Graph graph;
  ad::ParameterBinder bind(graph, false);
  const ImageOutput out = image_features(bind, model, patches);
  for (std::size_t i = 0; i < out.trace.records.size(); ++i) {
    if (out.trace.records[i].layer == layer) return render_attention(out.trace.filtered[i], model.config.grid());
  }
  throw ContractError("structure layer " + std::to_string(layer) + " produced no attention record");
}

}  // namespace simtrans
