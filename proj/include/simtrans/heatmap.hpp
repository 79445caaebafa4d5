#pragma once

// Grayscale renderings of one layer's cls-to-patch attention.

#include <cstddef>

#include "simtrans/model.hpp"
#include "simtrans/pgm.hpp"
#include "simtrans/sil.hpp"

namespace simtrans {

struct AttentionMaps {
  pgm::Image raw;       // A, n_w x n_h
  pgm::Image filtered;  // A_new on the same scale
  std::size_t reference = 0;
};

/// Both maps share one scale: pixel = ceil(255 * v / max A), so every kept
/// patch is at least 1 and every dropped patch is exactly 0. The reference
/// patch is the maximum and lands on 255. Constant attention has nothing
/// to rank and is drawn flat at 128 (its filtered map is all zeros).
AttentionMaps render_attention(const sil::FilteredAttention& fa, const PatchGrid& grid);

/// Runs the model on one image and renders the attention captured at
/// `layer` (1-based). Throws ConfigError when that layer has no structure
/// module and therefore no captured record.
AttentionMaps attention_maps(const Model& model, const Tensor& patches, std::size_t layer);

}  // namespace simtrans
