#pragma once

// Vision transformer backbone: sliding-window patch tokenization, token
// embedding, and post-LN encoder layers with optional attention capture.

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "simtrans/autodiff.hpp"
#include "simtrans/tensor.hpp"

namespace simtrans {

/// Spatial layout of the patch tokens cut from one image.
struct PatchGrid {
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  std::size_t patch = 0;
  std::size_t stride = 0;
  std::size_t n_h = 0;  // patches along the vertical axis
  std::size_t n_w = 0;  // patches along the horizontal axis

  /// floor((H - P) / S + 1) windows per axis. Throws ConfigError when the
  /// patch does not fit or the stride is zero.
  static PatchGrid make(std::size_t image_h, std::size_t image_w, std::size_t patch, std::size_t stride);

  std::size_t count() const noexcept { return n_h * n_w; }
  /// Flat index of the patch in grid row `y`, column `x`.
  std::size_t index(std::size_t y, std::size_t x) const noexcept { return y * n_w + x; }
  std::size_t row_of(std::size_t index) const noexcept { return index / n_w; }
  std::size_t col_of(std::size_t index) const noexcept { return index % n_w; }
  std::size_t patch_dim(std::size_t channels = 3) const noexcept { return channels * patch * patch; }

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

/// Cuts an H x W x C image into N flattened windows. Row i*n_w + j holds the
/// window at pixel offset (i*S, j*S), flattened in (dy, dx, channel) order.
Tensor split_patches(const Tensor& image, const PatchGrid& grid);

struct BackboneConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t layers = 4;
  double ln_eps = 1e-6;

  std::size_t head_dim() const { return dim / heads; }
};

struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gamma, ln1_beta;
  Tensor ffn1_w, ffn1_b, ffn2_w, ffn2_b;
  Tensor ln2_gamma, ln2_beta;
};

struct EncoderParams {
  Tensor patch_w;    // (C*P*P) x D
  Tensor patch_b;    // 1 x D
  Tensor cls_token;  // 1 x D
  Tensor pos_embed;  // (N+1) x D
  std::vector<LayerParams> layers;

  /// Truncated-normal (std 0.02) projections and position embedding, zero
  /// biases and cls token, unit LN gains.
  static EncoderParams init(const BackboneConfig& cfg, const PatchGrid& grid, std::mt19937_64& rng);
};

/// Per-head softmax(QK^T / sqrt(D/H)) matrices of one layer. Rows are
/// queries, columns keys; index 0 is the cls token.
struct AttentionRecord {
  std::size_t layer = 0;  // 1-based
  std::vector<Tensor> heads;
};

/// Fills `t` with N(0, std) samples redrawn until they fall within two
/// standard deviations.
void truncated_normal(Tensor& t, double std, std::mt19937_64& rng);

/// z_0 = [x_cls; F(patch_1); ...; F(patch_N)] + E_p
ad::Var embed(ad::ParameterBinder& bind, ad::Var patches, const EncoderParams& params);

struct LayerOutput {
  ad::Var tokens;
  std::vector<ad::Var> attention;  // one (N+1)x(N+1) node per head; empty unless captured
};

/// One encoder layer: z' = LN(MSA(z) + z), z_next = LN(FFN(z') + z').
/// Heads are contiguous slices of the model dimension.
LayerOutput encoder_layer(ad::ParameterBinder& bind, ad::Var tokens, const LayerParams& params,
                          const BackboneConfig& cfg, bool capture);

AttentionRecord make_record(std::size_t layer, std::span<const ad::Var> attention);

}  // namespace simtrans
