#pragma once

// Full classifier: backbone, per-layer structure modules and the
// multi-level classification head.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "simtrans/autodiff.hpp"
#include "simtrans/sil.hpp"
#include "simtrans/vit.hpp"

namespace simtrans {

struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t channels = 3;
  std::size_t patch = 16;
  std::size_t stride = 16;
  BackboneConfig backbone;
  std::size_t classes = 8;
  /// Structure modules sit in the last `sil_layer_count` layers.
  std::size_t sil_layer_count = 3;
  bool mfb = true;
  /// Hidden width of the graph convolution; 0 means the model dimension.
  std::size_t gcn_hidden = 0;
  bool share_gcn = false;

  PatchGrid grid() const;
  /// 1-based indices of the structure-equipped layers, ascending.
  std::vector<std::size_t> sil_layers() const;
  std::size_t feature_dim() const { return mfb ? 3 * backbone.dim : backbone.dim; }
  std::size_t gcn_width() const { return gcn_hidden == 0 ? backbone.dim : gcn_hidden; }
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct ConstNamedTensor {
  std::string name;
  const Tensor* tensor;
};

struct Model {
  ModelConfig config;
  EncoderParams encoder;
  std::vector<sil::GcnParams> gcn;  // one per structure layer, or one when shared
  Tensor head_w;                    // feature_dim x classes
  Tensor head_b;                    // 1 x classes

  static Model init(const ModelConfig& config, std::uint64_t seed);

  /// Every trainable tensor in a fixed order with a stable name.
  std::vector<NamedTensor> parameters();
  std::vector<ConstNamedTensor> parameters() const;
  std::size_t parameter_count() const;
};

struct ForwardResult {
  std::vector<ad::Var> cls;  // cls row (1 x D) of every layer output, after any structure injection
  ad::Var tokens;            // z_L
  std::vector<AttentionRecord> records;         // one per structure-equipped layer
  std::vector<sil::FilteredAttention> filtered;  // matches `records`
  std::vector<ad::Var> structure;                // feature added at each equipped layer
};

/// Embeds the patches and runs every encoder layer. After each layer listed
/// in `sil_layers` (1-based, ascending) the structure feature computed from
/// that layer's attention is added to the cls row before the next layer
/// consumes it. `gcn` holds one parameter set per listed layer, or a single
/// set shared by all of them.
ForwardResult forward(ad::ParameterBinder& bind, const Tensor& patches, const PatchGrid& grid,
                      const EncoderParams& params, const BackboneConfig& cfg, std::span<const std::size_t> sil_layers,
                      std::span<const sil::GcnParams> gcn);

struct ImageOutput {
  ad::Var features;  // 1 x feature_dim
  ForwardResult trace;
};

/// Representation fed to the classifier: the last three cls rows
/// concatenated when MFB is on, the final cls row otherwise.
ImageOutput image_features(ad::ParameterBinder& bind, const Model& model, const Tensor& patches);

/// Class probabilities (1 x classes) for one image's patches.
Tensor predict(const Model& model, const Tensor& patches);

}  // namespace simtrans
