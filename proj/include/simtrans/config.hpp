#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "simtrans/model.hpp"

namespace simtrans {

/// Everything needed to reproduce one training run.
///
/// Desk-scale defaults: 64x64 images cut into 16 non-overlapping 16px
/// patches, 4 layers of width 64 with 4 heads. The full-size recipe this
/// mirrors is 448px inputs, P=16, S=12, ViT-B_16, lr 3e-2, batch 5, 10000
/// steps with 500 warm-up steps.
struct TrainConfig {
  double lr = 1e-2;
  double momentum = 0.9;
  std::size_t total_steps = 3000;
  std::size_t warmup_steps = 150;
  std::size_t batch_size = 16;
  double alpha = 0.3;
  std::size_t sil_layer_count = 3;
  bool mfb = true;
  bool contrastive = true;
  std::uint64_t seed = 1;
  std::size_t eval_every = 500;  // 0 disables periodic evaluation

  std::size_t image_size = 64;
  std::size_t patch = 16;
  std::size_t stride = 16;
  std::size_t depth = 4;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t gcn_hidden = 0;
  bool share_gcn = false;

  ModelConfig model_config(std::size_t classes) const;
  /// Throws ConfigError on inconsistent values.
  void validate() const;

  /// Canonical `key = value` text, one key per line in a fixed order.
  std::string to_text() const;
  /// Applies `key = value` lines on top of the current values. Blank lines
  /// and lines starting with '#' are ignored. Throws ConfigError on unknown
  /// keys or unparsable values.
  void apply_text(const std::string& text);
  /// Sets one key from its textual value.
  void set(const std::string& key, const std::string& value);

  static TrainConfig from_file(const std::filesystem::path& path);

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

}  // namespace simtrans
