#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "simtrans/config.hpp"
#include "simtrans/train.hpp"

namespace simtrans {

struct AblationVariant {
  std::string name;
  std::size_t sil_layer_count = 0;
  bool mfb = false;
  bool contrastive = false;

  TrainConfig apply(TrainConfig base) const;
};

/// Baseline / + structure in the last layer / + structure in the last three
/// layers with multi-level features but no contrastive loss / full model.
std::vector<AblationVariant> component_ablation();

/// Full model with structure modules in the last 1, 2 and 3 layers.
std::vector<AblationVariant> layer_sweep();

struct AblationRow {
  std::string name;
  std::vector<double> accuracies;  // one per seed
  double mean = 0.0;
};

using AblationProgress = std::function<void(const std::string& variant, std::uint64_t seed, double accuracy)>;

/// Trains every variant once per seed (base.seed, base.seed + 1, ...) and
/// reports final test accuracy, rows in the order given.
std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::vector<AblationVariant>& variants,
                                      std::size_t seeds, const PatchedDataset& train_set,
                                      const PatchedDataset& test_set, const AblationProgress& progress = {});

/// Fixed-width text table, accuracies in percent.
std::string format_table(const std::vector<AblationRow>& rows);
/// `variant,seed_1,...,seed_k,mean` with accuracies in percent, same
/// rounding as the text table.
std::string format_csv(const std::vector<AblationRow>& rows);

}  // namespace simtrans
