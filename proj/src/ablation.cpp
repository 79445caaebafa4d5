#include "simtrans/ablation.hpp"

#include <algorithm>
#include <cstdio>

namespace simtrans {

TrainConfig AblationVariant::apply(TrainConfig base) const {
  base.sil_layer_count = sil_layer_count;
  base.mfb = mfb;
  base.contrastive = contrastive;
  return base;
}

std::vector<AblationVariant> component_ablation() {
  return {
      {"Baseline", 0, false, false},
      {"Baseline + SIL", 1, false, false},
      {"Baseline + SIL + MFB_without_CL", 3, true, false},
      {"Baseline + SIL + MFB", 3, true, true},
  };
}

std::vector<AblationVariant> layer_sweep() {
  return {
      {"SIL in last 1 layer", 1, true, true},
      {"SIL in last 2 layers", 2, true, true},
      {"SIL in last 3 layers", 3, true, true},
  };
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::vector<AblationVariant>& variants,
                                      std::size_t seeds, const PatchedDataset& train_set,
                                      const PatchedDataset& test_set, const AblationProgress& progress) {
  std::vector<AblationRow> rows;
  for (const AblationVariant& v : variants) {
    AblationRow row;
    row.name = v.name;
    for (std::size_t s = 0; s < seeds; ++s) {
      TrainConfig cfg = v.apply(base);
      cfg.seed = base.seed + s;
      cfg.eval_every = 0;
      const TrainOutputs out = train(cfg, train_set, &test_set);
      const double acc = out.evals.empty() ? evaluate(out.model, test_set) : out.evals.back().test_acc;
      row.accuracies.push_back(acc);
      if (progress) progress(v.name, cfg.seed, acc);
    }
    double sum = 0.0;
    for (double a : row.accuracies) sum += a;
    row.mean = row.accuracies.empty() ? 0.0 : sum / static_cast<double>(row.accuracies.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

std::string format_table(const std::vector<AblationRow>& rows) {
  std::size_t width = 6;
  std::size_t seeds = 0;
  for (const auto& r : rows) {
    width = std::max(width, r.name.size());
    seeds = std::max(seeds, r.accuracies.size());
  }
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(s.size(), w), ' ');
    return s;
  };
  std::string out = pad("Method", width);
  for (std::size_t s = 0; s < seeds; ++s) out += "  " + pad("seed" + std::to_string(s + 1), 7);
  out += "  Acc(%)\n";
  for (const auto& r : rows) {
    out += pad(r.name, width);
    for (double a : r.accuracies) out += "  " + pad(percent(a), 7);
    out += "  " + percent(r.mean) + "\n";
  }
  return out;
}

std::string format_csv(const std::vector<AblationRow>& rows) {
  std::size_t seeds = 0;
  for (const auto& r : rows) seeds = std::max(seeds, r.accuracies.size());
  std::string out = "variant";
  for (std::size_t s = 0; s < seeds; ++s) out += ",seed" + std::to_string(s + 1);
  out += ",mean\n";
  for (const auto& r : rows) {
    out += r.name;
    for (double a : r.accuracies) out += "," + percent(a);
    out += "," + percent(r.mean) + "\n";
  }
  return out;
}

}  // namespace simtrans
