#pragma once

// SGD-with-momentum training under a warm-up + cosine learning-rate
// schedule, evaluation, and the per-step gradient computation.
//
// A batch is processed image by image: every image gets its own
// differentiation graph (OpenMP distributes the images over threads), the
// batch-level head and losses run on a small separate graph, and the
// resulting feature gradients are pushed back through each image graph.
// Parameter gradients are summed in image order, so results do not depend
// on the thread count.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "simtrans/checkpoint.hpp"
#include "simtrans/config.hpp"
#include "simtrans/error.hpp"
#include "simtrans/mfb.hpp"
#include "simtrans/model.hpp"
#include "simtrans/synth_data.hpp"

namespace simtrans {

/// Linear ramp from 0 to lr over the warm-up steps, then
/// lr * 0.5 * (1 + cos(pi * (step - warmup) / (total - warmup))).
double lr_at(std::size_t step, const TrainConfig& cfg);

/// v <- momentum * v + g;  p <- p - lr * v
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, std::span<Tensor> velocity, double lr,
              double momentum);

/// Pre-cut patch rows for every image of a split.
struct PatchedDataset {
  std::vector<Tensor> patches;
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const noexcept { return patches.size(); }
};

PatchedDataset patchify(const synth::Dataset& data, const PatchGrid& grid);

struct LossSettings {
  bool contrastive = true;
  double alpha = 0.3;
};

struct BatchGradients {
  mfb::LossReport report;
  std::vector<Tensor> grads;  // aligned with Model::parameters()
};

BatchGradients batch_gradients(const Model& model, std::span<const Tensor* const> patches,
                               std::span<const int> labels, const LossSettings& settings);

/// Top-1 accuracy: correctly classified images over all images.
double evaluate(const Model& model, const PatchedDataset& data);

struct StepLog {
  std::size_t step = 0;
  double lr = 0.0;
  double loss_ce = 0.0;
  double loss_cl = 0.0;
  double batch_acc = 0.0;
};

struct EvalLog {
  std::size_t step = 0;
  double test_acc = 0.0;
};

struct TrainOutputs {
  Model model;
  Checkpoint checkpoint;
  std::vector<StepLog> steps;
  std::vector<EvalLog> evals;
};

struct TrainHooks {
  /// Where metrics.csv, eval.csv and checkpoint.bin go; empty keeps
  /// everything in memory.
  std::filesystem::path out_dir;
  std::function<void(const StepLog&)> on_step;
  std::function<void(const EvalLog&)> on_eval;
};

/// Raised when a step produces a non-finite loss. The most recent checkpoint
/// on disk, if any, is left untouched.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(std::size_t step, const std::string& what) : NumericError(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

TrainOutputs train(const TrainConfig& cfg, const PatchedDataset& train_set, const PatchedDataset* test_set,
                   const TrainHooks& hooks = {});

std::string metrics_csv(std::span<const StepLog> steps);
std::string eval_csv(std::span<const EvalLog> evals);

}  // namespace simtrans
