#include "simtrans/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include "simtrans/error.hpp"

namespace simtrans {

double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const double span = static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  const double progress = static_cast<double>(step - cfg.warmup_steps) / span;
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, std::span<Tensor> velocity, double lr,
              double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw DimensionError("sgd_step: " + std::to_string(params.size()) + " parameters, " +
                         std::to_string(grads.size()) + " gradients, " + std::to_string(velocity.size()) +
                         " momentum buffers");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    Tensor& v = velocity[i];
    if (p.size() != g.size() || p.size() != v.size()) {
      throw DimensionError("sgd_step: shapes of parameter " + std::to_string(i) + " disagree");
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = momentum * v[k] + g[k];
      p[k] -= lr * v[k];
    }
  }
}

PatchedDataset patchify(const synth::Dataset& data, const PatchGrid& grid) {
  PatchedDataset out;
  out.classes = data.classes;
  out.labels = data.labels;
  out.patches.resize(data.size());
  const auto n = static_cast<std::ptrdiff_t>(data.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out.patches[static_cast<std::size_t>(i)] = split_patches(data.images[static_cast<std::size_t>(i)], grid);
  }
  return out;
}

BatchGradients batch_gradients(const Model& model, std::span<const Tensor* const> patches,
                               std::span<const int> labels, const LossSettings& settings) {
  const std::size_t b = patches.size();
  if (labels.size() != b) throw ContractError("batch_gradients: labels and images differ in count");

  struct ImageGraph {
    ad::Graph graph;
    ad::ParameterBinder bind{graph, true};
    ad::Var features;
  };
  std::vector<std::unique_ptr<ImageGraph>> images(b);
  std::vector<std::exception_ptr> errors(b);

  const auto nb = static_cast<std::ptrdiff_t>(b);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t ii = 0; ii < nb; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    try {
      auto ig = std::make_unique<ImageGraph>();
      ig->features = image_features(ig->bind, model, *patches[i]).features;
      images[i] = std::move(ig);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const std::size_t f = model.config.feature_dim();
  Tensor stacked({b, f});
  for (std::size_t i = 0; i < b; ++i) {
    std::copy_n(images[i]->features.value().data(), f, stacked.data() + i * f);
  }

  ad::Graph head;
  ad::ParameterBinder head_bind(head, true);
  const ad::Var z = head.leaf(std::move(stacked));
  const mfb::Classification cls = mfb::classify(z, head_bind(model.head_w), head_bind(model.head_b));
  const ad::Var ce = mfb::cross_entropy(cls.pred, labels);
  BatchGradients out;
  out.report.cross_entropy = ce.value()[0];
  ad::Var total = ce;
  if (settings.contrastive) {
    const mfb::ContrastiveResult cl = mfb::contrastive_loss(z, labels, settings.alpha);
    total = mfb::total_loss(ce, cl.loss);
    out.report.contrastive = cl.loss.value()[0];
    out.report.filtered_negatives = cl.filtered_negatives;
  }
  out.report.total = total.value()[0];
  out.report.batch_accuracy = mfb::accuracy(cls.pred.value(), labels);
  head.backward(total);

  const Tensor* dz = head.grad(z);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t ii = 0; ii < nb; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    Tensor seed({1, f});
    if (dz) std::copy_n(dz->data() + i * f, f, seed.data());
    images[i]->graph.backward(images[i]->features, seed);
  }

  const auto params = model.parameters();
  std::unordered_map<const Tensor*, std::size_t> slot;
  for (std::size_t k = 0; k < params.size(); ++k) slot.emplace(params[k].tensor, k);
  out.grads.reserve(params.size());
  for (const auto& p : params) out.grads.push_back(Tensor::zeros_like(*p.tensor));

  // Per-image contributions, summed in image order.
  std::vector<std::vector<const Tensor*>> per_param(params.size());
  auto gather = [&](const ad::ParameterBinder& bind) {
    for (const auto& [tensor, var] : bind.bound()) {
      if (const Tensor* g = var.graph->grad(var)) per_param[slot.at(tensor)].push_back(g);
    }
  };
  for (std::size_t i = 0; i < b; ++i) gather(images[i]->bind);
  gather(head_bind);
  const auto np = static_cast<std::ptrdiff_t>(params.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t kk = 0; kk < np; ++kk) {
    const auto k = static_cast<std::size_t>(kk);
    Tensor& acc = out.grads[k];
    for (const Tensor* g : per_param[k]) {
      for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += (*g)[e];
    }
  }
  return out;
}

double evaluate(const Model& model, const PatchedDataset& data) {
  if (data.size() == 0) throw ContractError("evaluate: empty dataset");
  const auto n = static_cast<std::ptrdiff_t>(data.size());
  std::vector<char> right(data.size(), 0);
  std::vector<std::exception_ptr> errors(data.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    try {
      const Tensor pred = predict(model, data.patches[i]);
      const auto best = std::max_element(pred.data(), pred.data() + pred.size()) - pred.data();
      right[i] = best == data.labels[i];
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  const auto correct = std::count(right.begin(), right.end(), 1);
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

std::string step_line(const StepLog& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g\n", s.step, s.lr, s.loss_ce, s.loss_cl, s.batch_acc);
  return buf;
}

std::string eval_line(const EvalLog& e) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%zu,%.9g\n", e.step, e.test_acc);
  return buf;
}

constexpr const char* kMetricsHeader = "step,lr,loss_ce,loss_cl,batch_acc\n";
constexpr const char* kEvalHeader = "eval_step,test_acc\n";

std::ofstream open_csv(const std::filesystem::path& path, const char* header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << header;
  return out;
}

}  // namespace

std::string metrics_csv(std::span<const StepLog> steps) {
  std::string out = kMetricsHeader;
  for (const StepLog& s : steps) out += step_line(s);
  return out;
}

std::string eval_csv(std::span<const EvalLog> evals) {
  std::string out = kEvalHeader;
  for (const EvalLog& e : evals) out += eval_line(e);
  return out;
}

TrainOutputs train(const TrainConfig& cfg, const PatchedDataset& train_set, const PatchedDataset* test_set,
                   const TrainHooks& hooks) {
  cfg.validate();
  if (train_set.size() < cfg.batch_size) {
    throw ConfigError("training split has " + std::to_string(train_set.size()) + " images, fewer than one batch");
  }
  TrainOutputs out;
  out.model = Model::init(cfg.model_config(train_set.classes), cfg.seed);
  Model& model = out.model;
  const auto named = model.parameters();
  std::vector<Tensor*> params;
  std::vector<Tensor> velocity;
  for (const auto& p : named) {
    params.push_back(p.tensor);
    velocity.push_back(Tensor::zeros_like(*p.tensor));
  }

  const bool to_disk = !hooks.out_dir.empty();
  std::ofstream metrics, evals;
  if (to_disk) {
    std::error_code ec;
    std::filesystem::create_directories(hooks.out_dir, ec);
    if (ec) throw IoError("cannot create " + hooks.out_dir.string() + ": " + ec.message());
    metrics = open_csv(hooks.out_dir / "metrics.csv", kMetricsHeader);
    evals = open_csv(hooks.out_dir / "eval.csv", kEvalHeader);
  }

  std::mt19937_64 data_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  auto make_checkpoint = [&](std::size_t steps_done) {
    Checkpoint c;
    c.config = cfg;
    c.classes = train_set.classes;
    c.step = steps_done;
    std::ostringstream rng_text;
    rng_text << data_rng;
    c.rng_state = rng_text.str();
    c.parameters = snapshot(model);
    for (std::size_t k = 0; k < named.size(); ++k) c.momentum.push_back({named[k].name, velocity[k]});
    return c;
  };

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // forces a shuffle before the first batch

  const LossSettings settings{cfg.contrastive, cfg.alpha};
  std::vector<const Tensor*> batch(cfg.batch_size);
  std::vector<int> labels(cfg.batch_size);
  for (std::size_t step = 0; step < cfg.total_steps; ++step) {
    if (cursor + cfg.batch_size > order.size()) {
      std::shuffle(order.begin(), order.end(), data_rng);
      cursor = 0;
    }
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      batch[i] = &train_set.patches[order[cursor + i]];
      labels[i] = train_set.labels[order[cursor + i]];
    }
    cursor += cfg.batch_size;

    BatchGradients bg;
    try {
      bg = batch_gradients(model, batch, labels, settings);
    } catch (const NumericError& e) {
      throw TrainingAborted(step, "step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(bg.report.total)) {
      throw TrainingAborted(step, "step " + std::to_string(step) + ": loss is not finite");
    }
    const double lr = lr_at(step, cfg);
    sgd_step(params, bg.grads, velocity, lr, cfg.momentum);

    StepLog log{step, lr, bg.report.cross_entropy, bg.report.contrastive, bg.report.batch_accuracy};
    out.steps.push_back(log);
    if (to_disk) metrics << step_line(log) << std::flush;
    if (hooks.on_step) hooks.on_step(log);

    const std::size_t done = step + 1;
    const bool last = done == cfg.total_steps;
    const bool periodic = cfg.eval_every > 0 && done % cfg.eval_every == 0;
    if ((periodic || last) && test_set != nullptr && test_set->size() > 0) {
      EvalLog e{done, evaluate(model, *test_set)};
      out.evals.push_back(e);
      if (to_disk) evals << eval_line(e) << std::flush;
      if (hooks.on_eval) hooks.on_eval(e);
    }
    if (to_disk && (periodic || last)) save_checkpoint(hooks.out_dir / "checkpoint.bin", make_checkpoint(done));
  }
  out.checkpoint = make_checkpoint(cfg.total_steps);
  return out;
}

}  // namespace simtrans
