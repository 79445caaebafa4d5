// simtrans: dataset generation, training, evaluation, attention maps and the
// ablation matrix.
//
// Exit codes: 0 ok, 2 bad arguments, 3 I/O failure, 4 numeric abort.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "simtrans/ablation.hpp"
#include "simtrans/checkpoint.hpp"
#include "simtrans/config.hpp"
#include "simtrans/error.hpp"
#include "simtrans/heatmap.hpp"
#include "simtrans/pgm.hpp"
#include "simtrans/synth_data.hpp"
#include "simtrans/train.hpp"

namespace fs = std::filesystem;
using namespace simtrans;

namespace {

constexpr int kArgError = 2;
constexpr int kIoError = 3;
constexpr int kNumericError = 4;

// Command-line spelling of every config key. Values stay strings until
// TrainConfig::set parses them, so file and flag share one parser.
struct Override {
  const char* flag;
  const char* key;
  const char* help;
  std::string value;
  CLI::Option* option = nullptr;
};

std::vector<Override> config_overrides() {
  return {
      {"--lr", "lr", "initial learning rate", {}},
      {"--momentum", "momentum", "SGD momentum", {}},
      {"--steps", "total_steps", "optimizer steps", {}},
      {"--warmup", "warmup_steps", "linear warm-up steps", {}},
      {"--batch", "batch_size", "images per batch", {}},
      {"--alpha", "alpha", "contrastive margin", {}},
      {"--sil-layers", "sil_layer_count", "structure modules in the last N layers (0-3)", {}},
      {"--mfb", "mfb", "multi-level features (on/off)", {}},
      {"--contrastive", "contrastive", "contrastive loss (on/off; needs --mfb on)", {}},
      {"--seed", "seed", "model init and data order seed", {}},
      {"--eval-every", "eval_every", "test evaluation period in steps, 0 = only at the end", {}},
      {"--image-size", "image_size", "input height and width", {}},
      {"--patch", "patch", "patch size", {}},
      {"--stride", "stride", "patch stride", {}},
      {"--depth", "depth", "encoder layers", {}},
      {"--dim", "dim", "model width", {}},
      {"--heads", "heads", "attention heads", {}},
      {"--ffn-dim", "ffn_dim", "feed-forward width", {}},
      {"--gcn-hidden", "gcn_hidden", "graph convolution hidden width, 0 = model width", {}},
      {"--share-gcn", "share_gcn", "one graph convolution for all structure layers (on/off)", {}},
  };
}

std::string default_of(const std::string& key) {
  const std::string text = TrainConfig{}.to_text();
  const std::string prefix = key + " = ";
  const auto at = text.find(prefix);
  if (at == std::string::npos) return {};
  const auto start = at + prefix.size();
  return text.substr(start, text.find('\n', start) - start);
}

void add_overrides(CLI::App* cmd, std::vector<Override>& overrides) {
  for (auto& o : overrides) {
    o.option = cmd->add_option(o.flag, o.value, o.help)->default_str(default_of(o.key))->group("Training");
  }
}

// File first, then flags. Turning mfb off without saying anything about the
// contrastive loss also turns the loss off, since it lives on the
// multi-level features.
TrainConfig resolve_config(const std::string& config_path, const std::vector<Override>& overrides) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{} : TrainConfig::from_file(config_path);
  bool contrastive_given = false;
  for (const auto& o : overrides) {
    if (o.option->count() == 0) continue;
    cfg.set(o.key, o.value);
    if (std::string(o.key) == "contrastive") contrastive_given = true;
  }
  if (!cfg.mfb && !contrastive_given) cfg.contrastive = false;
  cfg.validate();
  return cfg;
}

struct LoadedData {
  PatchedDataset train;
  PatchedDataset test;
};

PatchedDataset load_patched(const fs::path& dir, synth::Split split, const TrainConfig& cfg) {
  const synth::Dataset d = synth::load_split(dir, split);
  if (d.size() > 0) {
    const Tensor& img = d.images.front();
    if (img.shape()[0] != cfg.image_size || img.shape()[1] != cfg.image_size) {
      throw ConfigError("dataset images are " + std::to_string(img.shape()[1]) + "x" + std::to_string(img.shape()[0]) +
                        " but image_size is " + std::to_string(cfg.image_size));
    }
  }
  return patchify(d, cfg.model_config(std::max<std::size_t>(d.classes, 2)).grid());
}

LoadedData load_data(const fs::path& dir, const TrainConfig& cfg) {
  LoadedData data{load_patched(dir, synth::Split::Train, cfg), load_patched(dir, synth::Split::Test, cfg)};
  // Labels are counted per split; the model needs the larger of the two.
  const std::size_t classes = std::max(data.train.classes, data.test.classes);
  data.train.classes = data.test.classes = classes;
  if (data.train.size() == 0) throw ConfigError("no training images under " + dir.string());
  return data;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

int run_gen(std::uint64_t seed, std::size_t classes, std::size_t n_train, std::size_t n_test, std::size_t size,
            const std::string& out) {
  synth::GenerateOptions o;
  o.seed = seed;
  o.classes = classes;
  o.train = n_train;
  o.test = n_test;
  o.image_size = size;
  const synth::GenerationSummary s = synth::generate(o, out);
  std::printf("wrote %zu train / %zu test images (%zux%zu) to %s\n", n_train, n_test, size, size, out.c_str());
  std::printf("class  train  test\n");
  for (std::size_t c = 0; c < s.classes; ++c) std::printf("%5zu  %5zu  %4zu\n", c, s.train_counts[c], s.test_counts[c]);
  std::printf("nearest-centroid test accuracy: %.4f\n", s.centroid_accuracy);
  return 0;
}

int run_train(const TrainConfig& cfg, const std::string& data_dir, const std::string& out) {
  const LoadedData data = load_data(data_dir, cfg);
  TrainHooks hooks;
  hooks.out_dir = out;
  hooks.on_step = [&](const StepLog& s) {
    if ((s.step + 1) % 100 == 0 || s.step == 0) {
      std::printf("step %5zu  lr %.5f  ce %.4f  cl %.4f  acc %.3f\n", s.step + 1, s.lr, s.loss_ce, s.loss_cl,
                  s.batch_acc);
      std::fflush(stdout);
    }
  };
  hooks.on_eval = [](const EvalLog& e) {
    std::printf("eval  step %zu  test accuracy %.4f\n", e.step, e.test_acc);
    std::fflush(stdout);
  };
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());
  write_text(fs::path(out) / "config.txt", cfg.to_text());
  train(cfg, data.train, &data.test, hooks);
  std::printf("checkpoint: %s\n", (fs::path(out) / "checkpoint.bin").c_str());
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_dir) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Model model = model_from_checkpoint(ckpt);
  const PatchedDataset test = load_patched(data_dir, synth::Split::Test, ckpt.config);
  if (test.size() == 0) throw ConfigError("no test images under " + data_dir);
  for (int y : test.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= ckpt.classes) {
      throw ConfigError("test label " + std::to_string(y) + " outside the checkpoint's " +
                        std::to_string(ckpt.classes) + " classes");
    }
  }
  const double acc = evaluate(model, test);
  std::printf("accuracy %.4f (%zu images)\n", acc, test.size());
  return 0;
}

int run_attnmap(const std::string& ckpt_path, const std::string& image_path, std::size_t layer,
                const std::string& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Model model = model_from_checkpoint(ckpt);
  const pgm::Image img = pgm::read(image_path);
  if (img.width != ckpt.config.image_size || img.height != ckpt.config.image_size) {
    throw ConfigError("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                      ", the model expects " + std::to_string(ckpt.config.image_size) + "x" +
                      std::to_string(ckpt.config.image_size));
  }
  const Tensor patches = split_patches(synth::to_tensor(img), model.config.grid());
  const AttentionMaps maps = attention_maps(model, patches, layer);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());
  const fs::path raw = fs::path(out) / ("attention_layer" + std::to_string(layer) + ".pgm");
  const fs::path kept = fs::path(out) / ("attention_layer" + std::to_string(layer) + "_filtered.pgm");
  pgm::write(raw, maps.raw);
  pgm::write(kept, maps.filtered);
  const PatchGrid grid = model.config.grid();
  std::printf("%s\n%s\n%zux%zu patches, reference patch %zu (row %zu, col %zu)\n", raw.c_str(), kept.c_str(),
              grid.n_w, grid.n_h, maps.reference, grid.row_of(maps.reference), grid.col_of(maps.reference));
  return 0;
}

int run_ablate(const TrainConfig& cfg, const std::string& data_dir, std::size_t seeds, bool sweep,
               const std::string& csv_path) {
  if (seeds == 0) throw ConfigError("--seeds must be at least 1");
  const LoadedData data = load_data(data_dir, cfg);
  const auto variants = sweep ? layer_sweep() : component_ablation();
  for (const auto& v : variants) v.apply(cfg).validate();
  const auto rows = run_ablation(cfg, variants, seeds, data.train, data.test,
                                 [](const std::string& name, std::uint64_t seed, double acc) {
                                   std::printf("%-34s seed %llu  accuracy %.4f\n", name.c_str(),
                                               static_cast<unsigned long long>(seed), acc);
                                   std::fflush(stdout);
                                 });
  std::printf("\n%s", format_table(rows).c_str());
  if (!csv_path.empty()) {
    write_text(csv_path, format_csv(rows));
    std::printf("csv: %s\n", csv_path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structure-aware vision transformer for fine-grained classification on synthetic data"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every command");

  auto* gen = app.add_subcommand("gen", "generate the synthetic dataset");
  std::uint64_t seed = 7;
  std::size_t classes = 8, n_train = 1600, n_test = 400, size = 64;
  std::string out;
  gen->add_option("--seed", seed, "generator seed")->capture_default_str();
  gen->add_option("--classes", classes, "number of classes")->check(CLI::Range(std::size_t{2}, synth::kMaxClasses))->capture_default_str();
  gen->add_option("--train", n_train, "training images")->capture_default_str();
  gen->add_option("--test", n_test, "test images")->capture_default_str();
  gen->add_option("--size", size, "image height and width")->capture_default_str();
  gen->add_option("--out", out, "output directory")->required();

  std::vector<Override> train_over = config_overrides();
  auto* tr = app.add_subcommand("train", "train one model; flags override the config file");
  std::string config_path, data_dir;
  tr->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  tr->add_option("--data", data_dir, "dataset directory (contains manifest.tsv)")->required();
  tr->add_option("--out", out, "run directory for metrics.csv, eval.csv, checkpoint.bin")->required();
  add_overrides(tr, train_over);

  auto* ev = app.add_subcommand("eval", "test accuracy of a checkpoint");
  std::string ckpt;
  ev->add_option("--ckpt", ckpt, "checkpoint file")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();

  auto* am = app.add_subcommand("attnmap", "write the attention heatmaps of one layer as PGM");
  std::string image;
  std::size_t layer = 0;
  am->add_option("--ckpt", ckpt, "checkpoint file")->required();
  am->add_option("--image", image, "input image (P5 PGM)")->required();
  am->add_option("--layer", layer, "1-based layer with a structure module")->required();
  am->add_option("--out", out, "output directory")->required();

  std::vector<Override> ablate_over = config_overrides();
  auto* ab = app.add_subcommand("ablate", "train the ablation variants and tabulate mean test accuracy");
  std::size_t seeds = 3;
  bool sweep = false;
  std::string csv_path;
  ab->add_option("--data", data_dir, "dataset directory")->required();
  ab->add_option("--seeds", seeds, "runs per variant (seeds seed, seed+1, ...)")->capture_default_str();
  ab->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  ab->add_option("--csv", csv_path, "also write the table as CSV");
  ab->add_flag("--layer-sweep", sweep, "compare structure modules in the last 1, 2, 3 layers instead");
  add_overrides(ab, ablate_over);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kArgError;
  }

  try {
    if (*gen) return run_gen(seed, classes, n_train, n_test, size, out);
    if (*tr) return run_train(resolve_config(config_path, train_over), data_dir, out);
    if (*ev) return run_eval(ckpt, data_dir);
    if (*am) return run_attnmap(ckpt, image, layer, out);
    if (*ab) return run_ablate(resolve_config(config_path, ablate_over), data_dir, seeds, sweep, csv_path);
  } catch (const TrainingAborted& e) {
    std::fprintf(stderr, "training aborted at step %zu: %s\n", e.step(), e.what());
    return kNumericError;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumericError;
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kIoError;
  } catch (const std::invalid_argument& e) {  // ConfigError, DimensionError
    std::fprintf(stderr, "error: %s\n", e.what());
    return kArgError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
  return kArgError;
}
