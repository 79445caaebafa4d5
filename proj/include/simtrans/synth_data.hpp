#pragma once

// Procedural fine-grained dataset. Every class draws four parts at the
// corners of a small shared body. All classes share two part shapes; a class
// is a choice of two further shapes plus one of two arrangements, so pairs of
// classes with the same shapes differ only in where each part sits. Clutter
// reuses the shared shapes, and the whole glyph moves between patch-aligned
// positions, so a model has to find the object before it can read it.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "simtrans/pgm.hpp"
#include "simtrans/tensor.hpp"

namespace simtrans::synth {

inline constexpr std::size_t kPartShapes = 8;
inline constexpr std::size_t kSlots = 4;
inline constexpr std::size_t kMaxClasses = 30;

// Geometry below is in pixels of a 64x64 image and scales with the size.
struct Part {
  std::size_t shape = 0;  // index into the part shapes
  double angle = 0.0;     // radians, body-relative
  double radius = 0.0;    // distance from the body centre
  double scale = 1.0;
};

struct GlyphSpec {
  int class_id = 0;
  double body_radius = 0.0;  // the body is a disk shared by every class
  std::vector<Part> parts;
  double translation_step = 0.0;  // body centre moves by -1, 0 or +1 steps per axis
  double jitter_sigma = 0.0;      // extra Gaussian translation
  double rotation_jitter = 0.0;   // radians, uniform +-
  std::size_t clutter = 0;
  std::vector<std::size_t> clutter_shapes;
};

/// Class recipes for `classes` classes. Throws ConfigError outside
/// 2..kMaxClasses.
std::vector<GlyphSpec> class_specs(std::size_t classes);

/// One rendered sample, 8-bit grayscale, `size` x `size`.
pgm::Image render(const GlyphSpec& spec, std::size_t size, std::mt19937_64& rng);

struct GenerateOptions {
  std::uint64_t seed = 7;
  std::size_t classes = 8;
  std::size_t train = 1600;
  std::size_t test = 400;
  std::size_t image_size = 64;
};

struct GenerationSummary {
  std::size_t classes = 0;
  std::vector<std::size_t> train_counts;
  std::vector<std::size_t> test_counts;
  double centroid_accuracy = 0.0;  // nearest class-mean pixel classifier, test split
};

/// Writes train/NNNNN.pgm, test/NNNNN.pgm and manifest.tsv (relative
/// filename TAB label) under `out_dir`. Deterministic in the seed.
/// Throws IoError when the directory cannot be written.
GenerationSummary generate(const GenerateOptions& options, const std::filesystem::path& out_dir);

enum class Split { Train, Test };

struct ManifestEntry {
  std::string file;
  int label = 0;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dataset_dir);

struct Dataset {
  std::vector<Tensor> images;  // H x W x 3, values in [0, 1]
  std::vector<int> labels;
  std::size_t classes = 0;  // 1 + largest label over both splits

  std::size_t size() const noexcept { return images.size(); }
};

/// Gray byte image to an H x W x 3 tensor in [0, 1].
Tensor to_tensor(const pgm::Image& image);

/// Loads the entries of one split (files under train/ or test/).
Dataset load_split(const std::filesystem::path& dataset_dir, Split split);

/// Accuracy on `test` of assigning each image to the nearest per-class mean
/// image of `train` (Euclidean distance over pixels).
double nearest_centroid_accuracy(const Dataset& train, const Dataset& test);

}  // namespace simtrans::synth
