#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "simtrans/error.hpp"
#include "simtrans/synth_data.hpp"

using namespace simtrans;
using namespace simtrans::synth;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("simtrans_synth_" + name);
  fs::remove_all(p);
  return p;
}

std::multiset<std::size_t> shapes_of(const GlyphSpec& s) {
  std::multiset<std::size_t> out;
  for (const Part& p : s.parts) out.insert(p.shape);
  return out;
}

// (shape, angle quantized to quarter turns, radius rounded to a pixel)
std::multiset<std::tuple<std::size_t, long, long>> layout_of(const GlyphSpec& s) {
  std::multiset<std::tuple<std::size_t, long, long>> out;
  for (const Part& p : s.parts) out.insert({p.shape, std::lround(p.angle / (std::numbers::pi / 2.0) * 2.0), std::lround(p.radius)});
  return out;
}

}  // namespace

TEST(ClassSpecs, ClassesShareAtLeastHalfTheirParts) {
  const auto specs = class_specs(kMaxClasses);
  for (std::size_t a = 0; a < specs.size(); ++a) {
    for (std::size_t b = a + 1; b < specs.size(); ++b) {
      const auto sa = shapes_of(specs[a]), sb = shapes_of(specs[b]);
      std::vector<std::size_t> common;
      std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(common));
      EXPECT_GE(2 * common.size(), std::max(sa.size(), sb.size())) << a << " vs " << b;
    }
  }
}

TEST(ClassSpecs, LayoutIdentifiesTheClass) {
  const auto specs = class_specs(kMaxClasses);
  std::set<std::multiset<std::tuple<std::size_t, long, long>>> seen;
  for (const auto& s : specs) EXPECT_TRUE(seen.insert(layout_of(s)).second) << s.class_id;
}

TEST(ClassSpecs, SameShapesDifferentArrangement) {
  // Consecutive class pairs use the same shapes and differ only in position.
  const auto specs = class_specs(8);
  for (std::size_t k = 0; k < 8; k += 2) {
    EXPECT_EQ(shapes_of(specs[k]), shapes_of(specs[k + 1]));
    EXPECT_NE(layout_of(specs[k]), layout_of(specs[k + 1]));
  }
}

TEST(ClassSpecs, RejectsClassCountOutOfRange) {
  EXPECT_THROW(class_specs(1), ConfigError);
  EXPECT_THROW(class_specs(kMaxClasses + 1), ConfigError);
  EXPECT_EQ(class_specs(2).size(), 2u);
}

TEST(Render, ObjectStaysInsideTheFrame) {
  // Without clutter only the glyph is bright; the one-pixel border must stay
  // at noise level for every body position.
  auto specs = class_specs(8);
  for (auto& s : specs) s.clutter = 0;
  for (std::size_t size : {48u, 64u, 96u}) {
    for (int i = 0; i < 200; ++i) {
      std::mt19937_64 rng(1000 + i);
      const pgm::Image img = render(specs[i % 8], size, rng);
      ASSERT_EQ(img.pixels.size(), size * size);
      for (std::size_t t = 0; t < size; ++t) {
        for (std::size_t idx : {t, (size - 1) * size + t, t * size, t * size + size - 1}) {
          ASSERT_LT(img.pixels[idx], 80) << "size " << size << " image " << i;
        }
      }
    }
  }
}

TEST(Render, RejectsTinyImages) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(render(class_specs(2)[0], 32, rng), ConfigError);
}

TEST(Generate, DeterministicInSeed) {
  const fs::path a = scratch("a"), b = scratch("b"), c = scratch("c");
  const GenerateOptions o{.seed = 5, .classes = 4, .train = 20, .test = 8, .image_size = 48};
  generate(o, a);
  generate(o, b);
  GenerateOptions other = o;
  other.seed = 6;
  generate(other, c);
  EXPECT_EQ(slurp(a / "manifest.tsv"), slurp(b / "manifest.tsv"));
  for (const auto& e : read_manifest(a)) EXPECT_EQ(slurp(a / e.file), slurp(b / e.file)) << e.file;
  EXPECT_NE(slurp(a / "train/00000.pgm"), slurp(c / "train/00000.pgm"));
  for (const auto& p : {a, b, c}) fs::remove_all(p);
}

TEST(Generate, BalancedManifestAndDisjointSplits) {
  const fs::path dir = scratch("balance");
  const GenerateOptions o{.seed = 2, .classes = 3, .train = 17, .test = 7, .image_size = 48};
  const GenerationSummary s = generate(o, dir);
  for (const auto* counts : {&s.train_counts, &s.test_counts}) {
    const auto [lo, hi] = std::minmax_element(counts->begin(), counts->end());
    EXPECT_LE(*hi - *lo, 1u);
  }
  const auto entries = read_manifest(dir);
  ASSERT_EQ(entries.size(), 24u);
  std::set<std::string> train_bytes;
  std::map<int, int> label_count;
  for (const auto& e : entries) {
    ++label_count[e.label];
    if (e.file.rfind("train/", 0) == 0) train_bytes.insert(slurp(dir / e.file));
  }
  EXPECT_EQ(label_count.size(), 3u);
  for (const auto& e : entries) {
    if (e.file.rfind("test/", 0) == 0) {
      EXPECT_FALSE(train_bytes.count(slurp(dir / e.file))) << e.file;
    }
  }
  const Dataset train = load_split(dir, Split::Train), test = load_split(dir, Split::Test);
  EXPECT_EQ(train.size(), 17u);
  EXPECT_EQ(test.size(), 7u);
  EXPECT_EQ(train.classes, 3u);
  EXPECT_EQ(train.images[0].shape(), (Shape{48, 48, 3}));
  fs::remove_all(dir);
}

TEST(Generate, DefaultSetDefeatsPixelCentroids) {
  const fs::path dir = scratch("default");
  const GenerationSummary s = generate(GenerateOptions{}, dir);
  EXPECT_LT(s.centroid_accuracy, 0.6);
  EXPECT_DOUBLE_EQ(s.centroid_accuracy,
                   nearest_centroid_accuracy(load_split(dir, Split::Train), load_split(dir, Split::Test)));
  fs::remove_all(dir);
}

TEST(Generate, UnwritableDirectoryIsAnIoError) {
  EXPECT_THROW(generate(GenerateOptions{.train = 2, .test = 2}, "/proc/simtrans_cannot_write"), IoError);
}

TEST(Manifest, MalformedLinesAreIoErrors) {
  const fs::path dir = scratch("manifest");
  fs::create_directories(dir);
  std::ofstream(dir / "manifest.tsv") << "train/00000.pgm 3\n";
  EXPECT_THROW(read_manifest(dir), IoError);
  std::ofstream(dir / "manifest.tsv") << "train/00000.pgm\tdog\n";
  EXPECT_THROW(read_manifest(dir), IoError);
  EXPECT_THROW(read_manifest(dir / "missing"), IoError);
  fs::remove_all(dir);
}

TEST(Pgm, RoundTripAndTensorScaling) {
  const fs::path p = fs::temp_directory_path() / "simtrans_roundtrip.pgm";
  pgm::Image img;
  img.width = 5;
  img.height = 3;
  for (int i = 0; i < 15; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i * 17));
  pgm::write(p, img);
  const pgm::Image back = pgm::read(p);
  EXPECT_EQ(back.width, 5u);
  EXPECT_EQ(back.height, 3u);
  EXPECT_EQ(back.pixels, img.pixels);
  const Tensor t = to_tensor(back);
  EXPECT_EQ(t.shape(), (Shape{3, 5, 3}));
  EXPECT_EQ(t[3 * 14], 238.0 / 255.0);
  EXPECT_EQ(t[3 * 14 + 2], 238.0 / 255.0);
  EXPECT_EQ(t[3], 17.0 / 255.0);
  fs::remove(p);
  EXPECT_THROW(pgm::read(p), IoError);
}

TEST(NearestCentroid, SeparableToyData) {
  Dataset train, test;
  train.classes = test.classes = 2;
  for (int i = 0; i < 4; ++i) {
    train.images.emplace_back(Shape{2, 2, 3}, i % 2 ? 0.9 : 0.1);
    train.labels.push_back(i % 2);
  }
  test.images.emplace_back(Shape{2, 2, 3}, 0.8);
  test.labels.push_back(1);
  test.images.emplace_back(Shape{2, 2, 3}, 0.3);
  test.labels.push_back(1);
  EXPECT_DOUBLE_EQ(nearest_centroid_accuracy(train, test), 0.5);
}
