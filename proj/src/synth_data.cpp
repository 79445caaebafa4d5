#include "simtrans/synth_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "simtrans/error.hpp"

namespace simtrans::synth {

namespace {

constexpr int kMaskSize = 9;
constexpr double kPartMass = 30.0;  // summed intensity of every part shape
constexpr double kBodyIntensity = 0.45;
constexpr double kNoiseSigma = 0.04;
constexpr std::size_t kMinSize = 40;

using Mask = std::array<std::array<bool, kMaskSize>, kMaskSize>;

Mask part_mask(std::size_t shape) {
  Mask m{};
  for (int y = 0; y < kMaskSize; ++y) {
    for (int x = 0; x < kMaskSize; ++x) {
      const int dx = x - kMaskSize / 2, dy = y - kMaskSize / 2;
      const int r2 = dx * dx + dy * dy;
      bool on = false;
      switch (shape) {
        case 0:  // filled square
          on = std::abs(dx) <= 3 && std::abs(dy) <= 3;
          break;
        case 1:  // plus
          on = std::abs(dx) <= 1 || std::abs(dy) <= 1;
          break;
        case 2:  // square ring
          on = std::abs(dx) >= 3 || std::abs(dy) >= 3;
          break;
        case 3:  // diagonal cross
          on = std::abs(dx - dy) <= 1 || std::abs(dx + dy) <= 1;
          break;
        case 4:  // annulus
          on = r2 >= 6 && r2 <= 16;
          break;
        case 5:  // horizontal bar
          on = std::abs(dy) <= 1 && std::abs(dx) <= 4;
          break;
        case 6:  // vertical bar
          on = std::abs(dx) <= 1 && std::abs(dy) <= 4;
          break;
        default:  // triangle
          on = dy >= dx;
          break;
      }
      m[y][x] = on;
    }
  }
  return m;
}

const std::array<Mask, kPartShapes>& masks() {
  static const std::array<Mask, kPartShapes> all = [] {
    std::array<Mask, kPartShapes> m{};
    for (std::size_t i = 0; i < kPartShapes; ++i) m[i] = part_mask(i);
    return m;
  }();
  return all;
}

double mask_intensity(const Mask& m) {
  int count = 0;
  for (const auto& row : m) count += static_cast<int>(std::count(row.begin(), row.end(), true));
  return std::min(1.0, kPartMass / count);
}

void stamp(std::vector<double>& canvas, std::size_t size, std::size_t shape, double scale, double cx, double cy) {
  const Mask& m = masks()[shape];
  const double value = mask_intensity(m);
  const int extent = std::max(1, static_cast<int>(std::lround(kMaskSize * scale)));
  const int x0 = static_cast<int>(std::lround(cx)) - extent / 2;
  const int y0 = static_cast<int>(std::lround(cy)) - extent / 2;
  for (int y = 0; y < extent; ++y) {
    for (int x = 0; x < extent; ++x) {
      const int my = std::min(kMaskSize - 1, y * kMaskSize / extent);
      const int mx = std::min(kMaskSize - 1, x * kMaskSize / extent);
      if (!m[my][mx]) continue;
      const int px = x0 + x, py = y0 + y;
      if (px < 0 || py < 0 || px >= static_cast<int>(size) || py >= static_cast<int>(size)) continue;
      double& dst = canvas[static_cast<std::size_t>(py) * size + static_cast<std::size_t>(px)];
      dst = std::max(dst, value);
    }
  }
}

void disk(std::vector<double>& canvas, std::size_t size, double cx, double cy, double r, double value) {
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      if (dx * dx + dy * dy <= r * r) canvas[y * size + x] = std::max(canvas[y * size + x], value);
    }
  }
}

// Pairs of class-specific shapes. Shapes 0 and 1 appear in every class.
std::vector<std::array<std::size_t, 2>> shape_pairs() {
  std::vector<std::array<std::size_t, 2>> pairs = {{2, 3}, {4, 5}, {6, 7}, {2, 5}};
  for (std::size_t a = 2; a < kPartShapes; ++a) {
    for (std::size_t b = a + 1; b < kPartShapes; ++b) {
      const std::array<std::size_t, 2> p = {a, b};
      if (std::find(pairs.begin(), pairs.end(), p) == pairs.end()) pairs.push_back(p);
    }
  }
  return pairs;
}

std::mt19937_64 image_rng(std::uint64_t seed, Split split, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split == Split::Train ? 0 : 1), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

std::string file_name(Split split, std::size_t index) {
  std::ostringstream s;
  s << (split == Split::Train ? "train/" : "test/");
  s.width(5);
  s.fill('0');
  s << index << ".pgm";
  return s.str();
}

}  // namespace

std::vector<GlyphSpec> class_specs(std::size_t classes) {
  if (classes < 2 || classes > kMaxClasses) {
    throw ConfigError("class count must be in 2.." + std::to_string(kMaxClasses) + ", got " + std::to_string(classes));
  }
  const auto pairs = shape_pairs();
  // Slot order is clockwise from the lower right corner. The second
  // arrangement swaps the shared and the specific shapes between the two
  // halves of the body.
  constexpr std::array<std::array<std::size_t, kSlots>, 2> kArrangements = {{{0, 1, 2, 3}, {2, 3, 0, 1}}};
  // Parts sit on the diagonals half a patch from the body, so at the
  // patch-aligned body positions each part lands near a patch centre.
  const double radius = 8.0 * std::numbers::sqrt2;
  std::vector<GlyphSpec> specs;
  for (std::size_t k = 0; k < classes; ++k) {
    const auto& pair = pairs[k / 2];
    const std::array<std::size_t, kSlots> shapes = {0, 1, pair[0], pair[1]};
    const auto& order = kArrangements[k % 2];
    GlyphSpec s;
    s.class_id = static_cast<int>(k);
    s.body_radius = 2.5;
    for (std::size_t slot = 0; slot < kSlots; ++slot) {
      Part p;
      p.shape = shapes[order[slot]];
      p.angle = std::numbers::pi / 4.0 + static_cast<double>(slot) * std::numbers::pi / 2.0;
      p.radius = radius;
      s.parts.push_back(p);
    }
    s.translation_step = 16.0;
    s.jitter_sigma = 1.0;
    s.rotation_jitter = std::numbers::pi / 36.0;
    s.clutter = 2;
    s.clutter_shapes = {0, 1};
    specs.push_back(std::move(s));
  }
  return specs;
}

pgm::Image render(const GlyphSpec& spec, std::size_t size, std::mt19937_64& rng) {
  if (size < kMinSize) throw ConfigError("synthetic images must be at least " + std::to_string(kMinSize) + " pixels wide");
  const double unit = static_cast<double>(size) / 64.0;
  const double half = static_cast<double>(size) / 2.0;
  std::uniform_int_distribution<int> step(-1, 1);
  std::normal_distribution<double> jitter(0.0, spec.jitter_sigma * unit);
  std::uniform_real_distribution<double> spin(-spec.rotation_jitter, spec.rotation_jitter);
  std::uniform_real_distribution<double> unit_interval(0.0, 1.0);

  double max_radius = 0.0;
  for (const Part& p : spec.parts) max_radius = std::max(max_radius, (p.radius + kMaskSize * p.scale / 2.0) * unit);
  // Keep every part fully inside the frame.
  const double lo = max_radius + 0.5, hi = static_cast<double>(size) - 0.5 - max_radius;
  auto place = [&] {
    const double c = half + spec.translation_step * unit * step(rng) + jitter(rng);
    return lo <= hi ? std::clamp(c, lo, hi) : half;
  };
  const double cx = place();
  const double cy = place();
  const double rotation = spin(rng);

  std::vector<double> canvas(size * size, 0.0);
  disk(canvas, size, cx, cy, spec.body_radius * unit, kBodyIntensity);
  for (const Part& p : spec.parts) {
    const double a = p.angle + rotation;
    stamp(canvas, size, p.shape, p.scale, cx + p.radius * unit * std::cos(a), cy + p.radius * unit * std::sin(a));
  }

  const double margin = kMaskSize / 2.0 + 1.0;
  for (std::size_t c = 0; c < spec.clutter && !spec.clutter_shapes.empty(); ++c) {
    const std::size_t shape =
        spec.clutter_shapes[std::uniform_int_distribution<std::size_t>(0, spec.clutter_shapes.size() - 1)(rng)];
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double x = margin + unit_interval(rng) * (static_cast<double>(size) - 2.0 * margin);
      const double y = margin + unit_interval(rng) * (static_cast<double>(size) - 2.0 * margin);
      if (std::hypot(x - cx, y - cy) > max_radius + kMaskSize) {
        stamp(canvas, size, shape, 1.0, x, y);
        break;
      }
    }
  }

  std::uniform_real_distribution<double> gain_dist(0.8, 1.0);
  std::normal_distribution<double> noise(0.0, kNoiseSigma);
  const double gain = gain_dist(rng);
  pgm::Image img;
  img.width = img.height = size;
  img.pixels.resize(size * size);
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    const double v = std::clamp(canvas[i] * gain + noise(rng), 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

Tensor to_tensor(const pgm::Image& image) {
  Tensor t({image.height, image.width, 3});
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const double v = image.pixels[i] / 255.0;
    t[3 * i] = t[3 * i + 1] = t[3 * i + 2] = v;
  }
  return t;
}

namespace {

Dataset render_split(const std::vector<GlyphSpec>& specs, const GenerateOptions& o, Split split, std::size_t count,
                     std::vector<pgm::Image>* keep) {
  Dataset d;
  d.classes = specs.size();
  d.images.resize(count);
  d.labels.resize(count);
  if (keep) keep->resize(count);
  const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const std::size_t label = i % specs.size();
    std::mt19937_64 rng = image_rng(o.seed, split, i);
    pgm::Image img = render(specs[label], o.image_size, rng);
    d.images[i] = to_tensor(img);
    d.labels[i] = static_cast<int>(label);
    if (keep) (*keep)[i] = std::move(img);
  }
  return d;
}

}  // namespace

GenerationSummary generate(const GenerateOptions& o, const std::filesystem::path& out_dir) {
  const std::vector<GlyphSpec> specs = class_specs(o.classes);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "train", ec);
  if (!ec) fs::create_directories(out_dir / "test", ec);
  if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());

  std::vector<pgm::Image> train_imgs, test_imgs;
  const Dataset train = render_split(specs, o, Split::Train, o.train, &train_imgs);
  const Dataset test = render_split(specs, o, Split::Test, o.test, &test_imgs);

  std::ostringstream manifest;
  auto emit = [&](Split split, const std::vector<pgm::Image>& imgs, const Dataset& d) {
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      const std::string name = file_name(split, i);
      pgm::write(out_dir / name, imgs[i]);
      manifest << name << '\t' << d.labels[i] << '\n';
    }
  };
  emit(Split::Train, train_imgs, train);
  emit(Split::Test, test_imgs, test);
  {
    std::ofstream f(out_dir / "manifest.tsv", std::ios::binary);
    if (!f) throw IoError("cannot write " + (out_dir / "manifest.tsv").string());
    f << manifest.str();
    if (!f) throw IoError("failed writing " + (out_dir / "manifest.tsv").string());
  }

  GenerationSummary s;
  s.classes = o.classes;
  s.train_counts.assign(o.classes, 0);
  s.test_counts.assign(o.classes, 0);
  for (int y : train.labels) ++s.train_counts[static_cast<std::size_t>(y)];
  for (int y : test.labels) ++s.test_counts[static_cast<std::size_t>(y)];
  s.centroid_accuracy = (o.train > 0 && o.test > 0) ? nearest_centroid_accuracy(train, test) : 0.0;
  return s;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dataset_dir) {
  const auto path = dataset_dir / "manifest.tsv";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw IoError(path.string() + ":" + std::to_string(line_no) + ": missing TAB");
    ManifestEntry e;
    e.file = line.substr(0, tab);
    try {
      e.label = std::stoi(line.substr(tab + 1));
    } catch (const std::logic_error&) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad label");
    }
    if (e.label < 0) throw IoError(path.string() + ":" + std::to_string(line_no) + ": negative label");
    entries.push_back(std::move(e));
  }
  return entries;
}

Dataset load_split(const std::filesystem::path& dataset_dir, Split split) {
  const std::string prefix = split == Split::Train ? "train/" : "test/";
  const std::vector<ManifestEntry> entries = read_manifest(dataset_dir);
  Dataset d;
  int max_label = -1;
  for (const ManifestEntry& e : entries) {
    max_label = std::max(max_label, e.label);
    if (e.file.rfind(prefix, 0) != 0) continue;
    d.images.push_back(to_tensor(pgm::read(dataset_dir / e.file)));
    d.labels.push_back(e.label);
  }
  d.classes = static_cast<std::size_t>(max_label + 1);
  return d;
}

double nearest_centroid_accuracy(const Dataset& train, const Dataset& test) {
  if (train.size() == 0 || test.size() == 0) throw ContractError("nearest centroid needs non-empty splits");
  const std::size_t classes = std::max(train.classes, test.classes);
  const std::size_t pixels = train.images.front().size();
  std::vector<std::vector<double>> centroid(classes, std::vector<double>(pixels, 0.0));
  std::vector<std::size_t> count(classes, 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    auto& c = centroid[static_cast<std::size_t>(train.labels[i])];
    for (std::size_t p = 0; p < pixels; ++p) c[p] += train.images[i][p];
    ++count[static_cast<std::size_t>(train.labels[i])];
  }
  for (std::size_t k = 0; k < classes; ++k) {
    if (count[k] == 0) continue;
    for (double& v : centroid[k]) v /= static_cast<double>(count[k]);
  }
  std::size_t right = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_k = -1;
    for (std::size_t k = 0; k < classes; ++k) {
      if (count[k] == 0) continue;
      double dist = 0.0;
      for (std::size_t p = 0; p < pixels; ++p) {
        const double diff = test.images[i][p] - centroid[k][p];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        best_k = static_cast<int>(k);
      }
    }
    if (best_k == test.labels[i]) ++right;
  }
  return static_cast<double>(right) / static_cast<double>(test.size());
}

}  // namespace simtrans::synth
