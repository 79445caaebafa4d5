#include <gtest/gtest.h>

#include <random>
#include <set>

#include "gradcheck.hpp"
#include "simtrans/error.hpp"
#include "simtrans/mfb.hpp"
#include "simtrans/model.hpp"

using namespace simtrans;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.image_size = 32;
  c.patch = 8;
  c.stride = 8;
  c.backbone = {.dim = 16, .heads = 4, .ffn_dim = 32, .layers = 4};
  c.classes = 5;
  return c;
}

// Non-zero head so predictions depend on the features.
void randomize_head(Model& m, std::mt19937_64& rng) {
  m.head_w = simtrans::testing::random_tensor(m.head_w.shape(), rng);
  m.head_b = simtrans::testing::random_tensor(m.head_b.shape(), rng);
}

}  // namespace

TEST(Model, BaselineIsPlainEncoderStack) {
  ModelConfig c = small_config();
  c.sil_layer_count = 0;
  c.mfb = false;
  Model m = Model::init(c, 3);
  std::mt19937_64 rng(4);
  randomize_head(m, rng);
  EXPECT_TRUE(m.gcn.empty());
  const Tensor patches = simtrans::testing::random_tensor({c.grid().count(), c.grid().patch_dim()}, rng);

  ad::Graph g;
  ad::ParameterBinder bind(g, false);
  ad::Var z = embed(bind, g.constant(patches), m.encoder);
  for (const LayerParams& l : m.encoder.layers) z = encoder_layer(bind, z, l, c.backbone, false).tokens;
  const Tensor manual = mfb::classify(ad::slice_rows(z, 0, 1), bind(m.head_w), bind(m.head_b)).pred.value();

  EXPECT_EQ(predict(m, patches), manual);
}

TEST(Model, ZeroGraphWeightsReduceToBaseline) {
  ModelConfig with = small_config();
  with.sil_layer_count = 3;
  ModelConfig without = with;
  without.sil_layer_count = 0;

  Model a = Model::init(with, 9);
  Model b = Model::init(without, 9);
  for (auto& p : a.gcn) p = sil::GcnParams::zeros(with.gcn_width(), with.backbone.dim);
  std::mt19937_64 rng(5);
  randomize_head(a, rng);
  b.head_w = a.head_w;
  b.head_b = a.head_b;
  ASSERT_EQ(a.encoder.pos_embed, b.encoder.pos_embed);

  const Tensor patches = simtrans::testing::random_tensor({with.grid().count(), with.grid().patch_dim()}, rng);
  EXPECT_EQ(predict(a, patches), predict(b, patches));
}

TEST(Model, StructureLayersAreTheLastOnes) {
  ModelConfig c = small_config();
  c.sil_layer_count = 2;
  EXPECT_EQ(c.sil_layers(), (std::vector<std::size_t>{3, 4}));
  c.sil_layer_count = 0;
  EXPECT_TRUE(c.sil_layers().empty());
}

TEST(Model, ForwardRecordsEquippedLayers) {
  ModelConfig c = small_config();
  c.sil_layer_count = 2;
  const Model m = Model::init(c, 1);
  std::mt19937_64 rng(6);
  const Tensor patches = simtrans::testing::random_tensor({c.grid().count(), c.grid().patch_dim()}, rng);
  ad::Graph g;
  ad::ParameterBinder bind(g, false);
  const ImageOutput out = image_features(bind, m, patches);
  ASSERT_EQ(out.trace.records.size(), 2u);
  EXPECT_EQ(out.trace.records[0].layer, 3u);
  EXPECT_EQ(out.trace.records[1].layer, 4u);
  EXPECT_EQ(out.trace.records[0].heads.size(), 4u);
  EXPECT_EQ(out.trace.cls.size(), 4u);
  EXPECT_EQ(out.features.shape(), (Shape{1, 48}));
}

TEST(Model, ParameterNamesAreUniqueAndCountsAgree) {
  const Model m = Model::init(small_config(), 2);
  std::set<std::string> names;
  std::size_t total = 0;
  for (const auto& p : m.parameters()) {
    EXPECT_TRUE(names.insert(p.name).second) << p.name;
    total += p.tensor->size();
  }
  EXPECT_EQ(total, m.parameter_count());
  EXPECT_TRUE(names.count("gcn3.w2"));
  EXPECT_FALSE(names.count("gcn4.w1"));
  EXPECT_TRUE(names.count("encoder.layer4.ln2_beta"));
}

TEST(Model, SharedGraphWeights) {
  ModelConfig c = small_config();
  c.share_gcn = true;
  EXPECT_EQ(Model::init(c, 1).gcn.size(), 1u);
}

TEST(Model, HeadStartsAtZero) {
  const Model m = Model::init(small_config(), 2);
  for (double v : m.head_w.values()) EXPECT_EQ(v, 0.0);
}

TEST(Model, ValidateRejectsInconsistentSettings) {
  ModelConfig c = small_config();
  c.backbone.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.sil_layer_count = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.backbone.layers = 2;
  c.sil_layer_count = 1;
  EXPECT_THROW(c.validate(), ConfigError);  // multi-level head needs 3 layers
  c = small_config();
  c.classes = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.patch = 32;
  c.stride = 32;  // a single patch
  EXPECT_THROW(c.validate(), ConfigError);
}
