#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "simtrans/config.hpp"
#include "simtrans/error.hpp"

using namespace simtrans;

TEST(Config, TextRoundTrip) {
  TrainConfig c;
  c.lr = 0.0123456789012345;
  c.mfb = false;
  c.contrastive = false;
  c.seed = 42;
  c.gcn_hidden = 7;
  TrainConfig d;
  d.apply_text(c.to_text());
  EXPECT_EQ(c, d);
  EXPECT_EQ(c.to_text(), d.to_text());
}

TEST(Config, DefaultsMatchDeskRecipe) {
  const TrainConfig c;
  EXPECT_EQ(c.lr, 1e-2);
  EXPECT_EQ(c.total_steps, 3000u);
  EXPECT_EQ(c.warmup_steps, 150u);
  EXPECT_EQ(c.batch_size, 16u);
  EXPECT_EQ(c.alpha, 0.3);
  EXPECT_EQ(c.depth, 4u);
  EXPECT_EQ(c.dim, 64u);
  EXPECT_EQ(c.heads, 4u);
  EXPECT_EQ(c.ffn_dim, 256u);
  EXPECT_EQ(c.image_size, 64u);
  EXPECT_EQ(c.patch, 16u);
  EXPECT_EQ(c.stride, 16u);
}

TEST(Config, CommentsAndBlankLines) {
  TrainConfig c;
  c.apply_text("# tuned\n\n  lr = 0.5  \nmfb=off\ncontrastive = no\n");
  EXPECT_EQ(c.lr, 0.5);
  EXPECT_FALSE(c.mfb);
  EXPECT_FALSE(c.contrastive);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  TrainConfig c;
  EXPECT_THROW(c.apply_text("learning_rate = 0.1\n"), ConfigError);
  EXPECT_THROW(c.apply_text("lr = fast\n"), ConfigError);
  EXPECT_THROW(c.apply_text("mfb = maybe\n"), ConfigError);
  EXPECT_THROW(c.apply_text("batch_size = -3\n"), ConfigError);
  EXPECT_THROW(c.apply_text("just words\n"), ConfigError);
}

TEST(Config, Validate) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.warmup_steps = c.total_steps;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.mfb = false;
  EXPECT_THROW(c.validate(), ConfigError);  // contrastive still on
  c.contrastive = false;
  EXPECT_NO_THROW(c.validate());
  c = {};
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, ModelConfigCarriesArchitecture) {
  TrainConfig c;
  c.depth = 6;
  c.sil_layer_count = 2;
  const ModelConfig m = c.model_config(11);
  EXPECT_EQ(m.backbone.layers, 6u);
  EXPECT_EQ(m.classes, 11u);
  EXPECT_EQ(m.sil_layers(), (std::vector<std::size_t>{5, 6}));
}

TEST(Config, FromFile) {
  const auto path = std::filesystem::temp_directory_path() / "simtrans_config_test.txt";
  {
    std::ofstream out(path);
    out << "steps_are_not_a_key = 1\n";
  }
  EXPECT_THROW(TrainConfig::from_file(path), ConfigError);
  {
    std::ofstream out(path);
    out << "total_steps = 12\nwarmup_steps = 2\n";
  }
  const TrainConfig c = TrainConfig::from_file(path);
  EXPECT_EQ(c.total_steps, 12u);
  EXPECT_EQ(c.lr, TrainConfig{}.lr);
  std::filesystem::remove(path);
  EXPECT_THROW(TrainConfig::from_file(path), IoError);
}
