#include <gtest/gtest.h>

#include "eduseg/config.hpp"
#include "eduseg/error.hpp"

namespace eduseg {
namespace {

TEST(AttentionWindow, Parse) {
  EXPECT_EQ(AttentionWindow::parse("5"), AttentionWindow::bounded(5));
  EXPECT_EQ(AttentionWindow::parse("inf"), AttentionWindow::unbounded());
  EXPECT_EQ(AttentionWindow::parse("unbounded"), AttentionWindow::unbounded());
  EXPECT_THROW(AttentionWindow::parse("0"), ConfigError);
  EXPECT_THROW(AttentionWindow::parse("-2"), ConfigError);
  EXPECT_THROW(AttentionWindow::parse("five"), ConfigError);
  EXPECT_THROW(AttentionWindow::bounded(0), ConfigError);
}

TEST(AttentionWindow, ClipsAtEdges) {
  auto w = AttentionWindow::bounded(2);
  EXPECT_EQ(w.lo(0), 0u);
  EXPECT_EQ(w.lo(5), 3u);
  EXPECT_EQ(w.hi(5, 7), 6u);
  EXPECT_EQ(w.hi(1, 7), 3u);
  auto u = AttentionWindow::unbounded();
  EXPECT_EQ(u.lo(5), 0u);
  EXPECT_EQ(u.hi(0, 7), 6u);
  EXPECT_EQ(u.to_string(), "inf");
  EXPECT_EQ(w.to_string(), "2");
}

TEST(TrainConfig, DefaultsMatchPublishedSettings) {
  TrainConfig c;
  EXPECT_EQ(c.learning_rate, 1e-4);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_EQ(c.dropout, 0.1);
  EXPECT_EQ(c.l2_weight, 1e-4);
  EXPECT_EQ(c.clip_norm, 5.0);
  EXPECT_EQ(c.ema_decay, 0.9999);
  EXPECT_EQ(c.window, AttentionWindow::bounded(5));
  EXPECT_EQ(c.hidden, 200u);
  EXPECT_NO_THROW(c.validate());
}

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig c;
  c.window = AttentionWindow::unbounded();
  c.learning_rate = 3e-3;
  c.use_elmo = true;
  c.seed = 12345678901234ull;
  EXPECT_EQ(train_config_from_json(to_json(c)), c);
}

TEST(TrainConfig, UnknownKeyIsConfigError) {
  try {
    train_config_from_json(R"({"learning_rat": 0.1})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rat"), std::string::npos);
  }
}

TEST(TrainConfig, BadValuesAreConfigErrors) {
  EXPECT_THROW(train_config_from_json(R"({"dropout": 1.0})"), ConfigError);
  EXPECT_THROW(train_config_from_json(R"({"batch_size": 0})"), ConfigError);
  EXPECT_THROW(train_config_from_json(R"({"window": 0})"), ConfigError);
  EXPECT_THROW(train_config_from_json(R"({"hidden": "big"})"), ConfigError);
  EXPECT_THROW(train_config_from_json("{not json"), ConfigError);
}

TEST(ModelConfig, Derivation) {
  TrainConfig t;
  t.hidden = 7;
  t.use_elmo = true;
  auto m = model_config_for(t, 300, 1024);
  EXPECT_EQ(m.encoder_input_dim(), 1324u);
  EXPECT_EQ(m.output_dim(), 14u);
  EXPECT_EQ(model_config_from_json(to_json(m)), m);
  m.use_elmo = false;
  EXPECT_EQ(m.encoder_input_dim(), 300u);
}

}  // namespace
}  // namespace eduseg
