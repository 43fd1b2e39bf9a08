// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "stylecomp/config.hpp"

using namespace stylecomp;

TEST(Config, ParsesKeyValueLines) {
  const auto c = Config::parse("# comment\n  seed = 42 \n\nmodel.d_model=48\ntrain.lr = 0.003\nseed = 43\n");
  EXPECT_EQ(c.u64("seed"), 43u);
  EXPECT_EQ(c.size("model.d_model", 0), 48u);
  EXPECT_DOUBLE_EQ(c.real("train.lr"), 0.003);
  EXPECT_EQ(c.str("missing", "x"), "x");
}

TEST(Config, ReportsBadLinesAndValues) {
  try {
    Config::parse("a = 1\nno equals sign\n", "f.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_STREQ(e.what(), "f.cfg:2: expected key = value");
  }
  const auto c = Config::parse("n = -3\nx = 1.5abc\n");
  EXPECT_THROW(c.u64("n"), ConfigError);
  EXPECT_THROW(c.real("x"), ConfigError);
  EXPECT_THROW(c.str("absent"), ConfigError);
  EXPECT_THROW(Config::load("/nonexistent/stylecomp.cfg"), ConfigError);
}

TEST(Config, DumpIsSortedAndRoundTrips) {
  Config c;
  c.set("b", 2);
  c.set("a", 0.1);
  c.set("c", std::string("text value"));
  EXPECT_EQ(c.dump(), "a = 0.10000000000000001\nb = 2\nc = text value\n");
  const auto back = Config::parse(c.dump());
  EXPECT_EQ(back.values(), c.values());
  EXPECT_EQ(back.real("a"), 0.1);
}

TEST(Config, MergeAndDefaults) {
  auto a = Config::parse("x = 1\ny = 2\n");
  a.merge(Config::parse("y = 3\nz = 4\n"));
  a.set_default("x", 9);
  a.set_default("w", 5);
  EXPECT_EQ(a.u64("x"), 1u);
  EXPECT_EQ(a.u64("y"), 3u);
  EXPECT_EQ(a.u64("w"), 5u);
}

TEST(Config, ModelConfigRoundTrip) {
  ModelConfig m;
  m.d_model = 64;
  m.n_layers = 2;
  Config c;
  put_model_config(c, m);
  EXPECT_EQ(model_config(c), m);
  c.set("model.n_heads", 5);
  EXPECT_THROW(model_config(c), std::invalid_argument);
}

TEST(Config, StageScopedTrainingKeysWin) {
  const auto c = Config::parse("train.steps = 100\ntrain.lr = 0.01\ntrain.stage3.steps = 700\n");
  const auto t1 = train_options(c, 5, 1), t3 = train_options(c, 5, 3);
  EXPECT_EQ(t1.steps, 100u);
  EXPECT_EQ(t3.steps, 700u);
  EXPECT_DOUBLE_EQ(t3.adam.lr, 0.01);
  EXPECT_EQ(t3.seed, 5u);
  Config out;
  put_train_options(out, t3, 3);
  EXPECT_EQ(train_options(out, 5, 3).steps, 700u);
}
