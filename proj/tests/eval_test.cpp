// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "stylecomp/compose.hpp"
#include "stylecomp/eval.hpp"

using namespace stylecomp;

TEST(OverallMean, IsTheMeanOfThreeMetrics) {
  EXPECT_NEAR(overall_mean(0.779, 0.481, 0.655), 0.638, 5e-4);
  EXPECT_NEAR(overall_mean(0.761, 0.466, 0.697), 0.641, 5e-4);
  EXPECT_EQ(std::round(overall_mean(0.779, 0.481, 0.655) * 1000), 638);
  EXPECT_EQ(std::round(overall_mean(0.761, 0.466, 0.697) * 1000), 641);
}

TEST(EditMask, PlantedEditHasExactFraction) {
  Image bg(16, 16, 3, 100), out = bg;
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) out.at(x, y, 1) = 140;
  const auto e = edit_mask(bg, out);
  EXPECT_DOUBLE_EQ(e.fraction, 0.25);
  EXPECT_TRUE(mask_on(e.mask, 3, 3));
  EXPECT_FALSE(mask_on(e.mask, 8, 8));
}

TEST(EditMask, DifferencesAtTheThresholdDoNotCount) {
  Image bg(4, 4, 3, 100), out = bg;
  out.at(0, 0, 0) = 108;  // exactly 8/255
  out.at(1, 0, 0) = 109;
  const auto e = edit_mask(bg, out, 8.0 / 255.0);
  EXPECT_FALSE(mask_on(e.mask, 0, 0));
  EXPECT_TRUE(mask_on(e.mask, 1, 0));
  EXPECT_THROW(edit_mask(bg, Image(3, 4, 3)), EvalError);
}

TEST(ScoreSample, UnchangedOutputIsAFailureToEdit) {
  const Image bg(16, 16, 3, 90), ref(8, 8, 3, 200);
  const auto r = score_sample("m", "a", ref, bg, bg, Embedders{});
  EXPECT_EQ(r.error, "failure-to-edit");
  EXPECT_TRUE(r.gated());
  EXPECT_FALSE(r.clip_i);
  EXPECT_FALSE(r.contribution());
}

TEST(ScoreSample, SmallEditsAreGatedOutOfStyleAndAesthetics) {
  Image bg(20, 20, 3, 90), out = bg;
  const Image ref(8, 8, 3, 200);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x) out.at(x, y, 0) = 250;  // 6.25% of pixels
  const auto r = score_sample("m", "a", ref, bg, out, Embedders{});
  EXPECT_TRUE(r.error.empty());
  EXPECT_TRUE(r.clip_i);
  EXPECT_TRUE(r.gated());
  EXPECT_FALSE(r.aes);
}

TEST(Benchmark, SummaryAveragesAndCountsFailures) {
  const auto s = generate_sample(DataConfig{}, 2);
  std::vector<BenchSample> samples{{"b", s.fg.image, s.background, s.stylized, s.mask},
                                   {"a", s.fg.image, s.background, s.stylized, s.mask}};
  Compositor broken = [](const CompositionInput&) -> Image { throw std::runtime_error("boom"); };
  const auto rep = run_benchmark(samples, {{"copy-paste", copy_paste}, {"oracle", oracle_composite}, {"broken", broken}});
  ASSERT_EQ(rep.records.size(), 6u);
  EXPECT_EQ(rep.records[0].id, "a");
  const auto cp = rep.summary("copy-paste");
  EXPECT_EQ(cp.samples, 2u);
  ASSERT_TRUE(cp.overall);
  EXPECT_DOUBLE_EQ(*cp.overall, overall_mean(*cp.clip_i, *cp.csd, *cp.aes));
  const auto br = rep.summary("broken");
  EXPECT_EQ(br.failed, 2u);
  EXPECT_FALSE(br.overall);
  EXPECT_NE(rep.table().find("copy-paste"), std::string::npos);
  const auto jsonl = rep.jsonl();
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 1 + 6 + 3);  // header, records, summaries
}

TEST(Compose, CopyPasteWritesOnlyInsideTheMask) {
  const auto s = generate_sample(DataConfig{}, 4);
  const CompositionInput in{"x", s.fg.image, s.background, s.mask, nullptr};
  const auto out = copy_paste(in);
  for (std::size_t y = 0; y < s.mask.height; ++y)
    for (std::size_t x = 0; x < s.mask.width; ++x)
      if (!mask_on(s.mask, x, y)) {
        for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(out.at(x, y, c), s.background.at(x, y, c));
      }
  EXPECT_THROW(oracle_composite(in), ImageError);
}

TEST(Compose, ModelCompositorIsSeededAndKeepsTheBackground) {
  ModelConfig c;
  c.d_model = 12;
  c.n_heads = 2;
  c.n_layers = 1;
  c.lora_rank = 2;
  c.patch_size = 8;
  const auto p = init_params<float>(c, 3);
  const auto s = generate_sample(DataConfig{}, 5);
  const CompositionInput in{"x", s.fg.image, s.background, s.mask, nullptr};
  const ModelCompositor<float> m(p, StageSpec::stage3(), 2, 7);
  const auto a = m(in), b = m(in);
  EXPECT_EQ(a, b);
  for (std::size_t y = 0; y < s.mask.height; ++y)
    for (std::size_t x = 0; x < s.mask.width; ++x)
      if (!mask_on(s.mask, x, y)) {
        ASSERT_EQ(a.at(x, y, 0), s.background.at(x, y, 0));
      }
  EXPECT_THROW(ModelCompositor<float>(p, StageSpec::stage3(), 0, 7), std::invalid_argument);
}
