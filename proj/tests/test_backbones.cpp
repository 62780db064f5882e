#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "faster/aggregators.hpp"
#include "faster/backbones.hpp"
#include "faster/errors.hpp"
#include "faster/grad_check.hpp"
#include "test_support.hpp"

namespace faster {
namespace {

using testing::random_tensor;

class Backbones : public ::testing::Test {
 protected:
  void SetUp() override { set_numeric_checks(true); }
};

// Output-size column of the architecture table, {t, h, w, c} per row for a
// clip of L frames: conv1, pool1, res2..res5.
std::vector<Shape> table_outputs(BackboneFamily family, Index L) {
  if (family == BackboneFamily::r2d) {
    return {{L / 8, 112, 112, 64}, {L / 8, 56, 56, 64},   {L / 8, 56, 56, 256},
            {L / 8, 28, 28, 512},  {L / 8, 14, 14, 1024}, {L / 8, 7, 7, 2048}};
  }
  return {{L, 112, 112, 64},    {L, 56, 56, 64},        {L, 56, 56, 256},
          {L / 2, 28, 28, 512}, {L / 4, 14, 14, 1024}, {L / 8, 7, 7, 2048}};
}

TEST_F(Backbones, FullSpecOutputSizesMatchTable) {
  for (auto family : {BackboneFamily::r2d, BackboneFamily::r21d}) {
    for (Index L : {8, 16, 32}) {
      const auto table = spec_table(BackboneConfig::full_spec(family, L));
      const auto expected = table_outputs(family, L);
      ASSERT_EQ(table.size(), 8u);
      for (std::size_t i = 0; i < expected.size(); ++i) {
        EXPECT_EQ(table[i].output, expected[i]) << family_name(family) << " L=" << L << " " << table[i].name;
      }
      EXPECT_EQ(table[7].output, (Shape{400}));
    }
  }
}

TEST_F(Backbones, R2dStemAndStagesMatchTable) {
  const auto table = spec_table(BackboneConfig::full_spec(BackboneFamily::r2d, 8));
  EXPECT_EQ(table[0].kind, LayerKind::conv3d);
  EXPECT_EQ(table[0].kernel, (Extent3{8, 7, 7}));
  EXPECT_EQ(table[0].stride, (Extent3{8, 2, 2}));
  EXPECT_EQ(table[0].out_channels, 64);
  EXPECT_EQ(table[1].kind, LayerKind::maxpool);
  EXPECT_EQ(table[1].kernel, (Extent3{1, 3, 3}));
  const Index mids[4] = {64, 128, 256, 512};
  for (int s = 0; s < 4; ++s) {
    const auto& row = table[static_cast<std::size_t>(s + 2)];
    EXPECT_EQ(row.kind, LayerKind::bottleneck2d);
    EXPECT_EQ(row.mid_channels, mids[s]);
    EXPECT_EQ(row.out_channels, 4 * mids[s]);
    EXPECT_EQ(row.repeats, 2);
  }
}

TEST_F(Backbones, R21dRes3BlockFactorization) {
  const auto config = BackboneConfig::full_spec(BackboneFamily::r21d, 8);
  const auto table = spec_table(config);
  EXPECT_EQ(table[0].kind, LayerKind::conv21d);
  EXPECT_EQ(table[0].mid_channels, 45);
  const auto& res3 = table[3];
  EXPECT_EQ(res3.kind, LayerKind::bottleneck21d);
  EXPECT_EQ(res3.repeats, 4);
  EXPECT_EQ(res3.mid_channels, 288);
  EXPECT_EQ(res3.out_channels, 512);

  const auto layers = expand_layers(config);
  auto find = [&](const std::string& name) {
    return *std::find_if(layers.begin(), layers.end(), [&](const ConvLayer& l) { return l.name == name; });
  };
  const struct {
    const char* name;
    Extent3 kernel;
    Index out;
  } expected[] = {{"res3.1.reduce", {1, 1, 1}, 128},
                  {"res3.1.spatial", {1, 3, 3}, 288},
                  {"res3.1.temporal", {3, 1, 1}, 128},
                  {"res3.1.expand", {1, 1, 1}, 512}};
  for (const auto& e : expected) {
    const auto l = find(e.name);
    EXPECT_EQ(l.kernel, e.kernel) << e.name;
    EXPECT_EQ(l.out_channels, e.out) << e.name;
  }
  EXPECT_EQ(std::count_if(layers.begin(), layers.end(),
                          [](const ConvLayer& l) { return l.name.rfind("res3.", 0) == 0 && !l.shortcut; }),
            16);
  const auto c1s = find("conv1.spatial");
  const auto c1t = find("conv1.temporal");
  EXPECT_EQ(c1s.kernel, (Extent3{1, 7, 7}));
  EXPECT_EQ(c1s.out_channels, 45);
  EXPECT_EQ(c1t.kernel, (Extent3{3, 1, 1}));
  EXPECT_EQ(c1t.out_channels, 64);
}

TEST_F(Backbones, WeightedLayerCountsMatchNames) {
  EXPECT_EQ(weighted_layer_count(spec_table(BackboneConfig::full_spec(BackboneFamily::r2d, 8))), 26);
  EXPECT_EQ(weighted_layer_count(spec_table(BackboneConfig::full_spec(BackboneFamily::r21d, 8))), 50);
}

TEST_F(Backbones, ShortcutsAppearOnlyOnStageEntry) {
  for (auto family : {BackboneFamily::r2d, BackboneFamily::r21d}) {
    const auto layers = expand_layers(BackboneConfig::full_spec(family, 8));
    std::set<std::string> shortcuts;
    for (const auto& l : layers) {
      if (l.shortcut) shortcuts.insert(l.name);
    }
    EXPECT_EQ(shortcuts, (std::set<std::string>{"res2.0.shortcut", "res3.0.shortcut", "res4.0.shortcut",
                                                 "res5.0.shortcut"}));
  }
}

TEST_F(Backbones, TinyPresetScalesChannels) {
  for (auto family : {BackboneFamily::r2d, BackboneFamily::r21d}) {
    const auto config = BackboneConfig::tiny(family, 8, 2);
    EXPECT_EQ(config.resolution, 32);
    EXPECT_EQ(feature_shape(config), (Shape{1, 1, 1, 128}));
    EXPECT_EQ(weighted_layer_count(spec_table(config)), 1 + 4 * 3 + 1);
  }
  const auto r21d = spec_table(BackboneConfig::tiny(BackboneFamily::r21d, 8, 2));
  EXPECT_EQ(r21d[0].mid_channels, 3);
  EXPECT_EQ(r21d[2].mid_channels, 9);
  EXPECT_EQ(r21d[5].mid_channels, 72);
  EXPECT_EQ(scaled_channels(45, 1.0 / 16), 3);
  EXPECT_EQ(scaled_channels(3, 1.0 / 16), 1);
}

TEST_F(Backbones, TinyFeatureExtractionShapes) {
  for (auto family : {BackboneFamily::r2d, BackboneFamily::r21d}) {
    for (Index L : {8, 16}) {
      auto net = Backbone<float>::build(BackboneConfig::tiny(family, L, 2), 1);
      Graph<float> g;
      const Var<float> clip(random_tensor({2, L, 32, 32, 3}, 3).cast<float>());
      const auto features = net.extract_features(g, clip, BnMode::eval);
      EXPECT_EQ(features.shape(), (Shape{2, L / 8, 1, 1, 128})) << family_name(family);
      EXPECT_EQ(net.classify(g, features).shape(), (Shape{2, 2}));
    }
  }
}

TEST_F(Backbones, FullSpecR2dFeatureMap) {
  auto net = Backbone<float>::build(BackboneConfig::full_spec(BackboneFamily::r2d, 8), 1);
  Graph<float> g;
  const Var<float> clip(Tensor<float>({1, 8, 224, 224, 3}, 0.25f));
  EXPECT_EQ(net.extract_features(g, clip, BnMode::eval).shape(), (Shape{1, 1, 7, 7, 2048}));
}

TEST_F(Backbones, FullSpecR21dFeatureMapAt32Frames) {
  EXPECT_EQ(feature_shape(BackboneConfig::full_spec(BackboneFamily::r21d, 32)), (Shape{4, 7, 7, 2048}));
}

TEST_F(Backbones, BothFamiliesEmitIdenticalShapes) {
  auto expensive = Backbone<float>::build(BackboneConfig::tiny(BackboneFamily::r21d, 8, 2), 1);
  auto cheap = Backbone<float>::build(BackboneConfig::tiny(BackboneFamily::r2d, 8, 2), 2);
  const Var<float> clip(random_tensor({1, 8, 32, 32, 3}, 5).cast<float>());
  Graph<float> g;
  EXPECT_EQ(expensive.extract_features(g, clip, BnMode::eval).shape(),
            cheap.extract_features(g, clip, BnMode::eval).shape());
}

TEST_F(Backbones, ExtractionIsDeterministic) {
  const Var<float> clip(random_tensor({2, 8, 32, 32, 3}, 6).cast<float>());
  auto a = Backbone<float>::build(BackboneConfig::tiny(BackboneFamily::r21d, 8, 2), 9);
  auto b = Backbone<float>::build(BackboneConfig::tiny(BackboneFamily::r21d, 8, 2), 9);
  Graph<float> g;
  EXPECT_EQ(a.extract_features(g, clip, BnMode::eval).value(), b.extract_features(g, clip, BnMode::eval).value());
}

TEST_F(Backbones, EvalModeIgnoresOtherClipsInBatch) {
  auto net = Backbone<double>::build(BackboneConfig::tiny(BackboneFamily::r2d, 8, 2), 4);
  // Move the running statistics away from their initial values first.
  Graph<double> warm;
  net.extract_features(warm, Var<double>(random_tensor({3, 8, 32, 32, 3}, 7)), BnMode::train);

  const auto first = random_tensor({1, 8, 32, 32, 3}, 8);
  const auto second = random_tensor({1, 8, 32, 32, 3}, 9, -3, 3);
  std::vector<double> both(first.values().begin(), first.values().end());
  both.insert(both.end(), second.values().begin(), second.values().end());
  Graph<double> g;
  const auto alone = net.extract_features(g, Var<double>(first), BnMode::eval).value();
  const auto batched = net.extract_features(g, Var<double>(Tensor<double>({2, 8, 32, 32, 3}, both)), BnMode::eval);
  for (Index i = 0; i < alone.size(); ++i) EXPECT_NEAR(alone[i], batched.value()[i], 1e-6);
}

TEST_F(Backbones, ZeroedLastGammaMakesBlockIdentity) {
  auto config = BackboneConfig::tiny(BackboneFamily::r21d, 8, 2);
  config.repeats = {2, 2, 2, 2};
  auto net = Backbone<double>::build(config, 3);
  // Block 1 of res2 has an identity shortcut; res3 entry (block 2) projects.
  auto& block = net.blocks()[1];
  ASSERT_TRUE(block.shortcut.empty());
  block.path.back().gamma.mutable_value().fill(0.0);
  const auto x = random_tensor({1, 8, 8, 8, 16}, 10, 0.0, 2.0);
  Graph<double> g;
  EXPECT_EQ(net.run_block(g, block, Var<double>(x), BnMode::eval).value(), x);

  auto& entry = net.blocks()[2];
  ASSERT_FALSE(entry.shortcut.empty());
  entry.path.back().gamma.mutable_value().fill(0.0);
  const auto out = net.run_block(g, entry, Var<double>(x), BnMode::eval);
  const auto skip = relu(g, batch_norm(g, conv3d(g, Var<double>(x), entry.shortcut[0].kernel, entry.shortcut[0].options),
                                       entry.shortcut[0].gamma, entry.shortcut[0].beta, entry.shortcut[0].stats,
                                       BnMode::eval));
  EXPECT_EQ(out.value(), skip.value());
}

TEST_F(Backbones, RejectsBadGeometryAndConfig) {
  auto net = Backbone<float>::build(BackboneConfig::tiny(BackboneFamily::r2d, 8, 2), 1);
  Graph<float> g;
  EXPECT_THROW(net.extract_features(g, Var<float>(Tensor<float>({1, 16, 32, 32, 3})), BnMode::eval), ShapeError);
  EXPECT_THROW(net.extract_features(g, Var<float>(Tensor<float>({1, 8, 24, 24, 3})), BnMode::eval), ShapeError);
  EXPECT_THROW(net.extract_features(g, Var<float>(Tensor<float>({8, 32, 32, 3})), BnMode::eval), ShapeError);
  EXPECT_THROW(spec_table(BackboneConfig::tiny(BackboneFamily::r2d, 12, 2)), ConfigError);
  EXPECT_THROW(parse_preset("huge"), ConfigError);
  EXPECT_THROW(parse_family("r3d"), ConfigError);
  EXPECT_EQ(parse_family("r21d"), BackboneFamily::r21d);
}

TEST_F(Backbones, ParameterAndBufferNamesAreUnique) {
  auto net = Backbone<float>::build(BackboneConfig::full_spec(BackboneFamily::r21d, 8), 1);
  std::set<std::string> names;
  const auto params = net.parameters();
  for (const auto& [name, var] : params) {
    EXPECT_TRUE(names.insert(name).second) << name;
    EXPECT_TRUE(var.requires_grad());
  }
  // Two stem convs, four per block over 16 blocks, four shortcuts; each has
  // kernel, gamma and beta.
  const std::size_t convs = 2 + 16 * 4 + 4;
  EXPECT_EQ(params.size(), convs * 3 + 2);
  EXPECT_EQ(net.parameters(false).size(), params.size() - 2);
  EXPECT_EQ(net.buffers().size(), convs * 2);
}

TEST_F(Backbones, BlockGradientsMatchFiniteDifferences) {
  auto net = Backbone<double>::build(BackboneConfig::tiny(BackboneFamily::r21d, 8, 2), 11);
  auto& block = net.blocks()[3];  // res5 entry on a 2x1x1 input (t halves)
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto report = grad_check(
        [&](Graph<double>& g, std::span<const Var<double>> v) {
          return testing::probe_objective(g, net.run_block(g, block, v[0], BnMode::eval), seed);
        },
        {random_tensor({1, 2, 2, 2, 64}, 20 + seed)});
    EXPECT_LT(report.max_rel_error, 1e-3) << "seed " << seed << " at " << report.worst_location;
  }
}

TEST_F(Backbones, AggregatorAcceptsAlternatingSources) {
  auto expensive = Backbone<float>::build(BackboneConfig::tiny(BackboneFamily::r21d, 8, 2), 1);
  auto cheap = Backbone<float>::build(BackboneConfig::tiny(BackboneFamily::r2d, 8, 2), 2);
  std::vector<Var<float>> features;
  Graph<float> g;
  for (int t = 0; t < 4; ++t) {
    const Var<float> clip(random_tensor({1, 8, 32, 32, 3}, 30 + static_cast<std::uint64_t>(t)).cast<float>());
    features.push_back((t % 2 == 0 ? expensive : cheap).extract_features(g, clip, BnMode::eval));
  }
  for (auto method : {AggregatorMethod::fast_gru, AggregatorMethod::gru, AggregatorMethod::lstm,
                      AggregatorMethod::concat, AggregatorMethod::avg_pool}) {
    auto agg = Aggregator<float>::create(method, 128, 2, {}, 3);
    const auto logits = aggregate_sequence<float>(g, features, agg, BnMode::train);
    EXPECT_EQ(logits.shape(), (Shape{1, 2})) << method_name(method);
    EXPECT_TRUE(logits.value().all_finite());
  }
}

}  // namespace
}  // namespace faster
