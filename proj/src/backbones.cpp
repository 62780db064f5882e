#include "faster/backbones.hpp"

#include <cmath>
#include <random>

namespace faster {

const char* family_name(BackboneFamily family) { return family == BackboneFamily::r2d ? "r2d" : "r21d"; }

BackboneFamily parse_family(const std::string& name) {
  if (name == "r2d") return BackboneFamily::r2d;
  if (name == "r21d") return BackboneFamily::r21d;
  throw ConfigError("unknown backbone family '" + name + "' (r2d, r21d)");
}

const char* preset_name(BackbonePreset preset) { return preset == BackbonePreset::full ? "full" : "tiny"; }

BackbonePreset parse_preset(const std::string& name) {
  if (name == "full") return BackbonePreset::full;
  if (name == "tiny") return BackbonePreset::tiny;
  throw ConfigError("unknown backbone preset '" + name + "' (full, tiny)");
}

BackboneConfig BackboneConfig::full_spec(BackboneFamily family, Index clip_length) {
  BackboneConfig c;
  c.family = family;
  c.preset = BackbonePreset::full;
  c.clip_length = clip_length;
  c.resolution = 224;
  c.channel_scale = 1.0;
  c.repeats = family == BackboneFamily::r2d ? std::array<Index, 4>{2, 2, 2, 2} : std::array<Index, 4>{3, 4, 6, 3};
  c.classes = 400;
  return c;
}

BackboneConfig BackboneConfig::tiny(BackboneFamily family, Index clip_length, Index classes) {
  BackboneConfig c;
  c.family = family;
  c.preset = BackbonePreset::tiny;
  c.clip_length = clip_length;
  c.classes = classes;
  return c;
}

Index scaled_channels(Index channels, double scale) {
  return std::max<Index>(1, static_cast<Index>(std::lround(static_cast<double>(channels) * scale)));
}

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv3d: return "conv3d";
    case LayerKind::conv21d: return "conv(2+1)d";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::bottleneck2d: return "bottleneck2d";
    case LayerKind::bottleneck21d: return "bottleneck(2+1)d";
    case LayerKind::gap: return "gap";
    case LayerKind::dense: return "dense";
  }
  return "?";
}

namespace {

void validate(const BackboneConfig& c) {
  if (c.clip_length < 1 || c.resolution < 1 || c.classes < 1 || !(c.channel_scale > 0.0)) {
    throw ConfigError("backbone: clip length, resolution, classes and channel scale must be positive");
  }
  for (Index r : c.repeats) {
    if (r < 1) throw ConfigError("backbone: every stage needs at least one block");
  }
  if (c.clip_length % 8 != 0) {
    throw ConfigError("backbone: clip length " + std::to_string(c.clip_length) + " is not a multiple of 8");
  }
}

Extent3 conv_extent(const Extent3& in, const Extent3& kernel, const Extent3& stride, const Extent3& pad) {
  return {conv_output_extent(in.t, kernel.t, stride.t, pad.t), conv_output_extent(in.h, kernel.h, stride.h, pad.h),
          conv_output_extent(in.w, kernel.w, stride.w, pad.w)};
}

Shape output_of(const Extent3& e, Index c) { return {e.t, e.h, e.w, c}; }

ConvLayer make_conv(std::string name, Extent3 kernel, Extent3 stride, Extent3 pad, Index cin, Index cout,
                    const Extent3& in, bool shortcut = false) {
  ConvLayer l{std::move(name), kernel, stride, pad, cin, cout, conv_extent(in, kernel, stride, pad), shortcut};
  if (l.output.t < 1 || l.output.h < 1 || l.output.w < 1) {
    throw ShapeError("backbone: layer " + l.name + " has empty output for input " +
                     shape_string({in.t, in.h, in.w, cin}));
  }
  return l;
}

struct BlockLayers {
  std::vector<ConvLayer> path;
  std::vector<ConvLayer> shortcut;
};

// The convolutions of block `index` of a bottleneck stage.
BlockLayers block_layers(const LayerSpec& stage, Index index, Index cin, const Extent3& in) {
  const std::string prefix = stage.name + "." + std::to_string(index);
  const Extent3 stride = index == 0 ? stage.stride : Extent3{1, 1, 1};
  const Index width = stage.out_channels / 4;
  BlockLayers b;
  b.path.push_back(make_conv(prefix + ".reduce", {1, 1, 1}, {1, 1, 1}, {}, cin, width, in));
  if (stage.kind == LayerKind::bottleneck2d) {
    b.path.push_back(make_conv(prefix + ".spatial", {1, 3, 3}, stride, {0, 1, 1}, width, width, b.path.back().output));
  } else {
    b.path.push_back(make_conv(prefix + ".spatial", {1, 3, 3}, {1, stride.h, stride.w}, {0, 1, 1}, width,
                               stage.mid_channels, b.path.back().output));
    b.path.push_back(make_conv(prefix + ".temporal", {3, 1, 1}, {stride.t, 1, 1}, {1, 0, 0}, stage.mid_channels,
                               width, b.path.back().output));
  }
  b.path.push_back(make_conv(prefix + ".expand", {1, 1, 1}, {1, 1, 1}, {}, width, stage.out_channels,
                             b.path.back().output));
  if (stride != Extent3{1, 1, 1} || cin != stage.out_channels) {
    b.shortcut.push_back(make_conv(prefix + ".shortcut", {1, 1, 1}, stride, {}, cin, stage.out_channels, in, true));
  }
  return b;
}

std::vector<ConvLayer> stem_layers(const LayerSpec& conv1, const Extent3& in) {
  if (conv1.kind == LayerKind::conv3d) {
    return {make_conv("conv1", conv1.kernel, conv1.stride, conv1.padding, 3, conv1.out_channels, in)};
  }
  auto spatial = make_conv("conv1.spatial", {1, conv1.kernel.h, conv1.kernel.w}, {1, conv1.stride.h, conv1.stride.w},
                           {0, conv1.padding.h, conv1.padding.w}, 3, conv1.mid_channels, in);
  auto temporal = make_conv("conv1.temporal", {conv1.kernel.t, 1, 1}, {conv1.stride.t, 1, 1}, {conv1.padding.t, 0, 0},
                            conv1.mid_channels, conv1.out_channels, spatial.output);
  return {spatial, temporal};
}

Extent3 extent_of(const Shape& s) { return {s[0], s[1], s[2]}; }

}  // namespace

std::vector<LayerSpec> spec_table(const BackboneConfig& config) {
  validate(config);
  const bool r2d = config.family == BackboneFamily::r2d;
  const double scale = config.channel_scale;
  std::vector<LayerSpec> table;

  LayerSpec conv1;
  conv1.name = "conv1";
  conv1.in_channels = 3;
  conv1.out_channels = scaled_channels(64, scale);
  if (r2d) {
    conv1.kind = LayerKind::conv3d;
    conv1.kernel = {8, 7, 7};
    conv1.stride = {8, 2, 2};
    conv1.padding = {0, 3, 3};
  } else {
    conv1.kind = LayerKind::conv21d;
    conv1.kernel = {3, 7, 7};
    conv1.stride = {1, 2, 2};
    conv1.padding = {1, 3, 3};
    conv1.mid_channels = scaled_channels(45, scale);
  }
  const Extent3 input{config.clip_length, config.resolution, config.resolution};
  const auto stem = stem_layers(conv1, input);
  conv1.output = output_of(stem.back().output, conv1.out_channels);
  table.push_back(conv1);

  LayerSpec pool;
  pool.name = "pool1";
  pool.kind = LayerKind::maxpool;
  pool.kernel = {1, 3, 3};
  pool.stride = {1, 2, 2};
  pool.padding = {0, 1, 1};
  pool.in_channels = pool.out_channels = conv1.out_channels;
  pool.output = output_of(conv_extent(extent_of(conv1.output), pool.kernel, pool.stride, pool.padding),
                          pool.out_channels);
  if (pool.output[0] < 1 || pool.output[1] < 1) throw ShapeError("backbone: input too small for pool1");
  table.push_back(pool);

  const Index full_out[4] = {256, 512, 1024, 2048};
  const Index full_mid_r21d[4] = {144, 288, 576, 1152};
  Index cin = pool.out_channels;
  Extent3 extent = extent_of(pool.output);
  for (int s = 0; s < 4; ++s) {
    LayerSpec stage;
    stage.name = "res" + std::to_string(s + 2);
    stage.kind = r2d ? LayerKind::bottleneck2d : LayerKind::bottleneck21d;
    stage.kernel = r2d ? Extent3{1, 3, 3} : Extent3{3, 3, 3};
    stage.stride = s == 0 ? Extent3{1, 1, 1} : (r2d ? Extent3{1, 2, 2} : Extent3{2, 2, 2});
    stage.in_channels = cin;
    stage.out_channels = scaled_channels(full_out[s], scale);
    stage.mid_channels = r2d ? scaled_channels(full_out[s] / 4, scale) : scaled_channels(full_mid_r21d[s], scale);
    stage.repeats = config.repeats[static_cast<std::size_t>(s)];
    if (stage.out_channels % 4 != 0) {
      throw ConfigError("backbone: " + stage.name + " width " + std::to_string(stage.out_channels) +
                        " is not divisible by 4");
    }
    for (Index b = 0; b < stage.repeats; ++b) {
      const auto layers = block_layers(stage, b, cin, extent);
      extent = layers.path.back().output;
      cin = stage.out_channels;
    }
    stage.output = output_of(extent, stage.out_channels);
    table.push_back(stage);
  }

  LayerSpec gap;
  gap.name = "gap";
  gap.kind = LayerKind::gap;
  gap.in_channels = gap.out_channels = cin;
  gap.output = {1, 1, 1, cin};
  table.push_back(gap);

  LayerSpec fc;
  fc.name = "fc";
  fc.kind = LayerKind::dense;
  fc.in_channels = cin;
  fc.out_channels = config.classes;
  fc.output = {config.classes};
  table.push_back(fc);
  return table;
}

Index weighted_layer_count(const std::vector<LayerSpec>& table) {
  Index count = 0;
  for (const auto& row : table) {
    switch (row.kind) {
      case LayerKind::conv3d:
      case LayerKind::conv21d:
      case LayerKind::dense: count += 1; break;
      case LayerKind::bottleneck2d:
      case LayerKind::bottleneck21d: count += 3 * row.repeats; break;
      case LayerKind::maxpool:
      case LayerKind::gap: break;
    }
  }
  return count;
}

std::vector<ConvLayer> row_layers(const LayerSpec& row, const Shape& input) {
  if (row.kind == LayerKind::dense) {
    if (input.empty() || input.back() != row.in_channels) {
      throw ShapeError("row_layers: " + row.name + " expects " + std::to_string(row.in_channels) + " inputs, got " +
                       shape_string(input));
    }
    return {make_conv(row.name, {1, 1, 1}, {1, 1, 1}, {}, row.in_channels, row.out_channels, {1, 1, 1})};
  }
  if (input.size() != 4 || input[3] != row.in_channels) {
    throw ShapeError("row_layers: " + row.name + " expects {t,h,w," + std::to_string(row.in_channels) + "}, got " +
                     shape_string(input));
  }
  const Extent3 extent = extent_of(input);
  switch (row.kind) {
    case LayerKind::conv3d:
    case LayerKind::conv21d: return stem_layers(row, extent);
    case LayerKind::bottleneck2d:
    case LayerKind::bottleneck21d: {
      std::vector<ConvLayer> out;
      Index cin = row.in_channels;
      Extent3 e = extent;
      for (Index b = 0; b < row.repeats; ++b) {
        auto layers = block_layers(row, b, cin, e);
        out.insert(out.end(), layers.path.begin(), layers.path.end());
        out.insert(out.end(), layers.shortcut.begin(), layers.shortcut.end());
        e = layers.path.back().output;
        cin = row.out_channels;
      }
      return out;
    }
    default: return {};
  }
}

std::vector<ConvLayer> expand_layers(const BackboneConfig& config) {
  std::vector<ConvLayer> out;
  Shape input{config.clip_length, config.resolution, config.resolution, 3};
  for (const auto& row : spec_table(config)) {
    auto layers = row_layers(row, input);
    out.insert(out.end(), layers.begin(), layers.end());
    input = row.output;
  }
  return out;
}

Shape feature_shape(const BackboneConfig& config) { return spec_table(config)[5].output; }

namespace {

template <typename Scalar>
ConvBn<Scalar> make_conv_bn(const ConvLayer& l, bool relu, std::mt19937_64& rng) {
  const Index fan_in = l.kernel.t * l.kernel.h * l.kernel.w * l.in_channels;
  const Scalar stddev = static_cast<Scalar>(std::sqrt(2.0 / static_cast<double>(fan_in)));
  ConvBn<Scalar> c;
  c.name = l.name;
  c.kernel = Var<Scalar>(
      Tensor<Scalar>::normal({l.kernel.t, l.kernel.h, l.kernel.w, l.in_channels, l.out_channels}, 0, stddev, rng),
      true);
  c.gamma = Var<Scalar>(Tensor<Scalar>({l.out_channels}, Scalar(1)), true);
  c.beta = Var<Scalar>(Tensor<Scalar>({l.out_channels}), true);
  c.stats = BatchNormStats<Scalar>::fixed(Tensor<Scalar>({l.out_channels}), Tensor<Scalar>({l.out_channels}, 1));
  c.options = {l.stride, l.padding};
  c.relu = relu;
  return c;
}

}  // namespace

template <typename Scalar>
Backbone<Scalar> Backbone<Scalar>::build(const BackboneConfig& config, std::uint64_t seed) {
  const auto table = spec_table(config);
  std::mt19937_64 rng(seed);
  Backbone net;
  net.config_ = config;
  for (const auto& l : stem_layers(table[0], {config.clip_length, config.resolution, config.resolution})) {
    net.stem_.push_back(make_conv_bn<Scalar>(l, true, rng));
  }
  net.pool_ = {table[1].kernel, table[1].stride, table[1].padding};
  Index cin = table[1].out_channels;
  Extent3 extent = extent_of(table[1].output);
  for (std::size_t s = 2; s < 6; ++s) {
    for (Index b = 0; b < table[s].repeats; ++b) {
      const auto layers = block_layers(table[s], b, cin, extent);
      ResidualBlock<Scalar> block;
      for (std::size_t i = 0; i < layers.path.size(); ++i) {
        block.path.push_back(make_conv_bn<Scalar>(layers.path[i], i + 1 < layers.path.size(), rng));
      }
      for (const auto& l : layers.shortcut) block.shortcut.push_back(make_conv_bn<Scalar>(l, false, rng));
      net.blocks_.push_back(std::move(block));
      extent = layers.path.back().output;
      cin = table[s].out_channels;
    }
  }
  // Zero head: the untrained network predicts the uniform distribution.
  net.head_weight_ = Var<Scalar>(Tensor<Scalar>({cin, config.classes}), true);
  net.head_bias_ = Var<Scalar>(Tensor<Scalar>({config.classes}), true);
  return net;
}

template <typename Scalar>
Var<Scalar> Backbone<Scalar>::run_conv(Graph<Scalar>& g, ConvBn<Scalar>& layer, const Var<Scalar>& x,
                                       BnMode mode) const {
  auto y = batch_norm(g, conv3d(g, x, layer.kernel, layer.options), layer.gamma, layer.beta, layer.stats, mode);
  return layer.relu ? relu(g, y) : y;
}

template <typename Scalar>
Var<Scalar> Backbone<Scalar>::run_block(Graph<Scalar>& g, ResidualBlock<Scalar>& block, const Var<Scalar>& x,
                                        BnMode mode) const {
  Var<Scalar> y = x;
  for (auto& layer : block.path) y = run_conv(g, layer, y, mode);
  const Var<Scalar> skip = block.shortcut.empty() ? x : run_conv(g, block.shortcut.front(), x, mode);
  return relu(g, add(g, y, skip));
}

template <typename Scalar>
Var<Scalar> Backbone<Scalar>::extract_features(Graph<Scalar>& g, const Var<Scalar>& clip, BnMode mode) {
  const Shape& s = clip.shape();
  const Shape expected{config_.clip_length, config_.resolution, config_.resolution, 3};
  if (s.size() != 5 || s[0] < 1 || Shape(s.begin() + 1, s.end()) != expected) {
    throw ShapeError("extract_features: clip " + shape_string(s) + " does not match [n," +
                     std::to_string(config_.clip_length) + "," + std::to_string(config_.resolution) + "," +
                     std::to_string(config_.resolution) + ",3]");
  }
  Var<Scalar> x = clip;
  for (auto& layer : stem_) x = run_conv(g, layer, x, mode);
  x = max_pool3d(g, x, pool_);
  for (auto& block : blocks_) x = run_block(g, block, x, mode);
  return x;
}

template <typename Scalar>
Var<Scalar> Backbone<Scalar>::classify(Graph<Scalar>& g, const Var<Scalar>& features) const {
  return dense(g, global_avg_pool(g, features), head_weight_, head_bias_);
}

template <typename Scalar>
std::vector<std::pair<std::string, Var<Scalar>>> Backbone<Scalar>::parameters(bool include_head) const {
  std::vector<std::pair<std::string, Var<Scalar>>> out;
  auto add_layer = [&](const ConvBn<Scalar>& l) {
    out.emplace_back(l.name + ".kernel", l.kernel);
    out.emplace_back(l.name + ".bn.gamma", l.gamma);
    out.emplace_back(l.name + ".bn.beta", l.beta);
  };
  for (const auto& l : stem_) add_layer(l);
  for (const auto& b : blocks_) {
    for (const auto& l : b.path) add_layer(l);
    for (const auto& l : b.shortcut) add_layer(l);
  }
  if (include_head) {
    out.emplace_back("fc.weight", head_weight_);
    out.emplace_back("fc.bias", head_bias_);
  }
  return out;
}

template <typename Scalar>
std::vector<std::pair<std::string, Tensor<Scalar>*>> Backbone<Scalar>::buffers() {
  std::vector<std::pair<std::string, Tensor<Scalar>*>> out;
  auto add_layer = [&](ConvBn<Scalar>& l) {
    out.emplace_back(l.name + ".bn.running_mean", &l.stats.mean);
    out.emplace_back(l.name + ".bn.running_var", &l.stats.var);
  };
  for (auto& l : stem_) add_layer(l);
  for (auto& b : blocks_) {
    for (auto& l : b.path) add_layer(l);
    for (auto& l : b.shortcut) add_layer(l);
  }
  return out;
}

template class Backbone<float>;
template class Backbone<double>;

}  // namespace faster
