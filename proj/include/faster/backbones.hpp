#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "faster/ops.hpp"

namespace faster {

enum class BackboneFamily { r2d, r21d };
enum class BackbonePreset { full, tiny };

const char* family_name(BackboneFamily family);  // "r2d" / "r21d"
BackboneFamily parse_family(const std::string& name);
const char* preset_name(BackbonePreset preset);  // "full" / "tiny"
BackbonePreset parse_preset(const std::string& name);

struct BackboneConfig {
  BackboneFamily family = BackboneFamily::r2d;
  BackbonePreset preset = BackbonePreset::tiny;
  Index clip_length = 8;
  Index resolution = 32;
  double channel_scale = 1.0 / 16.0;
  std::array<Index, 4> repeats{1, 1, 1, 1};
  Index classes = 2;

  /// Full-scale description: 224x224 input, full channel widths, 400 classes.
  static BackboneConfig full_spec(BackboneFamily family, Index clip_length);
  /// CPU-trainable miniature: 32x32 input, channels / 16, one block per stage.
  static BackboneConfig tiny(BackboneFamily family, Index clip_length, Index classes);
};

/// round(channels * scale), at least 1.
Index scaled_channels(Index channels, double scale);

enum class LayerKind { conv3d, conv21d, maxpool, bottleneck2d, bottleneck21d, gap, dense };

const char* layer_kind_name(LayerKind kind);

/// One row of the architecture table. Bottleneck rows describe a whole stage
/// of `repeats` blocks whose first block carries `stride`.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv3d;
  Extent3 kernel{1, 1, 1};
  Extent3 stride{1, 1, 1};
  Extent3 padding{0, 0, 0};
  Index in_channels = 0;
  Index mid_channels = 0;  // bottleneck width, or conv21d intermediate width
  Index out_channels = 0;
  Index repeats = 1;
  Shape output;  // {t, h, w, c}, or {k} for the dense head
};

std::vector<LayerSpec> spec_table(const BackboneConfig& config);

/// Convolutions and fully connected layers that carry weights, counting a
/// factorized (2+1)D convolution once and excluding projection shortcuts.
Index weighted_layer_count(const std::vector<LayerSpec>& table);

/// A single convolution (or the dense head as a 1x1x1 convolution) with its
/// output extents, in execution order.
struct ConvLayer {
  std::string name;
  Extent3 kernel{1, 1, 1};
  Extent3 stride{1, 1, 1};
  Extent3 padding{0, 0, 0};
  Index in_channels = 0;
  Index out_channels = 0;
  Extent3 output{1, 1, 1};
  bool shortcut = false;

  Index macs() const {
    return output.t * output.h * output.w * kernel.t * kernel.h * kernel.w * in_channels * out_channels;
  }
};

/// Weighted layers of one table row applied to an input of shape {t, h, w, c}
/// ({c} for the dense head). Pooling rows expand to nothing.
std::vector<ConvLayer> row_layers(const LayerSpec& row, const Shape& input);

/// Every weighted layer of the network on one clip, head included.
std::vector<ConvLayer> expand_layers(const BackboneConfig& config);

/// res5 feature shape {l, h, w, c} for one clip.
Shape feature_shape(const BackboneConfig& config);

template <typename Scalar>
struct ConvBn {
  std::string name;
  Var<Scalar> kernel;  // [kt, kh, kw, cin, cout]
  Var<Scalar> gamma, beta;
  BatchNormStats<Scalar> stats;
  Conv3dOptions options;
  bool relu = true;
};

template <typename Scalar>
struct ResidualBlock {
  std::vector<ConvBn<Scalar>> path;
  std::vector<ConvBn<Scalar>> shortcut;  // empty for identity
};

template <typename Scalar>
class Backbone {
 public:
  /// He-normal convolution weights, unit BN scale, zero shifts, BN running
  /// statistics starting at mean 0 / variance 1, zero classifier head.
  static Backbone build(const BackboneConfig& config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }

  /// Clip [n, L, H, W, 3] -> res5 features [n, l, h, w, c].
  Var<Scalar> extract_features(Graph<Scalar>& g, const Var<Scalar>& clip, BnMode mode);
  /// Global average pool + fully connected layer on res5 features.
  Var<Scalar> classify(Graph<Scalar>& g, const Var<Scalar>& features) const;

  Var<Scalar> run_block(Graph<Scalar>& g, ResidualBlock<Scalar>& block, const Var<Scalar>& x, BnMode mode) const;

  std::vector<ConvBn<Scalar>>& stem() { return stem_; }
  std::vector<ResidualBlock<Scalar>>& blocks() { return blocks_; }

  /// Trainable tensors with stable names; `include_head` false yields the
  /// feature extractor only.
  std::vector<std::pair<std::string, Var<Scalar>>> parameters(bool include_head = true) const;
  /// Batch-norm running statistics.
  std::vector<std::pair<std::string, Tensor<Scalar>*>> buffers();

 private:
  Var<Scalar> run_conv(Graph<Scalar>& g, ConvBn<Scalar>& layer, const Var<Scalar>& x, BnMode mode) const;

  BackboneConfig config_;
  std::vector<ConvBn<Scalar>> stem_;
  Pool3dOptions pool_;
  std::vector<ResidualBlock<Scalar>> blocks_;
  Var<Scalar> head_weight_, head_bias_;
};

}  // namespace faster
