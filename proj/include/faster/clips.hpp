#pragma once

#include <random>
#include <vector>

#include "faster/synth.hpp"
#include "faster/tensor.hpp"

namespace faster {

/// Resize so the short side is `scaled`, then take a `crop` x `crop` window
/// whose top-left corner is (y, x) in the resized frame.
struct CropPlan {
  Index scaled = 32;
  Index crop = 32;
  Index y = 0;
  Index x = 0;
};

/// Short side resized to `crop`, centre window. Identity for square videos of that size.
CropPlan center_plan(const VideoSample& video, Index crop);

/// Short side resized to a uniform size in [crop, max_scale], uniform window.
CropPlan random_plan(const VideoSample& video, Index crop, Index max_scale, std::mt19937_64& rng);

/// Maps a byte to the network input range.
inline double normalize_pixel(std::uint8_t p) { return (static_cast<double>(p) / 255.0 - 0.5) / 0.25; }

/// Writes clip frames [start, start + length) (looping past the end) as
/// [length, crop, crop, 3] normalized values, bilinear resampled.
template <typename Scalar>
void write_clip(const VideoSample& video, Index start, Index length, const CropPlan& plan, Scalar* out);

/// Stacks one clip per entry into [n, length, crop, crop, 3].
template <typename Scalar>
Tensor<Scalar> make_clip_batch(const std::vector<const VideoSample*>& videos, const std::vector<Index>& starts,
                               Index length, const std::vector<CropPlan>& plans);

}  // namespace faster
