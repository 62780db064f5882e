#include "faster/clips.hpp"

#include <algorithm>
#include <cmath>

#include "faster/errors.hpp"
#include "faster/scheduler.hpp"

namespace faster {

namespace {

struct Resized {
  Index height;
  Index width;
};

Resized resized_extent(const VideoSample& v, Index scaled) {
  if (v.height < 1 || v.width < 1 || v.frames < 1) throw DataError("clip: empty video " + std::to_string(v.id));
  const Index short_side = std::min(v.height, v.width);
  auto scale = [&](Index side) {
    return std::max<Index>(scaled, static_cast<Index>(std::lround(static_cast<double>(side * scaled) / short_side)));
  };
  return {scale(v.height), scale(v.width)};
}

void check_plan(const VideoSample& v, const CropPlan& plan) {
  if (plan.crop < 1 || plan.scaled < plan.crop) throw ConfigError("clip: crop must be positive and within the scale");
  const auto r = resized_extent(v, plan.scaled);
  if (plan.y < 0 || plan.x < 0 || plan.y + plan.crop > r.height || plan.x + plan.crop > r.width) {
    throw ShapeError("clip: crop window outside the resized frame");
  }
}

// Source coordinate of output index i with half-pixel centres, clamped.
struct Tap {
  Index lo;
  Index hi;
  double w;
};

Tap tap(Index i, Index resized, Index source) {
  const double s = (static_cast<double>(i) + 0.5) * static_cast<double>(source) / static_cast<double>(resized) - 0.5;
  const double c = std::clamp(s, 0.0, static_cast<double>(source - 1));
  const auto lo = static_cast<Index>(std::floor(c));
  const Index hi = std::min(lo + 1, source - 1);
  return {lo, hi, c - static_cast<double>(lo)};
}

}  // namespace

CropPlan center_plan(const VideoSample& video, Index crop) {
  const auto r = resized_extent(video, crop);
  return {crop, crop, (r.height - crop) / 2, (r.width - crop) / 2};
}

CropPlan random_plan(const VideoSample& video, Index crop, Index max_scale, std::mt19937_64& rng) {
  if (max_scale < crop) throw ConfigError("clip: max scale below crop size");
  const Index scaled = std::uniform_int_distribution<Index>(crop, max_scale)(rng);
  const auto r = resized_extent(video, scaled);
  const Index y = std::uniform_int_distribution<Index>(0, r.height - crop)(rng);
  const Index x = std::uniform_int_distribution<Index>(0, r.width - crop)(rng);
  return {scaled, crop, y, x};
}

template <typename Scalar>
void write_clip(const VideoSample& video, Index start, Index length, const CropPlan& plan, Scalar* out) {
  check_plan(video, plan);
  const auto r = resized_extent(video, plan.scaled);
  const bool exact = r.height == video.height && r.width == video.width;
  std::vector<Tap> rows(static_cast<std::size_t>(plan.crop)), cols(static_cast<std::size_t>(plan.crop));
  for (Index i = 0; i < plan.crop; ++i) {
    rows[static_cast<std::size_t>(i)] = tap(plan.y + i, r.height, video.height);
    cols[static_cast<std::size_t>(i)] = tap(plan.x + i, r.width, video.width);
  }
  for (Index t : window_frames(start, length, video.frames)) {
    for (Index i = 0; i < plan.crop; ++i) {
      for (Index j = 0; j < plan.crop; ++j) {
        for (Index c = 0; c < 3; ++c) {
          double value;
          if (exact) {
            value = normalize_pixel(video.at(t, plan.y + i, plan.x + j, c));
          } else {
            const auto& ty = rows[static_cast<std::size_t>(i)];
            const auto& tx = cols[static_cast<std::size_t>(j)];
            const double top = (1 - tx.w) * video.at(t, ty.lo, tx.lo, c) + tx.w * video.at(t, ty.lo, tx.hi, c);
            const double bottom = (1 - tx.w) * video.at(t, ty.hi, tx.lo, c) + tx.w * video.at(t, ty.hi, tx.hi, c);
            value = ((1 - ty.w) * top + ty.w * bottom) / 255.0;
            value = (value - 0.5) / 0.25;
          }
          *out++ = static_cast<Scalar>(value);
        }
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> make_clip_batch(const std::vector<const VideoSample*>& videos, const std::vector<Index>& starts,
                               Index length, const std::vector<CropPlan>& plans) {
  if (videos.size() != starts.size() || videos.size() != plans.size()) {
    throw ShapeError("make_clip_batch: videos, starts and plans differ in count");
  }
  if (videos.empty()) throw DataError("make_clip_batch: no clips");
  const Index crop = plans.front().crop;
  for (const auto& p : plans) {
    if (p.crop != crop) throw ShapeError("make_clip_batch: mixed crop sizes");
  }
  Tensor<Scalar> batch({static_cast<Index>(videos.size()), length, crop, crop, 3});
  const Index per_clip = length * crop * crop * 3;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    write_clip(*videos[i], starts[i], length, plans[i], batch.data() + static_cast<Index>(i) * per_clip);
  }
  return batch;
}

template void write_clip<float>(const VideoSample&, Index, Index, const CropPlan&, float*);
template void write_clip<double>(const VideoSample&, Index, Index, const CropPlan&, double*);
template Tensor<float> make_clip_batch<float>(const std::vector<const VideoSample*>&, const std::vector<Index>&, Index,
                                              const std::vector<CropPlan>&);
template Tensor<double> make_clip_batch<double>(const std::vector<const VideoSample*>&, const std::vector<Index>&,
                                                Index, const std::vector<CropPlan>&);

}  // namespace faster
