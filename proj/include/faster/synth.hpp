#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "faster/tensor.hpp"

namespace faster {

/// One video: T x H x W x 3 bytes, row-major.
struct VideoSample {
  std::uint32_t id = 0;
  std::uint16_t label = 0;
  Index frames = 0;
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> pixels;

  std::size_t frame_bytes() const { return static_cast<std::size_t>(height * width * 3); }
  std::uint8_t at(Index t, Index y, Index x, Index c) const {
    return pixels[static_cast<std::size_t>(((t * height + y) * width + x) * 3 + c)];
  }
  std::uint8_t& at(Index t, Index y, Index x, Index c) {
    return pixels[static_cast<std::size_t>(((t * height + y) * width + x) * 3 + c)];
  }
  friend bool operator==(const VideoSample&, const VideoSample&) = default;
};

struct Dataset {
  std::vector<VideoSample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  /// 1 + the largest label, 0 when empty.
  Index num_classes() const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

enum class TaskKind { order, speed };

const char* task_name(TaskKind kind);
TaskKind parse_task(const std::string& name);

struct TaskSpec {
  TaskKind kind = TaskKind::order;
  Index frames = 48;
  Index resolution = 32;
  Index classes = 2;
  double noise = 8.0;        // stddev of per-pixel background noise
  Index background = 96;     // mean background intensity
  Index foreground = 230;    // intensity of squares, bars and dots
  Index event_duration = 8;  // order task: frames per event
  Index min_gap = 8;         // order task: frames between the two events
  Index edge_margin = 8;     // order task: event-free frames at each end of the video
  double dot_radius = 2.5;   // speed task
  double slow_speed = 1.0;   // speed task: pixels per frame of class 0
  double speed_step = 1.0;   // speed task: added per class index

  static TaskSpec order() { return {}; }
  static TaskSpec speed();
  /// Throws ConfigError when the geometry cannot be rendered.
  void validate() const;
};

/// Timing of the two order-task events: A is the expanding square, B the
/// moving bar. The label is 1 exactly when A comes first.
struct OrderEvents {
  Index first_start = 0;
  Index second_start = 0;
  bool a_first = false;

  Index a_start() const { return a_first ? first_start : second_start; }
  Index b_start() const { return a_first ? second_start : first_start; }
};

enum class ClipEvent { none, a, b, both };

/// Which events a window of frames [start, start + length) overlaps.
ClipEvent clip_event(const OrderEvents& events, Index event_duration, Index start, Index length);

/// Deterministic per-sample stream derived from (seed, index).
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index);

/// The event timing that `generate` draws for sample `index`.
OrderEvents order_events(const TaskSpec& spec, std::uint64_t seed, std::uint64_t index);

/// Renders order-task video `index` with the given timing.
VideoSample render_order_sample(const TaskSpec& spec, const OrderEvents& events, std::uint32_t id,
                                std::mt19937_64& rng);

/// Samples 0..n-1 of the task; sample i depends only on (spec, seed, i).
Dataset generate(const TaskSpec& spec, std::size_t n, std::uint64_t seed);
Dataset gen_order_task(const TaskSpec& spec, std::size_t n, std::uint64_t seed);
Dataset gen_speed_task(const TaskSpec& spec, std::size_t n, std::uint64_t seed);

/// Accuracy of the best classifier that sees every evenly spaced eval clip's
/// true event identity and may only combine clips by averaging scores. Its
/// decision table is fitted on `train_n` videos and scored on `test_n` others.
double clairvoyant_average_accuracy(const TaskSpec& spec, Index clip_length, Index clips, std::size_t train_n,
                                    std::size_t test_n, std::uint64_t seed);

}  // namespace faster
