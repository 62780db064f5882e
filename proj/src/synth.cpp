#include "faster/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <tuple>

#include "faster/errors.hpp"
#include "faster/scheduler.hpp"

namespace faster {

Index Dataset::num_classes() const {
  Index classes = 0;
  for (const auto& s : samples) classes = std::max<Index>(classes, Index{s.label} + 1);
  return classes;
}

const char* task_name(TaskKind kind) { return kind == TaskKind::order ? "order" : "speed"; }

TaskKind parse_task(const std::string& name) {
  if (name == "order") return TaskKind::order;
  if (name == "speed") return TaskKind::speed;
  throw ConfigError("unknown task '" + name + "' (order, speed)");
}

TaskSpec TaskSpec::speed() {
  TaskSpec s;
  s.kind = TaskKind::speed;
  s.frames = 32;
  return s;
}

namespace {

// Order-task geometry, in pixels.
constexpr Index kSquareMaxHalf = 8;
constexpr Index kBarLength = 10;
constexpr Index kBarThickness = 4;
constexpr Index kBarStep = 2;

}  // namespace

void TaskSpec::validate() const {
  if (frames < 1 || resolution < 1) throw ConfigError("task: frames and resolution must be positive");
  if (noise < 0.0) throw ConfigError("task: noise must be non-negative");
  if (background < 0 || background > 255 || foreground < 0 || foreground > 255) {
    throw ConfigError("task: intensities must lie in [0, 255]");
  }
  if (kind == TaskKind::order) {
    if (classes != 2) throw ConfigError("order task has exactly 2 classes");
    if (event_duration < 1 || min_gap < 0 || edge_margin < 0) throw ConfigError("order task: bad event timing");
    if (frames < 2 * event_duration + min_gap + 2 * edge_margin) {
      throw ConfigError("order task: " + std::to_string(frames) + " frames cannot hold two " +
                        std::to_string(event_duration) + "-frame events " + std::to_string(min_gap) +
                        " frames apart with " + std::to_string(edge_margin) + "-frame margins");
    }
    if (resolution < 2 * kSquareMaxHalf + 2 || resolution < kBarLength + kBarStep * event_duration + 1) {
      throw ConfigError("order task: resolution " + std::to_string(resolution) + " too small for the events");
    }
  } else {
    if (classes < 2) throw ConfigError("speed task needs at least 2 classes");
    if (frames < 8) throw ConfigError("speed task needs at least 8 frames");
    if (!(dot_radius > 0.0) || 2.0 * dot_radius >= static_cast<double>(resolution)) {
      throw ConfigError("speed task: dot radius does not fit the frame");
    }
    if (!(slow_speed > 0.0) || speed_step <= 0.0) throw ConfigError("speed task: speeds must be positive");
  }
}

ClipEvent clip_event(const OrderEvents& events, Index event_duration, Index start, Index length) {
  auto overlaps = [&](Index s) { return start < s + event_duration && s < start + length; };
  const bool a = overlaps(events.a_start());
  const bool b = overlaps(events.b_start());
  if (a && b) return ClipEvent::both;
  if (a) return ClipEvent::a;
  if (b) return ClipEvent::b;
  return ClipEvent::none;
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

namespace {

OrderEvents draw_events(const TaskSpec& spec, std::mt19937_64& rng) {
  // Uniform over ordered start pairs with the second at least duration + gap later.
  const Index d = spec.event_duration;
  const Index end = spec.frames - spec.edge_margin;
  std::vector<std::pair<Index, Index>> pairs;
  for (Index s1 = spec.edge_margin; s1 + 2 * d + spec.min_gap <= end; ++s1) {
    for (Index s2 = s1 + d + spec.min_gap; s2 + d <= end; ++s2) pairs.emplace_back(s1, s2);
  }
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  const auto [s1, s2] = pairs[pick(rng)];
  std::bernoulli_distribution coin(0.5);
  return {s1, s2, coin(rng)};
}

void fill_background(const TaskSpec& spec, VideoSample& v, std::mt19937_64& rng) {
  // Gray frames: one noise draw per pixel, shared by the three channels.
  std::normal_distribution<double> noise(0.0, spec.noise);
  for (std::size_t i = 0; i < v.pixels.size(); i += 3) {
    const double value = static_cast<double>(spec.background) + (spec.noise > 0.0 ? noise(rng) : 0.0);
    const auto p = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
    v.pixels[i] = v.pixels[i + 1] = v.pixels[i + 2] = p;
  }
}

void paint(VideoSample& v, Index t, Index y, Index x, Index value) {
  if (y < 0 || y >= v.height || x < 0 || x >= v.width) return;
  for (Index c = 0; c < 3; ++c) v.at(t, y, x, c) = static_cast<std::uint8_t>(value);
}

VideoSample blank(const TaskSpec& spec, std::uint32_t id, std::uint16_t label) {
  VideoSample v;
  v.id = id;
  v.label = label;
  v.frames = spec.frames;
  v.height = v.width = spec.resolution;
  v.pixels.assign(static_cast<std::size_t>(v.frames) * v.frame_bytes(), 0);
  return v;
}

}  // namespace

OrderEvents order_events(const TaskSpec& spec, std::uint64_t seed, std::uint64_t index) {
  spec.validate();
  auto rng = sample_rng(seed, index);
  return draw_events(spec, rng);
}

VideoSample render_order_sample(const TaskSpec& spec, const OrderEvents& events, std::uint32_t id,
                                std::mt19937_64& rng) {
  spec.validate();
  const Index r = spec.resolution;
  const Index d = spec.event_duration;
  VideoSample v = blank(spec, id, events.a_first ? 1 : 0);

  // Geometry is drawn before the noise so it does not depend on the frame count.
  std::uniform_int_distribution<Index> centre(kSquareMaxHalf, r - kSquareMaxHalf - 1);
  const Index cy = centre(rng);
  const Index cx = centre(rng);
  const Index travel = kBarStep * (d - 1);
  std::uniform_int_distribution<Index> bar_y(0, r - kBarThickness);
  std::uniform_int_distribution<Index> bar_x(0, r - kBarLength - travel);
  const Index by = bar_y(rng);
  const Index bx = bar_x(rng);
  std::bernoulli_distribution rightward(0.5);
  const bool right = rightward(rng);

  fill_background(spec, v, rng);
  for (Index k = 0; k < d; ++k) {
    // A: square growing from 2 px to 2 * kSquareMaxHalf px across the event.
    const Index half = 1 + (k * (kSquareMaxHalf - 1)) / std::max<Index>(1, d - 1);
    const Index ta = events.a_start() + k;
    for (Index y = cy - half; y < cy + half; ++y) {
      for (Index x = cx - half; x < cx + half; ++x) paint(v, ta, y, x, spec.foreground);
    }
    // B: bar sliding horizontally by kBarStep px per frame.
    const Index tb = events.b_start() + k;
    const Index x0 = right ? bx + kBarStep * k : bx + travel - kBarStep * k;
    for (Index y = by; y < by + kBarThickness; ++y) {
      for (Index x = x0; x < x0 + kBarLength; ++x) paint(v, tb, y, x, spec.foreground);
    }
  }
  return v;
}

namespace {

VideoSample render_speed_sample(const TaskSpec& spec, std::uint32_t id, std::mt19937_64& rng) {
  std::uniform_int_distribution<Index> label_dist(0, spec.classes - 1);
  const auto label = static_cast<std::uint16_t>(label_dist(rng));
  VideoSample v = blank(spec, id, label);
  const double size = static_cast<double>(spec.resolution);
  std::uniform_real_distribution<double> position(0.0, size);
  std::uniform_int_distribution<int> heading(0, 7);
  const double y0 = position(rng);
  const double x0 = position(rng);
  const double angle = heading(rng) * std::numbers::pi / 4.0;
  const double speed = spec.slow_speed + spec.speed_step * label;
  fill_background(spec, v, rng);

  // The dot moves on a torus, so every frame's dot position is uniform for every class.
  auto wrapped = [&](double a, double b) {
    const double d = std::fmod(std::abs(a - b), size);
    return std::min(d, size - d);
  };
  for (Index t = 0; t < spec.frames; ++t) {
    const double py = std::fmod(y0 + std::sin(angle) * speed * static_cast<double>(t) + 64.0 * size, size);
    const double px = std::fmod(x0 + std::cos(angle) * speed * static_cast<double>(t) + 64.0 * size, size);
    for (Index y = 0; y < spec.resolution; ++y) {
      for (Index x = 0; x < spec.resolution; ++x) {
        const double dy = wrapped(static_cast<double>(y) + 0.5, py);
        const double dx = wrapped(static_cast<double>(x) + 0.5, px);
        if (dy * dy + dx * dx <= spec.dot_radius * spec.dot_radius) paint(v, t, y, x, spec.foreground);
      }
    }
  }
  return v;
}

}  // namespace

Dataset gen_order_task(const TaskSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (spec.kind != TaskKind::order) throw ConfigError("gen_order_task: spec is not an order task");
  Dataset d;
  d.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = sample_rng(seed, i);
    const auto events = draw_events(spec, rng);
    d.samples.push_back(render_order_sample(spec, events, static_cast<std::uint32_t>(i), rng));
  }
  return d;
}

Dataset gen_speed_task(const TaskSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (spec.kind != TaskKind::speed) throw ConfigError("gen_speed_task: spec is not a speed task");
  Dataset d;
  d.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = sample_rng(seed, i);
    d.samples.push_back(render_speed_sample(spec, static_cast<std::uint32_t>(i), rng));
  }
  return d;
}

Dataset generate(const TaskSpec& spec, std::size_t n, std::uint64_t seed) {
  return spec.kind == TaskKind::order ? gen_order_task(spec, n, seed) : gen_speed_task(spec, n, seed);
}

double clairvoyant_average_accuracy(const TaskSpec& spec, Index clip_length, Index clips, std::size_t train_n,
                                    std::size_t test_n, std::uint64_t seed) {
  if (spec.kind != TaskKind::order) throw ConfigError("clairvoyant oracle is defined for the order task");
  if (test_n == 0) throw DataError("clairvoyant oracle: empty held-out set");
  const auto windows = sample_clips_eval(spec.frames, clip_length, clips);

  // Averaged clip scores depend only on how many clips show each event identity.
  using Counts = std::tuple<Index, Index, Index>;
  auto counts_of = [&](const OrderEvents& e) {
    Index a = 0, b = 0, both = 0;
    for (Index s : windows.starts) {
      switch (clip_event(e, spec.event_duration, s, clip_length)) {
        case ClipEvent::a: ++a; break;
        case ClipEvent::b: ++b; break;
        case ClipEvent::both: ++both; break;
        case ClipEvent::none: break;
      }
    }
    return Counts{a, b, both};
  };

  std::map<Counts, std::array<std::size_t, 2>> table;
  for (std::size_t i = 0; i < train_n; ++i) {
    const auto e = order_events(spec, seed, i);
    ++table[counts_of(e)][e.a_first ? 1 : 0];
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_n; ++i) {
    const auto e = order_events(spec, seed, train_n + i);
    const auto it = table.find(counts_of(e));
    const int guess = (it != table.end() && it->second[1] > it->second[0]) ? 1 : 0;
    if (guess == (e.a_first ? 1 : 0)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test_n);
}

}  // namespace faster
