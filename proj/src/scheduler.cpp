#include "faster/scheduler.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "faster/errors.hpp"

namespace faster {

Pattern Pattern::parse(const std::string& text) {
  std::string s;
  for (char ch : text) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (s == "all-e") return ratio(0);
  if (s == "all-c") return all_cheap();
  if (s.size() > 2 && s.rfind("1:", 0) == 0) {
    const std::string digits = s.substr(2);
    if (std::all_of(digits.begin(), digits.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); }) &&
        digits.size() < 10) {
      return ratio(std::stoll(digits));
    }
  }
  throw ConfigError("invalid pattern '" + text + "' (expected 1:x, all-e or all-c)");
}

std::string Pattern::label() const {
  if (kind == Kind::all_cheap) return "all-c";
  if (x == 0) return "all-e";
  return "1:" + std::to_string(x);
}

Index ClipSchedule::expensive_count() const {
  return static_cast<Index>(std::count(kinds.begin(), kinds.end(), ClipKind::expensive));
}

std::string ClipSchedule::to_string() const {
  std::string s;
  for (auto k : kinds) s.push_back(static_cast<char>(k));
  return s;
}

std::vector<Index> feasible_ratios(Index clips) {
  std::vector<Index> out;
  for (Index x : kStudiedRatios) {
    if (clips >= 1 && clips % (x + 1) == 0) out.push_back(x);
  }
  return out;
}

std::vector<ClipKind> make_pattern(Index clips, const Pattern& pattern) {
  if (clips < 1) throw ConfigError("pattern needs at least one clip");
  if (pattern.kind == Pattern::Kind::all_cheap) return std::vector<ClipKind>(static_cast<std::size_t>(clips), ClipKind::cheap);
  if (pattern.x < 0) throw ConfigError("pattern ratio must be non-negative");
  if (clips % (pattern.x + 1) != 0) {
    std::string feasible;
    for (Index x : feasible_ratios(clips)) feasible += (feasible.empty() ? "" : ", ") + std::to_string(x);
    throw ConfigError("infeasible pattern " + pattern.label() + " for " + std::to_string(clips) + " clips: " +
                      std::to_string(pattern.x + 1) + " does not divide " + std::to_string(clips) +
                      " (feasible x: " + feasible + ")");
  }
  std::vector<ClipKind> kinds(static_cast<std::size_t>(clips), ClipKind::cheap);
  for (Index i = 0; i < clips; i += pattern.x + 1) kinds[static_cast<std::size_t>(i)] = ClipKind::expensive;
  return kinds;
}

ClipSchedule make_schedule(Index clip_length, Index clips, const Pattern& pattern) {
  if (clip_length < 1) throw ConfigError("clip length must be positive");
  return {clip_length, pattern, make_pattern(clips, pattern)};
}

ClipSchedule preset_schedule(const std::string& name) {
  if (name == "faster16") return make_schedule(16, 16, Pattern::ratio(7));
  if (name == "faster32") return make_schedule(32, 8, Pattern::ratio(1));
  throw ConfigError("unknown preset '" + name + "' (faster16, faster32)");
}

std::vector<Index> window_frames(Index start, Index clip_length, Index video_length) {
  if (video_length < 1) throw DataError("video has no frames");
  std::vector<Index> frames(static_cast<std::size_t>(clip_length));
  for (Index i = 0; i < clip_length; ++i) frames[static_cast<std::size_t>(i)] = (start + i) % video_length;
  return frames;
}

std::vector<Index> ClipSet::frames(std::size_t i) const { return window_frames(starts.at(i), clip_length, video_length); }

namespace {

void check_sampling(Index video_length, Index clip_length, Index clips) {
  if (video_length < 1) throw DataError("video has no frames");
  if (clip_length < 1 || clips < 1) throw ConfigError("clip length and clip count must be positive");
}

}  // namespace

ClipSet sample_clips_eval(Index video_length, Index clip_length, Index clips) {
  check_sampling(video_length, clip_length, clips);
  const Index span = std::max<Index>(0, video_length - clip_length);
  ClipSet set{video_length, clip_length, {}};
  if (clips == 1) {
    set.starts.push_back(span / 2);
    return set;
  }
  for (Index i = 0; i < clips; ++i) {
    set.starts.push_back(
        static_cast<Index>(std::llround(static_cast<double>(i * span) / static_cast<double>(clips - 1))));
  }
  return set;
}

ClipSet sample_clips_train(Index video_length, Index clip_length, Index clips, std::mt19937_64& rng) {
  check_sampling(video_length, clip_length, clips);
  std::uniform_int_distribution<Index> start(0, std::max<Index>(0, video_length - clip_length));
  ClipSet set{video_length, clip_length, {}};
  for (Index i = 0; i < clips; ++i) set.starts.push_back(start(rng));
  std::sort(set.starts.begin(), set.starts.end());
  return set;
}

}  // namespace faster
