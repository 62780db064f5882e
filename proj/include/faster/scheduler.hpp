#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "faster/tensor.hpp"

namespace faster {

enum class ClipKind : char { expensive = 'E', cheap = 'C' };

/// "1:x" (one expensive clip then x cheap ones, repeated), all-expensive
/// (x = 0) or all-cheap.
struct Pattern {
  enum class Kind { ratio, all_cheap };
  Kind kind = Kind::ratio;
  Index x = 0;

  static Pattern ratio(Index x) { return {Kind::ratio, x}; }
  static Pattern all_cheap() { return {Kind::all_cheap, 0}; }

  /// Accepts "1:x", "all-e" and "all-c" (case-insensitive).
  static Pattern parse(const std::string& text);
  std::string label() const;  // "1:x", "all-e" or "all-c"

  friend bool operator==(const Pattern&, const Pattern&) = default;
};

/// The ratios studied in the trade-off table.
inline constexpr Index kStudiedRatios[] = {0, 1, 3, 7, 15, 31};

struct ClipSchedule {
  Index clip_length = 8;
  Pattern pattern;
  std::vector<ClipKind> kinds;  // one entry per clip

  Index clips() const { return static_cast<Index>(kinds.size()); }
  Index expensive_count() const;
  Index cheap_count() const { return clips() - expensive_count(); }
  std::string to_string() const;  // e.g. "ECEC"
};

/// Ratio values from `kStudiedRatios` for which (x + 1) divides `clips`.
std::vector<Index> feasible_ratios(Index clips);

/// Throws ConfigError naming the feasible ratios when (x + 1) does not divide N.
std::vector<ClipKind> make_pattern(Index clips, const Pattern& pattern);
ClipSchedule make_schedule(Index clip_length, Index clips, const Pattern& pattern);

/// Named configurations from the trade-off study: "faster16" (L=16, 1:7) and
/// "faster32" (L=32, 1:1), each over a 256-frame budget.
ClipSchedule preset_schedule(const std::string& name);

/// Clip start frames for one video; frames past the end wrap to the start.
struct ClipSet {
  Index video_length = 0;
  Index clip_length = 0;
  std::vector<Index> starts;

  /// Frame indices of clip `i` after loop padding.
  std::vector<Index> frames(std::size_t i) const;
};

/// Frame indices of a window, wrapping modulo the video length.
std::vector<Index> window_frames(Index start, Index clip_length, Index video_length);

/// Evenly spaced windows covering first and last positions; N = 1 is centered.
ClipSet sample_clips_eval(Index video_length, Index clip_length, Index clips);

/// Independent uniform starts in [0, video_length - L], sorted ascending.
ClipSet sample_clips_train(Index video_length, Index clip_length, Index clips, std::mt19937_64& rng);

}  // namespace faster
