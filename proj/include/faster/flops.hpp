#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "faster/aggregators.hpp"
#include "faster/backbones.hpp"
#include "faster/scheduler.hpp"

namespace faster {

/// One multiply-accumulate counts as one FLOP; activations, normalization,
/// pooling and elementwise ops count as zero.
using Macs = std::int64_t;

inline double to_gflops(Macs macs) { return static_cast<double>(macs) / 1e9; }
inline Macs from_gflops(double gflops) { return static_cast<Macs>(gflops * 1e9 + 0.5); }

struct CostEntry {
  std::string name;
  Macs macs = 0;
};

struct CostReport {
  std::vector<CostEntry> entries;

  Macs total_macs() const;
  double total_gflops() const { return to_gflops(total_macs()); }
  /// Header `layer,macs,gflops`, one row per entry, then a `total` row.
  void write_csv(std::ostream& out) const;
};

/// MACs of one table row on an input {t, h, w, c} ({c} for the dense head).
Macs layer_flops(const LayerSpec& spec, const Shape& input);

/// Per-layer costs of one clip. `include_head` adds the classifier layer.
CostReport backbone_cost(const BackboneConfig& config, bool include_head = true);
double backbone_gflops(const BackboneConfig& config);

/// MACs of one recurrent step on features {l, h, w, c}; zero for avg-pool.
Macs aggregator_flops(AggregatorMethod method, const Shape& feature, Index reduction = 4);

/// Per-clip feature-extractor costs of the two backbones and the feature
/// geometry they share.
struct ClipCosts {
  Macs expensive = 0;
  Macs cheap = 0;
  Shape feature;  // {l, h, w, c}
  Index classes = 400;
};

/// Full-spec R(2+1)D-50 (expensive) and R2D-26 (cheap) at the given clip length.
ClipCosts analytic_clip_costs(Index clip_length, Index resolution = 224);

/// Clip costs by pattern, (N - 1) aggregation steps, and the head (once for
/// recurrent methods, once per clip for avg-pool).
CostReport schedule_flops(const ClipSchedule& schedule, AggregatorMethod method, const ClipCosts& costs,
                          Index reduction = 4);

}  // namespace faster
