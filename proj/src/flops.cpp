#include "faster/flops.hpp"

#include <iomanip>
#include <ostream>

namespace faster {

Macs CostReport::total_macs() const {
  Macs total = 0;
  for (const auto& e : entries) total += e.macs;
  return total;
}

void CostReport::write_csv(std::ostream& out) const {
  const auto flags = out.flags();
  out << "layer,macs,gflops\n" << std::fixed << std::setprecision(6);
  for (const auto& e : entries) out << e.name << ',' << e.macs << ',' << to_gflops(e.macs) << '\n';
  out << "total," << total_macs() << ',' << total_gflops() << '\n';
  out.flags(flags);
}

Macs layer_flops(const LayerSpec& spec, const Shape& input) {
  Macs total = 0;
  for (const auto& l : row_layers(spec, input)) total += l.macs();
  return total;
}

CostReport backbone_cost(const BackboneConfig& config, bool include_head) {
  CostReport report;
  for (const auto& l : expand_layers(config)) {
    if (!include_head && l.name == "fc") continue;
    report.entries.push_back({l.name, l.macs()});
  }
  return report;
}

double backbone_gflops(const BackboneConfig& config) { return backbone_cost(config).total_gflops(); }

Macs aggregator_flops(AggregatorMethod method, const Shape& feature, Index reduction) {
  if (feature.size() != 4) throw ShapeError("aggregator_flops: feature shape must be {l,h,w,c}, got " + shape_string(feature));
  const Index c = feature[3];
  const Index positions = feature[0] * feature[1] * feature[2];
  switch (method) {
    case AggregatorMethod::fast_gru: {
      if (reduction < 1 || c % reduction != 0) {
        throw ConfigError("aggregator_flops: channels " + std::to_string(c) + " not divisible by reduction " +
                          std::to_string(reduction));
      }
      const Index squeezed = c / reduction;
      return positions * (4 * c * squeezed + 2 * squeezed * c + 2 * c * c);
    }
    case AggregatorMethod::gru: return 6 * c * c;
    case AggregatorMethod::lstm: return 8 * c * c;
    case AggregatorMethod::concat: return 2 * c * c;
    case AggregatorMethod::avg_pool: return 0;
  }
  return 0;
}

ClipCosts analytic_clip_costs(Index clip_length, Index resolution) {
  auto expensive = BackboneConfig::full_spec(BackboneFamily::r21d, clip_length);
  auto cheap = BackboneConfig::full_spec(BackboneFamily::r2d, clip_length);
  expensive.resolution = cheap.resolution = resolution;
  return {backbone_cost(expensive, false).total_macs(), backbone_cost(cheap, false).total_macs(),
          feature_shape(expensive), expensive.classes};
}

CostReport schedule_flops(const ClipSchedule& schedule, AggregatorMethod method, const ClipCosts& costs,
                          Index reduction) {
  if (costs.feature.size() != 4) throw ShapeError("schedule_flops: feature shape must be {l,h,w,c}");
  const Index n = schedule.clips();
  const Index e = schedule.expensive_count();
  const Index head = costs.feature[3] * costs.classes;
  CostReport report;
  report.entries.push_back({"expensive_clips", e * costs.expensive});
  report.entries.push_back({"cheap_clips", (n - e) * costs.cheap});
  report.entries.push_back({"aggregation", (n - 1) * aggregator_flops(method, costs.feature, reduction)});
  report.entries.push_back({"head", (method == AggregatorMethod::avg_pool ? n : 1) * head});
  return report;
}

}  // namespace faster
