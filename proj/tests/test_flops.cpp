#include <gtest/gtest.h>

#include <sstream>

#include "faster/errors.hpp"
#include "faster/flops.hpp"

namespace faster {
namespace {

// Per-clip GFLOPs of the backbone accuracy table, indexed by clip length.
struct ClipCostRow {
  Index frames;
  double r2d;
  double r21d;
};
const ClipCostRow kClipCosts[] = {{8, 3.2, 30.0}, {16, 6.0, 60.0}, {32, 12.7, 119.9}};

// Trade-off table totals: (pattern x, frames, GFLOPs); infeasible cells absent.
struct ScheduleCell {
  Index x;
  Index frames;
  double gflops;
};
const ScheduleCell kScheduleTotals[] = {
    {0, 8, 982.4},  {1, 8, 553.6},  {3, 8, 339.2},  {7, 8, 230.4},  {15, 8, 176.0}, {31, 8, 150.4},
    {0, 16, 980.2}, {1, 16, 552.0}, {3, 16, 337.6}, {7, 16, 230.4}, {15, 16, 176.0},
    {0, 32, 979.2}, {1, 32, 550.4}, {3, 32, 336.0}, {7, 32, 228.8}};

double relative_error(double got, double want) { return std::abs(got - want) / want; }

TEST(Flops, ClosedFormLayerCounts) {
  LayerSpec dense;
  dense.name = "fc";
  dense.kind = LayerKind::dense;
  dense.in_channels = 2048;
  dense.out_channels = 400;
  EXPECT_EQ(layer_flops(dense, {2048}), 819200);

  LayerSpec pool;
  pool.name = "pool";
  pool.kind = LayerKind::maxpool;
  pool.in_channels = 64;
  EXPECT_EQ(layer_flops(pool, {1, 56, 56, 64}), 0);

  ConvLayer squeeze{"squeeze", {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 2048, 512, {1, 7, 7}, false};
  EXPECT_EQ(squeeze.macs(), 51380224);
  EXPECT_THROW(layer_flops(dense, {1024}), ShapeError);
}

TEST(Flops, BackboneCostsMatchReference) {
  for (const auto& row : kClipCosts) {
    const double r2d = backbone_gflops(BackboneConfig::full_spec(BackboneFamily::r2d, row.frames));
    const double r21d = backbone_gflops(BackboneConfig::full_spec(BackboneFamily::r21d, row.frames));
    EXPECT_LT(relative_error(r2d, row.r2d), 0.10) << "r2d L=" << row.frames << " got " << r2d;
    EXPECT_LT(relative_error(r21d, row.r21d), 0.10) << "r21d L=" << row.frames << " got " << r21d;
  }
}

TEST(Flops, BackboneTotalIsSumOfLayerRows) {
  for (auto family : {BackboneFamily::r2d, BackboneFamily::r21d}) {
    const auto config = BackboneConfig::full_spec(family, 16);
    Macs by_row = 0;
    Shape input{16, 224, 224, 3};
    for (const auto& row : spec_table(config)) {
      by_row += layer_flops(row, input);
      input = row.output;
    }
    EXPECT_EQ(by_row, backbone_cost(config).total_macs());
  }
}

TEST(Flops, FastGruStepCostAgreesWithTableDifferences) {
  const double step1 = to_gflops(aggregator_flops(AggregatorMethod::fast_gru, {1, 7, 7, 2048}, 4));
  EXPECT_NEAR(step1, 49.0 * 2048 * 2048 * 3.5 / 1e9, 1e-12);
  EXPECT_LT(relative_error(step1, (982.4 - 32 * 30.0) / 31), 0.05);
  const double step4 = to_gflops(aggregator_flops(AggregatorMethod::fast_gru, {4, 7, 7, 2048}, 4));
  EXPECT_LT(relative_error(step4, (979.2 - 8 * 119.9) / 7), 0.05);
  EXPECT_EQ(aggregator_flops(AggregatorMethod::avg_pool, {1, 7, 7, 2048}), 0);
  EXPECT_EQ(aggregator_flops(AggregatorMethod::gru, {1, 7, 7, 2048}), 6 * 2048 * 2048);
  EXPECT_THROW(aggregator_flops(AggregatorMethod::fast_gru, {1, 7, 7, 2046}, 4), ConfigError);
}

ClipCosts reference_clip_costs(Index frames) {
  for (const auto& row : kClipCosts) {
    if (row.frames == frames) return {from_gflops(row.r21d), from_gflops(row.r2d), {frames / 8, 7, 7, 2048}, 400};
  }
  throw std::logic_error("no row");
}

TEST(Flops, ScheduleTotalsMatchReference) {
  for (const auto& cell : kScheduleTotals) {
    const auto schedule = make_schedule(cell.frames, 256 / cell.frames, Pattern::ratio(cell.x));
    const double got = schedule_flops(schedule, AggregatorMethod::fast_gru, reference_clip_costs(cell.frames)).total_gflops();
    EXPECT_LT(relative_error(got, cell.gflops), 0.05)
        << "1:" << cell.x << " L=" << cell.frames << " got " << got << " want " << cell.gflops;
  }
}

TEST(Flops, AnalyticScheduleTotalsMatchReference) {
  for (const auto& cell : kScheduleTotals) {
    const auto schedule = make_schedule(cell.frames, 256 / cell.frames, Pattern::ratio(cell.x));
    const double got =
        schedule_flops(schedule, AggregatorMethod::fast_gru, analytic_clip_costs(cell.frames)).total_gflops();
    EXPECT_LT(relative_error(got, cell.gflops), 0.05) << "1:" << cell.x << " L=" << cell.frames << " got " << got;
  }
}

TEST(Flops, AveragePoolingBaselines) {
  const double all_cheap =
      schedule_flops(make_schedule(32, 8, Pattern::all_cheap()), AggregatorMethod::avg_pool, reference_clip_costs(32))
          .total_gflops();
  EXPECT_LT(relative_error(all_cheap, 101.3), 0.05);
  const double all_expensive =
      schedule_flops(make_schedule(32, 8, Pattern::ratio(0)), AggregatorMethod::avg_pool, reference_clip_costs(32))
          .total_gflops();
  EXPECT_LT(relative_error(all_expensive, 959.3), 0.05);
}

TEST(Flops, ScheduleIsAdditiveInExpensiveClips) {
  const auto costs = analytic_clip_costs(8);
  const auto cheap = schedule_flops(make_schedule(8, 32, Pattern::all_cheap()), AggregatorMethod::fast_gru, costs);
  for (Index x : feasible_ratios(32)) {
    const auto s = make_schedule(8, 32, Pattern::ratio(x));
    const auto report = schedule_flops(s, AggregatorMethod::fast_gru, costs);
    EXPECT_EQ(report.total_macs(), cheap.total_macs() + s.expensive_count() * (costs.expensive - costs.cheap));
  }
}

TEST(Flops, ScheduleIsMonotone) {
  const auto costs = analytic_clip_costs(8);
  Macs previous = 0;
  for (Index x : {31, 15, 7, 3, 1, 0}) {
    const Macs total = schedule_flops(make_schedule(8, 32, Pattern::ratio(x)), AggregatorMethod::fast_gru, costs).total_macs();
    EXPECT_GT(total, previous);
    previous = total;
  }
  previous = 0;
  for (Index n : {2, 4, 8, 16, 32}) {
    const Macs total = schedule_flops(make_schedule(8, n, Pattern::ratio(1)), AggregatorMethod::fast_gru, costs).total_macs();
    EXPECT_GT(total, previous);
    previous = total;
  }
  previous = 0;
  for (Index l : {8, 16, 32}) {
    const Macs total =
        schedule_flops(make_schedule(l, 8, Pattern::ratio(1)), AggregatorMethod::fast_gru, analytic_clip_costs(l))
            .total_macs();
    EXPECT_GT(total, previous);
    previous = total;
  }
}

TEST(Flops, CsvHasHeaderRowsAndTotal) {
  const auto report = schedule_flops(make_schedule(8, 32, Pattern::ratio(1)), AggregatorMethod::fast_gru,
                                     analytic_clip_costs(8));
  std::ostringstream out;
  report.write_csv(out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "layer,macs,gflops");
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), report.entries.size() + 1);
  EXPECT_EQ(lines.back().rfind("total," + std::to_string(report.total_macs()) + ",", 0), 0u);
  Macs sum = 0;
  for (const auto& e : report.entries) sum += e.macs;
  EXPECT_EQ(sum, report.total_macs());
}

}  // namespace
}  // namespace faster
