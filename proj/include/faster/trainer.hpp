#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "faster/aggregators.hpp"
#include "faster/backbones.hpp"
#include "faster/checkpoint.hpp"
#include "faster/scheduler.hpp"
#include "faster/synth.hpp"

namespace faster {

/// Training runs in single precision.
using Real = float;

enum class Stage { backbone, aggregator };

const char* stage_name(Stage stage);
Stage parse_stage(const std::string& name);

struct TrainConfig {
  Stage stage = Stage::backbone;
  BackboneFamily backbone = BackboneFamily::r2d;  // stage one only
  AggregatorMethod method = AggregatorMethod::fast_gru;
  AggregatorOptions aggregator;
  Index epochs = 20;
  Index batch_size = 16;
  double base_lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  Index clip_length = 8;
  Index clips = 8;
  Pattern pattern = Pattern::ratio(1);
  Index resolution = 32;
  Index jitter_max = 40;  // short side drawn from [resolution, jitter_max] at train time
  double channel_scale = 1.0 / 16.0;
  /// Stage two: keep frozen-backbone features in memory, keyed by clip
  /// start. Disables spatial jitter so cached features stay valid.
  bool cache_features = false;

  Index frame_budget() const { return clip_length * clips; }
  /// Throws ConfigError on non-positive hyperparameters or a bad pattern.
  void validate() const;
  /// Sorted key=value lines; hashed into checkpoints.
  std::string canonical() const;
};

struct EpochMetrics {
  Index epoch = 0;
  std::string split;
  double loss = 0.0;
  double top1 = 0.0;
};

void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& rows);

/// 0.5 * base * (1 + cos(pi * step / total)); ConfigError outside [0, total].
double cosine_lr(Index step, Index total_steps, double base_lr);

/// SGD with momentum and L2 weight decay: v = m v + (g + wd w); w -= lr v.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  /// Parameters without a gradient are skipped.
  void step(const std::vector<Var<Real>>& params, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor<Real>> velocity_;
};

/// Lowest-index tie-break: a label counts as top-k when fewer than k classes
/// beat it, where equal scores at a lower index also beat it.
bool in_topk(std::span<const Real> logits, Index label, Index k);
double topk_accuracy(const Tensor<Real>& logits, std::span<const int> labels, Index k);

// Checkpoint <-> model plumbing.
Checkpoint backbone_to_checkpoint(Backbone<Real>& net);
Backbone<Real> backbone_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix = "");

/// Stage-two model: both frozen backbones, the aggregator and its schedule.
struct FasterModel {
  Backbone<Real> expensive;
  Backbone<Real> cheap;
  Aggregator<Real> aggregator;
  ClipSchedule schedule;

  Checkpoint to_checkpoint();
  static FasterModel from_checkpoint(const Checkpoint& ckpt);
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> metrics;
};

/// Stage one: one random clip per video per step, backbone + own head.
/// `val`, when given, is scored after every epoch (clip scores averaged over
/// the evenly spaced eval clips). DataError on an empty dataset, NumericError
/// on a non-finite loss.
TrainResult train_backbone(const TrainConfig& config, const Dataset& train, const Dataset* val = nullptr,
                           std::ostream* log = nullptr);

/// Stage two: backbones frozen, aggregator and fresh head trained on the
/// features of N sorted random clips per video, each passed through the
/// backbone its schedule position names. ShapeError when the two backbones
/// disagree on feature shape.
TrainResult train_aggregator(const TrainConfig& config, const Checkpoint& expensive, const Checkpoint& cheap,
                             const Dataset& train, const Dataset* val = nullptr, std::ostream* log = nullptr);

struct EvalResult {
  double loss = 0.0;
  double top1 = 0.0;
  double topk = 0.0;
};

/// Video-level accuracy of a backbone alone: clip scores averaged over
/// `clips` evenly spaced center-cropped clips.
EvalResult evaluate_backbone(Backbone<Real>& net, const Dataset& data, Index clips, Index k = 1,
                             Index batch_size = 16);

/// Evenly spaced eval clips, schedule applied, aggregated, ranked.
EvalResult evaluate_topk(FasterModel& model, const Dataset& data, Index k = 1, Index batch_size = 16);

}  // namespace faster
