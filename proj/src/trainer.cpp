#include "faster/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <tuple>

#include "faster/clips.hpp"
#include "faster/errors.hpp"
#include "faster/threads.hpp"

namespace faster {

const char* stage_name(Stage stage) { return stage == Stage::backbone ? "backbone" : "aggregator"; }

Stage parse_stage(const std::string& name) {
  if (name == "backbone") return Stage::backbone;
  if (name == "aggregator") return Stage::aggregator;
  throw ConfigError("unknown stage '" + name + "' (backbone, aggregator)");
}

namespace {

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::map<std::string, std::string>& extra, const std::string& key) {
  try {
    return std::stod(extra.at(key));
  } catch (const std::exception&) {
    throw FormatError("checkpoint metadata lacks a numeric '" + key + "'");
  }
}

Index parse_index(const std::map<std::string, std::string>& extra, const std::string& key) {
  try {
    return std::stoll(extra.at(key));
  } catch (const std::exception&) {
    throw FormatError("checkpoint metadata lacks an integer '" + key + "'");
  }
}

const std::string& text(const std::map<std::string, std::string>& extra, const std::string& key) {
  const auto it = extra.find(key);
  if (it == extra.end()) throw FormatError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (!(base_lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  if (clip_length < 8 || clip_length % 8 != 0) throw ConfigError("clip length must be a positive multiple of 8");
  if (clips < 1) throw ConfigError("clip count must be positive");
  if (resolution < 32 || resolution % 32 != 0) throw ConfigError("resolution must be a positive multiple of 32");
  if (jitter_max < resolution) throw ConfigError("jitter maximum must be at least the resolution");
  if (!(channel_scale > 0.0)) throw ConfigError("channel scale must be positive");
  if (aggregator.reduction < 1) throw ConfigError("reduction must be positive");
  if (stage == Stage::aggregator) make_pattern(clips, pattern);
}

std::string TrainConfig::canonical() const {
  std::map<std::string, std::string> kv{
      {"stage", stage_name(stage)},
      {"backbone", family_name(backbone)},
      {"method", method_name(method)},
      {"reduction", std::to_string(aggregator.reduction)},
      {"gate_bias", exact(aggregator.gate_bias)},
      {"epochs", std::to_string(epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"lr", exact(base_lr)},
      {"momentum", exact(momentum)},
      {"weight_decay", exact(weight_decay)},
      {"seed", std::to_string(seed)},
      {"clip_length", std::to_string(clip_length)},
      {"clips", std::to_string(clips)},
      {"pattern", pattern.label()},
      {"resolution", std::to_string(resolution)},
      {"jitter_max", std::to_string(jitter_max)},
      {"channel_scale", exact(channel_scale)},
      {"cache_features", cache_features ? "true" : "false"},
  };
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& rows) {
  const auto flags = out.flags();
  out << "epoch,split,loss,top1\n" << std::fixed << std::setprecision(6);
  for (const auto& r : rows) out << r.epoch << ',' << r.split << ',' << r.loss << ',' << r.top1 << '\n';
  out.flags(flags);
}

double cosine_lr(Index step, Index total_steps, double base_lr) {
  if (total_steps < 1 || step < 0 || step > total_steps) {
    throw ConfigError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  return 0.5 * base_lr *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

void Sgd::step(const std::vector<Var<Real>>& params, double lr) {
  if (velocity_.empty()) {
    for (const auto& p : params) velocity_.emplace_back(p.shape());
  }
  if (velocity_.size() != params.size()) throw GraphError("Sgd: parameter list changed between steps");
  const auto m = static_cast<Real>(momentum_);
  const auto wd = static_cast<Real>(weight_decay_);
  const auto rate = static_cast<Real>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    if (!p.has_grad()) continue;
    auto w = p.mutable_value().values();
    auto g = p.grad().values();
    auto v = velocity_[i].values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = m * v[j] + (g[j] + wd * w[j]);
      w[j] -= rate * v[j];
    }
  }
}

bool in_topk(std::span<const Real> logits, Index label, Index k) {
  if (k < 1) throw ConfigError("top-k needs k >= 1");
  if (label < 0 || label >= static_cast<Index>(logits.size())) throw DataError("label outside the logit range");
  const Real mine = logits[static_cast<std::size_t>(label)];
  Index ahead = 0;
  for (Index j = 0; j < static_cast<Index>(logits.size()); ++j) {
    const Real other = logits[static_cast<std::size_t>(j)];
    if (other > mine || (other == mine && j < label)) ++ahead;
  }
  return ahead < k;
}

double topk_accuracy(const Tensor<Real>& logits, std::span<const int> labels, Index k) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<Index>(labels.size())) {
    throw ShapeError("topk_accuracy: logits " + shape_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw DataError("topk_accuracy: no samples");
  const Index classes = logits.dim(1);
  Index hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    hits += in_topk({logits.data() + static_cast<Index>(i) * classes, static_cast<std::size_t>(classes)}, labels[i], k);
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

namespace {

void put_backbone(Checkpoint& c, Backbone<Real>& net, const std::string& prefix) {
  for (const auto& [name, var] : net.parameters(true)) c.put(prefix + name, var.value());
  for (const auto& [name, tensor] : net.buffers()) c.put(prefix + name, *tensor);
  const auto& cfg = net.config();
  auto& e = c.metadata.extra;
  e[prefix + "family"] = family_name(cfg.family);
  e[prefix + "preset"] = preset_name(cfg.preset);
  e[prefix + "clip_length"] = std::to_string(cfg.clip_length);
  e[prefix + "resolution"] = std::to_string(cfg.resolution);
  e[prefix + "channel_scale"] = exact(cfg.channel_scale);
  e[prefix + "classes"] = std::to_string(cfg.classes);
  std::string repeats;
  for (Index r : cfg.repeats) repeats += (repeats.empty() ? "" : ",") + std::to_string(r);
  e[prefix + "repeats"] = repeats;
}

void freeze(Backbone<Real>& net) {
  for (auto& [name, var] : net.parameters(true)) {
    var.set_requires_grad(false);
    var.zero_grad();
  }
}

std::vector<Var<Real>> vars_of(const std::vector<NamedVar<Real>>& named) {
  std::vector<Var<Real>> out;
  for (const auto& p : named) out.push_back(p.var);
  return out;
}

std::vector<Var<Real>> vars_of(const std::vector<std::pair<std::string, Var<Real>>>& named) {
  std::vector<Var<Real>> out;
  for (const auto& p : named) out.push_back(p.second);
  return out;
}

}  // namespace

Checkpoint backbone_to_checkpoint(Backbone<Real>& net) {
  Checkpoint c;
  put_backbone(c, net, "");
  c.metadata.extra["stage"] = "backbone";
  return c;
}

Backbone<Real> backbone_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  const auto& e = ckpt.metadata.extra;
  BackboneConfig cfg;
  try {
    cfg.family = parse_family(text(e, prefix + "family"));
    cfg.preset = parse_preset(text(e, prefix + "preset"));
  } catch (const ConfigError& err) {
    throw FormatError(std::string("checkpoint metadata: ") + err.what());
  }
  cfg.clip_length = parse_index(e, prefix + "clip_length");
  cfg.resolution = parse_index(e, prefix + "resolution");
  cfg.channel_scale = parse_double(e, prefix + "channel_scale");
  cfg.classes = parse_index(e, prefix + "classes");
  std::istringstream reps(text(e, prefix + "repeats"));
  std::string item;
  for (std::size_t i = 0; i < cfg.repeats.size(); ++i) {
    if (!std::getline(reps, item, ',')) throw FormatError("checkpoint metadata: bad repeats");
    cfg.repeats[i] = std::stoll(item);
  }
  auto net = Backbone<Real>::build(cfg, 0);
  for (auto& [name, var] : net.parameters(true)) ckpt.restore(prefix + name, var.mutable_value());
  for (auto& [name, tensor] : net.buffers()) ckpt.restore(prefix + name, *tensor);
  return net;
}

Checkpoint FasterModel::to_checkpoint() {
  Checkpoint c;
  put_backbone(c, expensive, "expensive.");
  put_backbone(c, cheap, "cheap.");
  for (const auto& p : aggregator.parameters()) c.put("aggregator." + p.name, p.var.value());
  for (const auto& [name, tensor] : aggregator.buffers()) c.put("aggregator." + name, *tensor);
  auto& e = c.metadata.extra;
  e["stage"] = "aggregator";
  e["method"] = method_name(aggregator.method());
  e["reduction"] = std::to_string(aggregator.options().reduction);
  e["gate_bias"] = exact(aggregator.options().gate_bias);
  e["channels"] = std::to_string(aggregator.channels());
  e["classes"] = std::to_string(aggregator.classes());
  e["clip_length"] = std::to_string(schedule.clip_length);
  e["clips"] = std::to_string(schedule.clips());
  e["pattern"] = schedule.pattern.label();
  return c;
}

FasterModel FasterModel::from_checkpoint(const Checkpoint& ckpt) {
  const auto& e = ckpt.metadata.extra;
  if (text(e, "stage") != "aggregator") throw FormatError("checkpoint is not an aggregator checkpoint");
  AggregatorOptions options;
  options.reduction = parse_index(e, "reduction");
  options.gate_bias = parse_double(e, "gate_bias");
  AggregatorMethod method;
  Pattern pattern;
  try {
    method = parse_method(text(e, "method"));
    pattern = Pattern::parse(text(e, "pattern"));
  } catch (const ConfigError& err) {
    throw FormatError(std::string("checkpoint metadata: ") + err.what());
  }
  FasterModel m{backbone_from_checkpoint(ckpt, "expensive."), backbone_from_checkpoint(ckpt, "cheap."),
                Aggregator<Real>::create(method, parse_index(e, "channels"), parse_index(e, "classes"), options, 0),
                make_schedule(parse_index(e, "clip_length"), parse_index(e, "clips"), pattern)};
  for (auto& p : m.aggregator.parameters()) ckpt.restore("aggregator." + p.name, p.var.mutable_value());
  for (auto& [name, tensor] : m.aggregator.buffers()) ckpt.restore("aggregator." + name, *tensor);
  freeze(m.expensive);
  freeze(m.cheap);
  return m;
}

namespace {

constexpr std::uint64_t kDataStream = 0x9e3779b97f4a7c15ULL;

void require_data(const Dataset& data, const char* what) {
  if (data.empty()) throw DataError(std::string(what) + ": dataset is empty");
  for (const auto& s : data.samples) {
    if (s.frames < 1 || s.height < 1 || s.width < 1) throw DataError("sample " + std::to_string(s.id) + " is empty");
  }
}

Tensor<Real> assemble(const std::vector<const VideoSample*>& videos, const std::vector<Index>& starts, Index length,
                      const std::vector<CropPlan>& plans) {
  const Index crop = plans.front().crop;
  Tensor<Real> batch({static_cast<Index>(videos.size()), length, crop, crop, 3});
  const Index per_clip = length * crop * crop * 3;
  parallel_for(static_cast<Index>(videos.size()), [&](Index i) {
    const auto k = static_cast<std::size_t>(i);
    write_clip(*videos[k], starts[k], length, plans[k], batch.data() + i * per_clip);
  });
  return batch;
}

Tensor<Real> features_of(Backbone<Real>& net, const Tensor<Real>& clips) {
  Graph<Real> g;
  return net.extract_features(g, Var<Real>(clips), BnMode::eval).value();
}

Tensor<Real> logits_of(Backbone<Real>& net, const Tensor<Real>& clips) {
  Graph<Real> g;
  return net.classify(g, net.extract_features(g, Var<Real>(clips), BnMode::eval)).value();
}

double cross_entropy(const Tensor<Real>& logits, std::span<const int> labels) {
  Graph<Real> g;
  return softmax_cross_entropy(g, Var<Real>(logits), labels).value()[0];
}

std::vector<std::size_t> batch_order(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Frozen-backbone features for clips of one dataset, optionally memoized by
// (backbone, sample, start). Memoized clips are always center-cropped.
class FeatureSource {
 public:
  FeatureSource(FasterModel& model, const Dataset& data, bool cache) : model_(model), data_(data), cache_(cache) {}

  bool caching() const { return cache_; }

  Tensor<Real> get(ClipKind kind, const std::vector<std::size_t>& samples, const std::vector<Index>& starts,
                   const std::vector<CropPlan>& plans) {
    auto& net = kind == ClipKind::expensive ? model_.expensive : model_.cheap;
    const Index length = model_.schedule.clip_length;
    if (!cache_) return features_of(net, assemble(pointers(samples), starts, length, plans));

    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!store_.count(key(kind, samples[i], starts[i]))) missing.push_back(i);
    }
    if (!missing.empty()) {
      std::vector<const VideoSample*> videos;
      std::vector<Index> miss_starts;
      std::vector<CropPlan> miss_plans;
      for (auto i : missing) {
        videos.push_back(&data_.samples[samples[i]]);
        miss_starts.push_back(starts[i]);
        miss_plans.push_back(center_plan(data_.samples[samples[i]], plans[i].crop));
      }
      const auto feats = features_of(net, assemble(videos, miss_starts, length, miss_plans));
      const Index per = feats.size() / feats.dim(0);
      for (std::size_t j = 0; j < missing.size(); ++j) {
        const auto* begin = feats.data() + static_cast<Index>(j) * per;
        store_.emplace(key(kind, samples[missing[j]], starts[missing[j]]), std::vector<Real>(begin, begin + per));
      }
      item_shape_ = feats.shape();
      item_shape_[0] = 1;
    }
    Shape shape = item_shape_;
    shape[0] = static_cast<Index>(samples.size());
    Tensor<Real> out(shape);
    const Index per = shape_size(item_shape_);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& f = store_.at(key(kind, samples[i], starts[i]));
      std::copy(f.begin(), f.end(), out.data() + static_cast<Index>(i) * per);
    }
    return out;
  }

 private:
  using Key = std::tuple<char, std::size_t, Index>;
  static Key key(ClipKind kind, std::size_t sample, Index start) { return {static_cast<char>(kind), sample, start}; }

  std::vector<const VideoSample*> pointers(const std::vector<std::size_t>& samples) const {
    std::vector<const VideoSample*> out;
    for (auto s : samples) out.push_back(&data_.samples[s]);
    return out;
  }

  FasterModel& model_;
  const Dataset& data_;
  bool cache_;
  std::map<Key, std::vector<Real>> store_;
  Shape item_shape_;
};

// Logits of `samples` under the model with eval clips and center crops.
Tensor<Real> model_logits(FasterModel& model, FeatureSource& source, const Dataset& data,
                          const std::vector<std::size_t>& samples, Index crop) {
  const Index n = model.schedule.clips();
  const Index length = model.schedule.clip_length;
  std::vector<ClipSet> windows;
  for (auto s : samples) windows.push_back(sample_clips_eval(data.samples[s].frames, length, n));
  std::vector<CropPlan> plans;
  for (auto s : samples) plans.push_back(center_plan(data.samples[s], crop));
  std::vector<Var<Real>> features;
  for (Index i = 0; i < n; ++i) {
    std::vector<Index> starts;
    for (const auto& w : windows) starts.push_back(w.starts[static_cast<std::size_t>(i)]);
    features.emplace_back(source.get(model.schedule.kinds[static_cast<std::size_t>(i)], samples, starts, plans));
  }
  Graph<Real> g;
  return aggregate_sequence<Real>(g, features, model.aggregator, BnMode::eval).value();
}

EvalResult score(const Tensor<Real>& logits, const std::vector<int>& labels, Index k) {
  return {cross_entropy(logits, labels), topk_accuracy(logits, labels, 1), topk_accuracy(logits, labels, k)};
}

EvalResult evaluate_with(FasterModel& model, FeatureSource& source, const Dataset& data, Index k, Index batch_size,
                         Index crop) {
  require_data(data, "evaluate");
  const Index classes = model.aggregator.classes();
  Tensor<Real> all({static_cast<Index>(data.size()), classes});
  std::vector<int> labels;
  for (std::size_t begin = 0; begin < data.size(); begin += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> samples;
    for (std::size_t i = begin; i < std::min(data.size(), begin + static_cast<std::size_t>(batch_size)); ++i) {
      samples.push_back(i);
    }
    const auto logits = model_logits(model, source, data, samples, crop);
    std::copy(logits.values().begin(), logits.values().end(), all.data() + static_cast<Index>(begin) * classes);
  }
  for (const auto& s : data.samples) labels.push_back(s.label);
  return score(all, labels, k);
}

void check_labels(const Dataset& data, Index classes) {
  for (const auto& s : data.samples) {
    if (Index{s.label} >= classes) {
      throw DataError("sample " + std::to_string(s.id) + " label " + std::to_string(s.label) + " >= " +
                      std::to_string(classes) + " classes");
    }
  }
}

void log_epoch(std::ostream* log, const EpochMetrics& m) {
  if (!log) return;
  *log << "epoch " << m.epoch << ' ' << m.split << " loss " << std::fixed << std::setprecision(4) << m.loss << " top1 "
       << m.top1 << std::defaultfloat << '\n';
}

void check_finite(double loss, Index epoch, Index step) {
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
  }
}

}  // namespace

EvalResult evaluate_backbone(Backbone<Real>& net, const Dataset& data, Index clips, Index k, Index batch_size) {
  require_data(data, "evaluate");
  if (clips < 1 || batch_size < 1) throw ConfigError("evaluate: clips and batch size must be positive");
  const auto& cfg = net.config();
  Tensor<Real> all({static_cast<Index>(data.size()), cfg.classes});
  for (std::size_t begin = 0; begin < data.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<ClipSet> windows;
    std::vector<const VideoSample*> videos;
    std::vector<CropPlan> plans;
    for (std::size_t i = begin; i < end; ++i) {
      videos.push_back(&data.samples[i]);
      windows.push_back(sample_clips_eval(data.samples[i].frames, cfg.clip_length, clips));
      plans.push_back(center_plan(data.samples[i], cfg.resolution));
    }
    std::vector<Tensor<Real>> scores;
    for (Index c = 0; c < clips; ++c) {
      std::vector<Index> starts;
      for (const auto& w : windows) starts.push_back(w.starts[static_cast<std::size_t>(c)]);
      scores.push_back(logits_of(net, assemble(videos, starts, cfg.clip_length, plans)));
    }
    const auto mean = avg_pool_aggregate<Real>(scores);
    std::copy(mean.values().begin(), mean.values().end(), all.data() + static_cast<Index>(begin) * cfg.classes);
  }
  std::vector<int> labels;
  for (const auto& s : data.samples) labels.push_back(s.label);
  return score(all, labels, k);
}

EvalResult evaluate_topk(FasterModel& model, const Dataset& data, Index k, Index batch_size) {
  if (batch_size < 1) throw ConfigError("evaluate: batch size must be positive");
  FeatureSource source(model, data, false);
  return evaluate_with(model, source, data, k, batch_size, model.expensive.config().resolution);
}

TrainResult train_backbone(const TrainConfig& config, const Dataset& train, const Dataset* val, std::ostream* log) {
  config.validate();
  if (config.stage != Stage::backbone) throw ConfigError("train_backbone needs stage=backbone");
  require_data(train, "train_backbone");
  const Index classes = std::max<Index>(2, train.num_classes());
  if (val) check_labels(*val, classes);

  auto cfg = BackboneConfig::tiny(config.backbone, config.clip_length, classes);
  cfg.resolution = config.resolution;
  cfg.channel_scale = config.channel_scale;
  auto net = Backbone<Real>::build(cfg, config.seed);
  const auto params = vars_of(net.parameters(true));
  Sgd sgd(config.momentum, config.weight_decay);
  std::mt19937_64 rng(config.seed ^ kDataStream);

  TrainResult result;
  auto record = [&](EpochMetrics m) {
    log_epoch(log, m);
    result.metrics.push_back(std::move(m));
  };
  const auto initial = evaluate_backbone(net, train, 1, 1, config.batch_size);
  record({0, "train", initial.loss, initial.top1});
  if (val) {
    const auto v = evaluate_backbone(net, *val, config.clips, 1, config.batch_size);
    record({0, "val", v.loss, v.top1});
  }

  const auto bs = static_cast<std::size_t>(config.batch_size);
  const Index steps_per_epoch = static_cast<Index>((train.size() + bs - 1) / bs);
  const Index total = steps_per_epoch * config.epochs;
  Index step = 0;
  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = batch_order(train.size(), rng);
    double loss_sum = 0.0;
    Index correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      std::vector<const VideoSample*> videos;
      std::vector<Index> starts;
      std::vector<CropPlan> plans;
      std::vector<int> labels;
      for (std::size_t i = begin; i < std::min(order.size(), begin + bs); ++i) {
        const auto& s = train.samples[order[i]];
        videos.push_back(&s);
        starts.push_back(sample_clips_train(s.frames, config.clip_length, 1, rng).starts[0]);
        plans.push_back(random_plan(s, config.resolution, config.jitter_max, rng));
        labels.push_back(s.label);
      }
      Graph<Real> g;
      const auto logits =
          net.classify(g, net.extract_features(g, Var<Real>(assemble(videos, starts, config.clip_length, plans)),
                                               BnMode::train));
      const auto loss = softmax_cross_entropy(g, logits, labels);
      const double value = loss.value()[0];
      check_finite(value, epoch, step);
      for (auto p : params) p.zero_grad();
      g.backward(loss);
      sgd.step(params, cosine_lr(step, total, config.base_lr));
      ++step;
      loss_sum += value * static_cast<double>(labels.size());
      correct += static_cast<Index>(std::lround(topk_accuracy(logits.value(), labels, 1) * labels.size()));
    }
    record({epoch, "train", loss_sum / static_cast<double>(train.size()),
            static_cast<double>(correct) / static_cast<double>(train.size())});
    if (val) {
      const auto v = evaluate_backbone(net, *val, config.clips, 1, config.batch_size);
      record({epoch, "val", v.loss, v.top1});
    }
  }

  result.checkpoint = backbone_to_checkpoint(net);
  result.checkpoint.metadata.epoch = config.epochs;
  result.checkpoint.metadata.rng_state = rng_state_string(rng);
  result.checkpoint.metadata.config_hash = config_hash(config.canonical());
  return result;
}

TrainResult train_aggregator(const TrainConfig& config, const Checkpoint& expensive, const Checkpoint& cheap,
                             const Dataset& train, const Dataset* val, std::ostream* log) {
  config.validate();
  if (config.stage != Stage::aggregator) throw ConfigError("train_aggregator needs stage=aggregator");
  require_data(train, "train_aggregator");

  auto e_net = backbone_from_checkpoint(expensive);
  auto c_net = backbone_from_checkpoint(cheap);
  const auto e_shape = feature_shape(e_net.config());
  const auto c_shape = feature_shape(c_net.config());
  if (e_shape != c_shape) {
    throw ShapeError("expensive backbone features " + shape_string(e_shape) + " differ from cheap backbone features " +
                     shape_string(c_shape));
  }
  if (e_net.config().clip_length != config.clip_length || c_net.config().clip_length != config.clip_length) {
    throw ConfigError("backbones were trained on " + std::to_string(e_net.config().clip_length) + "/" +
                      std::to_string(c_net.config().clip_length) + "-frame clips, config asks for " +
                      std::to_string(config.clip_length));
  }
  if (e_net.config().resolution != config.resolution || c_net.config().resolution != config.resolution) {
    throw ConfigError("backbone resolution differs from the configured resolution");
  }
  const Index classes = std::max<Index>(2, train.num_classes());
  check_labels(train, classes);
  if (val) check_labels(*val, classes);

  FasterModel model{std::move(e_net), std::move(c_net),
                    Aggregator<Real>::create(config.method, e_shape[3], classes, config.aggregator, config.seed),
                    make_schedule(config.clip_length, config.clips, config.pattern)};
  freeze(model.expensive);
  freeze(model.cheap);
  const auto params = vars_of(model.aggregator.parameters());
  Sgd sgd(config.momentum, config.weight_decay);
  std::mt19937_64 rng(config.seed ^ kDataStream);
  FeatureSource source(model, train, config.cache_features);

  TrainResult result;
  auto record = [&](EpochMetrics m) {
    log_epoch(log, m);
    result.metrics.push_back(std::move(m));
  };
  const auto initial = evaluate_with(model, source, train, 1, config.batch_size, config.resolution);
  record({0, "train", initial.loss, initial.top1});
  if (val) {
    const auto v = evaluate_topk(model, *val, 1, config.batch_size);
    record({0, "val", v.loss, v.top1});
  }

  const auto bs = static_cast<std::size_t>(config.batch_size);
  const Index steps_per_epoch = static_cast<Index>((train.size() + bs - 1) / bs);
  const Index total = steps_per_epoch * config.epochs;
  const Index n = config.clips;
  Index step = 0;
  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = batch_order(train.size(), rng);
    double loss_sum = 0.0;
    Index correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      std::vector<std::size_t> samples;
      std::vector<ClipSet> windows;
      std::vector<std::vector<CropPlan>> plans;
      std::vector<int> labels;
      for (std::size_t i = begin; i < std::min(order.size(), begin + bs); ++i) {
        const auto& s = train.samples[order[i]];
        samples.push_back(order[i]);
        windows.push_back(sample_clips_train(s.frames, config.clip_length, n, rng));
        std::vector<CropPlan> per_clip;
        for (Index c = 0; c < n; ++c) {
          per_clip.push_back(source.caching() ? center_plan(s, config.resolution)
                                              : random_plan(s, config.resolution, config.jitter_max, rng));
        }
        plans.push_back(std::move(per_clip));
        labels.push_back(s.label);
      }
      std::vector<Var<Real>> features;
      for (Index c = 0; c < n; ++c) {
        std::vector<Index> starts;
        std::vector<CropPlan> clip_plans;
        for (std::size_t v = 0; v < samples.size(); ++v) {
          starts.push_back(windows[v].starts[static_cast<std::size_t>(c)]);
          clip_plans.push_back(plans[v][static_cast<std::size_t>(c)]);
        }
        features.emplace_back(source.get(model.schedule.kinds[static_cast<std::size_t>(c)], samples, starts, clip_plans));
      }
      Graph<Real> g;
      const auto logits = aggregate_sequence<Real>(g, features, model.aggregator, BnMode::train);
      const auto loss = softmax_cross_entropy(g, logits, labels);
      const double value = loss.value()[0];
      check_finite(value, epoch, step);
      for (auto p : params) p.zero_grad();
      g.backward(loss);
      sgd.step(params, cosine_lr(step, total, config.base_lr));
      ++step;
      loss_sum += value * static_cast<double>(labels.size());
      correct += static_cast<Index>(std::lround(topk_accuracy(logits.value(), labels, 1) * labels.size()));
    }
    record({epoch, "train", loss_sum / static_cast<double>(train.size()),
            static_cast<double>(correct) / static_cast<double>(train.size())});
    if (val) {
      const auto v = evaluate_topk(model, *val, 1, config.batch_size);
      record({epoch, "val", v.loss, v.top1});
    }
  }

  result.checkpoint = model.to_checkpoint();
  result.checkpoint.metadata.epoch = config.epochs;
  result.checkpoint.metadata.rng_state = rng_state_string(rng);
  result.checkpoint.metadata.config_hash = config_hash(config.canonical());
  return result;
}

}  // namespace faster
