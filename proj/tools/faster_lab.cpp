#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <optional>
#include <type_traits>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "faster/checkpoint.hpp"
#include "faster/dataset_io.hpp"
#include "faster/errors.hpp"
#include "faster/flops.hpp"
#include "faster/grad_suite.hpp"
#include "faster/trainer.hpp"

namespace fs = std::filesystem;
using namespace faster;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

/// Ordered key=value lines under one [command] section; loadable via --config.
class ConfigDump {
 public:
  explicit ConfigDump(std::string command) : command_(std::move(command)) {}

  template <typename T>
  ConfigDump& set(const std::string& key, const T& value) {
    if constexpr (std::is_same_v<T, bool>) {
      entries_.emplace_back(key, value ? "true" : "false");
    } else if constexpr (std::is_arithmetic_v<T>) {
      char buf[64];
      const auto end = std::to_chars(buf, buf + sizeof(buf), value).ptr;
      entries_.emplace_back(key, std::string(buf, end));
    } else {
      entries_.emplace_back(key, "\"" + std::string(value) + "\"");
    }
    return *this;
  }

  std::string str() const {
    std::string out = "[" + command_ + "]\n";
    for (const auto& [key, value] : entries_) out += key + "=" + value + "\n";
    return out;
  }

  void echo() const { std::cerr << str(); }

  void write(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << str();
  }

 private:
  std::string command_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

BackboneFamily parse_backbone_name(const std::string& name) {
  if (name == "r21d50" || name == "r21d") return BackboneFamily::r21d;
  if (name == "r2d26" || name == "r2d") return BackboneFamily::r2d;
  throw ConfigError("unknown backbone '" + name + "' (r21d50, r2d26)");
}

const char* backbone_display_name(BackboneFamily family) {
  return family == BackboneFamily::r21d ? "r21d50" : "r2d26";
}

Dataset load_dataset(const std::string& path) {
  if (!fs::exists(path)) throw DataError("dataset not found: " + path);
  return read_dataset(fs::path(path));
}

Checkpoint load_checkpoint_at(const std::string& path) {
  if (!fs::exists(fs::path(path) / "manifest.json")) throw DataError("checkpoint not found: " + path);
  return load_checkpoint(fs::path(path));
}

void save_run(const fs::path& dir, const TrainResult& result, const ConfigDump& dump) {
  save_checkpoint(dir, result.checkpoint);
  dump.write(dir / "config.ini");
  std::ofstream metrics(dir / "metrics.csv");
  if (!metrics) throw DataError("cannot write " + (dir / "metrics.csv").string());
  write_metrics_csv(metrics, result.metrics);
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  std::string task = "order";
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::optional<Index> frames;
  std::optional<Index> resolution;
  std::optional<Index> classes;
  std::optional<double> noise;
  std::optional<double> speed_step;
};

void add_gen(CLI::App& app, GenArgs& a) {
  auto* cmd = app.add_subcommand("gen", "Generate a synthetic video dataset");
  cmd->add_option("--task", a.task, "order or speed")->capture_default_str();
  cmd->add_option("-n,--n", a.n, "Number of videos")->required();
  cmd->add_option("--seed", a.seed, "Generator seed")->capture_default_str();
  cmd->add_option("--out", a.out, "Output .fvds file")->required();
  cmd->add_option("--frames", a.frames, "Frames per video (task default when omitted)");
  cmd->add_option("--resolution", a.resolution, "Frame side in pixels");
  cmd->add_option("--classes", a.classes, "Class count (speed task)");
  cmd->add_option("--noise", a.noise, "Background noise stddev");
  cmd->add_option("--speed-step", a.speed_step, "Speed task: pixels per frame added per class");
}

int run_gen(const GenArgs& a) {
  TaskSpec spec = parse_task(a.task) == TaskKind::order ? TaskSpec::order() : TaskSpec::speed();
  if (a.frames) spec.frames = *a.frames;
  if (a.resolution) spec.resolution = *a.resolution;
  if (a.classes) spec.classes = *a.classes;
  if (a.noise) spec.noise = *a.noise;
  if (a.speed_step) spec.speed_step = *a.speed_step;
  spec.validate();
  ConfigDump dump("gen");
  dump.set("task", task_name(spec.kind)).set("n", a.n).set("seed", a.seed).set("out", a.out);
  dump.set("frames", spec.frames).set("resolution", spec.resolution).set("classes", spec.classes);
  dump.set("noise", spec.noise).set("speed-step", spec.speed_step);
  dump.echo();
  const Dataset data = generate(spec, a.n, a.seed);
  write_dataset(fs::path(a.out), data);
  std::cerr << "wrote " << data.size() << " videos to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string stage = "backbone";
  std::string data;
  std::string val;
  std::string out;
  std::string backbone = "r2d26";
  std::string method = "fast-gru";
  std::string expensive;
  std::string cheap;
  std::optional<Index> epochs;
  Index batch_size = 16;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  std::string preset;
  std::optional<Index> frames;
  std::optional<Index> clips;
  std::optional<std::string> pattern;
  Index resolution = 32;
  Index jitter_max = 40;
  double channel_scale = 1.0 / 16.0;
  Index reduction = 4;
  double gate_bias = 0.0;
  bool cache_features = false;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* cmd = app.add_subcommand("train", "Train a backbone (stage one) or an aggregator (stage two)");
  cmd->add_option("--stage", a.stage, "backbone or aggregator")->capture_default_str();
  cmd->add_option("--data", a.data, "Training .fvds file")->required();
  cmd->add_option("--val", a.val, "Optional validation .fvds file");
  cmd->add_option("--out", a.out, "Checkpoint directory")->required();
  cmd->add_option("--backbone", a.backbone, "Stage one: r21d50 or r2d26")->capture_default_str();
  cmd->add_option("--method", a.method, "Stage two: fast-gru, gru, lstm, concat or avg-pool")->capture_default_str();
  cmd->add_option("--expensive", a.expensive, "Stage two: expensive backbone checkpoint");
  cmd->add_option("--cheap", a.cheap, "Stage two: cheap backbone checkpoint");
  cmd->add_option("--epochs", a.epochs, "Epochs (20 for backbones, 10 for aggregators)");
  cmd->add_option("--batch-size", a.batch_size)->capture_default_str();
  cmd->add_option("--lr", a.lr, "Base learning rate of the cosine schedule")->capture_default_str();
  cmd->add_option("--momentum", a.momentum)->capture_default_str();
  cmd->add_option("--weight-decay", a.weight_decay)->capture_default_str();
  cmd->add_option("--seed", a.seed)->capture_default_str();
  cmd->add_option("--preset", a.preset, "faster16 or faster32 (sets frames, clips and pattern)");
  cmd->add_option("--frames", a.frames, "Clip length L (default 8)");
  cmd->add_option("--clips", a.clips, "Clips per video N (default 8)");
  cmd->add_option("--pattern", a.pattern, "Input pattern 1:x, all-e or all-c (default 1:1)");
  cmd->add_option("--resolution", a.resolution)->capture_default_str();
  cmd->add_option("--jitter-max", a.jitter_max, "Largest rescaled short side at train time")->capture_default_str();
  cmd->add_option("--channel-scale", a.channel_scale)->capture_default_str();
  cmd->add_option("--reduction", a.reduction, "FAST-GRU gate bottleneck factor")->capture_default_str();
  cmd->add_option("--gate-bias", a.gate_bias)->capture_default_str();
  cmd->add_flag("--cache-features,!--no-cache-features", a.cache_features, "Stage two: cache backbone features");
}

TrainConfig resolve_train(const TrainArgs& a) {
  TrainConfig c;
  c.stage = parse_stage(a.stage);
  c.backbone = parse_backbone_name(a.backbone);
  c.method = parse_method(a.method);
  c.aggregator.reduction = a.reduction;
  c.aggregator.gate_bias = a.gate_bias;
  c.epochs = a.epochs.value_or(c.stage == Stage::backbone ? 20 : 10);
  c.batch_size = a.batch_size;
  c.base_lr = a.lr;
  c.momentum = a.momentum;
  c.weight_decay = a.weight_decay;
  c.seed = a.seed;
  if (!a.preset.empty()) {
    const auto preset = preset_schedule(a.preset);
    c.clip_length = preset.clip_length;
    c.clips = preset.clips();
    c.pattern = preset.pattern;
  }
  if (a.frames) c.clip_length = *a.frames;
  if (a.clips) c.clips = *a.clips;
  if (a.pattern) c.pattern = Pattern::parse(*a.pattern);
  c.resolution = a.resolution;
  c.jitter_max = a.jitter_max;
  c.channel_scale = a.channel_scale;
  c.cache_features = a.cache_features;
  c.validate();
  if (c.stage == Stage::aggregator) make_pattern(c.clips, c.pattern);
  return c;
}

ConfigDump train_dump(const TrainArgs& a, const TrainConfig& c) {
  ConfigDump d("train");
  d.set("stage", stage_name(c.stage)).set("data", a.data).set("val", a.val).set("out", a.out);
  d.set("backbone", backbone_display_name(c.backbone)).set("method", method_name(c.method));
  d.set("expensive", a.expensive).set("cheap", a.cheap);
  d.set("epochs", c.epochs).set("batch-size", c.batch_size).set("lr", c.base_lr).set("momentum", c.momentum);
  d.set("weight-decay", c.weight_decay).set("seed", c.seed);
  d.set("frames", c.clip_length).set("clips", c.clips).set("pattern", c.pattern.label());
  d.set("resolution", c.resolution).set("jitter-max", c.jitter_max).set("channel-scale", c.channel_scale);
  d.set("reduction", c.aggregator.reduction).set("gate-bias", c.aggregator.gate_bias);
  d.set("cache-features", c.cache_features);
  return d;
}

int run_train(const TrainArgs& a) {
  const TrainConfig config = resolve_train(a);
  const ConfigDump dump = train_dump(a, config);
  dump.echo();
  if (config.stage == Stage::aggregator && (a.expensive.empty() || a.cheap.empty())) {
    throw ConfigError("stage aggregator needs --expensive and --cheap checkpoints");
  }
  const Dataset train = load_dataset(a.data);
  std::optional<Dataset> val;
  if (!a.val.empty()) val = load_dataset(a.val);
  const Dataset* val_ptr = val ? &*val : nullptr;
  TrainResult result;
  if (config.stage == Stage::backbone) {
    result = train_backbone(config, train, val_ptr, &std::cerr);
  } else {
    result = train_aggregator(config, load_checkpoint_at(a.expensive), load_checkpoint_at(a.cheap), train, val_ptr,
                              &std::cerr);
  }
  save_run(a.out, result, dump);
  std::cerr << "saved checkpoint to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  Index k = 1;
  Index clips = 8;
  Index batch_size = 16;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* cmd = app.add_subcommand("eval", "Video-level top-k accuracy of a checkpoint on a dataset");
  cmd->add_option("--checkpoint", a.checkpoint, "Backbone or aggregator checkpoint directory")->required();
  cmd->add_option("--data", a.data, "Evaluation .fvds file")->required();
  cmd->add_option("-k,--k", a.k, "Top-k")->capture_default_str();
  cmd->add_option("--clips", a.clips, "Backbone checkpoints: clips averaged per video")->capture_default_str();
  cmd->add_option("--batch-size", a.batch_size)->capture_default_str();
}

int run_eval(const EvalArgs& a) {
  if (a.k < 1) throw ConfigError("k must be at least 1");
  if (a.clips < 1 || a.batch_size < 1) throw ConfigError("clips and batch size must be positive");
  ConfigDump dump("eval");
  dump.set("checkpoint", a.checkpoint).set("data", a.data).set("k", a.k).set("clips", a.clips);
  dump.set("batch-size", a.batch_size);
  dump.echo();
  const Checkpoint ckpt = load_checkpoint_at(a.checkpoint);
  const Dataset data = load_dataset(a.data);
  EvalResult result;
  const auto stage = ckpt.metadata.extra.find("stage");
  if (stage != ckpt.metadata.extra.end() && stage->second == "aggregator") {
    FasterModel model = FasterModel::from_checkpoint(ckpt);
    result = evaluate_topk(model, data, a.k, a.batch_size);
  } else {
    Backbone<Real> net = backbone_from_checkpoint(ckpt);
    result = evaluate_backbone(net, data, a.clips, a.k, a.batch_size);
  }
  std::cout << "videos,k,loss,top1,topk\n";
  std::cout << std::fixed << std::setprecision(6) << data.size() << "," << a.k << "," << result.loss << "," << result.top1 << ","
            << result.topk << "\n";
  return 0;
}

// ---------------------------------------------------------------- flops

struct FlopsArgs {
  std::string backbone;
  std::string preset;
  std::optional<Index> frames;
  Index resolution = 224;
  std::optional<std::string> pattern;
  std::optional<Index> clips;
  std::string method = "fast-gru";
  Index reduction = 4;
};

void add_flops(CLI::App& app, FlopsArgs& a) {
  auto* cmd = app.add_subcommand("flops", "Analytic cost report (1 MAC = 1 FLOP) as CSV");
  cmd->add_option("--backbone", a.backbone, "Per-layer cost of one clip of r21d50 or r2d26");
  cmd->add_option("--preset", a.preset, "faster16 or faster32");
  cmd->add_option("--frames", a.frames, "Clip length L (default 8)");
  cmd->add_option("--resolution", a.resolution, "Input side")->capture_default_str();
  cmd->add_option("--pattern", a.pattern, "Input pattern (default 1:1)");
  cmd->add_option("--clips", a.clips, "Clips per video N (default 8)");
  cmd->add_option("--method", a.method, "Aggregation method")->capture_default_str();
  cmd->add_option("--reduction", a.reduction, "FAST-GRU gate bottleneck factor")->capture_default_str();
}

int run_flops(const FlopsArgs& a) {
  Index frames = 8;
  Index clips = 8;
  Pattern pattern = Pattern::ratio(1);
  if (!a.preset.empty()) {
    const auto preset = preset_schedule(a.preset);
    frames = preset.clip_length;
    clips = preset.clips();
    pattern = preset.pattern;
  }
  if (a.frames) frames = *a.frames;
  if (a.clips) clips = *a.clips;
  if (a.pattern) pattern = Pattern::parse(*a.pattern);
  if (a.resolution < 1) throw ConfigError("resolution must be positive");
  const AggregatorMethod method = parse_method(a.method);

  ConfigDump dump("flops");
  if (!a.backbone.empty()) {
    if (a.pattern || a.clips || !a.preset.empty()) {
      throw ConfigError("--backbone reports one clip; drop --pattern, --clips and --preset");
    }
    const BackboneFamily family = parse_backbone_name(a.backbone);
    dump.set("backbone", backbone_display_name(family)).set("frames", frames).set("resolution", a.resolution);
    dump.echo();
    BackboneConfig config = BackboneConfig::full_spec(family, frames);
    config.resolution = a.resolution;
    backbone_cost(config).write_csv(std::cout);
    return 0;
  }
  dump.set("frames", frames).set("clips", clips).set("pattern", pattern.label()).set("method", method_name(method));
  dump.set("resolution", a.resolution).set("reduction", a.reduction);
  dump.echo();
  const ClipSchedule schedule = make_schedule(frames, clips, pattern);
  schedule_flops(schedule, method, analytic_clip_costs(frames, a.resolution), a.reduction).write_csv(std::cout);
  return 0;
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
  std::string task = "order";
  std::vector<std::string> patterns{"1:0", "1:1", "1:3", "1:7"};
  std::vector<Index> frames{8};
  Index budget = 64;
  std::string method = "fast-gru";
  std::string dir;
  std::string data;
  std::string test;
  bool train_inline = false;
  Index backbone_epochs = 20;
  Index epochs = 10;
  double lr = 0.05;
  std::uint64_t seed = 0;
};

void add_sweep(CLI::App& app, SweepArgs& a) {
  auto* cmd = app.add_subcommand("sweep", "Accuracy vs GFLOPs over patterns and clip lengths as CSV");
  cmd->add_option("--task", a.task, "Task the checkpoints were trained on")->capture_default_str();
  cmd->add_option("--patterns", a.patterns, "Comma-separated input patterns")->delimiter(',')->capture_default_str();
  cmd->add_option("--frames", a.frames, "Comma-separated clip lengths L")->delimiter(',')->capture_default_str();
  cmd->add_option("--budget", a.budget, "Frames per video N*L")->capture_default_str();
  cmd->add_option("--method", a.method, "Aggregation method")->capture_default_str();
  cmd->add_option("--dir", a.dir, "Checkpoint directory")->required();
  cmd->add_option("--data", a.data, "Training .fvds file (needed with --train-inline)");
  cmd->add_option("--test", a.test, "Evaluation .fvds file")->required();
  cmd->add_flag("--train-inline", a.train_inline, "Train and save missing checkpoints");
  cmd->add_option("--backbone-epochs", a.backbone_epochs, "Inline stage-one epochs")->capture_default_str();
  cmd->add_option("--epochs", a.epochs, "Inline stage-two epochs")->capture_default_str();
  cmd->add_option("--lr", a.lr, "Inline base learning rate")->capture_default_str();
  cmd->add_option("--seed", a.seed, "Inline training seed")->capture_default_str();
}

struct SweepRow {
  std::string pattern;
  Index frames = 0;
  Index clips = 0;
  double gflops = 0.0;
  double top1 = 0.0;
};

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& item : items) out += (out.empty() ? "" : ",") + item;
  return out;
}

int run_sweep(const SweepArgs& a) {
  if (a.budget < 1) throw ConfigError("budget must be positive");
  parse_task(a.task);
  const AggregatorMethod method = parse_method(a.method);
  std::vector<Pattern> patterns;
  for (const auto& p : a.patterns) patterns.push_back(Pattern::parse(p));
  std::vector<std::string> frame_list;
  for (Index l : a.frames) {
    if (l < 1) throw ConfigError("clip lengths must be positive");
    frame_list.push_back(std::to_string(l));
  }
  ConfigDump dump("sweep");
  std::vector<std::string> labels;
  for (const auto& p : patterns) labels.push_back(p.label());
  dump.set("task", a.task).set("patterns", join(labels)).set("frames", join(frame_list)).set("budget", a.budget);
  dump.set("method", method_name(method)).set("dir", a.dir).set("data", a.data).set("test", a.test);
  dump.set("train-inline", a.train_inline).set("backbone-epochs", a.backbone_epochs).set("epochs", a.epochs);
  dump.set("lr", a.lr).set("seed", a.seed);
  dump.echo();
  if (a.train_inline && a.data.empty()) throw ConfigError("--train-inline needs --data");

  const Dataset test = load_dataset(a.test);
  std::optional<Dataset> train;
  auto training_data = [&]() -> const Dataset& {
    if (!train) train = load_dataset(a.data);
    return *train;
  };

  auto backbone_ckpt = [&](BackboneFamily family, Index frames) {
    const fs::path path = fs::path(a.dir) / (std::string(family_name(family)) + "-L" + std::to_string(frames));
    if (!fs::exists(path / "manifest.json")) {
      if (!a.train_inline) throw DataError("missing checkpoint " + path.string());
      TrainConfig c;
      c.backbone = family;
      c.clip_length = frames;
      c.epochs = a.backbone_epochs;
      c.base_lr = a.lr;
      c.seed = a.seed;
      std::cerr << "training " << path.string() << "\n";
      const auto result = train_backbone(c, training_data(), nullptr, &std::cerr);
      fs::create_directories(path);
      save_checkpoint(path, result.checkpoint);
    }
    return load_checkpoint(path);
  };

  std::vector<SweepRow> rows;
  for (Index frames : a.frames) {
    std::optional<Checkpoint> expensive;
    std::optional<Checkpoint> cheap;
    for (const auto& pattern : patterns) {
      if (a.budget % frames != 0) {
        std::cerr << "infeasible: budget " << a.budget << " is not a multiple of L=" << frames << "\n";
        continue;
      }
      const Index clips = a.budget / frames;
      ClipSchedule schedule;
      try {
        schedule = make_schedule(frames, clips, pattern);
      } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        continue;
      }
      std::string tag = pattern.label();
      std::replace(tag.begin(), tag.end(), ':', '-');
      const fs::path path = fs::path(a.dir) / (std::string(method_name(method)) + "-L" + std::to_string(frames) +
                                               "-N" + std::to_string(clips) + "-" + tag);
      if (!fs::exists(path / "manifest.json")) {
        if (!a.train_inline) throw DataError("missing checkpoint " + path.string());
        if (!expensive) expensive = backbone_ckpt(BackboneFamily::r21d, frames);
        if (!cheap) cheap = backbone_ckpt(BackboneFamily::r2d, frames);
        TrainConfig c;
        c.stage = Stage::aggregator;
        c.method = method;
        c.clip_length = frames;
        c.clips = clips;
        c.pattern = pattern;
        c.epochs = a.epochs;
        c.base_lr = a.lr;
        c.seed = a.seed;
        c.cache_features = true;
        std::cerr << "training " << path.string() << "\n";
        const auto result = train_aggregator(c, *expensive, *cheap, training_data(), nullptr, &std::cerr);
        fs::create_directories(path);
        save_checkpoint(path, result.checkpoint);
      }
      FasterModel model = FasterModel::from_checkpoint(load_checkpoint(path));
      const double gflops = schedule_flops(schedule, method, analytic_clip_costs(frames)).total_gflops();
      rows.push_back({pattern.label(), frames, clips, gflops, evaluate_topk(model, test).top1});
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& x, const SweepRow& y) { return x.gflops < y.gflops; });
  std::cout << "pattern,frames,clips,gflops,top1\n" << std::fixed;
  for (const auto& r : rows) {
    std::cout << r.pattern << "," << r.frames << "," << r.clips << "," << std::setprecision(3) << r.gflops << ","
              << std::setprecision(6) << r.top1 << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradArgs {
  bool all = false;
  std::string op;
  std::uint64_t seeds = 5;
};

void add_gradcheck(CLI::App& app, GradArgs& a) {
  auto* cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks in 64-bit");
  cmd->add_flag("--all", a.all, "Run every check");
  cmd->add_option("--op", a.op, "Run one check by name");
  cmd->add_option("--seeds", a.seeds, "Seeds per check")->capture_default_str();
}

int run_gradcheck(const GradArgs& a) {
  if (a.all == !a.op.empty()) throw ConfigError("gradcheck needs exactly one of --all and --op");
  if (a.seeds < 1) throw ConfigError("seeds must be positive");
  ConfigDump dump("gradcheck");
  dump.set("all", a.all).set("op", a.op).set("seeds", a.seeds);
  dump.echo();
  const auto entries = run_gradient_suite(a.seeds, a.op);
  bool ok = true;
  std::cout << "check,seed,tolerance,max_rel_error,passed\n";
  for (const auto& e : entries) {
    ok = ok && e.report.passed;
    std::cout << e.name << "," << e.seed << "," << e.tolerance << "," << e.report.max_rel_error << ","
              << (e.report.passed ? 1 : 0) << "\n";
  }
  if (!ok) {
    std::cerr << "gradient check failed\n";
    return kExitNumeric;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"faster_lab: clip aggregation for video recognition at desk scale"};
  app.set_config("--config", "", "key=value file; [command] sections; command-line flags win");
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.allow_config_extras(CLI::config_extras_mode::error);

  GenArgs gen;
  TrainArgs train;
  EvalArgs eval;
  FlopsArgs flops;
  SweepArgs sweep;
  GradArgs grad;
  add_gen(app, gen);
  add_train(app, train);
  add_eval(app, eval);
  add_flops(app, flops);
  add_sweep(app, sweep);
  add_gradcheck(app, grad);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "gen") return run_gen(gen);
    if (command == "train") return run_train(train);
    if (command == "eval") return run_eval(eval);
    if (command == "flops") return run_flops(flops);
    if (command == "sweep") return run_sweep(sweep);
    return run_gradcheck(grad);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
