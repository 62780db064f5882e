#include "faster/grad_suite.hpp"

#include <algorithm>
#include <random>

#include "faster/aggregators.hpp"
#include "faster/errors.hpp"
#include "faster/ops.hpp"

namespace faster {
namespace {

using Inputs = std::span<const Var<double>>;

struct SuiteCase {
  std::string name;
  std::vector<Shape> shapes;
  double tolerance;
  std::function<Var<double>(Graph<double>&, Inputs, std::uint64_t)> fn;
};

Tensor<double> random_values(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor<double>::uniform(shape, -2.0, 2.0, rng);
}

// sum(y * probe): the gradient reaching y is the fixed random probe.
Var<double> probe(Graph<double>& g, const Var<double>& y, std::uint64_t seed) {
  return sum(g, mul(g, y, Var<double>(random_values(y.shape(), 7919 + seed))));
}

std::vector<SuiteCase> suite_cases() {
  std::vector<SuiteCase> cases = {
      {"conv3d", {{2, 3, 4, 4, 2}, {2, 3, 3, 2, 3}}, 1e-5,
       [](Graph<double>& g, Inputs in, std::uint64_t s) {
         return probe(g, conv3d(g, in[0], in[1], {{1, 2, 1}, {1, 1, 1}}), s);
       }},
      {"pointwise_conv", {{1, 2, 2, 2, 3}, {3, 4}, {4}}, 1e-5,
       [](Graph<double>& g, Inputs in, std::uint64_t s) { return probe(g, pointwise_conv(g, in[0], in[1], in[2]), s); }},
      {"dense", {{3, 4}, {4, 2}, {2}}, 1e-5,
       [](Graph<double>& g, Inputs in, std::uint64_t s) { return probe(g, dense(g, in[0], in[1], in[2]), s); }},
      {"sigmoid", {{3, 5}}, 1e-5,
       [](Graph<double>& g, Inputs in, std::uint64_t s) { return probe(g, sigmoid(g, in[0]), s); }},
      {"tanh", {{3, 5}}, 1e-5,
       [](Graph<double>& g, Inputs in, std::uint64_t s) { return probe(g, faster::tanh(g, in[0]), s); }},
      {"relu", {{3, 5}}, 1e-5, [](Graph<double>& g, Inputs in, std::uint64_t s) { return probe(g, relu(g, in[0]), s); }},
      {"add", {{4}, {4}}, 1e-5,
       [](Graph<double>& g, Inputs in, std::uint64_t s) { return probe(g, add(g, in[0], in[1]), s); }},
      {"mul", {{4}, {4}}, 1e-5,
       [](Graph<double>& g, Inputs in, std::uint64_t s) { return probe(g, mul(g, in[0], in[1]), s); }},
      {"convex_mix", {{6}, {6}, {6}}, 1e-5,
       [](Graph<double>& g, Inputs in, std::uint64_t s) {
         return probe(g, convex_mix(g, in[0], in[1], sigmoid(g, in[2])), s);
       }},
      {"global_avg_pool", {{2, 2, 3, 2, 3}}, 1e-5,
       [](Graph<double>& g, Inputs in, std::uint64_t s) { return probe(g, global_avg_pool(g, in[0]), s); }},
      {"max_pool3d", {{1, 2, 5, 5, 2}}, 1e-5,
       [](Graph<double>& g, Inputs in, std::uint64_t s) {
         return probe(g, max_pool3d(g, in[0], {{1, 3, 3}, {1, 2, 2}, {0, 1, 1}}), s);
       }},
      {"batch_norm", {{5, 3}, {3}, {3}}, 1e-5,
       [](Graph<double>& g, Inputs in, std::uint64_t s) {
         BatchNormStats<double> stats(3);
         return probe(g, batch_norm(g, in[0], in[1], in[2], stats, BnMode::train), s);
       }},
      {"softmax_cross_entropy", {{4, 6}}, 1e-5,
       [](Graph<double>& g, Inputs in, std::uint64_t) {
         static const std::vector<int> labels{0, 5, 2, 2};
         return softmax_cross_entropy(g, in[0], labels);
       }},
  };
  for (auto method : {AggregatorMethod::fast_gru, AggregatorMethod::gru, AggregatorMethod::lstm,
                      AggregatorMethod::concat, AggregatorMethod::avg_pool}) {
    cases.push_back({std::string("sequence:") + method_name(method),
                     {{1, 1, 2, 1, 4}, {1, 1, 2, 1, 4}, {1, 1, 2, 1, 4}},
                     1e-3,
                     [method](Graph<double>& g, Inputs in, std::uint64_t s) {
                       auto agg = Aggregator<double>::create(method, 4, 3, {.reduction = 2}, s);
                       const int label = 1;
                       return softmax_cross_entropy(g, aggregate_sequence<double>(g, in, agg, BnMode::eval),
                                                    std::span<const int>(&label, 1));
                     }});
  }
  return cases;
}

}  // namespace

std::vector<std::string> gradient_suite_names() {
  std::vector<std::string> names;
  for (const auto& c : suite_cases()) names.push_back(c.name);
  return names;
}

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seeds, const std::string& only) {
  const auto cases = suite_cases();
  if (!only.empty() &&
      std::none_of(cases.begin(), cases.end(), [&](const SuiteCase& c) { return c.name == only; })) {
    throw ConfigError("unknown gradient check '" + only + "'");
  }
  std::vector<GradSuiteEntry> out;
  for (const auto& c : cases) {
    if (!only.empty() && c.name != only) continue;
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
      std::vector<Tensor<double>> inputs;
      for (std::size_t i = 0; i < c.shapes.size(); ++i) inputs.push_back(random_values(c.shapes[i], seed * 31 + i));
      const auto report = grad_check(
          [&](Graph<double>& g, Inputs in) { return c.fn(g, in, seed); }, inputs, 1e-5, c.tolerance);
      out.push_back({c.name, seed, c.tolerance, report});
    }
  }
  return out;
}

}  // namespace faster
