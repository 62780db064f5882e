#include "faster/aggregators.hpp"

#include <cmath>

namespace faster {

const char* method_name(AggregatorMethod method) {
  switch (method) {
    case AggregatorMethod::fast_gru: return "fast-gru";
    case AggregatorMethod::gru: return "gru";
    case AggregatorMethod::lstm: return "lstm";
    case AggregatorMethod::concat: return "concat";
    case AggregatorMethod::avg_pool: return "avg-pool";
  }
  return "?";
}

AggregatorMethod parse_method(const std::string& name) {
  for (auto m : {AggregatorMethod::fast_gru, AggregatorMethod::gru, AggregatorMethod::lstm, AggregatorMethod::concat,
                 AggregatorMethod::avg_pool}) {
    if (name == method_name(m)) return m;
  }
  throw ConfigError("unknown aggregation method '" + name + "' (fast-gru, gru, lstm, concat, avg-pool)");
}

namespace {

template <typename Scalar>
Var<Scalar> init_weight(Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const Scalar bound = std::sqrt(Scalar(1) / static_cast<Scalar>(fan_in));
  return Var<Scalar>(Tensor<Scalar>::uniform({fan_in, fan_out}, -bound, bound, rng), true);
}

template <typename Scalar>
Var<Scalar> init_bias(Index n, double value = 0.0) {
  return Var<Scalar>(Tensor<Scalar>({n}, static_cast<Scalar>(value)), true);
}

// a * x + b * o + bias, as 1x1x1 convolutions for spatial inputs or dense maps for vectors.
template <typename Scalar>
Var<Scalar> project_pair(Graph<Scalar>& g, const Var<Scalar>& x, const Var<Scalar>& a, const Var<Scalar>& o,
                         const Var<Scalar>& b, const Var<Scalar>& bias_term) {
  if (x.value().rank() == 5) return add(g, pointwise_conv(g, x, a, bias_term), pointwise_conv(g, o, b));
  return add(g, dense(g, x, a, bias_term), dense(g, o, b));
}

void require_vector(const Shape& state, const Shape& x, Index channels, const char* op) {
  if (state.size() != 2 || x.size() != 2) {
    throw ShapeError(std::string(op) + ": expects [n,c] vectors, got " + shape_string(state) + " and " +
                     shape_string(x));
  }
  require_same_shape(state, x, op);
  if (x[1] != channels) {
    throw ShapeError(std::string(op) + ": length " + std::to_string(x[1]) + " does not match cell width " +
                     std::to_string(channels));
  }
}

}  // namespace

template <typename Scalar>
FastGruCell<Scalar> FastGruCell<Scalar>::init(Index channels, const AggregatorOptions& options, std::mt19937_64& rng) {
  if (options.reduction < 1 || channels % options.reduction != 0) {
    throw ConfigError("FAST-GRU: channels " + std::to_string(channels) + " not divisible by reduction " +
                      std::to_string(options.reduction));
  }
  const Index squeezed = channels / options.reduction;
  FastGruCell c;
  c.channels = channels;
  c.reduction = options.reduction;
  c.u_rx = init_weight<Scalar>(channels, squeezed, rng);
  c.u_ro = init_weight<Scalar>(channels, squeezed, rng);
  c.b_r_squeeze = init_bias<Scalar>(squeezed);
  c.u_zx = init_weight<Scalar>(channels, squeezed, rng);
  c.u_zo = init_weight<Scalar>(channels, squeezed, rng);
  c.b_z_squeeze = init_bias<Scalar>(squeezed);
  c.w_r = init_weight<Scalar>(squeezed, channels, rng);
  c.b_r = init_bias<Scalar>(channels, options.gate_bias);
  c.w_z = init_weight<Scalar>(squeezed, channels, rng);
  c.b_z = init_bias<Scalar>(channels, options.gate_bias);
  c.v_x = init_weight<Scalar>(channels, channels, rng);
  c.v_o = init_weight<Scalar>(channels, channels, rng);
  c.b_o = init_bias<Scalar>(channels);
  return c;
}

template <typename Scalar>
std::vector<NamedVar<Scalar>> FastGruCell<Scalar>::parameters() const {
  return {{"u_rx", u_rx}, {"u_ro", u_ro}, {"b_r_squeeze", b_r_squeeze}, {"u_zx", u_zx}, {"u_zo", u_zo},
          {"b_z_squeeze", b_z_squeeze}, {"w_r", w_r}, {"b_r", b_r}, {"w_z", w_z}, {"b_z", b_z},
          {"v_x", v_x}, {"v_o", v_o}, {"b_o", b_o}};
}

template <typename Scalar>
Index FastGruCell<Scalar>::gate_weight_count() const {
  Index n = 0;
  for (const auto* v : {&u_rx, &u_ro, &u_zx, &u_zo, &w_r, &w_z}) n += v->value().size();
  return n;
}

template <typename Scalar>
GruCell<Scalar> GruCell<Scalar>::init(Index channels, const AggregatorOptions& options, std::mt19937_64& rng) {
  GruCell c;
  c.channels = channels;
  c.g_rx = init_weight<Scalar>(channels, channels, rng);
  c.g_ro = init_weight<Scalar>(channels, channels, rng);
  c.b_r = init_bias<Scalar>(channels, options.gate_bias);
  c.g_zx = init_weight<Scalar>(channels, channels, rng);
  c.g_zo = init_weight<Scalar>(channels, channels, rng);
  c.b_z = init_bias<Scalar>(channels, options.gate_bias);
  c.v_x = init_weight<Scalar>(channels, channels, rng);
  c.v_o = init_weight<Scalar>(channels, channels, rng);
  c.b_o = init_bias<Scalar>(channels);
  return c;
}

template <typename Scalar>
std::vector<NamedVar<Scalar>> GruCell<Scalar>::parameters() const {
  return {{"g_rx", g_rx}, {"g_ro", g_ro}, {"b_r", b_r}, {"g_zx", g_zx}, {"g_zo", g_zo},
          {"b_z", b_z},   {"v_x", v_x},   {"v_o", v_o}, {"b_o", b_o}};
}

template <typename Scalar>
Index GruCell<Scalar>::gate_weight_count() const {
  return g_rx.value().size() + g_ro.value().size() + g_zx.value().size() + g_zo.value().size();
}

template <typename Scalar>
LstmCell<Scalar> LstmCell<Scalar>::init(Index channels, const AggregatorOptions& options, std::mt19937_64& rng) {
  LstmCell c;
  c.channels = channels;
  c.w_ix = init_weight<Scalar>(channels, channels, rng);
  c.w_io = init_weight<Scalar>(channels, channels, rng);
  c.b_i = init_bias<Scalar>(channels, options.gate_bias);
  c.w_fx = init_weight<Scalar>(channels, channels, rng);
  c.w_fo = init_weight<Scalar>(channels, channels, rng);
  c.b_f = init_bias<Scalar>(channels, options.gate_bias);
  c.w_gx = init_weight<Scalar>(channels, channels, rng);
  c.w_go = init_weight<Scalar>(channels, channels, rng);
  c.b_g = init_bias<Scalar>(channels, options.gate_bias);
  c.w_cx = init_weight<Scalar>(channels, channels, rng);
  c.w_co = init_weight<Scalar>(channels, channels, rng);
  c.b_c = init_bias<Scalar>(channels);
  return c;
}

template <typename Scalar>
std::vector<NamedVar<Scalar>> LstmCell<Scalar>::parameters() const {
  return {{"w_ix", w_ix}, {"w_io", w_io}, {"b_i", b_i}, {"w_fx", w_fx}, {"w_fo", w_fo}, {"b_f", b_f},
          {"w_gx", w_gx}, {"w_go", w_go}, {"b_g", b_g}, {"w_cx", w_cx}, {"w_co", w_co}, {"b_c", b_c}};
}

template <typename Scalar>
ConcatCell<Scalar> ConcatCell<Scalar>::init(Index channels, std::mt19937_64& rng) {
  ConcatCell c;
  c.channels = channels;
  c.w = init_weight<Scalar>(channels, channels, rng);
  c.u = init_weight<Scalar>(channels, channels, rng);
  c.gamma = Var<Scalar>(Tensor<Scalar>({channels}, Scalar(1)), true);
  c.beta = init_bias<Scalar>(channels);
  c.stats = BatchNormStats<Scalar>::fixed(Tensor<Scalar>({channels}), Tensor<Scalar>({channels}, Scalar(1)));
  return c;
}

template <typename Scalar>
std::vector<NamedVar<Scalar>> ConcatCell<Scalar>::parameters() const {
  return {{"w", w}, {"u", u}, {"gamma", gamma}, {"beta", beta}};
}

template <typename Scalar>
ClassifierHead<Scalar> ClassifierHead<Scalar>::init(Index channels, Index classes, std::mt19937_64& rng) {
  return {init_weight<Scalar>(channels, classes, rng), init_bias<Scalar>(classes)};
}

template <typename Scalar>
FastGruGates<Scalar> fast_gru_gates(Graph<Scalar>& g, const Var<Scalar>& state, const Var<Scalar>& x,
                                    const FastGruCell<Scalar>& cell) {
  if (x.value().rank() != 5) throw ShapeError("fast_gru_step: features must be [n,l,h,w,c], got " + shape_string(x.shape()));
  require_same_shape(state.shape(), x.shape(), "fast_gru_step state/input");
  if (x.shape()[4] != cell.channels) {
    throw ShapeError("fast_gru_step: " + std::to_string(x.shape()[4]) + " channels, cell built for " +
                     std::to_string(cell.channels));
  }
  if (cell.channels % cell.reduction != 0) throw ShapeError("fast_gru_step: channels not divisible by reduction");

  const auto r_squeezed = relu(g, project_pair(g, x, cell.u_rx, state, cell.u_ro, cell.b_r_squeeze));
  const auto z_squeezed = relu(g, project_pair(g, x, cell.u_zx, state, cell.u_zo, cell.b_z_squeeze));
  return {sigmoid(g, pointwise_conv(g, r_squeezed, cell.w_r, cell.b_r)),
          sigmoid(g, pointwise_conv(g, z_squeezed, cell.w_z, cell.b_z))};
}

template <typename Scalar>
Var<Scalar> fast_gru_step(Graph<Scalar>& g, const Var<Scalar>& state, const Var<Scalar>& x,
                          const FastGruCell<Scalar>& cell) {
  const auto [r, z] = fast_gru_gates(g, state, x, cell);
  const auto candidate = faster::tanh(g, project_pair(g, x, cell.v_x, mul(g, r, state), cell.v_o, cell.b_o));
  return convex_mix(g, state, candidate, z);
}

template <typename Scalar>
Var<Scalar> gru_step(Graph<Scalar>& g, const Var<Scalar>& state, const Var<Scalar>& x_pooled,
                     const GruCell<Scalar>& cell) {
  require_vector(state.shape(), x_pooled.shape(), cell.channels, "gru_step");
  const auto r = sigmoid(g, project_pair(g, x_pooled, cell.g_rx, state, cell.g_ro, cell.b_r));
  const auto z = sigmoid(g, project_pair(g, x_pooled, cell.g_zx, state, cell.g_zo, cell.b_z));
  const auto candidate = faster::tanh(g, project_pair(g, x_pooled, cell.v_x, mul(g, r, state), cell.v_o, cell.b_o));
  return convex_mix(g, state, candidate, z);
}

template <typename Scalar>
AggState<Scalar> lstm_step(Graph<Scalar>& g, const AggState<Scalar>& state, const Var<Scalar>& x_pooled,
                           const LstmCell<Scalar>& cell) {
  require_vector(state.hidden.shape(), x_pooled.shape(), cell.channels, "lstm_step");
  require_same_shape(state.cell.shape(), state.hidden.shape(), "lstm_step cell");
  const auto& o = state.hidden;
  const auto input_gate = sigmoid(g, project_pair(g, x_pooled, cell.w_ix, o, cell.w_io, cell.b_i));
  const auto forget_gate = sigmoid(g, project_pair(g, x_pooled, cell.w_fx, o, cell.w_fo, cell.b_f));
  const auto output_gate = sigmoid(g, project_pair(g, x_pooled, cell.w_gx, o, cell.w_go, cell.b_g));
  const auto candidate = faster::tanh(g, project_pair(g, x_pooled, cell.w_cx, o, cell.w_co, cell.b_c));
  const auto new_cell = add(g, mul(g, forget_gate, state.cell), mul(g, input_gate, candidate));
  return {mul(g, output_gate, faster::tanh(g, new_cell)), new_cell};
}

template <typename Scalar>
Var<Scalar> concat_step(Graph<Scalar>& g, const Var<Scalar>& state, const Var<Scalar>& x_pooled,
                        ConcatCell<Scalar>& cell, BnMode mode) {
  require_vector(state.shape(), x_pooled.shape(), cell.channels, "concat_step");
  const auto joint = add(g, dense(g, state, cell.w), dense(g, x_pooled, cell.u));
  return relu(g, batch_norm(g, joint, cell.gamma, cell.beta, cell.stats, mode));
}

template <typename Scalar>
Tensor<Scalar> avg_pool_aggregate(std::span<const Tensor<Scalar>> scores) {
  if (scores.empty()) throw ShapeError("avg_pool_aggregate: no clip scores");
  Graph<Scalar> g;
  std::vector<Var<Scalar>> vars;
  vars.reserve(scores.size());
  for (const auto& s : scores) vars.emplace_back(s);
  return average<Scalar>(g, vars).value();
}

template <typename Scalar>
Var<Scalar> classify_head(Graph<Scalar>& g, const Var<Scalar>& state, const ClassifierHead<Scalar>& head) {
  const Index c = state.shape().back();
  if (c != head.channels()) {
    throw ShapeError("classify_head: state has " + std::to_string(c) + " channels, head expects " +
                     std::to_string(head.channels()));
  }
  if (state.value().rank() == 5) return dense(g, global_avg_pool(g, state), head.weight, head.bias);
  if (state.value().rank() == 2) return dense(g, state, head.weight, head.bias);
  throw ShapeError("classify_head: state must be [n,l,h,w,c] or [n,c], got " + shape_string(state.shape()));
}

template <typename Scalar>
Aggregator<Scalar> Aggregator<Scalar>::create(AggregatorMethod method, Index channels, Index classes,
                                              const AggregatorOptions& options, std::uint64_t seed) {
  if (channels < 1 || classes < 1) throw ConfigError("aggregator needs positive channel and class counts");
  std::mt19937_64 rng(seed);
  Aggregator a;
  a.method_ = method;
  a.channels_ = channels;
  a.options_ = options;
  switch (method) {
    case AggregatorMethod::fast_gru: a.cell_ = FastGruCell<Scalar>::init(channels, options, rng); break;
    case AggregatorMethod::gru: a.cell_ = GruCell<Scalar>::init(channels, options, rng); break;
    case AggregatorMethod::lstm: a.cell_ = LstmCell<Scalar>::init(channels, options, rng); break;
    case AggregatorMethod::concat: a.cell_ = ConcatCell<Scalar>::init(channels, rng); break;
    case AggregatorMethod::avg_pool: break;
  }
  a.head_ = ClassifierHead<Scalar>::init(channels, classes, rng);
  return a;
}

template <typename Scalar>
std::vector<NamedVar<Scalar>> Aggregator<Scalar>::parameters() const {
  std::vector<NamedVar<Scalar>> out;
  std::visit(
      [&](const auto& cell) {
        if constexpr (!std::is_same_v<std::decay_t<decltype(cell)>, std::monostate>) {
          for (auto& p : cell.parameters()) out.push_back({std::string(method_name(method_)) + "." + p.name, p.var});
        }
      },
      cell_);
  out.push_back({"head.weight", head_.weight});
  out.push_back({"head.bias", head_.bias});
  return out;
}

template <typename Scalar>
std::vector<std::pair<std::string, Tensor<Scalar>*>> Aggregator<Scalar>::buffers() {
  std::vector<std::pair<std::string, Tensor<Scalar>*>> out;
  if (auto* concat = std::get_if<ConcatCell<Scalar>>(&cell_)) {
    out.emplace_back("concat.running_mean", &concat->stats.mean);
    out.emplace_back("concat.running_var", &concat->stats.var);
  }
  return out;
}

namespace {

template <typename Scalar>
void check_sequence(std::span<const Var<Scalar>> features, Index channels) {
  if (features.empty()) throw ShapeError("aggregate: empty clip sequence");
  const Shape& first = features[0].shape();
  if (first.size() != 5) throw ShapeError("aggregate: features must be [n,l,h,w,c], got " + shape_string(first));
  if (first[4] != channels) {
    throw ShapeError("aggregate: features have " + std::to_string(first[4]) + " channels, aggregator expects " +
                     std::to_string(channels));
  }
  for (std::size_t t = 1; t < features.size(); ++t) {
    if (features[t].shape() != first) {
      throw ShapeError("aggregate: clip " + std::to_string(t) + " has shape " + shape_string(features[t].shape()) +
                       ", clip 0 has " + shape_string(first));
    }
  }
}

}  // namespace

template <typename Scalar>
std::vector<AggState<Scalar>> aggregate_states(Graph<Scalar>& g, std::span<const Var<Scalar>> features,
                                               Aggregator<Scalar>& aggregator, BnMode mode) {
  check_sequence(features, aggregator.channels());
  if (aggregator.method() == AggregatorMethod::avg_pool) {
    throw ConfigError("aggregate_states: avg-pool has no recurrent state");
  }
  std::vector<AggState<Scalar>> states;
  states.reserve(features.size());

  if (auto* cell = std::get_if<FastGruCell<Scalar>>(&aggregator.cell())) {
    states.push_back({features[0], {}});
    for (std::size_t t = 1; t < features.size(); ++t) {
      auto next = fast_gru_step(g, states.back().hidden, features[t], *cell);
      require_same_shape(next.shape(), features[t].shape(), "fast_gru_step output");
      states.push_back({next, {}});
    }
    return states;
  }

  const auto x0 = global_avg_pool(g, features[0]);
  AggState<Scalar> state{x0, {}};
  if (std::holds_alternative<LstmCell<Scalar>>(aggregator.cell())) {
    state.cell = Var<Scalar>(Tensor<Scalar>(x0.shape()));
  }
  states.push_back(state);
  for (std::size_t t = 1; t < features.size(); ++t) {
    const auto x = global_avg_pool(g, features[t]);
    const auto& prev = states.back();
    if (auto* gru = std::get_if<GruCell<Scalar>>(&aggregator.cell())) {
      states.push_back({gru_step(g, prev.hidden, x, *gru), {}});
    } else if (auto* lstm = std::get_if<LstmCell<Scalar>>(&aggregator.cell())) {
      states.push_back(lstm_step(g, prev, x, *lstm));
    } else if (auto* concat = std::get_if<ConcatCell<Scalar>>(&aggregator.cell())) {
      states.push_back({concat_step(g, prev.hidden, x, *concat, mode), {}});
    }
  }
  return states;
}

template <typename Scalar>
Var<Scalar> aggregate_sequence(Graph<Scalar>& g, std::span<const Var<Scalar>> features,
                               Aggregator<Scalar>& aggregator, BnMode mode) {
  if (aggregator.method() == AggregatorMethod::avg_pool) {
    check_sequence(features, aggregator.channels());
    std::vector<Var<Scalar>> scores;
    scores.reserve(features.size());
    for (const auto& x : features) scores.push_back(classify_head(g, x, aggregator.head()));
    return average<Scalar>(g, scores);
  }
  const auto states = aggregate_states(g, features, aggregator, mode);
  return classify_head(g, states.back().hidden, aggregator.head());
}

#define FASTER_INSTANTIATE_AGG(S)                                                                               \
  template struct FastGruCell<S>;                                                                               \
  template struct GruCell<S>;                                                                                   \
  template struct LstmCell<S>;                                                                                  \
  template struct ConcatCell<S>;                                                                                \
  template struct ClassifierHead<S>;                                                                            \
  template class Aggregator<S>;                                                                                 \
  template FastGruGates<S> fast_gru_gates(Graph<S>&, const Var<S>&, const Var<S>&, const FastGruCell<S>&);      \
  template Var<S> fast_gru_step(Graph<S>&, const Var<S>&, const Var<S>&, const FastGruCell<S>&);                \
  template Var<S> gru_step(Graph<S>&, const Var<S>&, const Var<S>&, const GruCell<S>&);                         \
  template AggState<S> lstm_step(Graph<S>&, const AggState<S>&, const Var<S>&, const LstmCell<S>&);             \
  template Var<S> concat_step(Graph<S>&, const Var<S>&, const Var<S>&, ConcatCell<S>&, BnMode);                 \
  template Tensor<S> avg_pool_aggregate(std::span<const Tensor<S>>);                                            \
  template Var<S> classify_head(Graph<S>&, const Var<S>&, const ClassifierHead<S>&);                            \
  template std::vector<AggState<S>> aggregate_states(Graph<S>&, std::span<const Var<S>>, Aggregator<S>&, BnMode); \
  template Var<S> aggregate_sequence(Graph<S>&, std::span<const Var<S>>, Aggregator<S>&, BnMode);

FASTER_INSTANTIATE_AGG(float)
FASTER_INSTANTIATE_AGG(double)

}  // namespace faster
