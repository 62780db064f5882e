#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "faster/ops.hpp"

namespace faster {

enum class AggregatorMethod { fast_gru, gru, lstm, concat, avg_pool };

const char* method_name(AggregatorMethod method);
AggregatorMethod parse_method(const std::string& name);

struct AggregatorOptions {
  Index reduction = 4;      // FAST-GRU gate bottleneck factor r
  double gate_bias = 0.0;   // initial bias of every sigmoid gate
};

template <typename Scalar>
struct NamedVar {
  std::string name;
  Var<Scalar> var;
};

/// Recurrent cell keeping the full l x h x w x c resolution. Gates pass
/// through a c -> c/r -> c bottleneck of 1x1x1 convolutions; the candidate
/// path uses full-width c -> c convolutions.
template <typename Scalar>
struct FastGruCell {
  Index channels = 0;
  Index reduction = 4;
  Var<Scalar> u_rx, u_ro, b_r_squeeze;
  Var<Scalar> u_zx, u_zo, b_z_squeeze;
  Var<Scalar> w_r, b_r;
  Var<Scalar> w_z, b_z;
  Var<Scalar> v_x, v_o, b_o;

  static FastGruCell init(Index channels, const AggregatorOptions& options, std::mt19937_64& rng);
  std::vector<NamedVar<Scalar>> parameters() const;
  /// Weights feeding the two gates (U_* and W_*), biases excluded.
  Index gate_weight_count() const;
};

/// GRU over globally pooled c-vectors.
template <typename Scalar>
struct GruCell {
  Index channels = 0;
  Var<Scalar> g_rx, g_ro, b_r;
  Var<Scalar> g_zx, g_zo, b_z;
  Var<Scalar> v_x, v_o, b_o;

  static GruCell init(Index channels, const AggregatorOptions& options, std::mt19937_64& rng);
  std::vector<NamedVar<Scalar>> parameters() const;
  Index gate_weight_count() const;
};

/// Three-gate LSTM (input, forget, output) with a cell vector, no peepholes.
template <typename Scalar>
struct LstmCell {
  Index channels = 0;
  Var<Scalar> w_ix, w_io, b_i;
  Var<Scalar> w_fx, w_fo, b_f;
  Var<Scalar> w_gx, w_go, b_g;
  Var<Scalar> w_cx, w_co, b_c;

  static LstmCell init(Index channels, const AggregatorOptions& options, std::mt19937_64& rng);
  std::vector<NamedVar<Scalar>> parameters() const;
};

/// o_new = ReLU(BN(W o + U x)).
template <typename Scalar>
struct ConcatCell {
  Index channels = 0;
  Var<Scalar> w, u, gamma, beta;
  BatchNormStats<Scalar> stats;

  static ConcatCell init(Index channels, std::mt19937_64& rng);
  std::vector<NamedVar<Scalar>> parameters() const;
};

/// Global average pool (for spatial inputs) followed by a fully connected layer.
template <typename Scalar>
struct ClassifierHead {
  Var<Scalar> weight;  // [c, k]
  Var<Scalar> bias;    // [k]

  static ClassifierHead init(Index channels, Index classes, std::mt19937_64& rng);
  Index channels() const { return weight.shape()[0]; }
  Index classes() const { return weight.shape()[1]; }
};

/// State threaded through the recurrence. `hidden` is [n,l,h,w,c] for
/// FAST-GRU and [n,c] otherwise; `cell` is used by LSTM only.
template <typename Scalar>
struct AggState {
  Var<Scalar> hidden;
  Var<Scalar> cell;
};

/// Reset gate r and update gate z of one FAST-GRU step, each [n,l,h,w,c].
template <typename Scalar>
struct FastGruGates {
  Var<Scalar> reset;
  Var<Scalar> update;
};

template <typename Scalar>
FastGruGates<Scalar> fast_gru_gates(Graph<Scalar>& g, const Var<Scalar>& state, const Var<Scalar>& x,
                                    const FastGruCell<Scalar>& cell);

template <typename Scalar>
Var<Scalar> fast_gru_step(Graph<Scalar>& g, const Var<Scalar>& state, const Var<Scalar>& x,
                          const FastGruCell<Scalar>& cell);

template <typename Scalar>
Var<Scalar> gru_step(Graph<Scalar>& g, const Var<Scalar>& state, const Var<Scalar>& x_pooled,
                     const GruCell<Scalar>& cell);

template <typename Scalar>
AggState<Scalar> lstm_step(Graph<Scalar>& g, const AggState<Scalar>& state, const Var<Scalar>& x_pooled,
                           const LstmCell<Scalar>& cell);

template <typename Scalar>
Var<Scalar> concat_step(Graph<Scalar>& g, const Var<Scalar>& state, const Var<Scalar>& x_pooled,
                        ConcatCell<Scalar>& cell, BnMode mode);

/// Per-class mean of clip scores; independent of input order bit for bit.
template <typename Scalar>
Tensor<Scalar> avg_pool_aggregate(std::span<const Tensor<Scalar>> scores);

template <typename Scalar>
Var<Scalar> classify_head(Graph<Scalar>& g, const Var<Scalar>& state, const ClassifierHead<Scalar>& head);

/// One aggregation method with its parameters and a fresh classifier head.
template <typename Scalar>
class Aggregator {
 public:
  using Cell = std::variant<std::monostate, FastGruCell<Scalar>, GruCell<Scalar>, LstmCell<Scalar>, ConcatCell<Scalar>>;

  static Aggregator create(AggregatorMethod method, Index channels, Index classes,
                           const AggregatorOptions& options, std::uint64_t seed);

  AggregatorMethod method() const { return method_; }
  Index channels() const { return channels_; }
  Index classes() const { return head_.classes(); }
  const AggregatorOptions& options() const { return options_; }

  Cell& cell() { return cell_; }
  const Cell& cell() const { return cell_; }
  ClassifierHead<Scalar>& head() { return head_; }
  const ClassifierHead<Scalar>& head() const { return head_; }

  /// Trainable tensors, stable names.
  std::vector<NamedVar<Scalar>> parameters() const;
  /// Non-trainable state (concat batch-norm running statistics).
  std::vector<std::pair<std::string, Tensor<Scalar>*>> buffers();

 private:
  AggregatorMethod method_ = AggregatorMethod::fast_gru;
  Index channels_ = 0;
  AggregatorOptions options_;
  Cell cell_;
  ClassifierHead<Scalar> head_;
};

/// o_0 = x_0, o_t = f(o_{t-1}, x_t); returns o_0 .. o_{N-1}. Vector-state
/// methods consume globally pooled features. Not defined for avg-pool.
template <typename Scalar>
std::vector<AggState<Scalar>> aggregate_states(Graph<Scalar>& g, std::span<const Var<Scalar>> features,
                                               Aggregator<Scalar>& aggregator, BnMode mode);

/// Video logits [n,k] from per-clip features (each [n,l,h,w,c]). Avg-pool
/// applies the head to every clip and averages the scores.
template <typename Scalar>
Var<Scalar> aggregate_sequence(Graph<Scalar>& g, std::span<const Var<Scalar>> features,
                               Aggregator<Scalar>& aggregator, BnMode mode);

}  // namespace faster
