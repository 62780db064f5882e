#pragma once

#include <span>
#include <vector>

#include "faster/graph.hpp"

namespace faster {

/// Per-axis extents in (time, height, width) order.
struct Extent3 {
  Index t = 0;
  Index h = 0;
  Index w = 0;
  friend bool operator==(const Extent3&, const Extent3&) = default;
};

/// floor((in + 2*pad - kernel) / stride) + 1, or 0 when the window does not fit.
Index conv_output_extent(Index in, Index kernel, Index stride, Index pad);

struct Conv3dOptions {
  Extent3 stride{1, 1, 1};
  Extent3 padding{0, 0, 0};
};

struct Pool3dOptions {
  Extent3 window{1, 1, 1};
  Extent3 stride{1, 1, 1};
  Extent3 padding{0, 0, 0};
};

enum class Activation { sigmoid, tanh, relu };

enum class BnMode { train, eval };

/// Running mean/variance of a batch-norm layer. Eval mode requires at least
/// one train-mode update (or explicit initialization).
template <typename Scalar>
struct BatchNormStats {
  Tensor<Scalar> mean;
  Tensor<Scalar> var;
  bool initialized = false;
  Scalar momentum = Scalar(0.1);
  Scalar eps = Scalar(1e-5);

  BatchNormStats() = default;
  explicit BatchNormStats(Index channels)
      : mean(Shape{channels}), var(Shape{channels}, Scalar(1)) {}

  /// Fixed statistics, e.g. to bypass normalization with mean 0 / var 1.
  static BatchNormStats fixed(Tensor<Scalar> mean, Tensor<Scalar> var) {
    BatchNormStats s;
    s.mean = std::move(mean);
    s.var = std::move(var);
    s.initialized = true;
    return s;
  }
};

// 3D cross-correlation over [n,t,h,w,cin] with kernel [kt,kh,kw,cin,cout].
template <typename Scalar>
Var<Scalar> conv3d(Graph<Scalar>& g, const Var<Scalar>& x, const Var<Scalar>& kernel,
                   const Conv3dOptions& options = {});

// 1x1x1 convolution: x[..., cin] * weight[cin, cout] + bias[cout]. Bias may be undefined.
template <typename Scalar>
Var<Scalar> pointwise_conv(Graph<Scalar>& g, const Var<Scalar>& x, const Var<Scalar>& weight,
                           const Var<Scalar>& bias = {});

template <typename Scalar>
Var<Scalar> dense(Graph<Scalar>& g, const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias = {});

template <typename Scalar>
Var<Scalar> activation(Graph<Scalar>& g, const Var<Scalar>& x, Activation kind);

template <typename Scalar>
Var<Scalar> sigmoid(Graph<Scalar>& g, const Var<Scalar>& x) { return activation(g, x, Activation::sigmoid); }
template <typename Scalar>
Var<Scalar> tanh(Graph<Scalar>& g, const Var<Scalar>& x) { return activation(g, x, Activation::tanh); }
template <typename Scalar>
Var<Scalar> relu(Graph<Scalar>& g, const Var<Scalar>& x) { return activation(g, x, Activation::relu); }

template <typename Scalar>
Var<Scalar> add(Graph<Scalar>& g, const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar>
Var<Scalar> mul(Graph<Scalar>& g, const Var<Scalar>& a, const Var<Scalar>& b);
/// (1 - z) * a + z * b, elementwise.
template <typename Scalar>
Var<Scalar> convex_mix(Graph<Scalar>& g, const Var<Scalar>& a, const Var<Scalar>& b, const Var<Scalar>& z);
template <typename Scalar>
Var<Scalar> scale(Graph<Scalar>& g, const Var<Scalar>& x, Scalar factor);
/// Elementwise mean of same-shape tensors; bitwise invariant to input order.
template <typename Scalar>
Var<Scalar> average(Graph<Scalar>& g, std::span<const Var<Scalar>> xs);

/// [n,t,h,w,c] -> [n,c].
template <typename Scalar>
Var<Scalar> global_avg_pool(Graph<Scalar>& g, const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> max_pool3d(Graph<Scalar>& g, const Var<Scalar>& x, const Pool3dOptions& options);

/// Normalizes over every axis but the last.
template <typename Scalar>
Var<Scalar> batch_norm(Graph<Scalar>& g, const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       BatchNormStats<Scalar>& stats, BnMode mode);

/// Mean over the batch of -log softmax(logits)[label]; returns a scalar.
template <typename Scalar>
Var<Scalar> softmax_cross_entropy(Graph<Scalar>& g, const Var<Scalar>& logits, std::span<const int> labels);

template <typename Scalar>
Var<Scalar> sum(Graph<Scalar>& g, const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> reshape(Graph<Scalar>& g, const Var<Scalar>& x, Shape shape);

/// Row-wise softmax of [n,k] logits, no tape.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits);

}  // namespace faster
