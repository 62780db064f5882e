#include "test_support.hpp"

#include <random>

namespace faster::testing {

Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double low, double high) {
  std::mt19937_64 rng(seed);
  return Tensor<double>::uniform(shape, low, high, rng);
}

Tensor<double> naive_conv3d(const Tensor<double>& x, const Tensor<double>& kernel, Extent3 stride, Extent3 pad) {
  const Index n = x.dim(0), t = x.dim(1), h = x.dim(2), w = x.dim(3), cin = x.dim(4);
  const Index kt = kernel.dim(0), kh = kernel.dim(1), kw = kernel.dim(2), cout = kernel.dim(4);
  const Index ot = (t + 2 * pad.t - kt) / stride.t + 1;
  const Index oh = (h + 2 * pad.h - kh) / stride.h + 1;
  const Index ow = (w + 2 * pad.w - kw) / stride.w + 1;
  Tensor<double> out({n, ot, oh, ow, cout});
  for (Index b = 0; b < n; ++b)
    for (Index i = 0; i < ot; ++i)
      for (Index j = 0; j < oh; ++j)
        for (Index l = 0; l < ow; ++l)
          for (Index co = 0; co < cout; ++co) {
            double acc = 0.0;
            for (Index a = 0; a < kt; ++a)
              for (Index bb = 0; bb < kh; ++bb)
                for (Index cc = 0; cc < kw; ++cc)
                  for (Index ci = 0; ci < cin; ++ci) {
                    const Index ti = i * stride.t - pad.t + a;
                    const Index hi = j * stride.h - pad.h + bb;
                    const Index wi = l * stride.w - pad.w + cc;
                    if (ti < 0 || ti >= t || hi < 0 || hi >= h || wi < 0 || wi >= w) continue;
                    acc += x.at({b, ti, hi, wi, ci}) * kernel.at({a, bb, cc, ci, co});
                  }
            out.at({b, i, j, l, co}) = acc;
          }
  return out;
}

Tensor<double> naive_pointwise(const Tensor<double>& x, const Tensor<double>& weight, const Tensor<double>* bias) {
  const Index cin = weight.dim(0), cout = weight.dim(1);
  const Index rows = x.size() / cin;
  Shape out_shape = x.shape();
  out_shape.back() = cout;
  Tensor<double> out(out_shape);
  for (Index r = 0; r < rows; ++r)
    for (Index co = 0; co < cout; ++co) {
      double acc = bias ? (*bias)[co] : 0.0;
      for (Index ci = 0; ci < cin; ++ci) acc += x[r * cin + ci] * weight[ci * cout + co];
      out[r * cout + co] = acc;
    }
  return out;
}

Var<double> probe_objective(Graph<double>& g, const Var<double>& y, std::uint64_t seed) {
  Var<double> probe(random_tensor(y.shape(), seed));
  return sum(g, mul(g, y, probe));
}

}  // namespace faster::testing
