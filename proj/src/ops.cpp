#include "faster/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

namespace faster {

Index conv_output_extent(Index in, Index kernel, Index stride, Index pad) {
  const Index span = in + 2 * pad - kernel;
  if (span < 0 || stride < 1) return 0;
  return span / stride + 1;
}

namespace {

template <typename Scalar>
void add_into(Tensor<Scalar>* dst, const Tensor<Scalar>& src) {
  if (dst) dst->vector() += src.vector();
}

struct ConvGeometry {
  Index n, t, h, w, cin;
  Index kt, kh, kw, cout;
  Index ot, oh, ow;
  Extent3 stride, pad;

  Index positions() const { return ot * oh * ow; }
  Index patch() const { return kt * kh * kw * cin; }
  bool pointwise() const {
    return kt == 1 && kh == 1 && kw == 1 && stride == Extent3{1, 1, 1} && pad == Extent3{0, 0, 0};
  }
};

ConvGeometry conv_geometry(const Shape& x, const Shape& k, const Conv3dOptions& opt) {
  if (x.size() != 5) throw ShapeError("conv3d: input must be [n,t,h,w,c], got " + shape_string(x));
  if (k.size() != 5) throw ShapeError("conv3d: kernel must be [kt,kh,kw,cin,cout], got " + shape_string(k));
  if (k[3] != x[4]) {
    throw ShapeError("conv3d: channel dimension mismatch, input has " + std::to_string(x[4]) +
                     " channels but kernel expects " + std::to_string(k[3]));
  }
  const Extent3& s = opt.stride;
  const Extent3& p = opt.padding;
  if (s.t < 1 || s.h < 1 || s.w < 1) throw ShapeError("conv3d: strides must be >= 1");
  if (p.t < 0 || p.h < 0 || p.w < 0) throw ShapeError("conv3d: negative padding");
  const char* names[3] = {"time", "height", "width"};
  const Index in[3] = {x[1], x[2], x[3]};
  const Index kern[3] = {k[0], k[1], k[2]};
  const Index pads[3] = {p.t, p.h, p.w};
  for (int a = 0; a < 3; ++a) {
    if (kern[a] > in[a] + 2 * pads[a]) {
      throw ShapeError(std::string("conv3d: kernel ") + names[a] + " extent " + std::to_string(kern[a]) +
                       " exceeds padded input extent " + std::to_string(in[a] + 2 * pads[a]));
    }
  }
  ConvGeometry geo{x[0], x[1], x[2], x[3], x[4], k[0], k[1], k[2], k[4],
                   conv_output_extent(x[1], k[0], s.t, p.t), conv_output_extent(x[2], k[1], s.h, p.h),
                   conv_output_extent(x[3], k[2], s.w, p.w), s, p};
  if (geo.n == 0 || geo.ot == 0 || geo.oh == 0 || geo.ow == 0 || geo.cout == 0) {
    throw ShapeError("conv3d: zero-size output for input " + shape_string(x) + " and kernel " + shape_string(k));
  }
  return geo;
}

// Gathers receptive fields of batch items [n0, n0 + count) into rows of `cols`.
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Index n0, Index count, Scalar* cols) {
  const Index patch = g.patch();
  const Index row_stride_w = g.cin;
  const Index row_stride_h = g.w * g.cin;
  const Index row_stride_t = g.h * g.w * g.cin;
  const Index item_stride = g.t * row_stride_t;
  Scalar* out = cols;
  for (Index n = n0; n < n0 + count; ++n) {
    const Scalar* xn = x + n * item_stride;
    for (Index ot = 0; ot < g.ot; ++ot) {
      for (Index oh = 0; oh < g.oh; ++oh) {
        for (Index ow = 0; ow < g.ow; ++ow) {
          Scalar* row = out;
          for (Index a = 0; a < g.kt; ++a) {
            const Index ti = ot * g.stride.t - g.pad.t + a;
            for (Index b = 0; b < g.kh; ++b) {
              const Index hi = oh * g.stride.h - g.pad.h + b;
              for (Index c = 0; c < g.kw; ++c) {
                const Index wi = ow * g.stride.w - g.pad.w + c;
                if (ti < 0 || ti >= g.t || hi < 0 || hi >= g.h || wi < 0 || wi >= g.w) {
                  std::fill(row, row + g.cin, Scalar(0));
                } else {
                  std::memcpy(row, xn + ti * row_stride_t + hi * row_stride_h + wi * row_stride_w,
                              sizeof(Scalar) * static_cast<std::size_t>(g.cin));
                }
                row += g.cin;
              }
            }
          }
          out += patch;
        }
      }
    }
  }
}

// Scatter-adds rows of `cols` back onto the input gradient.
template <typename Scalar>
void col2im(const Scalar* cols, const ConvGeometry& g, Index n0, Index count, Scalar* dx) {
  const Index patch = g.patch();
  const Index row_stride_h = g.w * g.cin;
  const Index row_stride_t = g.h * g.w * g.cin;
  const Index item_stride = g.t * row_stride_t;
  const Scalar* in = cols;
  for (Index n = n0; n < n0 + count; ++n) {
    Scalar* dxn = dx + n * item_stride;
    for (Index ot = 0; ot < g.ot; ++ot) {
      for (Index oh = 0; oh < g.oh; ++oh) {
        for (Index ow = 0; ow < g.ow; ++ow) {
          const Scalar* row = in;
          for (Index a = 0; a < g.kt; ++a) {
            const Index ti = ot * g.stride.t - g.pad.t + a;
            for (Index b = 0; b < g.kh; ++b) {
              const Index hi = oh * g.stride.h - g.pad.h + b;
              for (Index c = 0; c < g.kw; ++c) {
                const Index wi = ow * g.stride.w - g.pad.w + c;
                if (ti >= 0 && ti < g.t && hi >= 0 && hi < g.h && wi >= 0 && wi < g.w) {
                  Scalar* dst = dxn + ti * row_stride_t + hi * row_stride_h + wi * g.cin;
                  for (Index ci = 0; ci < g.cin; ++ci) dst[ci] += row[ci];
                }
                row += g.cin;
              }
            }
          }
          in += patch;
        }
      }
    }
  }
}

// Batch items per im2col chunk, bounding the scratch buffer to ~16M values.
Index chunk_items(const ConvGeometry& g) {
  constexpr Index kBudget = Index(1) << 24;
  const Index per_item = std::max<Index>(1, g.positions() * g.patch());
  return std::clamp<Index>(kBudget / per_item, 1, g.n);
}

template <typename Scalar>
Tensor<Scalar> affine_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>* b) {
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  Tensor<Scalar> out(out_shape);
  auto y = out.matrix();
  y.noalias() = x.matrix() * w.matrix();
  if (b) y.rowwise() += b->vector().transpose();
  return out;
}

template <typename Scalar>
Var<Scalar> affine(Graph<Scalar>& g, const char* op, const Var<Scalar>& x, const Var<Scalar>& w,
                   const Var<Scalar>& b) {
  if (w.value().rank() != 2) throw ShapeError(std::string(op) + ": weight must be [cin,cout]");
  if (x.value().rank() < 1 || x.shape().back() != w.shape()[0]) {
    throw ShapeError(std::string(op) + ": channel mismatch, input " + shape_string(x.shape()) + " vs weight " +
                     shape_string(w.shape()));
  }
  if (b && (b.value().rank() != 1 || b.shape()[0] != w.shape()[1])) {
    throw ShapeError(std::string(op) + ": bias " + shape_string(b.shape()) + " does not match weight " +
                     shape_string(w.shape()));
  }
  Tensor<Scalar> out = affine_forward(x.value(), w.value(), b ? &b.value() : nullptr);
  std::vector<Var<Scalar>> inputs{x, w};
  if (b) inputs.push_back(b);
  return g.record(op, std::move(out), std::move(inputs),
                  [x, w, has_bias = static_cast<bool>(b)](const Tensor<Scalar>& gy, std::vector<Tensor<Scalar>*>& gi) {
                    const auto dy = gy.matrix();
                    if (gi[0]) gi[0]->matrix().noalias() += dy * w.value().matrix().transpose();
                    if (gi[1]) gi[1]->matrix().noalias() += x.value().matrix().transpose() * dy;
                    if (has_bias && gi[2]) gi[2]->vector() += dy.colwise().sum().transpose();
                  });
}

template <typename Scalar>
Scalar stable_sigmoid(Scalar v) {
  if (v >= 0) {
    const Scalar e = std::exp(-v);
    return Scalar(1) / (Scalar(1) + e);
  }
  const Scalar e = std::exp(v);
  return e / (Scalar(1) + e);
}

}  // namespace

template <typename Scalar>
Var<Scalar> conv3d(Graph<Scalar>& g, const Var<Scalar>& x, const Var<Scalar>& kernel, const Conv3dOptions& options) {
  const ConvGeometry geo = conv_geometry(x.shape(), kernel.shape(), options);
  Tensor<Scalar> out({geo.n, geo.ot, geo.oh, geo.ow, geo.cout});
  const auto kmat = ConstMatrixMap<Scalar>(kernel.value().data(), geo.patch(), geo.cout);

  if (geo.pointwise()) {
    out.matrix().noalias() = x.value().matrix() * kmat;
  } else {
    const Index chunk = chunk_items(geo);
    std::vector<Scalar> cols(static_cast<std::size_t>(chunk * geo.positions() * geo.patch()));
    for (Index n0 = 0; n0 < geo.n; n0 += chunk) {
      const Index count = std::min(chunk, geo.n - n0);
      const Index rows = count * geo.positions();
      im2col(x.value().data(), geo, n0, count, cols.data());
      MatrixMap<Scalar> y(out.data() + n0 * geo.positions() * geo.cout, rows, geo.cout);
      y.noalias() = ConstMatrixMap<Scalar>(cols.data(), rows, geo.patch()) * kmat;
    }
  }

  return g.record("conv3d", std::move(out), {x, kernel},
                  [x, kernel, geo](const Tensor<Scalar>& gy, std::vector<Tensor<Scalar>*>& gi) {
                    const auto kmat = ConstMatrixMap<Scalar>(kernel.value().data(), geo.patch(), geo.cout);
                    if (geo.pointwise()) {
                      if (gi[0]) gi[0]->matrix().noalias() += gy.matrix() * kmat.transpose();
                      if (gi[1]) {
                        MatrixMap<Scalar>(gi[1]->data(), geo.patch(), geo.cout).noalias() +=
                            x.value().matrix().transpose() * gy.matrix();
                      }
                      return;
                    }
                    const Index chunk = chunk_items(geo);
                    std::vector<Scalar> cols(static_cast<std::size_t>(chunk * geo.positions() * geo.patch()));
                    RowMatrix<Scalar> dcols;
                    for (Index n0 = 0; n0 < geo.n; n0 += chunk) {
                      const Index count = std::min(chunk, geo.n - n0);
                      const Index rows = count * geo.positions();
                      ConstMatrixMap<Scalar> dy(gy.data() + n0 * geo.positions() * geo.cout, rows, geo.cout);
                      if (gi[1]) {
                        im2col(x.value().data(), geo, n0, count, cols.data());
                        MatrixMap<Scalar>(gi[1]->data(), geo.patch(), geo.cout).noalias() +=
                            ConstMatrixMap<Scalar>(cols.data(), rows, geo.patch()).transpose() * dy;
                      }
                      if (gi[0]) {
                        dcols.noalias() = dy * kmat.transpose();
                        col2im(dcols.data(), geo, n0, count, gi[0]->data());
                      }
                    }
                  });
}

template <typename Scalar>
Var<Scalar> pointwise_conv(Graph<Scalar>& g, const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  if (x.value().rank() != 5) throw ShapeError("pointwise_conv: input must be [n,t,h,w,c], got " + shape_string(x.shape()));
  return affine(g, "pointwise_conv", x, weight, bias);
}

template <typename Scalar>
Var<Scalar> dense(Graph<Scalar>& g, const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  if (x.value().rank() != 2) throw ShapeError("dense: input must be [n,c], got " + shape_string(x.shape()));
  return affine(g, "dense", x, weight, bias);
}

template <typename Scalar>
Var<Scalar> activation(Graph<Scalar>& g, const Var<Scalar>& x, Activation kind) {
  Tensor<Scalar> out(x.shape());
  const Tensor<Scalar>& in = x.value();
  const Index n = in.size();
  switch (kind) {
    case Activation::sigmoid:
      for (Index i = 0; i < n; ++i) out[i] = stable_sigmoid(in[i]);
      break;
    case Activation::tanh:
      for (Index i = 0; i < n; ++i) out[i] = std::tanh(in[i]);
      break;
    case Activation::relu:
      for (Index i = 0; i < n; ++i) out[i] = in[i] > 0 ? in[i] : Scalar(0);
      break;
  }
  const char* name = kind == Activation::sigmoid ? "sigmoid" : kind == Activation::tanh ? "tanh" : "relu";
  // relu differentiates on the input sign, sigmoid/tanh on the output.
  Tensor<Scalar> saved = kind == Activation::relu ? in : out;
  return g.record(name, std::move(out), {x},
                  [kind, saved = std::move(saved)](const Tensor<Scalar>& gy, std::vector<Tensor<Scalar>*>& gi) {
                    if (!gi[0]) return;
                    Tensor<Scalar>& dx = *gi[0];
                    const Index n = gy.size();
                    switch (kind) {
                      case Activation::sigmoid:
                        for (Index i = 0; i < n; ++i) dx[i] += gy[i] * saved[i] * (Scalar(1) - saved[i]);
                        break;
                      case Activation::tanh:
                        for (Index i = 0; i < n; ++i) dx[i] += gy[i] * (Scalar(1) - saved[i] * saved[i]);
                        break;
                      case Activation::relu:
                        for (Index i = 0; i < n; ++i) dx[i] += saved[i] > 0 ? gy[i] : Scalar(0);
                        break;
                    }
                  });
}

template <typename Scalar>
Var<Scalar> add(Graph<Scalar>& g, const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<Scalar> out(a.shape());
  out.vector() = a.value().vector() + b.value().vector();
  return g.record("add", std::move(out), {a, b}, [](const Tensor<Scalar>& gy, std::vector<Tensor<Scalar>*>& gi) {
    add_into(gi[0], gy);
    add_into(gi[1], gy);
  });
}

template <typename Scalar>
Var<Scalar> mul(Graph<Scalar>& g, const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<Scalar> out(a.shape());
  out.vector() = a.value().vector().cwiseProduct(b.value().vector());
  return g.record("mul", std::move(out), {a, b}, [a, b](const Tensor<Scalar>& gy, std::vector<Tensor<Scalar>*>& gi) {
    if (gi[0]) gi[0]->vector() += gy.vector().cwiseProduct(b.value().vector());
    if (gi[1]) gi[1]->vector() += gy.vector().cwiseProduct(a.value().vector());
  });
}

template <typename Scalar>
Var<Scalar> convex_mix(Graph<Scalar>& g, const Var<Scalar>& a, const Var<Scalar>& b, const Var<Scalar>& z) {
  require_same_shape(a.shape(), b.shape(), "convex_mix");
  require_same_shape(a.shape(), z.shape(), "convex_mix gate");
  Tensor<Scalar> out(a.shape());
  const Index n = out.size();
  const auto& av = a.value();
  const auto& bv = b.value();
  const auto& zv = z.value();
  for (Index i = 0; i < n; ++i) out[i] = (Scalar(1) - zv[i]) * av[i] + zv[i] * bv[i];
  return g.record("convex_mix", std::move(out), {a, b, z},
                  [a, b, z](const Tensor<Scalar>& gy, std::vector<Tensor<Scalar>*>& gi) {
                    const Index n = gy.size();
                    const auto& av = a.value();
                    const auto& bv = b.value();
                    const auto& zv = z.value();
                    if (gi[0]) for (Index i = 0; i < n; ++i) (*gi[0])[i] += gy[i] * (Scalar(1) - zv[i]);
                    if (gi[1]) for (Index i = 0; i < n; ++i) (*gi[1])[i] += gy[i] * zv[i];
                    if (gi[2]) for (Index i = 0; i < n; ++i) (*gi[2])[i] += gy[i] * (bv[i] - av[i]);
                  });
}

template <typename Scalar>
Var<Scalar> scale(Graph<Scalar>& g, const Var<Scalar>& x, Scalar factor) {
  Tensor<Scalar> out(x.shape());
  out.vector() = x.value().vector() * factor;
  return g.record("scale", std::move(out), {x}, [factor](const Tensor<Scalar>& gy, std::vector<Tensor<Scalar>*>& gi) {
    if (gi[0]) gi[0]->vector() += gy.vector() * factor;
  });
}

template <typename Scalar>
Var<Scalar> average(Graph<Scalar>& g, std::span<const Var<Scalar>> xs) {
  if (xs.empty()) throw ShapeError("average: no inputs");
  for (const auto& x : xs) require_same_shape(xs[0].shape(), x.shape(), "average");
  Tensor<Scalar> out(xs[0].shape());
  const Scalar inv = Scalar(1) / static_cast<Scalar>(xs.size());
  // Summing each element's terms in ascending order makes the result
  // independent of input order.
  std::vector<Scalar> terms(xs.size());
  for (Index i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < xs.size(); ++k) terms[k] = xs[k].value()[i];
    std::sort(terms.begin(), terms.end());
    Scalar acc = 0;
    for (Scalar v : terms) acc += v;
    out[i] = acc * inv;
  }
  return g.record("average", std::move(out), std::vector<Var<Scalar>>(xs.begin(), xs.end()),
                  [inv](const Tensor<Scalar>& gy, std::vector<Tensor<Scalar>*>& gi) {
                    for (auto* d : gi) {
                      if (d) d->vector() += gy.vector() * inv;
                    }
                  });
}

template <typename Scalar>
Var<Scalar> global_avg_pool(Graph<Scalar>& g, const Var<Scalar>& x) {
  const Shape& s = x.shape();
  if (s.size() != 5) throw ShapeError("global_avg_pool: input must be [n,t,h,w,c], got " + shape_string(s));
  const Index n = s[0], c = s[4], positions = s[1] * s[2] * s[3];
  if (positions < 1) throw ShapeError("global_avg_pool: empty spatio-temporal extent");
  Tensor<Scalar> out({n, c});
  const Scalar inv = Scalar(1) / static_cast<Scalar>(positions);
  for (Index i = 0; i < n; ++i) {
    ConstMatrixMap<Scalar> block(x.value().data() + i * positions * c, positions, c);
    out.matrix().row(i) = block.colwise().sum() * inv;
  }
  return g.record("global_avg_pool", std::move(out), {x},
                  [n, c, positions, inv](const Tensor<Scalar>& gy, std::vector<Tensor<Scalar>*>& gi) {
                    if (!gi[0]) return;
                    for (Index i = 0; i < n; ++i) {
                      MatrixMap<Scalar> block(gi[0]->data() + i * positions * c, positions, c);
                      block.rowwise() += gy.matrix().row(i) * inv;
                    }
                  });
}

template <typename Scalar>
Var<Scalar> max_pool3d(Graph<Scalar>& g, const Var<Scalar>& x, const Pool3dOptions& opt) {
  const Shape& s = x.shape();
  if (s.size() != 5) throw ShapeError("max_pool3d: input must be [n,t,h,w,c], got " + shape_string(s));
  const Extent3& k = opt.window;
  const Extent3& st = opt.stride;
  const Extent3& p = opt.padding;
  if (st.t < 1 || st.h < 1 || st.w < 1) throw ShapeError("max_pool3d: strides must be >= 1");
  if (p.t >= k.t || p.h >= k.h || p.w >= k.w) throw ShapeError("max_pool3d: padding must be smaller than window");
  const char* names[3] = {"time", "height", "width"};
  const Index in[3] = {s[1], s[2], s[3]};
  const Index win[3] = {k.t, k.h, k.w};
  for (int a = 0; a < 3; ++a) {
    if (win[a] < 1 || win[a] > in[a] + 2 * (a == 0 ? p.t : a == 1 ? p.h : p.w)) {
      throw ShapeError(std::string("max_pool3d: window ") + names[a] + " extent " + std::to_string(win[a]) +
                       " does not fit input extent " + std::to_string(in[a]));
    }
  }
  const Index n = s[0], t = s[1], h = s[2], w = s[3], c = s[4];
  const Index ot = conv_output_extent(t, k.t, st.t, p.t);
  const Index oh = conv_output_extent(h, k.h, st.h, p.h);
  const Index ow = conv_output_extent(w, k.w, st.w, p.w);
  if (n == 0 || c == 0 || ot == 0 || oh == 0 || ow == 0) throw ShapeError("max_pool3d: zero-size output");

  Tensor<Scalar> out({n, ot, oh, ow, c});
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  const Scalar* xv = x.value().data();
  Index o = 0;
  for (Index b = 0; b < n; ++b) {
    for (Index i = 0; i < ot; ++i) {
      for (Index j = 0; j < oh; ++j) {
        for (Index l = 0; l < ow; ++l) {
          for (Index ch = 0; ch < c; ++ch, ++o) {
            Scalar best = -std::numeric_limits<Scalar>::infinity();
            Index best_at = -1;
            for (Index a = 0; a < k.t; ++a) {
              const Index ti = i * st.t - p.t + a;
              if (ti < 0 || ti >= t) continue;
              for (Index bb = 0; bb < k.h; ++bb) {
                const Index hi = j * st.h - p.h + bb;
                if (hi < 0 || hi >= h) continue;
                for (Index cc = 0; cc < k.w; ++cc) {
                  const Index wi = l * st.w - p.w + cc;
                  if (wi < 0 || wi >= w) continue;
                  const Index at = (((b * t + ti) * h + hi) * w + wi) * c + ch;
                  if (xv[at] > best || best_at < 0) {
                    best = xv[at];
                    best_at = at;
                  }
                }
              }
            }
            out[o] = best;
            argmax[static_cast<std::size_t>(o)] = best_at;
          }
        }
      }
    }
  }
  return g.record("max_pool3d", std::move(out), {x},
                  [argmax = std::move(argmax)](const Tensor<Scalar>& gy, std::vector<Tensor<Scalar>*>& gi) {
                    if (!gi[0]) return;
                    for (Index i = 0; i < gy.size(); ++i) (*gi[0])[argmax[static_cast<std::size_t>(i)]] += gy[i];
                  });
}

template <typename Scalar>
Var<Scalar> batch_norm(Graph<Scalar>& g, const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       BatchNormStats<Scalar>& stats, BnMode mode) {
  if (x.value().rank() < 2) throw ShapeError("batch_norm: input needs a channel axis, got " + shape_string(x.shape()));
  const Index c = x.shape().back();
  const Shape channel_shape{c};
  require_same_shape(gamma.shape(), channel_shape, "batch_norm gamma");
  require_same_shape(beta.shape(), channel_shape, "batch_norm beta");
  if (stats.mean.shape() != channel_shape || stats.var.shape() != channel_shape) {
    throw ShapeError("batch_norm: running statistics do not match " + std::to_string(c) + " channels");
  }
  const auto xm = x.value().matrix();
  const Index rows = xm.rows();
  if (rows == 0) throw ShapeError("batch_norm: empty input");

  Eigen::Array<Scalar, 1, Eigen::Dynamic> mean, inv_std;
  if (mode == BnMode::train) {
    mean = xm.colwise().mean().array();
    const Eigen::Array<Scalar, 1, Eigen::Dynamic> var =
        (xm.rowwise() - mean.matrix()).array().square().colwise().sum() / static_cast<Scalar>(rows);
    inv_std = (var + stats.eps).rsqrt();
    const Scalar m = stats.momentum;
    const Scalar unbias = rows > 1 ? static_cast<Scalar>(rows) / static_cast<Scalar>(rows - 1) : Scalar(1);
    if (stats.initialized) {
      stats.mean.vector() = (Scalar(1) - m) * stats.mean.vector() + m * mean.matrix().transpose();
      stats.var.vector() = (Scalar(1) - m) * stats.var.vector() + m * (var * unbias).matrix().transpose();
    } else {
      stats.mean.vector() = mean.matrix().transpose();
      stats.var.vector() = (var * unbias).matrix().transpose();
      stats.initialized = true;
    }
  } else {
    if (!stats.initialized) throw NumericError("batch_norm: eval mode before running statistics were initialized");
    mean = stats.mean.vector().transpose().array();
    inv_std = (stats.var.vector().transpose().array() + stats.eps).rsqrt();
  }

  Tensor<Scalar> xhat(x.shape());
  xhat.matrix() = ((xm.rowwise() - mean.matrix()).array().rowwise() * inv_std).matrix();
  Tensor<Scalar> out(x.shape());
  out.matrix() = (xhat.matrix().array().rowwise() * gamma.value().vector().transpose().array()).matrix();
  out.matrix().rowwise() += beta.value().vector().transpose();

  return g.record(
      "batch_norm", std::move(out), {x, gamma, beta},
      [gamma, mode, rows, xhat = std::move(xhat), inv_std](const Tensor<Scalar>& gy, std::vector<Tensor<Scalar>*>& gi) {
        const auto dy = gy.matrix();
        const auto xh = xhat.matrix();
        const Eigen::Array<Scalar, 1, Eigen::Dynamic> sum_dy = dy.colwise().sum().array();
        const Eigen::Array<Scalar, 1, Eigen::Dynamic> sum_dy_xhat = dy.cwiseProduct(xh).colwise().sum().array();
        if (gi[1]) gi[1]->vector() += sum_dy_xhat.matrix().transpose();
        if (gi[2]) gi[2]->vector() += sum_dy.matrix().transpose();
        if (!gi[0]) return;
        const Eigen::Array<Scalar, 1, Eigen::Dynamic> gscale = gamma.value().vector().transpose().array() * inv_std;
        auto dx = gi[0]->matrix();
        if (mode == BnMode::eval) {
          dx += (dy.array().rowwise() * gscale).matrix();
          return;
        }
        const Scalar inv_m = Scalar(1) / static_cast<Scalar>(rows);
        // dx = gamma*inv_std * (dy - mean(dy) - xhat * mean(dy*xhat))
        const Eigen::Array<Scalar, 1, Eigen::Dynamic> mean_dy = sum_dy * inv_m;
        const Eigen::Array<Scalar, 1, Eigen::Dynamic> mean_dy_xhat = sum_dy_xhat * inv_m;
        dx += (((dy.array().rowwise() - mean_dy) - (xh.array().rowwise() * mean_dy_xhat)).rowwise() * gscale).matrix();
      });
}

template <typename Scalar>
Var<Scalar> softmax_cross_entropy(Graph<Scalar>& g, const Var<Scalar>& logits, std::span<const int> labels) {
  if (logits.value().rank() != 2) {
    throw ShapeError("softmax_cross_entropy: logits must be [n,k], got " + shape_string(logits.shape()));
  }
  const Index n = logits.shape()[0], k = logits.shape()[1];
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n));
  }
  if (n == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  for (int label : labels) {
    if (label < 0 || label >= k) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0," + std::to_string(k) +
                       ")");
    }
  }
  Tensor<Scalar> probs = softmax(logits.value());
  Scalar loss = 0;
  const auto lm = logits.value().matrix();
  for (Index i = 0; i < n; ++i) {
    const Scalar mx = lm.row(i).maxCoeff();
    const Scalar lse = mx + std::log((lm.row(i).array() - mx).exp().sum());
    loss += lse - lm(i, labels[static_cast<std::size_t>(i)]);
  }
  loss /= static_cast<Scalar>(n);
  std::vector<int> saved_labels(labels.begin(), labels.end());
  return g.record("softmax_cross_entropy", Tensor<Scalar>(Shape{}, loss), {logits},
                  [probs = std::move(probs), saved_labels = std::move(saved_labels), n, k](
                      const Tensor<Scalar>& gy, std::vector<Tensor<Scalar>*>& gi) {
                    if (!gi[0]) return;
                    const Scalar s = gy[0] / static_cast<Scalar>(n);
                    auto d = gi[0]->matrix();
                    for (Index i = 0; i < n; ++i) {
                      for (Index j = 0; j < k; ++j) {
                        const Scalar onehot = j == saved_labels[static_cast<std::size_t>(i)] ? Scalar(1) : Scalar(0);
                        d(i, j) += s * (probs.matrix()(i, j) - onehot);
                      }
                    }
                  });
}

template <typename Scalar>
Var<Scalar> sum(Graph<Scalar>& g, const Var<Scalar>& x) {
  Scalar total = 0;
  for (Scalar v : x.value().values()) total += v;
  return g.record("sum", Tensor<Scalar>(Shape{}, total), {x},
                  [](const Tensor<Scalar>& gy, std::vector<Tensor<Scalar>*>& gi) {
                    if (gi[0]) gi[0]->vector().array() += gy[0];
                  });
}

template <typename Scalar>
Var<Scalar> reshape(Graph<Scalar>& g, const Var<Scalar>& x, Shape shape) {
  Tensor<Scalar> out = x.value().reshaped(std::move(shape));
  return g.record("reshape", std::move(out), {x}, [](const Tensor<Scalar>& gy, std::vector<Tensor<Scalar>*>& gi) {
    if (gi[0]) gi[0]->vector() += gy.vector();
  });
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax: logits must be [n,k], got " + shape_string(logits.shape()));
  Tensor<Scalar> out(logits.shape());
  const auto in = logits.matrix();
  auto o = out.matrix();
  for (Index i = 0; i < in.rows(); ++i) {
    const Scalar mx = in.row(i).maxCoeff();
    o.row(i) = (in.row(i).array() - mx).exp().matrix();
    o.row(i) /= o.row(i).sum();
  }
  return out;
}

#define FASTER_INSTANTIATE_OPS(S)                                                                              \
  template Var<S> conv3d(Graph<S>&, const Var<S>&, const Var<S>&, const Conv3dOptions&);                      \
  template Var<S> pointwise_conv(Graph<S>&, const Var<S>&, const Var<S>&, const Var<S>&);                     \
  template Var<S> dense(Graph<S>&, const Var<S>&, const Var<S>&, const Var<S>&);                              \
  template Var<S> activation(Graph<S>&, const Var<S>&, Activation);                                           \
  template Var<S> add(Graph<S>&, const Var<S>&, const Var<S>&);                                               \
  template Var<S> mul(Graph<S>&, const Var<S>&, const Var<S>&);                                               \
  template Var<S> convex_mix(Graph<S>&, const Var<S>&, const Var<S>&, const Var<S>&);                         \
  template Var<S> scale(Graph<S>&, const Var<S>&, S);                                                         \
  template Var<S> average(Graph<S>&, std::span<const Var<S>>);                                                \
  template Var<S> global_avg_pool(Graph<S>&, const Var<S>&);                                                  \
  template Var<S> max_pool3d(Graph<S>&, const Var<S>&, const Pool3dOptions&);                                 \
  template Var<S> batch_norm(Graph<S>&, const Var<S>&, const Var<S>&, const Var<S>&, BatchNormStats<S>&, BnMode); \
  template Var<S> softmax_cross_entropy(Graph<S>&, const Var<S>&, std::span<const int>);                      \
  template Var<S> sum(Graph<S>&, const Var<S>&);                                                              \
  template Var<S> reshape(Graph<S>&, const Var<S>&, Shape);                                                   \
  template Tensor<S> softmax(const Tensor<S>&);

FASTER_INSTANTIATE_OPS(float)
FASTER_INSTANTIATE_OPS(double)

}  // namespace faster
