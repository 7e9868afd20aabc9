#pragma once

// Differentiable operations recorded on a Tape. Each op computes its forward
// value eagerly and registers a closure that accumulates input gradients.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "deflare/core/tape.hpp"
#include "deflare/core/tensor.hpp"

namespace deflare::ops {

namespace detail {

struct BroadcastPlan {
  std::array<std::size_t, 4> out{1, 1, 1, 1};
  std::array<std::size_t, 4> stride_a{0, 0, 0, 0};
  std::array<std::size_t, 4> stride_b{0, 0, 0, 0};
  Shape out_shape;
  bool same = false;
};

inline std::array<std::size_t, 4> pad4(const Shape& s) {
  std::array<std::size_t, 4> r{1, 1, 1, 1};
  const std::size_t off = 4 - s.size();
  for (std::size_t i = 0; i < s.size(); ++i) r[off + i] = s[i];
  return r;
}

inline std::array<std::size_t, 4> strides4(const std::array<std::size_t, 4>& d) {
  return {d[1] * d[2] * d[3], d[2] * d[3], d[3], 1};
}

// Binary ops broadcast over singleton axes of equal-rank operands (rank <= 4).
inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b, std::string_view op) {
  if (a.size() != b.size() || a.size() > 4 || a.empty()) {
    throw DimensionError(std::string(op) + ": incompatible ranks " + shape_str(a) + " vs " +
                         shape_str(b));
  }
  BroadcastPlan p;
  p.same = a == b;
  const auto da = pad4(a), db = pad4(b);
  const auto sa = strides4(da), sb = strides4(db);
  p.out_shape.resize(a.size());
  for (std::size_t i = 0; i < 4; ++i) {
    if (da[i] != db[i] && da[i] != 1 && db[i] != 1) {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                           shape_str(b) + " are not broadcastable");
    }
    p.out[i] = std::max(da[i], db[i]);
    p.stride_a[i] = da[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = db[i] == 1 ? 0 : sb[i];
  }
  for (std::size_t i = 0; i < a.size(); ++i) p.out_shape[i] = p.out[4 - a.size() + i];
  return p;
}

template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  std::size_t o = 0;
  for (std::size_t i0 = 0; i0 < p.out[0]; ++i0)
    for (std::size_t i1 = 0; i1 < p.out[1]; ++i1)
      for (std::size_t i2 = 0; i2 < p.out[2]; ++i2) {
        std::size_t ia = i0 * p.stride_a[0] + i1 * p.stride_a[1] + i2 * p.stride_a[2];
        std::size_t ib = i0 * p.stride_b[0] + i1 * p.stride_b[1] + i2 * p.stride_b[2];
        for (std::size_t i3 = 0; i3 < p.out[3]; ++i3, ++o) {
          f(o, ia, ib);
          ia += p.stride_a[3];
          ib += p.stride_b[3];
        }
      }
}

// value(a, b), da(a, b) = d value / d a, db(a, b) = d value / d b.
template <class T, class Fv, class Fa, class Fb>
Var<T> binary(std::string_view name, Var<T> a, Var<T> b, Fv fv, Fa fa, Fb fb) {
  const Tensor<T>& va = a.value();
  const Tensor<T>& vb = b.value();
  const BroadcastPlan plan = broadcast_plan(va.shape(), vb.shape(), name);
  Tensor<T> out(plan.out_shape);
  if (plan.same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fv(va[i], vb[i]);
  } else {
    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      out[o] = fv(va[ia], vb[ib]);
    });
  }
  return a.tape->record(
      name, std::move(out), {a, b},
      [&va, &vb, plan, fa, fb](const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
        Tensor<T>* ga = grads[0];
        Tensor<T>* gb = grads[1];
        for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
          if (ga) (*ga)[ia] += g[o] * fa(va[ia], vb[ib]);
          if (gb) (*gb)[ib] += g[o] * fb(va[ia], vb[ib]);
        });
      });
}

// value(x) and its derivative expressed in terms of x and y = value(x).
template <class T, class Fv, class Fd>
Var<T> unary(std::string_view name, Var<T> x, Fv fv, Fd fd) {
  const Tensor<T>& vx = x.value();
  Tensor<T> out(vx.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fv(vx[i]);
  Tape<T>* tape = x.tape;
  const std::size_t yid = tape->size();  // id the output node will receive
  return tape->record(
      name, std::move(out), {x},
      [&vx, tape, yid, fd](const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
        const Tensor<T>& vy = tape->value(Var<T>{tape, yid});
        Tensor<T>& gx = *grads[0];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * fd(vx[i], vy[i]);
      });
}

}  // namespace detail

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{1}; });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T{1}; },
      [](T, T) { return T{-1}; });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <class T>
Var<T> div(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T{1} / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <class T>
Var<T> scale(Var<T> x, T s) {
  return detail::unary<T>(
      "scale", x, [s](T v) { return s * v; }, [s](T, T) { return s; });
}

template <class T>
Var<T> add_scalar(Var<T> x, T s) {
  return detail::unary<T>(
      "add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T{1}; });
}

// ELU with alpha = 1.
template <class T>
Var<T> elu(Var<T> x) {
  return detail::unary<T>(
      "elu", x, [](T v) { return v > 0 ? v : std::expm1(v); },
      [](T v, T y) { return v > 0 ? T{1} : y + T{1}; });
}

template <class T>
Var<T> relu(Var<T> x) {
  return detail::unary<T>(
      "relu", x, [](T v) { return v > 0 ? v : T{0}; },
      [](T v, T) { return v > 0 ? T{1} : T{0}; });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  return detail::unary<T>(
      "sigmoid", x, [](T v) { return T{1} / (T{1} + std::exp(-v)); },
      [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Var<T> clip01(Var<T> x) {
  return detail::unary<T>(
      "clip01", x, [](T v) { return std::clamp(v, T{0}, T{1}); },
      [](T v, T) { return (v > 0 && v < 1) ? T{1} : T{0}; });
}

template <class T>
Var<T> square(Var<T> x) {
  return detail::unary<T>(
      "square", x, [](T v) { return v * v; }, [](T v, T) { return 2 * v; });
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return x.tape->record("reshape", std::move(out), {x},
                        [](const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
                          Tensor<T>& gx = *grads[0];
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                        });
}

template <class T>
Var<T> sum_all(Var<T> x) {
  Tensor<T> out(Shape{1}, x.value().sum());
  return x.tape->record("sum_all", std::move(out), {x},
                        [](const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
                          Tensor<T>& gx = *grads[0];
                          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
                        });
}

template <class T>
Var<T> mean_all(Var<T> x) {
  return scale(sum_all(x), T{1} / static_cast<T>(x.value().size()));
}

// [m, k] x [k, n] -> [m, n]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul: " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor<T> out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * B[p * n + j];
    }
  return a.tape->record(
      "matmul", std::move(out), {a, b},
      [&A, &B, m, k, n](const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
        if (Tensor<T>* ga = grads[0]) {  // dA = dY B^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              T s{0};
              for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
              (*ga)[i * k + p] += s;
            }
        }
        if (Tensor<T>* gb = grads[1]) {  // dB = A^T dY
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const T av = A[i * k + p];
              for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += av * g[i * n + j];
            }
        }
      });
}

template <class T>
Var<T> transpose(Var<T> a) {
  const Tensor<T>& A = a.value();
  if (A.rank() != 2) throw DimensionError("transpose: needs a matrix");
  const std::size_t m = A.dim(0), n = A.dim(1);
  Tensor<T> out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return a.tape->record("transpose", std::move(out), {a},
                        [m, n](const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
                          Tensor<T>& ga = *grads[0];
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                        });
}

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Dense convolution. x: [N, Cin, H, W], weight: [Cout, Cin, kh, kw].
template <class T>
Var<T> conv2d(Var<T> x, Var<T> weight, Conv2dOptions opt = {}) {
  const Tensor<T>& X = x.value();
  const Tensor<T>& Wt = weight.value();
  if (X.rank() != 4 || Wt.rank() != 4 || X.dim(1) != Wt.dim(1)) {
    throw DimensionError("conv2d: input " + shape_str(X.shape()) + " weight " +
                         shape_str(Wt.shape()));
  }
  const std::size_t N = X.dim(0), Ci = X.dim(1), H = X.dim(2), W = X.dim(3);
  const std::size_t Co = Wt.dim(0), kh = Wt.dim(2), kw = Wt.dim(3);
  const std::size_t s = opt.stride, pad = opt.padding;
  if (s == 0 || H + 2 * pad < kh || W + 2 * pad < kw) throw ConfigError("conv2d: bad geometry");
  const std::size_t Ho = (H + 2 * pad - kh) / s + 1, Wo = (W + 2 * pad - kw) / s + 1;

  // Visits every (output, input, weight) index triple that contributes.
  auto visit = [=](auto&& f) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t co = 0; co < Co; ++co)
        for (std::size_t ci = 0; ci < Ci; ++ci)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              const std::size_t wi = ((co * Ci + ci) * kh + i) * kw + j;
              for (std::size_t oh = 0; oh < Ho; ++oh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s + i) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                const std::size_t obase = ((n * Co + co) * Ho + oh) * Wo;
                const std::size_t ibase = ((n * Ci + ci) * H + static_cast<std::size_t>(ih)) * W;
                // ow range with 0 <= ow*s + j - pad < W
                std::size_t ow0 = 0;
                while (ow0 < Wo && ow0 * s + j < pad) ++ow0;
                for (std::size_t ow = ow0; ow < Wo; ++ow) {
                  const std::size_t iw = ow * s + j - pad;
                  if (iw >= W) break;
                  f(obase + ow, ibase + iw, wi);
                }
              }
            }
  };

  Tensor<T> out(Shape{N, Co, Ho, Wo});
  visit([&](std::size_t o, std::size_t xi, std::size_t wi) { out[o] += Wt[wi] * X[xi]; });
  return x.tape->record(
      "conv2d", std::move(out), {x, weight},
      [&X, &Wt, visit](const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
        Tensor<T>* gx = grads[0];
        Tensor<T>* gw = grads[1];
        visit([&](std::size_t o, std::size_t xi, std::size_t wi) {
          if (gx) (*gx)[xi] += Wt[wi] * g[o];
          if (gw) (*gw)[wi] += X[xi] * g[o];
        });
      });
}

// Per-channel convolution with odd kernels and "same" zero padding.
// x: [N, C, H, W], kernels: [C, kh, kw].
template <class T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> kernels) {
  const Tensor<T>& X = x.value();
  const Tensor<T>& K = kernels.value();
  if (X.rank() != 4 || K.rank() != 3 || K.dim(0) != X.dim(1)) {
    throw DimensionError("depthwise_conv2d: input " + shape_str(X.shape()) + " kernels " +
                         shape_str(K.shape()));
  }
  const std::size_t kh = K.dim(1), kw = K.dim(2);
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ConfigError("depthwise_conv2d: kernel extents must be odd, got " +
                      std::to_string(kh) + "x" + std::to_string(kw));
  }
  const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2);
  const std::ptrdiff_t pw = static_cast<std::ptrdiff_t>(kw / 2);

  auto visit = [=](auto&& f) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t plane = (n * C + c) * H * W;
        for (std::size_t i = 0; i < kh; ++i)
          for (std::size_t j = 0; j < kw; ++j) {
            const std::size_t ki = (c * kh + i) * kw + j;
            const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(i) - ph;
            const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(j) - pw;
            for (std::size_t h = 0; h < H; ++h) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(h) + di;
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
              const std::size_t w0 = dj < 0 ? static_cast<std::size_t>(-dj) : 0;
              const std::size_t w1 = dj > 0 ? W - static_cast<std::size_t>(dj) : W;
              for (std::size_t w = w0; w < w1; ++w) {
                f(plane + h * W + w,
                  plane + static_cast<std::size_t>(ih) * W +
                      static_cast<std::size_t>(static_cast<std::ptrdiff_t>(w) + dj),
                  ki);
              }
            }
          }
      }
  };

  Tensor<T> out(X.shape());
  visit([&](std::size_t o, std::size_t xi, std::size_t ki) { out[o] += K[ki] * X[xi]; });
  return x.tape->record(
      "depthwise_conv2d", std::move(out), {x, kernels},
      [&X, &K, visit](const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
        Tensor<T>* gx = grads[0];
        Tensor<T>* gk = grads[1];
        visit([&](std::size_t o, std::size_t xi, std::size_t ki) {
          if (gx) (*gx)[xi] += K[ki] * g[o];
          if (gk) (*gk)[ki] += X[xi] * g[o];
        });
      });
}

// [N, C, H, W] -> [N, C]
template <class T>
Var<T> global_avg_pool(Var<T> x) {
  const Tensor<T>& X = x.value();
  if (X.rank() != 4 || X.dim(2) == 0 || X.dim(3) == 0) {
    throw DimensionError("global_avg_pool: input " + shape_str(X.shape()));
  }
  const std::size_t N = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3);
  Tensor<T> out(Shape{N, C});
  for (std::size_t p = 0; p < N * C; ++p) {
    T s{0};
    for (std::size_t i = 0; i < HW; ++i) s += X[p * HW + i];
    out[p] = s / static_cast<T>(HW);
  }
  return x.tape->record("global_avg_pool", std::move(out), {x},
                        [N, C, HW](const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
                          Tensor<T>& gx = *grads[0];
                          for (std::size_t p = 0; p < N * C; ++p) {
                            const T v = g[p] / static_cast<T>(HW);
                            for (std::size_t i = 0; i < HW; ++i) gx[p * HW + i] += v;
                          }
                        });
}

// Non-overlapping k x k mean pooling; H and W must be divisible by k.
template <class T>
Var<T> avg_pool2d(Var<T> x, std::size_t k) {
  const Tensor<T>& X = x.value();
  if (X.rank() != 4 || k == 0 || X.dim(2) % k || X.dim(3) % k) {
    throw DimensionError("avg_pool2d: input " + shape_str(X.shape()) + " not divisible by " +
                         std::to_string(k));
  }
  const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  const std::size_t Ho = H / k, Wo = W / k;
  const T inv = T{1} / static_cast<T>(k * k);
  Tensor<T> out(Shape{N, C, Ho, Wo});
  for (std::size_t p = 0; p < N * C; ++p)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w)
        out[(p * Ho + h / k) * Wo + w / k] += X[(p * H + h) * W + w] * inv;
  return x.tape->record(
      "avg_pool2d", std::move(out), {x},
      [N, C, H, W, Ho, Wo, k, inv](const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
        Tensor<T>& gx = *grads[0];
        for (std::size_t p = 0; p < N * C; ++p)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w)
              gx[(p * H + h) * W + w] += g[(p * Ho + h / k) * Wo + w / k] * inv;
      });
}

template <class T>
Var<T> upsample_nearest2x(Var<T> x) {
  const Tensor<T>& X = x.value();
  if (X.rank() != 4) throw DimensionError("upsample_nearest2x: needs NCHW");
  const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  Tensor<T> out(Shape{N, C, 2 * H, 2 * W});
  for (std::size_t p = 0; p < N * C; ++p)
    for (std::size_t h = 0; h < 2 * H; ++h)
      for (std::size_t w = 0; w < 2 * W; ++w)
        out[(p * 2 * H + h) * 2 * W + w] = X[(p * H + h / 2) * W + w / 2];
  return x.tape->record("upsample_nearest2x", std::move(out), {x},
                        [N, C, H, W](const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
                          Tensor<T>& gx = *grads[0];
                          for (std::size_t p = 0; p < N * C; ++p)
                            for (std::size_t h = 0; h < 2 * H; ++h)
                              for (std::size_t w = 0; w < 2 * W; ++w)
                                gx[(p * H + h / 2) * W + w / 2] +=
                                    g[(p * 2 * H + h) * 2 * W + w];
                        });
}

// Picks leading-axis items; repeated indices accumulate in backward.
template <class T>
Var<T> gather_batch(Var<T> x, std::vector<std::size_t> index) {
  const Tensor<T>& X = x.value();
  if (X.rank() == 0 || X.dim(0) == 0) throw DimensionError("gather_batch: empty input");
  const std::size_t per = X.size() / X.dim(0);
  Shape s = X.shape();
  s[0] = index.size();
  Tensor<T> out(s);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= X.dim(0)) throw DimensionError("gather_batch: index out of range");
    std::copy_n(X.data().begin() + static_cast<std::ptrdiff_t>(index[i] * per), per,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return x.tape->record("gather_batch", std::move(out), {x},
                        [index, per](const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
                          Tensor<T>& gx = *grads[0];
                          for (std::size_t i = 0; i < index.size(); ++i)
                            for (std::size_t k = 0; k < per; ++k)
                              gx[index[i] * per + k] += g[i * per + k];
                        });
}

struct PatchCoord {
  std::size_t batch;
  std::size_t row;  // top-left pixel
  std::size_t col;
  friend bool operator==(const PatchCoord&, const PatchCoord&) = default;
};

// Row-major patch origins for an H x W map.
inline std::vector<PatchCoord> patch_grid(std::size_t batch, std::size_t H, std::size_t W,
                                          std::size_t patch, std::size_t stride) {
  if (patch == 0 || stride == 0 || patch > H || patch > W) {
    throw DimensionError("patch " + std::to_string(patch) + " does not fit a " +
                         std::to_string(H) + "x" + std::to_string(W) + " map");
  }
  std::vector<PatchCoord> out;
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t r = 0; r + patch <= H; r += stride)
      for (std::size_t c = 0; c + patch <= W; c += stride) out.push_back({n, r, c});
  return out;
}

// [N, C, H, W] -> [P, C * patch * patch], rows ordered as patch_grid().
template <class T>
Var<T> unfold_patches(Var<T> x, std::size_t patch, std::size_t stride) {
  const Tensor<T>& X = x.value();
  if (X.rank() != 4) throw DimensionError("unfold_patches: needs NCHW");
  const std::size_t C = X.dim(1), H = X.dim(2), W = X.dim(3);
  const auto grid = patch_grid(X.dim(0), H, W, patch, stride);
  const std::size_t D = C * patch * patch;
  std::vector<std::size_t> src(grid.size() * D);
  for (std::size_t p = 0; p < grid.size(); ++p) {
    std::size_t d = 0;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < patch; ++i)
        for (std::size_t j = 0; j < patch; ++j)
          src[p * D + d++] =
              ((grid[p].batch * C + c) * H + grid[p].row + i) * W + grid[p].col + j;
  }
  Tensor<T> out(Shape{grid.size(), D});
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = X[src[i]];
  return x.tape->record("unfold_patches", std::move(out), {x},
                        [src = std::move(src)](const Tensor<T>& g,
                                               std::span<Tensor<T>* const> grads) {
                          Tensor<T>& gx = *grads[0];
                          for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += g[i];
                        });
}

}  // namespace deflare::ops

namespace deflare::ops {

// Channels [begin, end) of an NCHW tensor.
template <class T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t end) {
  const Tensor<T>& X = x.value();
  if (X.rank() != 4 || begin >= end || end > X.dim(1)) {
    throw DimensionError("slice_channels: [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") of " + shape_str(X.shape()));
  }
  const std::size_t N = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3);
  const std::size_t Cs = end - begin;
  Tensor<T> out(Shape{N, Cs, X.dim(2), X.dim(3)});
  for (std::size_t n = 0; n < N; ++n)
    std::copy_n(X.data().begin() + static_cast<std::ptrdiff_t>((n * C + begin) * HW), Cs * HW,
                out.data().begin() + static_cast<std::ptrdiff_t>(n * Cs * HW));
  return x.tape->record(
      "slice_channels", std::move(out), {x},
      [N, C, HW, Cs, begin](const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
        Tensor<T>& gx = *grads[0];
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t i = 0; i < Cs * HW; ++i) gx[(n * C + begin) * HW + i] += g[n * Cs * HW + i];
      });
}

}  // namespace deflare::ops
