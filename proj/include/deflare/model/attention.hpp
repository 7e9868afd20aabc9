#pragma once

// Rank-enhanced linear attention.
//
// With the positive feature map phi(x) = 1 + elu(x), Q' = phi(Q), K' = phi(K):
//
//   out_i = Q'_i (K'^T V) / (Q'_i . sum_j K'_j + eps)
//
// evaluated right-to-left, so the cost is O(N d c) rather than O(N^2).

#include <cmath>
#include <cstddef>
#include <vector>

#include "deflare/core/ops.hpp"
#include "deflare/core/tape.hpp"

namespace deflare {

namespace detail {

template <class T>
T feature_map(T x) {
  return x > 0 ? T{1} + x : std::exp(x);  // 1 + elu(x)
}

template <class T>
T feature_map_grad(T x) {
  return x > 0 ? T{1} : std::exp(x);
}

// Contiguous row-major matrices: q, k are [n x d], v and out are [n x c].
template <class T>
void linear_attention_forward(const T* q, const T* k, const T* v, std::size_t n, std::size_t d,
                              std::size_t c, T eps, T* out) {
  std::vector<T> kv(d * c, T{0}), ksum(d, T{0}), qp(d);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t a = 0; a < d; ++a) {
      const T kp = feature_map(k[j * d + a]);
      ksum[a] += kp;
      for (std::size_t b = 0; b < c; ++b) kv[a * c + b] += kp * v[j * c + b];
    }
  for (std::size_t i = 0; i < n; ++i) {
    T den = eps;
    for (std::size_t a = 0; a < d; ++a) {
      qp[a] = feature_map(q[i * d + a]);
      den += qp[a] * ksum[a];
    }
    for (std::size_t b = 0; b < c; ++b) {
      T num{0};
      for (std::size_t a = 0; a < d; ++a) num += qp[a] * kv[a * c + b];
      out[i * c + b] = num / den;
    }
  }
}

// Accumulates into gq, gk, gv (any may be null).
template <class T>
void linear_attention_backward(const T* q, const T* k, const T* v, const T* gout, std::size_t n,
                               std::size_t d, std::size_t c, T eps, T* gq, T* gk, T* gv) {
  std::vector<T> kv(d * c, T{0}), ksum(d, T{0});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t a = 0; a < d; ++a) {
      const T kp = feature_map(k[j * d + a]);
      ksum[a] += kp;
      for (std::size_t b = 0; b < c; ++b) kv[a * c + b] += kp * v[j * c + b];
    }
  std::vector<T> dkv(d * c, T{0}), dksum(d, T{0}), qp(d), dnum(c);
  for (std::size_t i = 0; i < n; ++i) {
    T den = eps;
    for (std::size_t a = 0; a < d; ++a) {
      qp[a] = feature_map(q[i * d + a]);
      den += qp[a] * ksum[a];
    }
    T dden{0};
    for (std::size_t b = 0; b < c; ++b) {
      T num{0};
      for (std::size_t a = 0; a < d; ++a) num += qp[a] * kv[a * c + b];
      dnum[b] = gout[i * c + b] / den;
      dden -= gout[i * c + b] * num / (den * den);
    }
    for (std::size_t a = 0; a < d; ++a) {
      T dqp = dden * ksum[a];
      for (std::size_t b = 0; b < c; ++b) {
        dqp += kv[a * c + b] * dnum[b];
        dkv[a * c + b] += qp[a] * dnum[b];
      }
      dksum[a] += qp[a] * dden;
      if (gq) gq[i * d + a] += dqp * feature_map_grad(q[i * d + a]);
    }
  }
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t a = 0; a < d; ++a) {
      const T kp = feature_map(k[j * d + a]);
      T dkp = dksum[a];
      for (std::size_t b = 0; b < c; ++b) {
        dkp += v[j * c + b] * dkv[a * c + b];
        if (gv) gv[j * c + b] += kp * dkv[a * c + b];
      }
      if (gk) gk[j * d + a] += dkp * feature_map_grad(k[j * d + a]);
    }
}

}  // namespace detail

// Q, K: [tokens, d]; V: [tokens, c] -> [tokens, c].
template <class T>
Var<T> relina_core(Var<T> q, Var<T> k, Var<T> v, T eps) {
  const Tensor<T>& Q = q.value();
  const Tensor<T>& K = k.value();
  const Tensor<T>& V = v.value();
  if (Q.rank() != 2 || K.shape() != Q.shape() || V.rank() != 2 || V.dim(0) != Q.dim(0) ||
      Q.dim(0) == 0) {
    throw DimensionError("relina_core: Q " + shape_str(Q.shape()) + " K " +
                         shape_str(K.shape()) + " V " + shape_str(V.shape()));
  }
  if (!(eps > 0)) throw ConfigError("relina_core: eps must be > 0");
  const std::size_t n = Q.dim(0), d = Q.dim(1), c = V.dim(1);
  Tensor<T> out(Shape{n, c});
  detail::linear_attention_forward(Q.data().data(), K.data().data(), V.data().data(), n, d, c,
                                   eps, out.data().data());
  return q.tape->record(
      "relina_core", std::move(out), {q, k, v},
      [&Q, &K, &V, n, d, c, eps](const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
        detail::linear_attention_backward(
            Q.data().data(), K.data().data(), V.data().data(), g.data().data(), n, d, c, eps,
            grads[0] ? grads[0]->data().data() : nullptr,
            grads[1] ? grads[1]->data().data() : nullptr,
            grads[2] ? grads[2]->data().data() : nullptr);
      });
}

// Multi-head variant on NCHW maps: tokens are the H*W positions and each head
// owns a contiguous C/heads slice of channels.
template <class T>
Var<T> relina_nchw(Var<T> q, Var<T> k, Var<T> v, std::size_t heads, T eps) {
  const Tensor<T>& Q = q.value();
  const Tensor<T>& K = k.value();
  const Tensor<T>& V = v.value();
  if (Q.rank() != 4 || K.shape() != Q.shape() || V.shape() != Q.shape()) {
    throw DimensionError("relina_nchw: mismatched Q/K/V shapes");
  }
  if (heads == 0 || Q.dim(1) % heads) throw ConfigError("relina_nchw: heads must divide C");
  const std::size_t N = Q.dim(0), C = Q.dim(1), HW = Q.dim(2) * Q.dim(3), d = C / heads;

  // Packs one (batch, head) slice into a [HW, d] matrix and back.
  auto pack = [=](const Tensor<T>& src, std::size_t n, std::size_t h, std::vector<T>& dst) {
    dst.resize(HW * d);
    for (std::size_t f = 0; f < d; ++f) {
      const T* p = src.data().data() + (n * C + h * d + f) * HW;
      for (std::size_t t = 0; t < HW; ++t) dst[t * d + f] = p[t];
    }
  };
  auto unpack_add = [=](const std::vector<T>& srcm, std::size_t n, std::size_t h, Tensor<T>& dst) {
    for (std::size_t f = 0; f < d; ++f) {
      T* p = dst.data().data() + (n * C + h * d + f) * HW;
      for (std::size_t t = 0; t < HW; ++t) p[t] += srcm[t * d + f];
    }
  };

  Tensor<T> out(Q.shape());
  std::vector<T> qm, km, vm, om(HW * d);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t h = 0; h < heads; ++h) {
      pack(Q, n, h, qm);
      pack(K, n, h, km);
      pack(V, n, h, vm);
      detail::linear_attention_forward(qm.data(), km.data(), vm.data(), HW, d, d, eps, om.data());
      unpack_add(om, n, h, out);
    }
  return q.tape->record(
      "relina_nchw", std::move(out), {q, k, v},
      [&Q, &K, &V, N, heads, HW, d, eps, pack, unpack_add](const Tensor<T>& g,
                                                          std::span<Tensor<T>* const> grads) {
        std::vector<T> qm, km, vm, gm, gq, gk, gv;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t h = 0; h < heads; ++h) {
            pack(Q, n, h, qm);
            pack(K, n, h, km);
            pack(V, n, h, vm);
            pack(g, n, h, gm);
            gq.assign(HW * d, T{0});
            gk.assign(HW * d, T{0});
            gv.assign(HW * d, T{0});
            detail::linear_attention_backward(qm.data(), km.data(), vm.data(), gm.data(), HW, d,
                                              d, eps, gq.data(), gk.data(), gv.data());
            if (grads[0]) unpack_add(gq, n, h, *grads[0]);
            if (grads[1]) unpack_add(gk, n, h, *grads[1]);
            if (grads[2]) unpack_add(gv, n, h, *grads[2]);
          }
      });
}

// Tape-free evaluation of relina_core.
template <class T>
Tensor<T> linear_attention(const Tensor<T>& Q, const Tensor<T>& K, const Tensor<T>& V, T eps) {
  const std::size_t n = Q.dim(0), d = Q.dim(1), c = V.dim(1);
  Tensor<T> out(Shape{n, c});
  detail::linear_attention_forward(Q.data().data(), K.data().data(), V.data().data(), n, d, c,
                                   eps, out.data().data());
  return out;
}

// Reference evaluation that materialises the N x N similarity matrix
// (Q'K'^T) and normalises each row. Used for benchmarking against the
// linear-order path.
template <class T>
Tensor<T> quadratic_attention(const Tensor<T>& Q, const Tensor<T>& K, const Tensor<T>& V, T eps) {
  const std::size_t n = Q.dim(0), d = Q.dim(1), c = V.dim(1);
  std::vector<T> qp(n * d), kp(n * d);
  for (std::size_t i = 0; i < n * d; ++i) {
    qp[i] = detail::feature_map(Q[i]);
    kp[i] = detail::feature_map(K[i]);
  }
  std::vector<T> sim(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s{0};
      for (std::size_t a = 0; a < d; ++a) s += qp[i * d + a] * kp[j * d + a];
      sim[i * n + j] = s;
    }
  Tensor<T> out(Shape{n, c});
  for (std::size_t i = 0; i < n; ++i) {
    T row{0};
    for (std::size_t j = 0; j < n; ++j) {
      const T s = sim[i * n + j];
      row += s;
      for (std::size_t b = 0; b < c; ++b) out[i * c + b] += s * V[j * c + b];
    }
    for (std::size_t b = 0; b < c; ++b) out[i * c + b] /= row + eps;
  }
  return out;
}

}  // namespace deflare
