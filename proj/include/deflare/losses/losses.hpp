#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deflare/core/fft.hpp"
#include "deflare/core/ops.hpp"

namespace deflare {

struct LossWeights {
  double l1 = 1.0;
  double perceptual = 0.1;
  double fft = 0.1;
  double contrastive = 0.1;
  double unsup = 1.0;  // eta: unsupervised weight in the total objective
  double tau = 0.2;    // contrastive temperature

  void validate() const {
    for (double w : {l1, perceptual, fft, contrastive, unsup}) {
      if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
    }
    if (!(tau > 0) || !std::isfinite(tau)) throw ConfigError("contrastive temperature must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"lambda1", w.l1}, {"lambda2", w.perceptual}, {"lambda3", w.fft},
       {"lambda_cr", w.contrastive}, {"eta", w.unsup}, {"tau", w.tau}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
  w.l1 = j.value("lambda1", w.l1);
  w.perceptual = j.value("lambda2", w.perceptual);
  w.fft = j.value("lambda3", w.fft);
  w.contrastive = j.value("lambda_cr", w.contrastive);
  w.unsup = j.value("eta", w.unsup);
  w.tau = j.value("tau", w.tau);
  w.validate();
}

// Image -> list of feature maps compared level by level.
template <class T>
using FeatureExtractor = std::function<std::vector<Var<T>>(Var<T>)>;

// Image -> single feature map (the contrastive projector).
template <class T>
using FeatureMap = std::function<Var<T>(Var<T>)>;

template <class T>
FeatureExtractor<T> identity_extractor() {
  return [](Var<T> x) { return std::vector<Var<T>>{x}; };
}

// 2x and 4x average-pooled copies of the image.
template <class T>
FeatureExtractor<T> pyramid_extractor() {
  return [](Var<T> x) { return std::vector<Var<T>>{ops::avg_pool2d(x, 2), ops::avg_pool2d(x, 4)}; };
}

namespace detail {

inline void check_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

template <class T>
T sign(T x) {
  return static_cast<T>((x > 0) - (x < 0));
}

}  // namespace detail

template <class T>
Var<T> l1_loss(Var<T> pred, Var<T> target) {
  detail::check_same(pred.shape(), target.shape(), "l1_loss");
  const Tensor<T>& P = pred.value();
  const Tensor<T>& Y = target.value();
  if (P.empty()) throw DimensionError("l1_loss: empty input");
  const T inv = T{1} / static_cast<T>(P.size());
  T acc{0};
  for (std::size_t i = 0; i < P.size(); ++i) acc += std::abs(P[i] - Y[i]);
  return pred.tape->record(
      "l1_loss", Tensor<T>(Shape{1}, acc * inv), {pred, target},
      [&P, &Y, inv](const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
        for (std::size_t i = 0; i < P.size(); ++i) {
          const T d = detail::sign(P[i] - Y[i]) * inv * g[0];
          if (grads[0]) (*grads[0])[i] += d;
          if (grads[1]) (*grads[1])[i] -= d;
        }
      });
}

// Mean over complex bins of |dRe| + |dIm| between the unnormalized spectra of
// every channel plane.
template <class T>
Var<T> fft_loss(Var<T> pred, Var<T> target) {
  detail::check_same(pred.shape(), target.shape(), "fft_loss");
  const Tensor<T>& P = pred.value();
  if (P.rank() != 4 || P.empty()) throw DimensionError("fft_loss: needs non-empty NCHW");
  Tensor<T> diff(P.shape());
  for (std::size_t i = 0; i < P.size(); ++i) diff[i] = P[i] - target.value()[i];
  Spectrum<T> s = fft2(diff);
  const T inv = T{1} / static_cast<T>(P.size());
  T acc{0};
  for (std::size_t i = 0; i < P.size(); ++i) acc += std::abs(s.re[i]) + std::abs(s.im[i]);
  for (std::size_t i = 0; i < P.size(); ++i) {
    s.re[i] = detail::sign(s.re[i]);
    s.im[i] = detail::sign(s.im[i]);
  }
  // d/dx of sum |Re X| + |Im X| is Re(sum_k (sRe + i sIm) e^{+i theta}), an
  // unnormalized inverse transform of the sign pattern.
  const T plane = static_cast<T>(P.dim(2) * P.dim(3));
  return pred.tape->record(
      "fft_loss", Tensor<T>(Shape{1}, acc * inv), {pred, target},
      [signs = std::move(s), inv, plane](const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
        const Spectrum<T> back = ifft2(signs);
        for (std::size_t i = 0; i < back.re.size(); ++i) {
          const T d = back.re[i] * plane * inv * g[0];
          if (grads[0]) (*grads[0])[i] += d;
          if (grads[1]) (*grads[1])[i] -= d;
        }
      });
}

// Mean over levels of the per-level L1 distance.
template <class T>
Var<T> perceptual_loss(Var<T> pred, Var<T> target, const FeatureExtractor<T>& extractor) {
  detail::check_same(pred.shape(), target.shape(), "perceptual_loss");
  std::vector<Var<T>> fp = extractor(pred);
  std::vector<Var<T>> ft = extractor(target);
  if (fp.empty() || fp.size() != ft.size()) {
    throw DimensionError("perceptual_loss: extractor returned mismatched levels");
  }
  Var<T> sum = l1_loss(fp[0], ft[0]);
  for (std::size_t l = 1; l < fp.size(); ++l) sum = ops::add(sum, l1_loss(fp[l], ft[l]));
  return fp.size() == 1 ? sum : ops::scale(sum, T{1} / static_cast<T>(fp.size()));
}

// Row vectors of one feature map with their grid origins.
template <class T>
struct PatchVectors {
  Var<T> vectors;  // [P, D]
  std::vector<ops::PatchCoord> coords;
};

struct PatchGrid {
  std::size_t size = 4;
  std::size_t stride = 4;
};

template <class T>
PatchVectors<T> extract_patches(Var<T> image, PatchGrid grid, const FeatureMap<T>& projector) {
  Var<T> f = projector ? projector(image) : image;
  if (f.shape().size() != 4) throw DimensionError("extract_patches: projector must return NCHW");
  auto coords = ops::patch_grid(f.shape()[0], f.shape()[2], f.shape()[3], grid.size, grid.stride);
  return {ops::unfold_patches(f, grid.size, grid.stride), std::move(coords)};
}

template <class T>
struct PatchSet {
  Var<T> anchors;    // [P, D]
  Var<T> positives;  // [P, D]
  Var<T> negatives;  // [P, K, D]
  std::vector<ops::PatchCoord> coords;
};

// Anchors from the prediction, positives from the pseudo-label and the
// co-located negative from the corrupted input. With negatives > 1 the extra
// negatives come from the next coordinates (cyclically) of the same input.
template <class T>
PatchSet<T> build_patch_set(Var<T> pred, Var<T> pseudo, Var<T> corrupted, PatchGrid grid,
                            const FeatureMap<T>& projector, std::size_t negatives = 1) {
  detail::check_same(pred.shape(), pseudo.shape(), "build_patch_set");
  detail::check_same(pred.shape(), corrupted.shape(), "build_patch_set");
  PatchVectors<T> a = extract_patches(pred, grid, projector);
  PatchVectors<T> p = extract_patches(pseudo, grid, projector);
  PatchVectors<T> n = extract_patches(corrupted, grid, projector);
  const std::size_t P = a.coords.size(), D = a.vectors.shape()[1];
  if (negatives == 0 || negatives > P) {
    throw ConfigError("contrastive negatives must be in [1, " + std::to_string(P) + "]");
  }
  std::vector<std::size_t> index;
  index.reserve(P * negatives);
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t k = 0; k < negatives; ++k) index.push_back((i + k) % P);
  Var<T> neg = ops::reshape(ops::gather_batch(n.vectors, std::move(index)), Shape{P, negatives, D});
  return {a.vectors, p.vectors, neg, std::move(a.coords)};
}

namespace detail {

inline constexpr double kNormFloor = 1e-12;

// Cosine similarity with the norms floored; accumulates s * d(cos)/da and
// s * d(cos)/db when the gradient pointers are set.
template <class T>
T cosine(const T* a, const T* b, std::size_t D, T s = 0, T* ga = nullptr, T* gb = nullptr) {
  T dot{0}, na2{0}, nb2{0};
  for (std::size_t i = 0; i < D; ++i) {
    dot += a[i] * b[i];
    na2 += a[i] * a[i];
    nb2 += b[i] * b[i];
  }
  const T na_raw = std::sqrt(na2), nb_raw = std::sqrt(nb2);
  const T floor = static_cast<T>(kNormFloor);
  const T na = std::max(na_raw, floor), nb = std::max(nb_raw, floor);
  const T c = dot / (na * nb);
  if (ga) {
    const T ka = na_raw > floor ? c / (na * na) : T{0};
    for (std::size_t i = 0; i < D; ++i) ga[i] += s * (b[i] / (na * nb) - ka * a[i]);
  }
  if (gb) {
    const T kb = nb_raw > floor ? c / (nb * nb) : T{0};
    for (std::size_t i = 0; i < D; ++i) gb[i] += s * (a[i] / (na * nb) - kb * b[i]);
  }
  return c;
}

}  // namespace detail

// mean_i -log( e^{sim(a,+)/tau} / (e^{sim(a,+)/tau} + sum_k e^{sim(a,-k)/tau}) )
template <class T>
Var<T> contrastive_loss(Var<T> anchors, Var<T> positives, Var<T> negatives, T tau) {
  const Tensor<T>& A = anchors.value();
  const Tensor<T>& Pp = positives.value();
  const Tensor<T>& Ng = negatives.value();
  if (A.rank() != 2 || Pp.shape() != A.shape() || Ng.rank() != 3 || Ng.dim(0) != A.dim(0) ||
      Ng.dim(2) != A.dim(1) || A.dim(0) == 0) {
    throw DimensionError("contrastive_loss: anchors " + shape_str(A.shape()) + " positives " +
                         shape_str(Pp.shape()) + " negatives " + shape_str(Ng.shape()));
  }
  if (Ng.dim(1) == 0) throw DimensionError("contrastive_loss: needs at least one negative");
  if (!(tau > 0)) throw ConfigError("contrastive_loss: tau must be > 0");
  const std::size_t P = A.dim(0), K = Ng.dim(1), D = A.dim(1);

  // Per anchor: logits l_0 = sim(a,+)/tau, l_k = sim(a,-k)/tau; loss is
  // logsumexp(l) - l_0 and its softmax gives the logit gradients.
  std::vector<T> soft(P * (K + 1));
  T total{0};
  for (std::size_t i = 0; i < P; ++i) {
    T* w = soft.data() + i * (K + 1);
    const T* a = A.data().data() + i * D;
    w[0] = detail::cosine(a, Pp.data().data() + i * D, D) / tau;
    for (std::size_t k = 0; k < K; ++k) {
      w[k + 1] = detail::cosine(a, Ng.data().data() + (i * K + k) * D, D) / tau;
    }
    const T m = *std::max_element(w, w + K + 1);
    T z{0};
    for (std::size_t k = 0; k <= K; ++k) z += std::exp(w[k] - m);
    total += m + std::log(z) - w[0];
    for (std::size_t k = 0; k <= K; ++k) w[k] = std::exp(w[k] - m) / z;
  }
  const T inv = T{1} / static_cast<T>(P);
  return anchors.tape->record(
      "contrastive_loss", Tensor<T>(Shape{1}, total * inv), {anchors, positives, negatives},
      [&A, &Pp, &Ng, soft = std::move(soft), P, K, D, tau, inv](
          const Tensor<T>& g, std::span<Tensor<T>* const> grads) {
        auto ptr = [](Tensor<T>* t, std::size_t off) { return t ? t->data().data() + off : nullptr; };
        for (std::size_t i = 0; i < P; ++i) {
          const T* w = soft.data() + i * (K + 1);
          const T* a = A.data().data() + i * D;
          const T scale = g[0] * inv / tau;
          detail::cosine(a, Pp.data().data() + i * D, D, scale * (w[0] - T{1}),
                         ptr(grads[0], i * D), ptr(grads[1], i * D));
          for (std::size_t k = 0; k < K; ++k) {
            detail::cosine(a, Ng.data().data() + (i * K + k) * D, D, scale * w[k + 1],
                           ptr(grads[0], i * D), ptr(grads[2], (i * K + k) * D));
          }
        }
      });
}

template <class T>
Var<T> contrastive_loss(const PatchSet<T>& patches, T tau) {
  return contrastive_loss(patches.anchors, patches.positives, patches.negatives, tau);
}

// A weighted objective with its unweighted components.
template <class T>
struct LossTerms {
  Var<T> total;
  std::map<std::string, double> parts;
};

template <class T>
LossTerms<T> supervised_loss(Var<T> pred, Var<T> target, const LossWeights& w,
                             const FeatureExtractor<T>& extractor) {
  Var<T> l1 = l1_loss(pred, target);
  Var<T> per = perceptual_loss(pred, target, extractor);
  Var<T> fft = fft_loss(pred, target);
  Var<T> total = ops::add(ops::add(ops::scale(l1, static_cast<T>(w.l1)),
                                   ops::scale(per, static_cast<T>(w.perceptual))),
                          ops::scale(fft, static_cast<T>(w.fft)));
  return {total,
          {{"l1", static_cast<double>(l1.value()[0])},
           {"perceptual", static_cast<double>(per.value()[0])},
           {"fft", static_cast<double>(fft.value()[0])},
           {"supervised", static_cast<double>(total.value()[0])}}};
}

// lambda1 * L1(pred, pseudo) + lambda_cr * contrastive. `patches` may be null
// when lambda_cr is zero.
template <class T>
LossTerms<T> unsupervised_loss(Var<T> pred, Var<T> pseudo, const PatchSet<T>* patches,
                               const LossWeights& w) {
  Var<T> l1 = l1_loss(pred, pseudo);
  Var<T> total = ops::scale(l1, static_cast<T>(w.l1));
  std::map<std::string, double> parts{{"unsup_l1", static_cast<double>(l1.value()[0])}};
  if (w.contrastive > 0) {
    if (!patches) throw ConfigError("unsupervised_loss: contrastive weight set without patches");
    Var<T> cr = contrastive_loss(*patches, static_cast<T>(w.tau));
    total = ops::add(total, ops::scale(cr, static_cast<T>(w.contrastive)));
    parts["contrastive"] = static_cast<double>(cr.value()[0]);
  }
  parts["unsupervised"] = static_cast<double>(total.value()[0]);
  return {total, std::move(parts)};
}

// Masked form over a batch: only samples whose pseudo-label passed validity
// gating contribute. With nothing valid the result is a zero constant that
// carries no gradient.
template <class T>
LossTerms<T> unsupervised_loss(Var<T> pred, Var<T> pseudo, Var<T> corrupted,
                               const std::vector<bool>& valid, const LossWeights& w,
                               PatchGrid grid, const FeatureMap<T>& projector,
                               std::size_t negatives = 1) {
  if (valid.size() != pred.shape()[0]) throw DimensionError("unsupervised_loss: mask size");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < valid.size(); ++i)
    if (valid[i]) keep.push_back(i);
  if (keep.empty()) {
    return {pred.tape->constant(Tensor<T>(Shape{1})), {{"unsupervised", 0.0}, {"valid", 0.0}}};
  }
  if (keep.size() < valid.size()) {
    pred = ops::gather_batch(pred, keep);
    pseudo = ops::gather_batch(pseudo, keep);
    corrupted = ops::gather_batch(corrupted, keep);
  }
  std::optional<PatchSet<T>> patches;
  if (w.contrastive > 0) patches = build_patch_set(pred, pseudo, corrupted, grid, projector, negatives);
  LossTerms<T> out = unsupervised_loss(pred, pseudo, patches ? &*patches : nullptr, w);
  out.parts["valid"] = static_cast<double>(keep.size());
  return out;
}

// sup + eta * unsup
template <class T>
Var<T> total_loss(Var<T> sup, Var<T> unsup, const LossWeights& w) {
  return ops::add(sup, ops::scale(unsup, static_cast<T>(w.unsup)));
}

}  // namespace deflare
