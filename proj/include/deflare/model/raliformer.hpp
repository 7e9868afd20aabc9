#pragma once

// U-shaped restoration generator built from PSCBlocks:
//
//   block(X):  Y = X + attn(X) + chan(X);  out = Y + desm(Y)
//
// attn is rank-enhanced linear attention, chan a channel-attention gate and
// desm a gated feed-forward with directional depthwise convolutions.

#include <string>
#include <vector>

#include "deflare/core/ops.hpp"
#include "deflare/model/attention.hpp"
#include "deflare/model/config.hpp"
#include "deflare/model/params.hpp"

namespace deflare {

template <class T>
Var<T> conv1x1(Var<T> x, Var<T> w) {
  return ops::conv2d(x, w);
}

// X: [N, C, H, W]. wq/wk/wv/wo: [C, C, 1, 1]; dw: [C, kh, kw].
template <class T>
Var<T> relina_block(Var<T> x, Var<T> wq, Var<T> wk, Var<T> wv, Var<T> dw, Var<T> wo,
                    std::size_t heads, T eps) {
  Var<T> q = conv1x1(x, wq);
  Var<T> k = conv1x1(x, wk);
  Var<T> v = conv1x1(x, wv);
  Var<T> v_refined = ops::add(v, ops::depthwise_conv2d(v, dw));
  return conv1x1(relina_nchw(q, k, v_refined, heads, eps), wo);
}

// Channel gate X * sigmoid(W2 relu(W1 z)), z the per-channel spatial mean.
// w1: [C, C/r], w2: [C/r, C].
template <class T>
Var<T> cab(Var<T> x, Var<T> w1, Var<T> w2) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || w1.shape().size() != 2 || w2.shape().size() != 2 ||
      w1.shape()[0] != xs[1] || w2.shape()[1] != xs[1] || w1.shape()[1] != w2.shape()[0]) {
    throw DimensionError("cab: input " + shape_str(xs) + " w1 " + shape_str(w1.shape()) +
                         " w2 " + shape_str(w2.shape()));
  }
  Var<T> z = ops::global_avg_pool(x);
  Var<T> gate = ops::sigmoid(ops::matmul(ops::relu(ops::matmul(z, w1)), w2));
  return ops::mul(x, ops::reshape(gate, Shape{xs[0], xs[1], 1, 1}));
}

inline std::size_t cab_hidden(std::size_t channels, std::size_t reduction) {
  if (reduction == 0 || channels % reduction) {
    throw ConfigError("channel attention reduction " + std::to_string(reduction) +
                      " does not divide " + std::to_string(channels) + " channels");
  }
  return channels / reduction;
}

// expand -> split -> (1x3 + 3x1 depthwise on the first half) * second half -> project.
template <class T>
Var<T> desm(Var<T> x, Var<T> expand, Var<T> dw_h, Var<T> dw_v, Var<T> proj) {
  Var<T> e = conv1x1(x, expand);
  const std::size_t hidden = e.shape()[1];
  if (hidden % 2) throw DimensionError("desm: expanded width must be even");
  Var<T> x1 = ops::slice_channels(e, 0, hidden / 2);
  Var<T> x2 = ops::slice_channels(e, hidden / 2, hidden);
  Var<T> directional = ops::add(ops::depthwise_conv2d(x1, dw_h), ops::depthwise_conv2d(x1, dw_v));
  return conv1x1(ops::mul(directional, x2), proj);
}

template <class T>
Var<T> pscblock(Var<T> x, const BoundParams<T>& p, const std::string& prefix,
                const ModelConfig& cfg) {
  auto w = [&](const char* name) { return param(p, prefix + name); };
  Var<T> attn = relina_block(x, w("attn.wq"), w("attn.wk"), w("attn.wv"), w("attn.dw"),
                             w("attn.wo"), cfg.heads, static_cast<T>(cfg.attn_eps));
  Var<T> chan = conv1x1(cab(x, w("cab.w1"), w("cab.w2")), w("cab.proj"));
  Var<T> y = ops::add(ops::add(x, attn), chan);
  return ops::add(y, desm(y, w("desm.expand"), w("desm.dw_h"), w("desm.dw_v"), w("desm.proj")));
}

namespace detail {

template <class T>
Var<T> run_level(Var<T> x, const BoundParams<T>& p, const std::string& level,
                 const ModelConfig& cfg) {
  for (std::size_t k = 0; k < cfg.blocks_per_stage; ++k) x = pscblock(x, p, block_prefix(level, k), cfg);
  return x;
}

template <class T>
Var<T> conv_bias(Var<T> x, const BoundParams<T>& p, const std::string& name,
                 ops::Conv2dOptions opt) {
  return ops::add(ops::conv2d(x, param(p, name + ".weight"), opt), param(p, name + ".bias"));
}

template <class T>
void check_input(const Shape& s, const ModelConfig& cfg) {
  if (s.size() != 4 || s[1] != 3) throw DimensionError("model input must be [N,3,H,W], got " + shape_str(s));
  const std::size_t div = std::size_t{1} << (cfg.stages - 1);
  if (s[2] % div || s[3] % div || s[2] == 0 || s[3] == 0) {
    throw ConfigError("spatial extents " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                      " must be divisible by " + std::to_string(div));
  }
}

}  // namespace detail

// Features of the deepest encoder level before the bottleneck (the level-0
// embedding followed by its blocks when there is a single stage).
template <class T>
Var<T> encoder_features(Var<T> image, const BoundParams<T>& p, const ModelConfig& cfg) {
  detail::check_input<T>(image.shape(), cfg);
  Var<T> x = detail::conv_bias(image, p, "in", {1, 1});
  if (cfg.stages == 1) return detail::run_level(x, p, "mid", cfg);
  for (std::size_t s = 0; s + 1 < cfg.stages; ++s) {
    x = detail::run_level(x, p, "enc" + std::to_string(s), cfg);
    if (s + 2 == cfg.stages) break;
    x = detail::conv_bias(x, p, "down" + std::to_string(s), {2, 1});
  }
  return x;
}

// Training-mode forward (no output clipping).
template <class T>
Var<T> raliformer_forward(Var<T> image, const BoundParams<T>& p, const ModelConfig& cfg) {
  detail::check_input<T>(image.shape(), cfg);
  Var<T> x = detail::conv_bias(image, p, "in", {1, 1});
  std::vector<Var<T>> skips;
  for (std::size_t s = 0; s + 1 < cfg.stages; ++s) {
    x = detail::run_level(x, p, "enc" + std::to_string(s), cfg);
    skips.push_back(x);
    x = detail::conv_bias(x, p, "down" + std::to_string(s), {2, 1});
  }
  x = detail::run_level(x, p, "mid", cfg);
  for (std::size_t s = cfg.stages - 1; s-- > 0;) {
    x = detail::conv_bias(ops::upsample_nearest2x(x), p, "up" + std::to_string(s), {1, 0});
    x = ops::add(x, skips[s]);
    x = detail::run_level(x, p, "dec" + std::to_string(s), cfg);
  }
  Var<T> out = detail::conv_bias(x, p, "out", {1, 1});
  return cfg.input_residual ? ops::add(out, image) : out;
}

// Inference: forward on a throwaway tape, clipped to [0, 1].
template <class T>
Tensor<T> raliformer_infer(const Tensor<T>& image, const ParamSet<T>& params,
                           const ModelConfig& cfg) {
  Tape<T> tape;
  BoundParams<T> p = bind_params(tape, params, false);
  Var<T> out = ops::clip01(raliformer_forward(tape.constant(image), p, cfg));
  return out.value();
}

}  // namespace deflare
