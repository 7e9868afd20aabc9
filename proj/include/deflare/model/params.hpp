#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "deflare/core/tape.hpp"
#include "deflare/model/config.hpp"
#include "deflare/synth/rng.hpp"

namespace deflare {

// Named parameter tensors, ordered by name.
template <class T>
using ParamSet = std::map<std::string, Tensor<T>>;

template <class T>
using BoundParams = std::map<std::string, Var<T>>;

template <class T>
BoundParams<T> bind_params(Tape<T>& tape, const ParamSet<T>& params, bool requires_grad) {
  BoundParams<T> out;
  for (const auto& [name, value] : params) out.emplace(name, tape.leaf(value, requires_grad));
  return out;
}

template <class T>
Var<T> param(const BoundParams<T>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ConfigError("missing model parameter '" + name + "'");
  return it->second;
}

template <class T>
bool shape_congruent(const ParamSet<T>& a, const ParamSet<T>& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.shape() != ib->second.shape()) return false;
  }
  return true;
}

namespace detail {

template <class T>
struct ParamBuilder {
  ParamSet<T>& out;
  Rng& rng;

  // Zero-mean uniform in +-1/sqrt(fan_in).
  void uniform(const std::string& name, Shape shape, std::size_t fan_in) {
    Tensor<T> t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    out.emplace(name, std::move(t));
  }
  void zeros(const std::string& name, Shape shape) { out.emplace(name, Tensor<T>(std::move(shape))); }
};

template <class T>
void add_block_params(ParamBuilder<T>& b, const std::string& prefix, std::size_t C,
                      const ModelConfig& cfg) {
  const std::size_t hidden = cfg.desm_expand * C;
  const std::size_t half = hidden / 2;
  const std::size_t red = C / cfg.cab_reduction;
  b.uniform(prefix + "attn.wq", {C, C, 1, 1}, C);
  b.uniform(prefix + "attn.wk", {C, C, 1, 1}, C);
  b.uniform(prefix + "attn.wv", {C, C, 1, 1}, C);
  b.uniform(prefix + "attn.dw", {C, 3, 3}, 9);
  b.zeros(prefix + "attn.wo", {C, C, 1, 1});
  b.uniform(prefix + "cab.w1", {C, red}, C);
  b.uniform(prefix + "cab.w2", {red, C}, red);
  b.zeros(prefix + "cab.proj", {C, C, 1, 1});
  b.uniform(prefix + "desm.expand", {hidden, C, 1, 1}, C);
  b.uniform(prefix + "desm.dw_h", {half, 1, 3}, 3);
  b.uniform(prefix + "desm.dw_v", {half, 3, 1}, 3);
  b.zeros(prefix + "desm.proj", {C, half, 1, 1});
}

}  // namespace detail

inline std::string block_prefix(const std::string& level, std::size_t block) {
  return level + ".blk" + std::to_string(block) + ".";
}

// Fresh generator parameters. Residual-branch output projections start at
// zero so every PSCBlock is initially the identity; with input_residual the
// output projection is zero too and the whole model starts as the identity.
template <class T>
ParamSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamSet<T> params;
  Rng rng(seed);
  detail::ParamBuilder<T> b{params, rng};
  const std::size_t S = cfg.stages;
  const std::size_t C0 = cfg.channels(0);
  b.uniform("in.weight", {C0, 3, 3, 3}, 27);
  b.zeros("in.bias", {1, C0, 1, 1});
  for (std::size_t s = 0; s + 1 < S; ++s) {
    const std::size_t C = cfg.channels(s), Cn = cfg.channels(s + 1);
    for (std::size_t k = 0; k < cfg.blocks_per_stage; ++k) {
      detail::add_block_params(b, block_prefix("enc" + std::to_string(s), k), C, cfg);
      detail::add_block_params(b, block_prefix("dec" + std::to_string(s), k), C, cfg);
    }
    b.uniform("down" + std::to_string(s) + ".weight", {Cn, C, 3, 3}, 9 * C);
    b.zeros("down" + std::to_string(s) + ".bias", {1, Cn, 1, 1});
    b.uniform("up" + std::to_string(s) + ".weight", {C, Cn, 1, 1}, Cn);
    b.zeros("up" + std::to_string(s) + ".bias", {1, C, 1, 1});
  }
  for (std::size_t k = 0; k < cfg.blocks_per_stage; ++k) {
    detail::add_block_params(b, block_prefix("mid", k), cfg.channels(S - 1), cfg);
  }
  if (cfg.input_residual) {
    b.zeros("out.weight", {3, C0, 3, 3});
  } else {
    b.uniform("out.weight", {3, C0, 3, 3}, 9 * C0);
  }
  b.zeros("out.bias", {1, 3, 1, 1});
  return params;
}

}  // namespace deflare
