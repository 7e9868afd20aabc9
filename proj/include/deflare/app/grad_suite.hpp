#pragma once

// Central-difference checks over every differentiable op, block, model and
// loss, at points kept away from ReLU/clip/abs kinks.

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "deflare/core/grad_check.hpp"
#include "deflare/losses/losses.hpp"
#include "deflare/model/raliformer.hpp"

namespace deflare::app {

struct GradCase {
  std::string name;
  std::function<GradCheckReport()> run;
};

struct GradCaseResult {
  std::string name;
  GradCheckReport report;
  double seconds = 0;
  bool passed = false;
};

inline Tensor<double> uniform_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Magnitudes in [gap, 1] with random sign.
inline Tensor<double> away_from_zero(Shape shape, std::uint64_t seed, double gap = 0.05) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (double& v : t.data()) {
    const double m = rng.uniform(gap, 1.0);
    v = rng.bernoulli(0.5) ? m : -m;
  }
  return t;
}

namespace detail {

using V = Var<double>;
using Leaves = std::span<const V>;
using Fn = std::function<V(Tape<double>&, Leaves)>;

// sum(out * w) with a fixed random w, so every output entry matters.
inline V project(Tape<double>& t, V out, std::uint64_t seed) {
  return ops::sum_all(ops::mul(out, t.constant(uniform_tensor(out.shape(), seed))));
}

inline GradCase make_case(std::string name, Fn f, std::vector<Tensor<double>> points,
                          std::size_t max_coords = 0) {
  return {std::move(name), [f = std::move(f), points = std::move(points), max_coords] {
            GradCheckOptions o;
            o.max_coords_per_input = max_coords;
            return grad_check(f, points, o);
          }};
}

inline GradCase unary_case(std::string name, std::function<V(V)> op, Tensor<double> x) {
  return make_case(std::move(name), [op](Tape<double>& t, Leaves l) { return project(t, op(l[0]), 900); },
                   {std::move(x)});
}

inline ParamSet<double> random_model_params(const ModelConfig& cfg, std::uint64_t seed, double scale) {
  ParamSet<double> p = init_params<double>(cfg, seed);
  std::uint64_t s = seed;
  for (auto& [name, value] : p) value = uniform_tensor(value.shape(), ++s * 7919, -scale, scale);
  return p;
}

// Model parameters as leaves after the image leaf.
inline GradCase model_case(std::string name, const ModelConfig& cfg, Shape input, bool features_only,
                           std::size_t max_coords) {
  const ParamSet<double> params = random_model_params(cfg, 11, 0.4);
  std::vector<std::string> names;
  std::vector<Tensor<double>> points{uniform_tensor(std::move(input), 65, 0, 1)};
  for (const auto& [n, v] : params) {
    names.push_back(n);
    points.push_back(v);
  }
  return make_case(
      std::move(name),
      [cfg, names, features_only](Tape<double>& t, Leaves l) {
        BoundParams<double> b;
        for (std::size_t i = 0; i < names.size(); ++i) b.emplace(names[i], l[i + 1]);
        V o = features_only ? encoder_features(l[0], b, cfg) : raliformer_forward(l[0], b, cfg);
        return project(t, o, 66);
      },
      std::move(points), max_coords);
}

inline Tensor<double> clip_safe(Shape s, std::uint64_t seed) {
  Tensor<double> t = uniform_tensor(std::move(s), seed, -0.5, 1.5);
  for (double& v : t.data()) {
    if (std::abs(v) < 0.05) v = 0.2;
    if (std::abs(v - 1) < 0.05) v = 0.8;
  }
  return t;
}

}  // namespace detail

inline std::vector<GradCase> gradient_suite() {
  using namespace detail;
  std::vector<GradCase> cs;
  auto bin = [&](std::string name, std::function<V(V, V)> op, Tensor<double> b) {
    cs.push_back(make_case(std::move(name), [op](Tape<double>& t, Leaves l) { return project(t, op(l[0], l[1]), 901); },
                           {uniform_tensor({3, 4}, 1), std::move(b)}));
  };
  bin("add", [](V a, V b) { return ops::add(a, b); }, uniform_tensor({3, 4}, 2));
  bin("sub", [](V a, V b) { return ops::sub(a, b); }, uniform_tensor({3, 4}, 3));
  bin("mul", [](V a, V b) { return ops::mul(a, b); }, uniform_tensor({3, 4}, 4));
  bin("div", [](V a, V b) { return ops::div(a, b); }, uniform_tensor({3, 4}, 5, 0.5, 1.5));
  bin("add_broadcast", [](V a, V b) { return ops::add(a, b); }, uniform_tensor({1, 4}, 6));
  cs.push_back(unary_case("scale", [](V x) { return ops::scale(x, 1.7); }, uniform_tensor({5}, 7)));
  cs.push_back(unary_case("add_scalar", [](V x) { return ops::add_scalar(x, 0.3); }, uniform_tensor({5}, 8)));
  cs.push_back(unary_case("elu", [](V x) { return ops::elu(x); }, away_from_zero({4, 4}, 9)));
  cs.push_back(unary_case("relu", [](V x) { return ops::relu(x); }, away_from_zero({4, 4}, 10)));
  cs.push_back(unary_case("sigmoid", [](V x) { return ops::sigmoid(x); }, uniform_tensor({4, 4}, 11, -3, 3)));
  cs.push_back(unary_case("clip01", [](V x) { return ops::clip01(x); }, clip_safe({4, 4}, 12)));
  cs.push_back(unary_case("square", [](V x) { return ops::square(x); }, uniform_tensor({6}, 13)));
  cs.push_back(unary_case("reshape", [](V x) { return ops::reshape(x, Shape{2, 6}); }, uniform_tensor({3, 4}, 14)));
  cs.push_back(unary_case("sum_all", [](V x) { return ops::sum_all(x); }, uniform_tensor({3, 4}, 15)));
  cs.push_back(unary_case("mean_all", [](V x) { return ops::mean_all(x); }, uniform_tensor({3, 4}, 16)));
  cs.push_back(unary_case("transpose", [](V x) { return ops::transpose(x); }, uniform_tensor({3, 5}, 17)));
  bin("matmul", [](V a, V b) { return ops::matmul(a, b); }, uniform_tensor({4, 2}, 18));
  cs.push_back(make_case(
      "conv2d", [](Tape<double>& t, Leaves l) { return project(t, ops::conv2d(l[0], l[1], {2, 1}), 902); },
      {uniform_tensor({2, 3, 6, 5}, 19), uniform_tensor({4, 3, 3, 3}, 20)}));
  cs.push_back(make_case(
      "depthwise_conv2d",
      [](Tape<double>& t, Leaves l) { return project(t, ops::depthwise_conv2d(l[0], l[1]), 903); },
      {uniform_tensor({2, 3, 5, 6}, 21), uniform_tensor({3, 3, 1}, 22)}));
  cs.push_back(unary_case("global_avg_pool", [](V x) { return ops::global_avg_pool(x); }, uniform_tensor({2, 3, 4, 4}, 23)));
  cs.push_back(unary_case("avg_pool2d", [](V x) { return ops::avg_pool2d(x, 2); }, uniform_tensor({1, 2, 4, 6}, 24)));
  cs.push_back(unary_case("upsample_nearest2x", [](V x) { return ops::upsample_nearest2x(x); }, uniform_tensor({1, 2, 3, 3}, 25)));
  cs.push_back(unary_case("gather_batch", [](V x) { return ops::gather_batch(x, {2, 0, 2}); }, uniform_tensor({3, 2, 2}, 26)));
  cs.push_back(unary_case("unfold_patches", [](V x) { return ops::unfold_patches(x, 2, 1); }, uniform_tensor({1, 2, 4, 4}, 27)));
  cs.push_back(unary_case("slice_channels", [](V x) { return ops::slice_channels(x, 1, 3); }, uniform_tensor({2, 4, 2, 2}, 28)));

  cs.push_back(make_case(
      "relina_core", [](Tape<double>& t, Leaves l) { return project(t, relina_core(l[0], l[1], l[2], 1e-6), 904); },
      {uniform_tensor({7, 3}, 29), uniform_tensor({7, 3}, 30), uniform_tensor({7, 2}, 31)}));
  cs.push_back(make_case(
      "relina_nchw",
      [](Tape<double>& t, Leaves l) { return project(t, relina_nchw(l[0], l[1], l[2], 2, 1e-6), 905); },
      {uniform_tensor({2, 4, 3, 3}, 32), uniform_tensor({2, 4, 3, 3}, 33), uniform_tensor({2, 4, 3, 3}, 34)}));
  cs.push_back(make_case(
      "relina_block",
      [](Tape<double>& t, Leaves l) {
        return project(t, relina_block(l[0], l[1], l[2], l[3], l[4], l[5], 2, 1e-6), 906);
      },
      {uniform_tensor({1, 4, 6, 6}, 35), uniform_tensor({4, 4, 1, 1}, 36), uniform_tensor({4, 4, 1, 1}, 37),
       uniform_tensor({4, 4, 1, 1}, 38), uniform_tensor({4, 3, 3}, 39), uniform_tensor({4, 4, 1, 1}, 40)}));
  {
    // Hidden pre-activations kept away from the ReLU kink.
    Tensor<double> x = uniform_tensor({2, 4, 3, 3}, 41, 0.1, 1.0);
    Tensor<double> w1 = away_from_zero({4, 2}, 42, 0.2);
    for (std::size_t j = 0; j < 2; ++j) w1[j] = w1[2 + j] = w1[4 + j] = w1[6 + j] = j ? -0.6 : 0.6;
    cs.push_back(make_case(
        "cab", [](Tape<double>& t, Leaves l) { return project(t, cab(l[0], l[1], l[2]), 907); },
        {x, w1, uniform_tensor({2, 4}, 43)}));
  }
  cs.push_back(make_case(
      "desm", [](Tape<double>& t, Leaves l) { return project(t, desm(l[0], l[1], l[2], l[3], l[4]), 908); },
      {uniform_tensor({1, 4, 6, 6}, 44), uniform_tensor({8, 4, 1, 1}, 45), uniform_tensor({4, 1, 3}, 46),
       uniform_tensor({4, 3, 1}, 47), uniform_tensor({4, 4, 1, 1}, 48)}));
  {
    ModelConfig cfg;
    cfg.base_dim = 4;
    const ParamSet<double> params = random_model_params(cfg, 5, 0.5);
    std::vector<std::string> names;
    std::vector<Tensor<double>> points{uniform_tensor({1, 4, 5, 5}, 49)};
    for (const auto& [n, v] : params)
      if (n.starts_with("enc0.blk0.")) {
        names.push_back(n);
        points.push_back(v);
      }
    cs.push_back(make_case(
        "pscblock",
        [cfg, names](Tape<double>& t, Leaves l) {
          BoundParams<double> b;
          for (std::size_t i = 0; i < names.size(); ++i) b.emplace(names[i], l[i + 1]);
          return project(t, pscblock(l[0], b, "enc0.blk0.", cfg), 909);
        },
        std::move(points)));
  }
  {
    ModelConfig cfg;
    cfg.base_dim = 4;
    cs.push_back(model_case("raliformer_forward", cfg, {1, 3, 8, 8}, false, 24));
    cs.push_back(model_case("encoder_features", cfg, {1, 3, 8, 8}, true, 24));
  }

  // Losses: pred and target differ by at least 0.05 per entry (L1 kinks).
  const Tensor<double> target = uniform_tensor({2, 3, 8, 8}, 50, 0.2, 0.8);
  Tensor<double> pred = target;
  {
    const Tensor<double> d = away_from_zero(target.shape(), 51, 0.05);
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] += 0.2 * d[i] / std::abs(d[i]) + 0.1 * d[i];
  }
  auto loss_case = [&](std::string name, std::function<V(Tape<double>&, V, V)> f) {
    cs.push_back(make_case(
        std::move(name), [f, target](Tape<double>& t, Leaves l) { return f(t, l[0], t.constant(target)); },
        {pred}, 64));
  };
  loss_case("l1_loss", [](Tape<double>&, V p, V y) { return l1_loss(p, y); });
  loss_case("fft_loss", [](Tape<double>&, V p, V y) { return fft_loss(p, y); });
  loss_case("perceptual_loss", [](Tape<double>&, V p, V y) { return perceptual_loss(p, y, pyramid_extractor<double>()); });
  loss_case("supervised_loss",
            [](Tape<double>&, V p, V y) { return supervised_loss(p, y, LossWeights{}, pyramid_extractor<double>()).total; });
  cs.push_back(make_case(
      "contrastive_loss",
      [](Tape<double>&, Leaves l) { return contrastive_loss(l[0], l[1], l[2], 0.2); },
      {uniform_tensor({5, 6}, 52), uniform_tensor({5, 6}, 53), uniform_tensor({5, 3, 6}, 54)}));
  {
    const Tensor<double> corrupted = uniform_tensor({2, 3, 8, 8}, 55, 0, 1);
    cs.push_back(make_case(
        "unsupervised_loss",
        [corrupted, target](Tape<double>& t, Leaves l) {
          FeatureMap<double> proj = [](V x) { return ops::avg_pool2d(x, 2); };
          return unsupervised_loss(l[0], t.constant(target), t.constant(corrupted), {true, true},
                                   LossWeights{}, PatchGrid{2, 2}, proj, 2)
              .total;
        },
        {pred}, 64));
    cs.push_back(make_case(
        "total_loss",
        [corrupted, target](Tape<double>& t, Leaves l) {
          LossWeights w;
          w.unsup = 0.5;
          FeatureMap<double> proj = [](V x) { return ops::avg_pool2d(x, 2); };
          V y = t.constant(target);
          V sup = supervised_loss(l[0], y, w, pyramid_extractor<double>()).total;
          V unsup = unsupervised_loss(l[0], y, t.constant(corrupted), {true, false}, w, PatchGrid{2, 2}, proj).total;
          return total_loss(sup, unsup, w);
        },
        {pred}, 64));
  }
  return cs;
}

inline std::vector<GradCaseResult> run_gradient_suite(double tolerance = 1e-4,
                                                      const std::string& filter = "") {
  std::vector<GradCaseResult> out;
  for (const auto& c : gradient_suite()) {
    if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
    const auto t0 = std::chrono::steady_clock::now();
    GradCaseResult r{c.name, c.run(), 0, false};
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.passed = r.report.max_rel_error < tolerance;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace deflare::app
