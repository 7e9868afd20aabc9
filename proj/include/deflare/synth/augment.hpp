#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "deflare/synth/image_ops.hpp"
#include "deflare/synth/rng.hpp"

namespace deflare {

using image::Image;

struct Range {
  double lo = 0, hi = 1;
  double sample(Rng& rng) const { return rng.uniform(lo, hi); }
  bool contains(double v) const { return v >= lo && v <= hi; }
};

inline void to_json(nlohmann::json& j, const Range& r) { j = nlohmann::json::array({r.lo, r.hi}); }
inline void from_json(const nlohmann::json& j, Range& r) {
  r.lo = j.at(0).get<double>();
  r.hi = j.at(1).get<double>();
}

// Reference extent the paired-data translation range is quoted at.
inline constexpr double kReferenceExtent = 512.0;

struct AugmentationParams {
  Range gamma{1.8, 2.2};
  Range rotation{0.0, 2.0 * std::numbers::pi};
  Range translation{-300.0, 300.0};
  Range shear_deg{-20.0, 20.0};
  Range scale{0.8, 1.5};
  Range blur_sigma{0.1, 3.0};
  Range flare_offset{-0.02, 0.02};
  Range bg_rgb_scale{0.5, 1.2};
  Range flare_jitter{0.8, 1.2};
  double noise_var_scale = 0.01;  // sigma^2 ~ scale * chi2(dof)
  unsigned noise_dof = 1;
  double flip_prob = 0.5;
  bool noise = true;

  void validate() const {
    for (const auto& [name, r] : named_ranges()) {
      if (!(r->lo < r->hi)) throw ConfigError("augmentation range '" + name + "' needs lo < hi");
    }
    if (gamma.lo <= 0 || scale.lo <= 0 || blur_sigma.lo <= 0 || bg_rgb_scale.lo < 0) {
      throw ConfigError("augmentation gamma, scale and blur ranges must be positive");
    }
    if (!(flip_prob >= 0 && flip_prob <= 1)) throw ConfigError("flip_prob must be in [0,1]");
    if (!(noise_var_scale >= 0) || noise_dof == 0) throw ConfigError("noise law needs scale >= 0, dof >= 1");
  }

  // Translation scaled from the reference extent to `extent` pixels.
  AugmentationParams for_extent(std::size_t extent) const {
    AugmentationParams p = *this;
    const double t = std::floor(300.0 * static_cast<double>(extent) / kReferenceExtent);
    p.translation = {-t, t};
    return p;
  }

  std::array<std::pair<std::string, const Range*>, 9> named_ranges() const {
    return {{{"gamma", &gamma}, {"rotation", &rotation}, {"translation", &translation},
             {"shear_deg", &shear_deg}, {"scale", &scale}, {"blur_sigma", &blur_sigma},
             {"flare_offset", &flare_offset}, {"bg_rgb_scale", &bg_rgb_scale},
             {"flare_jitter", &flare_jitter}}};
  }
};

inline void to_json(nlohmann::json& j, const AugmentationParams& p) {
  j = {{"gamma", p.gamma}, {"rotation", p.rotation}, {"translation", p.translation},
       {"shear_deg", p.shear_deg}, {"scale", p.scale}, {"blur_sigma", p.blur_sigma},
       {"flare_offset", p.flare_offset}, {"bg_rgb_scale", p.bg_rgb_scale},
       {"flare_jitter", p.flare_jitter}, {"noise_var_scale", p.noise_var_scale},
       {"noise_dof", p.noise_dof}, {"flip_prob", p.flip_prob}, {"noise", p.noise}};
}

inline void from_json(const nlohmann::json& j, AugmentationParams& p) {
  auto range = [&](const char* key, Range& r) {
    if (j.contains(key)) r = j.at(key).get<Range>();
  };
  range("gamma", p.gamma);
  range("rotation", p.rotation);
  range("translation", p.translation);
  range("shear_deg", p.shear_deg);
  range("scale", p.scale);
  range("blur_sigma", p.blur_sigma);
  range("flare_offset", p.flare_offset);
  range("bg_rgb_scale", p.bg_rgb_scale);
  range("flare_jitter", p.flare_jitter);
  p.noise_var_scale = j.value("noise_var_scale", p.noise_var_scale);
  p.noise_dof = j.value("noise_dof", p.noise_dof);
  p.flip_prob = j.value("flip_prob", p.flip_prob);
  p.noise = j.value("noise", p.noise);
  p.validate();
}

// One realisation of the paired-data pipeline.
struct SynthDraw {
  double gamma = 2.0;
  image::Affine affine;
  double blur_sigma = 0;  // 0 disables the blur
  bool flip = false;
  double flare_offset = 0;
  image::Jitter flare_jitter;
  std::array<double, 3> bg_scale{1, 1, 1};
  double noise_var = 0;
  std::uint64_t noise_seed = 0;
};

// Fixed draw order so a seed pins down every parameter.
inline SynthDraw sample_synth_draw(const AugmentationParams& p, Rng& rng) {
  SynthDraw d;
  d.gamma = p.gamma.sample(rng);
  d.affine.rotation = p.rotation.sample(rng);
  d.affine.tx = p.translation.sample(rng);
  d.affine.ty = p.translation.sample(rng);
  d.affine.shear = p.shear_deg.sample(rng) * std::numbers::pi / 180.0;
  d.affine.scale = p.scale.sample(rng);
  d.blur_sigma = p.blur_sigma.sample(rng);
  d.flip = rng.bernoulli(p.flip_prob);
  d.flare_offset = p.flare_offset.sample(rng);
  d.flare_jitter = {p.flare_jitter.sample(rng), p.flare_jitter.sample(rng), p.flare_jitter.sample(rng)};
  for (double& s : d.bg_scale) s = p.bg_rgb_scale.sample(rng);
  d.noise_var = p.noise ? p.noise_var_scale * rng.chi_squared(p.noise_dof) : 0.0;
  d.noise_seed = rng.next_u64();
  return d;
}

struct LabeledPair {
  Image input;   // flare-corrupted, [3,H,W] in [0,1]
  Image target;  // flare-free, [3,H,W] in [0,1]
};

// Linear-light intermediates of one synthesis.
struct SynthLayers {
  Image flare;   // transformed flare component
  Image input;   // clip01(background' + flare')
  Image target;  // clip01(input - flare')
};

// Geometric and blur stages applied to a flare layer (linear light).
inline Image transform_flare(const Image& flare_linear, const SynthDraw& d) {
  Image f = image::affine_warp(flare_linear, d.affine);
  if (d.blur_sigma > 0) f = image::gaussian_blur(f, d.blur_sigma);
  if (d.flip) f = image::hflip(f);
  return f;
}

inline SynthLayers synthesize_linear(const Image& background, const Image& flare, const SynthDraw& d) {
  image::check_image(background, "synthesize_pair");
  if (background.dim(0) != 3 || flare.shape() != background.shape()) {
    throw DimensionError("synthesize_pair: background " + shape_str(background.shape()) + " flare " +
                         shape_str(flare.shape()));
  }
  image::check_unit_range(background, "synthesize_pair background");
  image::check_unit_range(flare, "synthesize_pair flare");

  Image f = transform_flare(image::pow_elementwise(flare, d.gamma), d);
  for (double& v : f.data()) v += d.flare_offset;
  f = image::color_jitter(image::clip01(std::move(f)), d.flare_jitter);

  Image bg = image::pow_elementwise(background, d.gamma);
  const std::size_t HW = bg.dim(1) * bg.dim(2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < HW; ++i) bg[c * HW + i] *= d.bg_scale[c];
  if (d.noise_var > 0) {
    Rng noise(d.noise_seed);
    const double sd = std::sqrt(d.noise_var);
    for (double& v : bg.data()) v += noise.normal(0.0, sd);
  }

  SynthLayers out{f, bg, Image(bg.shape())};
  for (std::size_t i = 0; i < bg.size(); ++i) out.input[i] = std::clamp(bg[i] + f[i], 0.0, 1.0);
  for (std::size_t i = 0; i < bg.size(); ++i) out.target[i] = std::clamp(out.input[i] - f[i], 0.0, 1.0);
  return out;
}

// Linearise, composite, subtract and re-encode with the same gamma.
inline LabeledPair synthesize_pair(const Image& background, const Image& flare, const SynthDraw& d) {
  SynthLayers l = synthesize_linear(background, flare, d);
  return {image::pow_elementwise(std::move(l.input), 1.0 / d.gamma),
          image::pow_elementwise(std::move(l.target), 1.0 / d.gamma)};
}

inline LabeledPair synthesize_pair(const Image& background, const Image& flare,
                                   const AugmentationParams& p, Rng& rng) {
  return synthesize_pair(background, flare, sample_synth_draw(p, rng));
}

struct StrongAugParams {
  Range jitter{0.8, 1.2};
  double grayscale_prob = 0.2;
  Range blur_sigma{0.1, 2.0};
};

inline void to_json(nlohmann::json& j, const StrongAugParams& p) {
  j = {{"jitter", p.jitter}, {"grayscale_prob", p.grayscale_prob}, {"blur_sigma", p.blur_sigma}};
}

inline void from_json(const nlohmann::json& j, StrongAugParams& p) {
  if (j.contains("jitter")) p.jitter = j.at("jitter").get<Range>();
  if (j.contains("blur_sigma")) p.blur_sigma = j.at("blur_sigma").get<Range>();
  p.grayscale_prob = j.value("grayscale_prob", p.grayscale_prob);
  if (!(p.jitter.lo < p.jitter.hi) || !(p.blur_sigma.lo < p.blur_sigma.hi) || p.blur_sigma.lo <= 0 ||
      !(p.grayscale_prob >= 0 && p.grayscale_prob <= 1)) {
    throw ConfigError("invalid strong augmentation parameters");
  }
}

struct StrongAugDraw {
  image::Jitter jitter;
  bool grayscale = false;
  double blur_sigma = 0;  // 0 disables the blur
};

inline StrongAugDraw sample_strong_draw(const StrongAugParams& p, Rng& rng) {
  StrongAugDraw d;
  d.jitter = {p.jitter.sample(rng), p.jitter.sample(rng), p.jitter.sample(rng)};
  d.grayscale = rng.bernoulli(p.grayscale_prob);
  d.blur_sigma = p.blur_sigma.sample(rng);
  return d;
}

// Photometric only: colour jitter, optional grayscale, Gaussian blur.
inline Image strong_augment(const Image& x, const StrongAugDraw& d) {
  image::check_image(x, "strong_augment");
  image::check_unit_range(x, "strong_augment");
  Image y = image::color_jitter(x, d.jitter);
  if (d.grayscale) y = image::grayscale(y);
  if (d.blur_sigma > 0) y = image::gaussian_blur(y, d.blur_sigma);
  return image::clip01(std::move(y));
}

inline Image strong_augment(const Image& x, const StrongAugParams& p, Rng& rng) {
  return strong_augment(x, sample_strong_draw(p, rng));
}

struct WeakView {
  Image image;
  bool flipped = false;
};

// Identity or horizontal flip with probability one half.
inline WeakView weak_augment(const Image& x, Rng& rng) {
  image::check_image(x, "weak_augment");
  image::check_unit_range(x, "weak_augment");
  const bool flip = rng.bernoulli(0.5);
  return {flip ? image::hflip(x) : x, flip};
}

inline LabeledPair mixup(const LabeledPair& a, const LabeledPair& b, double lambda) {
  if (a.input.shape() != b.input.shape() || a.target.shape() != b.target.shape() ||
      a.input.shape() != a.target.shape()) {
    throw DimensionError("mixup: pair shapes differ");
  }
  if (!(lambda >= 0 && lambda <= 1)) throw DomainError("mixup: lambda must be in [0,1]");
  LabeledPair out{Image(a.input.shape()), Image(a.target.shape())};
  for (std::size_t i = 0; i < a.input.size(); ++i) {
    out.input[i] = lambda * a.input[i] + (1 - lambda) * b.input[i];
    out.target[i] = lambda * a.target[i] + (1 - lambda) * b.target[i];
  }
  return out;
}

inline double sample_mixup_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0)) throw ConfigError("mixup alpha must be > 0");
  return rng.beta(alpha, alpha);
}

inline LabeledPair mixup(const LabeledPair& a, const LabeledPair& b, double alpha, Rng& rng) {
  return mixup(a, b, sample_mixup_lambda(alpha, rng));
}

}  // namespace deflare
