#pragma once

// Paired and unpaired flare datasets built from background and flare sources,
// either procedural or supplied images cropped to a square extent.

#include <cstdio>
#include <string>
#include <vector>

#include "deflare/synth/augment.hpp"
#include "deflare/synth/procedural.hpp"

namespace deflare {

struct SynthSample {
  std::string id;
  Image input;
  Image target;
  Image glare;   // [1,H,W] 0/1
  Image streak;  // [1,H,W] 0/1
};

struct UnpairedSample {
  std::string id;
  Image image;
};

struct SynthDataset {
  std::vector<SynthSample> labeled;
  std::vector<UnpairedSample> unlabeled;
};

inline std::string sample_id(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%05zu", prefix, i);
  return buf;
}

// Image sources. Empty lists select procedural generation.
struct SynthSources {
  std::vector<Image> backgrounds;
  std::vector<Image> flares;
};

inline Image random_crop(const Image& x, std::size_t extent, Rng& rng) {
  image::check_image(x, "random_crop");
  if (x.dim(1) < extent || x.dim(2) < extent) {
    throw DimensionError("source image " + shape_str(x.shape()) + " smaller than extent " + std::to_string(extent));
  }
  const std::size_t oy = rng.below(x.dim(1) - extent + 1), ox = rng.below(x.dim(2) - extent + 1);
  Image out(Shape{x.dim(0), extent, extent});
  for (std::size_t c = 0; c < x.dim(0); ++c)
    for (std::size_t h = 0; h < extent; ++h)
      for (std::size_t w = 0; w < extent; ++w)
        out[(c * extent + h) * extent + w] = x[(c * x.dim(1) + oy + h) * x.dim(2) + ox + w];
  return out;
}

namespace detail {

inline Image pick_background(const SynthSources& s, std::size_t index, std::size_t extent, Rng& rng) {
  if (s.backgrounds.empty()) return procedural_background(extent, extent, rng);
  return random_crop(s.backgrounds[index % s.backgrounds.size()], extent, rng);
}

inline Image pick_flare(const SynthSources& s, std::size_t extent, Rng& rng) {
  if (s.flares.empty()) return procedural_flare(extent, extent, rng).combined();
  return random_crop(s.flares[rng.below(s.flares.size())], extent, rng);
}

inline SynthSample make_pair(const SynthSources& s, std::size_t bg_index, std::string id, std::size_t extent,
                             const AugmentationParams& p, Rng rng) {
  const Image bg = pick_background(s, bg_index, extent, rng);
  const Image flare = pick_flare(s, extent, rng);
  const SynthDraw d = sample_synth_draw(p, rng);
  SynthLayers l = synthesize_linear(bg, flare, d);
  return {std::move(id), image::pow_elementwise(l.input, 1.0 / d.gamma),
          image::pow_elementwise(l.target, 1.0 / d.gamma), glare_mask(l.flare), streak_mask(l.flare)};
}

}  // namespace detail

// Labeled and unlabeled samples draw from separate streams and, with supplied
// backgrounds, from disjoint background indices where the pool allows.
inline SynthDataset synthesize_dataset(std::size_t labeled, std::size_t unlabeled, std::size_t extent,
                                       std::uint64_t seed, const AugmentationParams& params,
                                       const SynthSources& sources = {}) {
  if (extent == 0) throw ConfigError("extent must be > 0");
  params.validate();
  const AugmentationParams p = params.for_extent(extent);
  const Rng root(seed);
  SynthDataset out;
  for (std::size_t i = 0; i < labeled; ++i) {
    out.labeled.push_back(detail::make_pair(sources, i, sample_id('l', i), extent, p, root.fork(0).fork(i)));
  }
  for (std::size_t i = 0; i < unlabeled; ++i) {
    SynthSample s = detail::make_pair(sources, labeled + i, sample_id('u', i), extent, p, root.fork(1).fork(i));
    out.unlabeled.push_back({std::move(s.id), std::move(s.input)});
  }
  return out;
}

}  // namespace deflare
