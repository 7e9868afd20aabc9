#pragma once

// Procedural backgrounds, flares and flare region masks.

#include <algorithm>
#include <cmath>
#include <numbers>

#include "deflare/synth/image_ops.hpp"
#include "deflare/synth/rng.hpp"

namespace deflare {

using image::Image;

// Two-colour gradient with a handful of discs and boxes and a sinusoidal
// texture, kept inside [0.05, 0.95].
inline Image procedural_background(std::size_t height, std::size_t width, Rng& rng) {
  if (height == 0 || width == 0) throw DimensionError("procedural_background: empty extent");
  Image out(Shape{3, height, width});
  const std::size_t HW = height * width;
  double top[3], bottom[3];
  for (int c = 0; c < 3; ++c) {
    top[c] = rng.uniform(0.1, 0.9);
    bottom[c] = rng.uniform(0.1, 0.9);
  }
  const double freq = rng.uniform(0.05, 0.4), phase = rng.uniform(0, 2 * std::numbers::pi);
  const double amp = rng.uniform(0.02, 0.12), angle = rng.uniform(0, std::numbers::pi);
  for (std::size_t h = 0; h < height; ++h)
    for (std::size_t w = 0; w < width; ++w) {
      const double t = static_cast<double>(h) / std::max<std::size_t>(1, height - 1);
      const double tex = amp * std::sin(freq * (std::cos(angle) * w + std::sin(angle) * h) + phase);
      for (int c = 0; c < 3; ++c) out[c * HW + h * width + w] = (1 - t) * top[c] + t * bottom[c] + tex;
    }
  const std::size_t shapes = 2 + rng.below(4);
  for (std::size_t s = 0; s < shapes; ++s) {
    const bool disc = rng.bernoulli(0.5);
    const double cy = rng.uniform(0, height), cx = rng.uniform(0, width);
    const double ry = rng.uniform(0.05, 0.3) * height, rx = rng.uniform(0.05, 0.3) * width;
    double color[3];
    for (double& v : color) v = rng.uniform(0.05, 0.95);
    for (std::size_t h = 0; h < height; ++h)
      for (std::size_t w = 0; w < width; ++w) {
        const double dy = (h - cy) / ry, dx = (w - cx) / rx;
        const bool inside = disc ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1 && std::abs(dy) <= 1;
        if (inside)
          for (int c = 0; c < 3; ++c) out[c * HW + h * width + w] = color[c];
      }
  }
  for (double& v : out.data()) v = std::clamp(v, 0.05, 0.95);
  return out;
}

struct FlareLayers {
  Image glare;   // soft halo around the source
  Image streak;  // thin radial rays
  Image combined() const {
    Image out = glare;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(1.0, out[i] + streak[i]);
    return out;
  }
};

// A tinted Gaussian glow plus a few one-pixel radial streaks on black.
inline FlareLayers procedural_flare(std::size_t height, std::size_t width, Rng& rng) {
  if (height == 0 || width == 0) throw DimensionError("procedural_flare: empty extent");
  const std::size_t HW = height * width;
  const double extent = static_cast<double>(std::min(height, width));
  FlareLayers out{Image(Shape{3, height, width}), Image(Shape{3, height, width})};
  const double cy = rng.uniform(0.25, 0.75) * height, cx = rng.uniform(0.25, 0.75) * width;
  const double sigma = rng.uniform(extent / 16, extent / 6);
  const double peak = rng.uniform(0.6, 1.0);
  double tint[3];
  for (double& t : tint) t = rng.uniform(0.6, 1.0);
  for (std::size_t h = 0; h < height; ++h)
    for (std::size_t w = 0; w < width; ++w) {
      const double r2 = (h - cy) * (h - cy) + (w - cx) * (w - cx);
      const double g = peak * std::exp(-0.5 * r2 / (sigma * sigma));
      for (int c = 0; c < 3; ++c) out.glare[c * HW + h * width + w] = std::min(1.0, g * tint[c]);
    }
  const std::size_t rays = 4 + rng.below(5);
  const double base_angle = rng.uniform(0, 2 * std::numbers::pi);
  for (std::size_t k = 0; k < rays; ++k) {
    const double angle = base_angle + 2 * std::numbers::pi * k / rays + rng.uniform(-0.2, 0.2);
    const double length = rng.uniform(extent / 4, extent / 2);
    const double strength = rng.uniform(0.5, 1.0);
    const double ux = std::cos(angle), uy = std::sin(angle);
    for (std::size_t h = 0; h < height; ++h)
      for (std::size_t w = 0; w < width; ++w) {
        const double dx = w - cx, dy = h - cy;
        const double along = dx * ux + dy * uy;
        if (along < 0 || along > length) continue;
        const double across = std::abs(-dx * uy + dy * ux);
        const double v = strength * (1 - along / length) * std::exp(-0.5 * across * across / 0.36);
        for (int c = 0; c < 3; ++c) {
          double& p = out.streak[c * HW + h * width + w];
          p = std::min(1.0, std::max(p, v * tint[c]));
        }
      }
  }
  return out;
}

inline constexpr double kGlareThreshold = 0.05;

// [1,H,W] 0/1: pixels where any channel of the flare layer exceeds 0.05.
inline Image glare_mask(const Image& flare, double threshold = kGlareThreshold) {
  image::check_image(flare, "glare_mask");
  const std::size_t C = flare.dim(0), HW = flare.dim(1) * flare.dim(2);
  Image m(Shape{1, flare.dim(1), flare.dim(2)});
  for (std::size_t i = 0; i < HW; ++i)
    for (std::size_t c = 0; c < C; ++c)
      if (flare[c * HW + i] > threshold) m[i] = 1.0;
  return m;
}

namespace detail {

// Binary erosion (min) or dilation (max) over a (2r+1)^2 square; outside the
// canvas counts as background for erosion.
inline Image morph(const Image& m, int r, bool erode) {
  const int H = static_cast<int>(m.dim(1)), W = static_cast<int>(m.dim(2));
  Image out(m.shape());
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      double v = erode ? 1.0 : 0.0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int y = h + dy, x = w + dx;
          const double s = (y < 0 || x < 0 || y >= H || x >= W) ? 0.0 : m[y * W + x];
          v = erode ? std::min(v, s) : std::max(v, s);
        }
      out[h * W + w] = v;
    }
  return out;
}

}  // namespace detail

// Thin structures of the glare mask: pixels removed by a morphological
// opening with a (2r+1)^2 square.
inline Image streak_mask(const Image& flare, int radius = 2, double threshold = kGlareThreshold) {
  const Image m = glare_mask(flare, threshold);
  const Image opened = detail::morph(detail::morph(m, radius, true), radius, false);
  Image out(m.shape());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] > 0 && opened[i] == 0 ? 1.0 : 0.0;
  return out;
}

}  // namespace deflare
