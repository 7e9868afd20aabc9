#pragma once

// Photometric and geometric operations on single images [C, H, W].

#include <algorithm>
#include <cmath>
#include <vector>

#include "deflare/core/error.hpp"
#include "deflare/core/tensor.hpp"

namespace deflare::image {

using Image = Tensor<double>;

inline constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;

inline void check_image(const Image& x, const char* op) {
  if (x.rank() != 3 || x.dim(0) == 0 || x.dim(1) == 0 || x.dim(2) == 0) {
    throw DimensionError(std::string(op) + ": expected [C,H,W], got " + shape_str(x.shape()));
  }
}

inline void check_unit_range(const Image& x, const char* op) {
  for (double v : x.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DomainError(std::string(op) + ": pixel value " + std::to_string(v) + " outside [0,1]");
    }
  }
}

inline Image clip01(Image x) {
  for (double& v : x.data()) v = std::clamp(v, 0.0, 1.0);
  return x;
}

inline Image pow_elementwise(Image x, double exponent) {
  for (double& v : x.data()) v = v > 0 ? std::pow(v, exponent) : 0.0;
  return x;
}

// Luma of an RGB image as [1, H, W].
inline Image luma(const Image& x) {
  check_image(x, "luma");
  if (x.dim(0) != 3) throw DimensionError("luma: needs 3 channels");
  const std::size_t HW = x.dim(1) * x.dim(2);
  Image out(Shape{1, x.dim(1), x.dim(2)});
  for (std::size_t i = 0; i < HW; ++i) out[i] = kLumaR * x[i] + kLumaG * x[HW + i] + kLumaB * x[2 * HW + i];
  return out;
}

inline Image grayscale(const Image& x) {
  Image g = luma(x);
  const std::size_t HW = g.size();
  Image out(x.shape());
  for (std::size_t c = 0; c < 3; ++c) std::copy_n(g.data().begin(), HW, out.data().begin() + c * HW);
  return out;
}

inline Image hflip(const Image& x) {
  check_image(x, "hflip");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Image out(x.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) out[(c * H + h) * W + W - 1 - w] = x[(c * H + h) * W + w];
  return out;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0)) throw ConfigError("gaussian_kernel: sigma must be > 0");
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;
  return k;
}

// Separable Gaussian blur, clamp-to-edge boundary.
inline Image gaussian_blur(const Image& x, double sigma) {
  check_image(x, "gaussian_blur");
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const std::size_t C = x.dim(0);
  const int H = static_cast<int>(x.dim(1)), W = static_cast<int>(x.dim(2));
  Image tmp(x.shape()), out(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const double* src = x.data().data() + c * H * W;
    double* mid = tmp.data().data() + c * H * W;
    double* dst = out.data().data() + c * H * W;
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * src[h * W + std::clamp(w + i, 0, W - 1)];
        mid[h * W + w] = s;
      }
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * mid[std::clamp(h + i, 0, H - 1) * W + w];
        dst[h * W + w] = s;
      }
  }
  return out;
}

struct Affine {
  double rotation = 0;     // radians
  double shear = 0;        // radians, horizontal
  double scale = 1;
  double tx = 0, ty = 0;   // pixels
};

// Forward map about the image centre: p' = R * Sh * S * (p - c) + c + t.
// Output pixels pull from the inverse map with bilinear sampling; samples
// outside the canvas are zero.
inline Image affine_warp(const Image& x, const Affine& a) {
  check_image(x, "affine_warp");
  if (!(a.scale > 0)) throw ConfigError("affine_warp: scale must be > 0");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const double cx = 0.5 * (static_cast<double>(W) - 1), cy = 0.5 * (static_cast<double>(H) - 1);
  const double cr = std::cos(a.rotation), sr = std::sin(a.rotation), sh = std::tan(a.shear);
  // M = R * [[1, sh], [0, 1]] * s
  const double m00 = a.scale * cr, m01 = a.scale * (cr * sh - sr);
  const double m10 = a.scale * sr, m11 = a.scale * (sr * sh + cr);
  const double det = m00 * m11 - m01 * m10;
  const double i00 = m11 / det, i01 = -m01 / det, i10 = -m10 / det, i11 = m00 / det;
  Image out(x.shape());
  auto sample = [&](std::size_t c, long yy, long xx) {
    if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) return 0.0;
    return x[(c * H + static_cast<std::size_t>(yy)) * W + static_cast<std::size_t>(xx)];
  };
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w) {
      const double dx = static_cast<double>(w) - cx - a.tx, dy = static_cast<double>(h) - cy - a.ty;
      const double sx = i00 * dx + i01 * dy + cx, sy = i10 * dx + i11 * dy + cy;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      for (std::size_t c = 0; c < C; ++c) {
        out[(c * H + h) * W + w] = (1 - ay) * ((1 - ax) * sample(c, y0, x0) + ax * sample(c, y0, x0 + 1)) +
                                   ay * ((1 - ax) * sample(c, y0 + 1, x0) + ax * sample(c, y0 + 1, x0 + 1));
      }
    }
  return out;
}

struct Jitter {
  double brightness = 1, contrast = 1, saturation = 1;
};

// Multiplicative brightness, contrast about the mean luma, saturation about
// per-pixel luma; clipped after each stage.
inline Image color_jitter(const Image& x, const Jitter& j) {
  check_image(x, "color_jitter");
  Image y = x;
  for (double& v : y.data()) v *= j.brightness;
  y = clip01(std::move(y));
  if (j.contrast != 1.0) {
    const double m = luma(y).mean();
    for (double& v : y.data()) v = (v - m) * j.contrast + m;
    y = clip01(std::move(y));
  }
  if (j.saturation != 1.0) {
    const Image g = luma(y);
    const std::size_t HW = g.size();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < HW; ++i) {
        double& v = y[c * HW + i];
        v = (v - g[i]) * j.saturation + g[i];
      }
    y = clip01(std::move(y));
  }
  return y;
}

}  // namespace deflare::image
