#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "deflare/synth/image_ops.hpp"

namespace deflare {

using image::Image;

// No-reference quality estimate of an image [3,H,W] in [0,1].
struct QualityScorer {
  std::string name;
  std::string version;
  std::function<double(const Image&)> score;

  double operator()(const Image& x) const { return score(x); }
};

struct ReferenceScoreParts {
  double sharpness;  // E / (E + 1e-3), E the mean squared Laplacian of luma
  double entropy;    // 64-bin luma histogram entropy / ln 64
  double unclipped;  // 1 - fraction of luma at <= 1/255 or >= 254/255
  double score;
};

inline ReferenceScoreParts reference_score_parts(const Image& x) {
  const Image y = image::luma(x);
  const std::size_t H = y.dim(1), W = y.dim(2);
  double energy = 0;
  std::size_t interior = 0;
  for (std::size_t h = 1; h + 1 < H; ++h)
    for (std::size_t w = 1; w + 1 < W; ++w) {
      const double lap = y[(h - 1) * W + w] + y[(h + 1) * W + w] + y[h * W + w - 1] +
                         y[h * W + w + 1] - 4 * y[h * W + w];
      energy += lap * lap;
      ++interior;
    }
  if (interior) energy /= static_cast<double>(interior);

  constexpr std::size_t kBins = 64;
  double hist[kBins] = {};
  std::size_t clipped = 0;
  for (double v : y.data()) {
    const double c = std::clamp(v, 0.0, 1.0);
    hist[std::min(kBins - 1, static_cast<std::size_t>(c * kBins))] += 1;
    if (c <= 1.0 / 255.0 || c >= 254.0 / 255.0) ++clipped;
  }
  const double n = static_cast<double>(y.size());
  double entropy = 0;
  for (double count : hist)
    if (count > 0) entropy -= count / n * std::log(count / n);

  ReferenceScoreParts p;
  p.sharpness = energy / (energy + 1e-3);
  p.entropy = entropy / std::log(static_cast<double>(kBins));
  p.unclipped = 1.0 - static_cast<double>(clipped) / n;
  p.score = std::clamp(100.0 * (0.5 * p.sharpness + 0.3 * p.entropy + 0.2 * p.unclipped), 0.0, 100.0);
  return p;
}

// Deterministic stand-in for a learned no-reference IQA model: rewards
// detail, tonal spread and unclipped pixels.
inline QualityScorer reference_scorer() {
  return {"reference-sharpness-entropy", "1",
          [](const Image& x) { return reference_score_parts(x).score; }};
}

}  // namespace deflare
