#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deflare/core/error.hpp"
#include "deflare/core/tensor.hpp"
#include "deflare/synth/image_ops.hpp"

namespace deflare {

inline constexpr double kPsnrCap = 100.0;

namespace detail {

inline void check_pair(const Tensor<double>& a, const Tensor<double>& b, const char* op) {
  if (a.shape() != b.shape() || a.empty()) {
    throw DimensionError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline double psnr_from_mse(double mse, double peak) {
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

}  // namespace detail

inline double psnr(const Tensor<double>& pred, const Tensor<double>& target, double peak = 1.0) {
  detail::check_pair(pred, target, "psnr");
  double se = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) se += (pred[i] - target[i]) * (pred[i] - target[i]);
  return detail::psnr_from_mse(se / static_cast<double>(pred.size()), peak);
}

// Binary region of an image.
struct RegionMask {
  std::string name;
  Tensor<double> mask;  // [1,H,W] or [H,W], nonzero = inside

  std::size_t count() const {
    std::size_t n = 0;
    for (double v : mask.data()) n += v != 0;
    return n;
  }
};

// PSNR with the MSE averaged over the masked pixels (all channels there).
inline double masked_psnr(const Tensor<double>& pred, const Tensor<double>& target,
                          const RegionMask& region, double peak = 1.0) {
  detail::check_pair(pred, target, "masked_psnr");
  if (pred.rank() != 3) throw DimensionError("masked_psnr: images must be [C,H,W]");
  const std::size_t C = pred.dim(0), HW = pred.dim(1) * pred.dim(2);
  if (region.mask.size() != HW) {
    throw DimensionError("masked_psnr: mask " + shape_str(region.mask.shape()) + " vs image " +
                         shape_str(pred.shape()));
  }
  double se = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < HW; ++i) {
    if (region.mask[i] == 0) continue;
    for (std::size_t c = 0; c < C; ++c) {
      const double d = pred[c * HW + i] - target[c * HW + i];
      se += d * d;
    }
    n += C;
  }
  if (n == 0) throw DomainError("masked_psnr: mask '" + region.name + "' has no positive pixel");
  return detail::psnr_from_mse(se / static_cast<double>(n), peak);
}

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

namespace detail {

inline std::vector<double> ssim_window(const SsimOptions& o) {
  std::vector<double> w(o.window);
  const double c = 0.5 * (static_cast<double>(o.window) - 1);
  double s = 0;
  for (std::size_t i = 0; i < o.window; ++i) {
    const double d = static_cast<double>(i) - c;
    s += w[i] = std::exp(-0.5 * d * d / (o.sigma * o.sigma));
  }
  for (double& v : w) v /= s;
  return w;
}

// Separable weighted sum over every fully-contained window: [H,W] -> [H-k+1, W-k+1].
inline std::vector<double> filter_valid(const std::vector<double>& x, std::size_t H, std::size_t W,
                                        const std::vector<double>& k) {
  const std::size_t n = k.size(), Ho = H - n + 1, Wo = W - n + 1;
  std::vector<double> rows(H * Wo), out(Ho * Wo);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < Wo; ++w) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * x[h * W + w + i];
      rows[h * Wo + w] = s;
    }
  for (std::size_t h = 0; h < Ho; ++h)
    for (std::size_t w = 0; w < Wo; ++w) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * rows[(h + i) * Wo + w];
      out[h * Wo + w] = s;
    }
  return out;
}

}  // namespace detail

// Mean local SSIM of the luma planes (single-channel images are used as is)
// with a Gaussian window over valid positions only.
inline double ssim(const Tensor<double>& pred, const Tensor<double>& target, const SsimOptions& o = {}) {
  detail::check_pair(pred, target, "ssim");
  if (pred.rank() != 3 || (pred.dim(0) != 1 && pred.dim(0) != 3)) {
    throw DimensionError("ssim: images must be [1|3,H,W], got " + shape_str(pred.shape()));
  }
  const std::size_t H = pred.dim(1), W = pred.dim(2);
  if (o.window == 0 || H < o.window || W < o.window) {
    throw DimensionError("ssim: image " + std::to_string(H) + "x" + std::to_string(W) +
                         " smaller than window " + std::to_string(o.window));
  }
  auto plane = [](const Tensor<double>& x) {
    const Tensor<double> y = x.dim(0) == 3 ? image::luma(x) : x;
    return std::vector<double>(y.data().begin(), y.data().end());
  };
  const std::vector<double> a = plane(pred), b = plane(target);
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto k = detail::ssim_window(o);
  const auto ma = detail::filter_valid(a, H, W, k), mb = detail::filter_valid(b, H, W, k);
  const auto saa = detail::filter_valid(aa, H, W, k), sbb = detail::filter_valid(bb, H, W, k);
  const auto sab = detail::filter_valid(ab, H, W, k);
  const double c1 = (o.k1 * o.range) * (o.k1 * o.range), c2 = (o.k2 * o.range) * (o.k2 * o.range);
  double total = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
    total += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) /
             ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(ma.size());
}

struct MetricsReport {
  double psnr_db = 0;
  double ssim = 0;
  std::map<std::string, double> masked_psnr;        // mean over images having that mask
  std::map<std::string, std::size_t> masked_count;  // images contributing per mask
  std::size_t image_count = 0;
};

inline void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = {{"psnr_db", r.psnr_db}, {"ssim", r.ssim}, {"masked_psnr", r.masked_psnr},
       {"masked_count", r.masked_count}, {"image_count", r.image_count}};
}

inline void from_json(const nlohmann::json& j, MetricsReport& r) {
  r.psnr_db = j.at("psnr_db").get<double>();
  r.ssim = j.at("ssim").get<double>();
  r.masked_psnr = j.value("masked_psnr", std::map<std::string, double>{});
  r.masked_count = j.value("masked_count", std::map<std::string, std::size_t>{});
  r.image_count = j.at("image_count").get<std::size_t>();
}

// Accumulates per-image metrics into dataset means. Masks with no positive
// pixel are skipped for that image.
class MetricsAccumulator {
 public:
  void add(const Tensor<double>& pred, const Tensor<double>& target,
           const std::vector<RegionMask>& masks = {}) {
    psnr_sum_ += psnr(pred, target);
    ssim_sum_ += ssim(pred, target);
    ++count_;
    for (const auto& m : masks) {
      if (m.count() == 0) continue;
      masked_sum_[m.name] += masked_psnr(pred, target, m);
      ++masked_count_[m.name];
    }
  }

  MetricsReport report() const {
    MetricsReport r;
    r.image_count = count_;
    if (count_ == 0) return r;
    r.psnr_db = psnr_sum_ / static_cast<double>(count_);
    r.ssim = ssim_sum_ / static_cast<double>(count_);
    for (const auto& [name, sum] : masked_sum_) {
      r.masked_psnr[name] = sum / static_cast<double>(masked_count_.at(name));
      r.masked_count[name] = masked_count_.at(name);
    }
    return r;
  }

 private:
  double psnr_sum_ = 0, ssim_sum_ = 0;
  std::size_t count_ = 0;
  std::map<std::string, double> masked_sum_;
  std::map<std::string, std::size_t> masked_count_;
};

}  // namespace deflare
