#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "deflare/io/png.hpp"
#include "deflare/synth/augment.hpp"
#include "deflare/synth/procedural.hpp"
#include "support/test_util.hpp"

namespace deflare {
namespace {

using testing::random_tensor;

Image random_image(std::size_t H, std::size_t W, std::uint64_t seed, double lo = 0, double hi = 1) {
  return random_tensor({3, H, W}, seed, lo, hi);
}

SynthDraw identity_draw() {
  SynthDraw d;
  d.gamma = 2.0;
  return d;
}

TEST(Rng, SameSeedSameStreamAndCounterResume) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(42, a.counter());
  EXPECT_EQ(c.next_u64(), a.next_u64());
  EXPECT_NE(Rng(1).next_u64(), Rng(2).next_u64());
}

TEST(Rng, DistributionMomentsAreSane) {
  Rng r(3);
  double m = 0, chi = 0, beta = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    m += r.normal();
    chi += r.chi_squared(1);
    beta += r.beta(2.0, 2.0);
  }
  EXPECT_NEAR(m / n, 0.0, 0.03);
  EXPECT_NEAR(chi / n, 1.0, 0.05);
  EXPECT_NEAR(beta / n, 0.5, 0.01);
}

TEST(AugmentationParams, TenThousandDrawsStayInRange) {
  const AugmentationParams p = AugmentationParams{}.for_extent(64);
  EXPECT_EQ(p.translation.hi, 37.0);
  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const SynthDraw d = sample_synth_draw(p, rng);
    ASSERT_TRUE(p.gamma.contains(d.gamma));
    ASSERT_TRUE(p.rotation.contains(d.affine.rotation));
    ASSERT_TRUE(p.translation.contains(d.affine.tx));
    ASSERT_TRUE(p.translation.contains(d.affine.ty));
    ASSERT_TRUE(p.shear_deg.contains(d.affine.shear * 180.0 / std::numbers::pi));
    ASSERT_TRUE(p.scale.contains(d.affine.scale));
    ASSERT_TRUE(p.blur_sigma.contains(d.blur_sigma));
    ASSERT_TRUE(p.flare_offset.contains(d.flare_offset));
    ASSERT_TRUE(p.flare_jitter.contains(d.flare_jitter.brightness));
    ASSERT_TRUE(p.flare_jitter.contains(d.flare_jitter.contrast));
    ASSERT_TRUE(p.flare_jitter.contains(d.flare_jitter.saturation));
    for (double s : d.bg_scale) ASSERT_TRUE(p.bg_rgb_scale.contains(s));
    ASSERT_GE(d.noise_var, 0.0);
  }
  StrongAugParams sp;
  for (int i = 0; i < 10000; ++i) {
    const StrongAugDraw d = sample_strong_draw(sp, rng);
    ASSERT_TRUE(sp.jitter.contains(d.jitter.brightness));
    ASSERT_TRUE(sp.jitter.contains(d.jitter.contrast));
    ASSERT_TRUE(sp.jitter.contains(d.jitter.saturation));
    ASSERT_TRUE(sp.blur_sigma.contains(d.blur_sigma));
  }
}

TEST(AugmentationParams, ValidationAndJson) {
  AugmentationParams p;
  p.gamma = {2.2, 1.8};
  EXPECT_THROW(p.validate(), ConfigError);
  nlohmann::json j = AugmentationParams{};
  EXPECT_EQ(j.get<AugmentationParams>().scale.hi, 1.5);
}

TEST(SynthesizePair, NullFlareRoundTripsBackground) {
  Image bg = random_image(16, 16, 6);
  LabeledPair pair = synthesize_pair(bg, Image(bg.shape()), identity_draw());
  EXPECT_LT(max_abs_diff(pair.input, bg), 1e-6);
  EXPECT_LT(max_abs_diff(pair.target, bg), 1e-6);
}

TEST(SynthesizePair, SingleBrightPixelLocalizes) {
  Image bg = random_image(16, 16, 7, 0.1, 0.5);
  Image flare(bg.shape());
  for (std::size_t c = 0; c < 3; ++c) flare[c * 256 + 5 * 16 + 9] = 0.8;
  SynthDraw d = identity_draw();
  LabeledPair pair = synthesize_pair(bg, flare, d);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 256; ++i) {
      const double diff = pair.input[c * 256 + i] - pair.target[c * 256 + i];
      if (i == 5 * 16 + 9) {
        // Direct compositing oracle in linear light.
        const double lin = std::pow(bg[c * 256 + i], 2.0);
        EXPECT_NEAR(pair.input[c * 256 + i], std::sqrt(std::min(1.0, lin + 0.64)), 1e-12);
        EXPECT_GT(diff, 0.1);
      } else {
        EXPECT_NEAR(diff, 0.0, 1e-12);
      }
    }
}

TEST(SynthesizePair, DeterministicAndInRange) {
  const AugmentationParams p = AugmentationParams{}.for_extent(32);
  Rng src(8);
  Image bg = procedural_background(32, 32, src);
  Image flare = procedural_flare(32, 32, src).combined();
  Rng r1(9), r2(9);
  LabeledPair a = synthesize_pair(bg, flare, p, r1), b = synthesize_pair(bg, flare, p, r2);
  EXPECT_EQ(a.input, b.input);
  EXPECT_EQ(a.target, b.target);
  for (double v : a.input.data()) ASSERT_TRUE(v >= 0 && v <= 1);
  for (double v : a.target.data()) ASSERT_TRUE(v >= 0 && v <= 1);
}

TEST(SynthesizePair, TargetNeverExceedsInputWithoutNoise) {
  AugmentationParams p = AugmentationParams{}.for_extent(32);
  p.noise = false;
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    Image bg = procedural_background(32, 32, rng);
    Image flare = procedural_flare(32, 32, rng).combined();
    SynthLayers l = synthesize_linear(bg, flare, sample_synth_draw(p, rng));
    for (std::size_t i = 0; i < l.input.size(); ++i) ASSERT_LE(l.target[i], l.input[i] + 1e-6);
  }
}

TEST(SynthesizePair, RejectsOutOfRangeInputs) {
  Image bg = random_image(8, 8, 11);
  Image flare(bg.shape());
  bg[3] = 1.5;
  EXPECT_THROW(synthesize_pair(bg, flare, identity_draw()), DomainError);
  EXPECT_THROW(synthesize_pair(random_image(8, 8, 12), Image(Shape{3, 8, 9}), identity_draw()),
               DimensionError);
}

TEST(StrongAugment, IdentityLimit) {
  Image x = random_image(16, 16, 13);
  StrongAugDraw d;
  d.blur_sigma = 1e-3;
  EXPECT_LT(max_abs_diff(strong_augment(x, d), x), 1e-3);
}

TEST(StrongAugment, GrayscaleIdempotentOnGray) {
  Image g = image::grayscale(random_image(8, 8, 14));
  EXPECT_LT(max_abs_diff(image::grayscale(g), g), 1e-15);
}

TEST(StrongAugment, StaysInUnitRange) {
  Rng rng(15);
  StrongAugParams p;
  Image x = random_image(12, 12, 16);
  for (int i = 0; i < 1000; ++i) {
    Image y = strong_augment(x, p, rng);
    ASSERT_GE(y.min(), 0.0);
    ASSERT_LE(y.max(), 1.0);
  }
}

TEST(StrongAugment, MarkerPixelNeverMoves) {
  Rng rng(17);
  StrongAugParams p;
  for (int i = 0; i < 100; ++i) {
    Image x(Shape{3, 15, 17}, 0.1);
    for (std::size_t c = 0; c < 3; ++c) x[c * 255 + 4 * 17 + 11] = 0.9;
    Image y = strong_augment(x, p, rng);
    std::size_t arg = 0;
    for (std::size_t j = 0; j < 255; ++j)
      if (y[j] > y[arg]) arg = j;
    ASSERT_EQ(arg, 4u * 17 + 11);
  }
}

TEST(WeakAugment, FlipIsInvolutionAndNonTrivial) {
  Image x = random_image(8, 9, 18);
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Rng a(seed), b(seed);
    WeakView once = weak_augment(x, a);
    WeakView twice = weak_augment(once.image, b);
    EXPECT_EQ(twice.image, x);
    EXPECT_EQ(once.flipped, twice.flipped);
  }
  EXPECT_NE(image::hflip(x), x);
  EXPECT_EQ(image::hflip(image::hflip(x)), x);
}

TEST(WeakAugment, FlipPreservesChannelMeans) {
  Image x = random_image(8, 9, 19);
  Image y = image::hflip(x);
  for (std::size_t c = 0; c < 3; ++c) {
    double a = 0, b = 0;
    for (std::size_t i = 0; i < 72; ++i) {
      a += x[c * 72 + i];
      b += y[c * 72 + i];
    }
    // A reversed summation order can differ in the last bit; compare
    // sorted sums for exactness.
    std::vector<double> xs(x.data().begin() + c * 72, x.data().begin() + (c + 1) * 72);
    std::vector<double> ys(y.data().begin() + c * 72, y.data().begin() + (c + 1) * 72);
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    EXPECT_EQ(xs, ys);
    EXPECT_NEAR(a, b, 1e-12);
  }
}

TEST(Mixup, EndpointsMidpointAndConvexity) {
  LabeledPair a{random_image(4, 4, 20), random_image(4, 4, 21)};
  LabeledPair b{random_image(4, 4, 22), random_image(4, 4, 23)};
  LabeledPair one = mixup(a, b, 1.0);
  EXPECT_EQ(one.input, a.input);
  EXPECT_EQ(one.target, a.target);
  LabeledPair zeros{Image(Shape{3, 4, 4}), Image(Shape{3, 4, 4})};
  LabeledPair ones{Image(Shape{3, 4, 4}, 1.0), Image(Shape{3, 4, 4}, 1.0)};
  LabeledPair half = mixup(zeros, ones, 0.5);
  for (double v : half.input.data()) EXPECT_EQ(v, 0.5);
  Rng rng(24);
  for (int i = 0; i < 200; ++i) {
    LabeledPair m = mixup(a, b, 0.4, rng);
    ASSERT_GE(m.input.min(), 0.0);
    ASSERT_LE(m.input.max(), 1.0);
    ASSERT_GE(m.target.min(), 0.0);
    ASSERT_LE(m.target.max(), 1.0);
  }
  EXPECT_THROW(mixup(a, LabeledPair{random_image(4, 5, 1), random_image(4, 5, 2)}, 0.5), DimensionError);
  EXPECT_THROW(sample_mixup_lambda(0.0, rng), ConfigError);
}

TEST(ImageOps, AffineIdentityAndTranslation) {
  Image x = random_image(8, 8, 25);
  EXPECT_LT(max_abs_diff(image::affine_warp(x, {}), x), 1e-12);
  image::Affine t;
  t.tx = 2;
  Image y = image::affine_warp(x, t);
  for (std::size_t h = 0; h < 8; ++h)
    for (std::size_t w = 2; w < 8; ++w) EXPECT_NEAR(y[h * 8 + w], x[h * 8 + w - 2], 1e-12);
  for (std::size_t h = 0; h < 8; ++h) EXPECT_EQ(y[h * 8], 0.0);
}

TEST(ImageOps, BlurPreservesConstantsAndMass) {
  Image c(Shape{3, 9, 9}, 0.4);
  EXPECT_LT(max_abs_diff(image::gaussian_blur(c, 1.3), c), 1e-12);
  const auto k = image::gaussian_kernel(0.7);
  double s = 0;
  for (double v : k) s += v;
  EXPECT_NEAR(s, 1.0, 1e-15);
}

TEST(Procedural, SourcesAreDeterministicAndInRange) {
  Rng a(26), b(26);
  Image bg = procedural_background(32, 32, a);
  EXPECT_EQ(bg, procedural_background(32, 32, b));
  EXPECT_GE(bg.min(), 0.05);
  EXPECT_LE(bg.max(), 0.95);
  FlareLayers f = procedural_flare(32, 32, a);
  EXPECT_GE(f.combined().min(), 0.0);
  EXPECT_LE(f.combined().max(), 1.0);
  EXPECT_GT(f.glare.max(), 0.3);
}

TEST(Masks, StreakMaskPicksThinStructures) {
  Image flare(Shape{3, 20, 20});
  // 7x7 blob plus a one-pixel horizontal line.
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t h = 2; h < 9; ++h)
      for (std::size_t w = 2; w < 9; ++w) flare[c * 400 + h * 20 + w] = 0.5;
    for (std::size_t w = 10; w < 19; ++w) flare[c * 400 + 15 * 20 + w] = 0.5;
  }
  Image g = glare_mask(flare), s = streak_mask(flare);
  EXPECT_EQ(g.sum(), 49.0 + 9.0);
  EXPECT_EQ(s.sum(), 9.0);
  EXPECT_EQ(s[15 * 20 + 12], 1.0);
  EXPECT_EQ(s[5 * 20 + 5], 0.0);
}

TEST(Png, RoundTripIsQuantizedExactly) {
  const auto dir = std::filesystem::temp_directory_path() / "deflare_png_test";
  std::filesystem::create_directories(dir);
  Image x = random_image(5, 7, 27);
  io::write_png(dir / "x.png", x);
  EXPECT_EQ(io::read_png(dir / "x.png"), io::quantize8(x));
  Image m(Shape{1, 5, 7});
  m[3] = 1.0;
  io::write_png(dir / "m.png", m);
  EXPECT_EQ(io::read_png(dir / "m.png", 1), m);
  EXPECT_THROW(io::read_png(dir / "missing.png"), IoError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace deflare
