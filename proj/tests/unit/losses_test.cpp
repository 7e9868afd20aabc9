#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "deflare/core/grad_check.hpp"
#include "deflare/losses/losses.hpp"
#include "support/test_util.hpp"

namespace deflare {
namespace {

using testing::random_tensor;
using V = Var<double>;
using Leaves = std::span<const V>;

Tensor<double> offset(const Tensor<double>& x, double c) {
  Tensor<double> y = x;
  for (double& v : y.data()) v += c;
  return y;
}

double value(V v) { return v.value()[0]; }

// Direct O(N^2) DFT of each plane, mean over bins of |dRe| + |dIm|.
double fft_loss_oracle(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t planes = a.dim(0) * a.dim(1), H = a.dim(2), W = a.dim(3);
  double acc = 0;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t u = 0; u < H; ++u)
      for (std::size_t v = 0; v < W; ++v) {
        double re = 0, im = 0;
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            const double d = a[(p * H + y) * W + x] - b[(p * H + y) * W + x];
            const double th = 2 * std::numbers::pi * (double(u * y) / H + double(v * x) / W);
            re += d * std::cos(th);
            im -= d * std::sin(th);
          }
        acc += std::abs(re) + std::abs(im);
      }
  return acc / static_cast<double>(a.size());
}

double cosine_oracle(const double* a, const double* b, std::size_t D) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < D; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double contrastive_oracle(const Tensor<double>& a, const Tensor<double>& p, const Tensor<double>& n,
                          double tau) {
  const std::size_t P = a.dim(0), K = n.dim(1), D = a.dim(1);
  double total = 0;
  for (std::size_t i = 0; i < P; ++i) {
    const double pos = std::exp(cosine_oracle(&a[i * D], &p[i * D], D) / tau);
    double neg = 0;
    for (std::size_t k = 0; k < K; ++k) neg += std::exp(cosine_oracle(&a[i * D], &n[(i * K + k) * D], D) / tau);
    total += -std::log(pos / (pos + neg));
  }
  return total / static_cast<double>(P);
}

double contrastive(const Tensor<double>& a, const Tensor<double>& p, const Tensor<double>& n,
                   double tau) {
  Tape<double> t;
  return value(contrastive_loss(t.constant(a), t.constant(p), t.constant(n), tau));
}

TEST(L1Loss, ZeroAndConstantOffset) {
  Tape<double> t;
  Tensor<double> x = random_tensor({2, 3, 4, 4}, 1, 0, 1);
  EXPECT_EQ(value(l1_loss(t.constant(x), t.constant(x))), 0.0);
  EXPECT_NEAR(value(l1_loss(t.constant(offset(x, 0.5)), t.constant(x))), 0.5, 1e-12);
  EXPECT_THROW(l1_loss(t.constant(x), t.constant(Tensor<double>({2, 3, 4, 5}))), DimensionError);
}

TEST(L1Loss, GradientAwayFromZeros) {
  auto r = grad_check([](Tape<double>&, Leaves x) { return l1_loss(x[0], x[1]); },
                      {random_tensor({1, 2, 4, 4}, 2, 0.3, 1.0), random_tensor({1, 2, 4, 4}, 3, -1.0, 0.2)});
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(FftLoss, IdenticalIsZeroAndSymmetric) {
  Tape<double> t;
  Tensor<double> a = random_tensor({1, 3, 8, 8}, 4), b = random_tensor({1, 3, 8, 8}, 5);
  EXPECT_EQ(value(fft_loss(t.constant(a), t.constant(a))), 0.0);
  EXPECT_NEAR(value(fft_loss(t.constant(a), t.constant(b))), value(fft_loss(t.constant(b), t.constant(a))),
              1e-12);
}

TEST(FftLoss, ConstantOffsetMatchesDirectDft) {
  Tape<double> t;
  for (Shape s : {Shape{1, 3, 8, 8}, Shape{2, 1, 6, 10}}) {
    Tensor<double> x = random_tensor(s, 6, 0, 1);
    const double c = -0.3;
    const double got = value(fft_loss(t.constant(offset(x, c)), t.constant(x)));
    EXPECT_NEAR(got, fft_loss_oracle(offset(x, c), x), 1e-9);
    EXPECT_NEAR(got, std::abs(c), 1e-9);
  }
}

TEST(FftLoss, MatchesDirectDftOnRandomPairs) {
  Tape<double> t;
  Tensor<double> a = random_tensor({1, 2, 6, 5}, 7), b = random_tensor({1, 2, 6, 5}, 8);
  EXPECT_NEAR(value(fft_loss(t.constant(a), t.constant(b))), fft_loss_oracle(a, b), 1e-10);
}

TEST(FftLoss, CircularShiftMatchesDirectDftAndHalfPeriodInvariance) {
  Tensor<double> a = random_tensor({1, 1, 8, 8}, 9), b = random_tensor({1, 1, 8, 8}, 10);
  auto shift = [](const Tensor<double>& x, std::size_t dy, std::size_t dx) {
    Tensor<double> y(x.shape());
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) y.at(0, 0, (i + dy) % 8, (j + dx) % 8) = x.at(0, 0, i, j);
    return y;
  };
  Tape<double> t;
  const double base = value(fft_loss(t.constant(a), t.constant(b)));
  const double shifted = value(fft_loss(t.constant(shift(a, 3, 5)), t.constant(shift(b, 3, 5))));
  // The shift multiplies each bin by a unit phase; |Re|+|Im| is not phase
  // invariant, so compare against the direct transform of the shifted pair.
  EXPECT_NEAR(shifted, fft_loss_oracle(shift(a, 3, 5), shift(b, 3, 5)), 1e-10);
  const double half = value(fft_loss(t.constant(shift(a, 4, 4)), t.constant(shift(b, 4, 4))));
  EXPECT_NEAR(half, base, 1e-10);  // phase factors of +-1 leave |Re|, |Im| unchanged
}

TEST(FftLoss, GradientMatchesCentralDifferences) {
  auto r = grad_check([](Tape<double>&, Leaves x) { return fft_loss(x[0], x[1]); },
                      {random_tensor({1, 2, 6, 8}, 11), random_tensor({1, 2, 6, 8}, 12)});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(PerceptualLoss, IdentityExtractorEqualsL1) {
  Tape<double> t;
  V a = t.constant(random_tensor({1, 3, 8, 8}, 13)), b = t.constant(random_tensor({1, 3, 8, 8}, 14));
  EXPECT_EQ(value(perceptual_loss(a, b, identity_extractor<double>())), value(l1_loss(a, b)));
  EXPECT_EQ(value(perceptual_loss(a, a, pyramid_extractor<double>())), 0.0);
}

TEST(PerceptualLoss, PyramidConstantOffset) {
  Tape<double> t;
  Tensor<double> x = random_tensor({2, 3, 8, 8}, 15, 0, 1);
  EXPECT_NEAR(value(perceptual_loss(t.constant(offset(x, 0.25)), t.constant(x), pyramid_extractor<double>())),
              0.25, 1e-9);
}

TEST(PerceptualLoss, GradientMatchesCentralDifferences) {
  auto r = grad_check(
      [](Tape<double>&, Leaves x) { return perceptual_loss(x[0], x[1], pyramid_extractor<double>()); },
      {random_tensor({1, 2, 8, 8}, 16, 0.5, 1.0), random_tensor({1, 2, 8, 8}, 17, -1.0, 0.4)});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(ContrastiveLoss, EqualSimilaritiesGiveLogTwo) {
  Tensor<double> a({1, 2}, {1.0, 0.0}), p({1, 2}, {0.6, 0.8}), n({1, 1, 2}, {0.6, -0.8});
  EXPECT_NEAR(contrastive(a, p, n, 0.2), std::log(2.0), 1e-9);
}

TEST(ContrastiveLoss, OppositeNegative) {
  Tensor<double> a({1, 3}, {1, 2, 3}), p({1, 3}, {2, 4, 6}), n({1, 1, 3}, {-1, -2, -3});
  EXPECT_NEAR(contrastive(a, p, n, 1.0), std::log(1 + std::exp(-2.0)), 1e-9);
}

TEST(ContrastiveLoss, OrthogonalNegativeAtHalfTemperature) {
  Tensor<double> a({1, 2}, {0.0, 3.0}), n({1, 1, 2}, {5.0, 0.0});
  EXPECT_NEAR(contrastive(a, a, n, 0.5), std::log(1 + std::exp(-2.0)), 1e-9);
}

TEST(ContrastiveLoss, AllEqualSimilaritiesGiveLogOnePlusK) {
  for (std::size_t K : {1u, 2u, 5u}) {
    Tensor<double> a = random_tensor({3, 4}, 18);
    Tensor<double> n({3, K, 4});
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t d = 0; d < 4; ++d) n[(i * K + k) * 4 + d] = a[i * 4 + d] * (k + 1);
    EXPECT_NEAR(contrastive(a, a, n, 0.3), std::log(1.0 + K), 1e-12);
  }
}

TEST(ContrastiveLoss, NonNegativeAndMatchesOracle) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Tensor<double> a = random_tensor({5, 6}, 100 + s), p = random_tensor({5, 6}, 200 + s);
    Tensor<double> n = random_tensor({5, 3, 6}, 300 + s);
    const double tau = 0.1 + 0.05 * static_cast<double>(s);
    const double got = contrastive(a, p, n, tau);
    EXPECT_GE(got, 0.0);
    EXPECT_NEAR(got, contrastive_oracle(a, p, n, tau), 1e-10);
  }
}

TEST(ContrastiveLoss, DecreasesAsPositiveSimilarityRises) {
  Tensor<double> a({1, 2}, {1.0, 0.0}), n({1, 1, 2}, {0.0, 1.0});
  double prev = INFINITY;
  for (int i = 0; i <= 20; ++i) {
    const double th = std::numbers::pi * (1.0 - i / 20.0);  // sim(a,+) = cos(th) rising to 1
    const double loss = contrastive(a, Tensor<double>({1, 2}, {std::cos(th), std::sin(th)}), n, 0.2);
    EXPECT_LT(loss, prev);
    prev = loss;
  }
}

TEST(ContrastiveLoss, ZeroVectorIsFlooredNotNaN) {
  Tensor<double> a({1, 2}), p({1, 2}, {1, 0}), n({1, 1, 2}, {0, 1});
  const double got = contrastive(a, p, n, 0.2);
  EXPECT_NEAR(got, std::log(2.0), 1e-12);
}

TEST(ContrastiveLoss, RejectsMissingNegativesAndBadTau) {
  Tape<double> t;
  V a = t.constant(Tensor<double>({2, 3}, 1.0));
  EXPECT_THROW(contrastive_loss(a, a, t.constant(Tensor<double>({2, 0, 3})), 0.2), DimensionError);
  EXPECT_THROW(contrastive_loss(a, a, t.constant(Tensor<double>({2, 1, 3}, 1.0)), 0.0), ConfigError);
}

TEST(ContrastiveLoss, GradientMatchesCentralDifferences) {
  auto r = grad_check([](Tape<double>&, Leaves x) { return contrastive_loss(x[0], x[1], x[2], 0.3); },
                      {random_tensor({4, 5}, 19), random_tensor({4, 5}, 20), random_tensor({4, 3, 5}, 21)});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(ExtractPatches, CountsCoordsAndDeterminism) {
  Tape<double> t;
  V img = t.constant(random_tensor({1, 3, 8, 8}, 22));
  auto a = extract_patches<double>(img, {4, 4}, {});
  EXPECT_EQ(a.coords.size(), 4u);
  EXPECT_EQ(a.vectors.shape(), (Shape{4, 48}));
  EXPECT_EQ(a.coords[1], (ops::PatchCoord{0, 0, 4}));
  auto b = extract_patches<double>(img, {4, 4}, {});
  EXPECT_EQ(a.vectors.value(), b.vectors.value());
  EXPECT_EQ(a.coords, b.coords);
  EXPECT_EQ(extract_patches<double>(img, {4, 2}, {}).coords.size(), 9u);
  EXPECT_THROW(extract_patches<double>(img, {9, 9}, {}), DimensionError);
}

TEST(ExtractPatches, ConstantImageGivesEqualVectors) {
  Tape<double> t;
  auto p = extract_patches<double>(t.constant(Tensor<double>({1, 2, 8, 8}, 0.4)), {4, 4}, {});
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t d = 0; d < 32; ++d) EXPECT_EQ(p.vectors.value()[i * 32 + d], p.vectors.value()[d]);
}

TEST(PatchSet, AlignedCoordinatesAndExtraNegatives) {
  Tape<double> t;
  V a = t.constant(random_tensor({1, 1, 8, 8}, 23)), p = t.constant(random_tensor({1, 1, 8, 8}, 24));
  Tensor<double> nx = random_tensor({1, 1, 8, 8}, 25);
  PatchSet<double> set = build_patch_set<double>(a, p, t.constant(nx), {4, 4}, {}, 2);
  EXPECT_EQ(set.negatives.shape(), (Shape{4, 2, 16}));
  // Negative k=0 of anchor i is the co-located patch; k=1 the next one.
  auto direct = extract_patches<double>(t.constant(nx), {4, 4}, {}).vectors.value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t d = 0; d < 16; ++d) {
      EXPECT_EQ(set.negatives.value()[(i * 2) * 16 + d], direct[i * 16 + d]);
      EXPECT_EQ(set.negatives.value()[(i * 2 + 1) * 16 + d], direct[((i + 1) % 4) * 16 + d]);
    }
  EXPECT_THROW(build_patch_set<double>(a, p, t.constant(nx), {4, 4}, {}, 5), ConfigError);
}

TEST(SupervisedLoss, ComponentIdentities) {
  Tape<double> t;
  Tensor<double> x = random_tensor({1, 3, 8, 8}, 26, 0, 1);
  V a = t.constant(offset(x, 0.2)), b = t.constant(x);
  LossWeights l1_only{1, 0, 0};
  EXPECT_EQ(value(supervised_loss(a, b, l1_only, identity_extractor<double>()).total), value(l1_loss(a, b)));
  LossWeights ones{1, 1, 1};
  auto terms = supervised_loss(a, b, ones, identity_extractor<double>());
  EXPECT_NEAR(value(terms.total), 0.2 + 0.2 + 0.2, 1e-9);
  EXPECT_NEAR(terms.parts.at("fft"), 0.2, 1e-9);
  EXPECT_EQ(value(supervised_loss(b, b, ones, pyramid_extractor<double>()).total), 0.0);
}

TEST(SupervisedLoss, GradientMatchesCentralDifferences) {
  auto r = grad_check(
      [](Tape<double>&, Leaves x) {
        return supervised_loss(x[0], x[1], LossWeights{}, pyramid_extractor<double>()).total;
      },
      {random_tensor({1, 3, 8, 8}, 27, 0.5, 1.0), random_tensor({1, 3, 8, 8}, 28, -1.0, 0.4)});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(TotalLoss, ZeroEtaIsExactlySupervised) {
  Tape<double> t;
  V a = t.constant(random_tensor({1, 3, 8, 8}, 29)), b = t.constant(random_tensor({1, 3, 8, 8}, 30));
  LossWeights w;
  w.unsup = 0.0;
  V sup = supervised_loss(a, b, w, pyramid_extractor<double>()).total;
  V uns = unsupervised_loss<double>(a, b, nullptr, LossWeights{1, 0, 0, 0}).total;
  EXPECT_EQ(total_loss(sup, uns, w).value(), sup.value());
}

TEST(UnsupervisedLoss, WithoutContrastiveIsScaledL1) {
  Tape<double> t;
  V a = t.constant(random_tensor({2, 3, 8, 8}, 31)), b = t.constant(random_tensor({2, 3, 8, 8}, 32));
  LossWeights w;
  w.l1 = 0.7;
  w.contrastive = 0;
  EXPECT_EQ(value(unsupervised_loss<double>(a, b, nullptr, w).total), 0.7 * value(l1_loss(a, b)));
}

TEST(UnsupervisedLoss, ComponentSumOracle) {
  Tensor<double> a = random_tensor({1, 2, 8, 8}, 33), p = random_tensor({1, 2, 8, 8}, 34),
                 n = random_tensor({1, 2, 8, 8}, 35);
  LossWeights w;
  w.l1 = 0.8;
  w.contrastive = 0.3;
  w.tau = 0.25;
  Tape<double> t;
  auto terms = unsupervised_loss<double>(t.constant(a), t.constant(p), t.constant(n), {true}, w, {4, 4}, {});
  double l1 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) l1 += std::abs(a[i] - p[i]);
  l1 /= static_cast<double>(a.size());
  auto unfold = [&](const Tensor<double>& x) {
    return extract_patches<double>(t.constant(x), {4, 4}, {}).vectors.value();
  };
  Tensor<double> neg = unfold(n).reshaped({4, 1, 32});
  const double expect = 0.8 * l1 + 0.3 * contrastive_oracle(unfold(a), unfold(p), neg, 0.25);
  EXPECT_NEAR(value(terms.total), expect, 1e-12);
}

TEST(UnsupervisedLoss, MaskedSamplesContributeNothing) {
  Tensor<double> a = random_tensor({2, 1, 8, 8}, 36), p = random_tensor({2, 1, 8, 8}, 37),
                 n = random_tensor({2, 1, 8, 8}, 38);
  LossWeights w;
  {
    Tape<double> t;
    V av = t.leaf(a);
    auto none = unsupervised_loss<double>(av, t.constant(p), t.constant(n), {false, false}, w, {4, 4}, {});
    EXPECT_EQ(value(none.total), 0.0);
    t.backward(none.total);
    const Tensor<double> g = t.grad(av);
    for (double v : g.data()) EXPECT_EQ(v, 0.0);
  }
  Tape<double> t;
  V av = t.leaf(a);
  auto half = unsupervised_loss<double>(av, t.constant(p), t.constant(n), {false, true}, w, {4, 4}, {});
  Tape<double> t2;
  auto only = unsupervised_loss<double>(t2.constant(batch_slice(a, 1, 2)), t2.constant(batch_slice(p, 1, 2)),
                                        t2.constant(batch_slice(n, 1, 2)), {true}, w, {4, 4}, {});
  EXPECT_EQ(value(half.total), value(only.total));
  t.backward(half.total);
  const Tensor<double> g = t.grad(av);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(g[i], 0.0);
}

TEST(UnsupervisedLoss, GradientMatchesCentralDifferences) {
  LossWeights w;
  w.contrastive = 0.5;
  auto r = grad_check(
      [&](Tape<double>&, Leaves x) {
        return unsupervised_loss<double>(x[0], x[1], x[2], {true, true}, w, {4, 4}, {}, 2).total;
      },
      {random_tensor({2, 1, 8, 8}, 39, 0.5, 1.0), random_tensor({2, 1, 8, 8}, 40, -1.0, 0.4),
       random_tensor({2, 1, 8, 8}, 41)});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(LossWeights, JsonRoundTripAndValidation) {
  LossWeights w{0.5, 0.2, 0.3, 0.4, 0.6, 0.7};
  nlohmann::json j = w;
  LossWeights back = j.get<LossWeights>();
  EXPECT_EQ(back.l1, 0.5);
  EXPECT_EQ(back.tau, 0.7);
  j["tau"] = 0.0;
  EXPECT_THROW(j.get<LossWeights>(), ConfigError);
  j["tau"] = 0.2;
  j["lambda1"] = -1.0;
  EXPECT_THROW(j.get<LossWeights>(), ConfigError);
}

}  // namespace
}  // namespace deflare
