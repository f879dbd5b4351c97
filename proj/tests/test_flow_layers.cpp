// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mgf/errors.hpp"
#include "mgf/layers.hpp"
#include "mgf/tensor_ops.hpp"
#include "oracles.hpp"

using namespace mgf;
using mgf::testing::fd_logdet;
using mgf::testing::random_tensor;
using mgf::testing::rel_err;

namespace {

ActNorm random_actnorm(std::size_t c, Rng& rng) {
  ActNorm a = ActNorm::make(c);
  a.log_scale.value = random_tensor({c}, rng, 0.5);
  a.bias.value = random_tensor({c}, rng);
  a.initialized = true;
  return a;
}

// Batch whose single channel has population mean 5 and std 2 exactly.
Tensor mean5_std2_batch() {
  Tensor b({2, 1, 2, 2});
  const double v[8] = {3, 7, 3, 7, 7, 3, 7, 3};
  for (std::size_t i = 0; i < 8; ++i) b[i] = v[i];
  return b;
}

}  // namespace

TEST(ActNorm, InitSolvesMomentEquations) {
  ActNorm a = ActNorm::make(1);
  actnorm_init(a, mean5_std2_batch());
  EXPECT_TRUE(a.initialized);
  EXPECT_NEAR(a.bias.value[0], -2.5, 1e-12);
  EXPECT_NEAR(a.log_scale.value[0], -std::log(2.0), 1e-12);
}

TEST(ActNorm, InitStandardizesEachChannel) {
  Rng rng(11);
  Tensor batch = random_tensor({6, 3, 4, 4}, rng, 3.0);
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] += static_cast<double>((i / 16) % 3) * 4.0 - 2.0;
  ActNorm a = ActNorm::make(3);
  actnorm_init(a, batch);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> ys;
    for (std::size_t b = 0; b < 6; ++b) {
      const Tensor y = actnorm_apply(a, batch.slice0(b), Direction::Forward).y;
      for (std::size_t k = 0; k < 16; ++k) ys.push_back(y[c * 16 + k]);
    }
    const double mean = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
    double var = 0.0;
    for (double v : ys) var += (v - mean) * (v - mean);
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(var / ys.size()), 1.0, 1e-6);
  }
}

TEST(ActNorm, StandardizedBatchIsFixedPoint) {
  Tensor b({2, 1, 1, 2}, std::vector<double>{-1, 1, 1, -1});
  ActNorm a = ActNorm::make(1);
  actnorm_init(a, b);
  EXPECT_NEAR(a.log_scale.value[0], 0.0, 1e-12);
  EXPECT_NEAR(a.bias.value[0], 0.0, 1e-12);
}

TEST(ActNorm, ConstantBatchIsDegenerate) {
  ActNorm a = ActNorm::make(1);
  EXPECT_THROW(actnorm_init(a, Tensor({4, 1, 2, 2}, 0.7)), NumericalError);
  EXPECT_FALSE(a.initialized);
}

TEST(ActNorm, UninitializedApplyIsContractError) {
  ActNorm a = ActNorm::make(2);
  EXPECT_THROW(actnorm_apply(a, Tensor({2, 2, 2}), Direction::Forward), ContractError);
}

TEST(ActNorm, IdentityAndCancellingScales) {
  ActNorm a = ActNorm::make(2);
  actnorm_init_identity(a);
  Rng rng(2);
  const Tensor x = random_tensor({2, 2, 2}, rng);
  auto r = actnorm_apply(a, x, Direction::Forward);
  EXPECT_EQ(r.y, x);
  EXPECT_EQ(r.logdet, 0.0);
  a.log_scale.value[0] = std::log(2.0);
  a.log_scale.value[1] = std::log(0.5);
  EXPECT_NEAR(actnorm_apply(a, x, Direction::Forward).logdet, 0.0, 1e-15);
}

TEST(ActNorm, LogdetMatchesJacobianOracle) {
  Rng rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    const ActNorm a = random_actnorm(1, rng);
    const Tensor x = random_tensor({1, 4, 4}, rng);
    const double analytic = actnorm_apply(a, x, Direction::Forward).logdet;
    const double oracle = fd_logdet([&](const Tensor& v) { return actnorm_apply(a, v, Direction::Forward).y; }, x);
    EXPECT_LT(rel_err(analytic, oracle), 1e-3);
  }
}

TEST(InvConv, IdentityAndPermutation) {
  Rng rng(3);
  InvConv ic = InvConv::make(3, rng);
  ic.perm = {0, 1, 2};
  const Tensor x = random_tensor({3, 2, 2}, rng);
  auto r = invconv_apply(ic, x, Direction::Forward);
  EXPECT_EQ(r.y, x);
  EXPECT_EQ(r.logdet, 0.0);

  ic.perm = {2, 0, 1};
  r = invconv_apply(ic, x, Direction::Forward);
  EXPECT_EQ(r.logdet, 0.0);
  EXPECT_EQ(r.y.slice0(0), x.slice0(2));
  EXPECT_EQ(r.y.slice0(1), x.slice0(0));
  EXPECT_EQ(r.y.slice0(2), x.slice0(1));
}

TEST(InvConv, DiagonalScaleLogdet) {
  Rng rng(4);
  InvConv ic = InvConv::make(2, rng);
  ic.perm = {0, 1};
  ic.log_diag.value[0] = std::log(2.0);
  const Tensor x = random_tensor({2, 3, 3}, rng);
  const double analytic = invconv_apply(ic, x, Direction::Forward).logdet;
  EXPECT_NEAR(analytic, 9.0 * std::log(2.0), 1e-12);
  const double oracle = fd_logdet([&](const Tensor& v) { return invconv_apply(ic, v, Direction::Forward).y; }, x);
  EXPECT_LT(rel_err(analytic, oracle), 1e-3);
}

TEST(InvConv, ForwardIsDenseWeightPerSite) {
  Rng rng(8);
  const InvConv ic = InvConv::make(4, rng, 0.3);
  const Tensor w = ic.weight();
  const Tensor x = random_tensor({4, 2, 3}, rng);
  const Tensor y = invconv_apply(ic, x, Direction::Forward).y;
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t s = 0; s < 6; ++s) {
      double acc = 0.0;
      for (std::size_t c = 0; c < 4; ++c) acc += w[o * 4 + c] * x[c * 6 + s];
      EXPECT_NEAR(y[o * 6 + s], acc, 1e-12);
    }
  EXPECT_NEAR(log_abs_det(w), ic.log_diag.value[0] + ic.log_diag.value[1] + ic.log_diag.value[2] + ic.log_diag.value[3],
              1e-10);
}

TEST(InvConv, LogdetMatchesJacobianOracle) {
  Rng rng(9);
  for (int rep = 0; rep < 5; ++rep) {
    const InvConv ic = InvConv::make(4, rng, 0.4);
    const Tensor x = random_tensor({4, 2, 2}, rng);
    const double analytic = invconv_apply(ic, x, Direction::Forward).logdet;
    const double oracle = fd_logdet([&](const Tensor& v) { return invconv_apply(ic, v, Direction::Forward).y; }, x);
    EXPECT_LT(rel_err(analytic, oracle), 1e-3);
  }
}

TEST(Layers, RoundTripAndAntiSymmetry) {
  Rng rng(21);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t c = 1 + rng.below(6);
    const Tensor x = random_tensor({c, 4, 4}, rng, 2.0);

    const ActNorm a = random_actnorm(c, rng);
    auto fa = actnorm_apply(a, x, Direction::Forward);
    auto ia = actnorm_apply(a, fa.y, Direction::Inverse);
    worst = std::max(worst, max_abs_diff(ia.y, x));
    EXPECT_NEAR(fa.logdet + ia.logdet, 0.0, 1e-12);

    const InvConv ic = InvConv::make(c, rng, 0.5);
    auto fi = invconv_apply(ic, x, Direction::Forward);
    auto ii = invconv_apply(ic, fi.y, Direction::Inverse);
    worst = std::max(worst, max_abs_diff(ii.y, x));
    EXPECT_NEAR(fi.logdet + ii.logdet, 0.0, 1e-12);
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Squeeze, OrderingAndShapes) {
  const Tensor x({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor s = squeeze2x2(x);
  EXPECT_EQ(s.shape(), (Shape{4, 1, 1}));
  EXPECT_EQ(s, Tensor({4, 1, 1}, std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(squeeze2x2(Tensor({1, 4, 4})).shape(), (Shape{4, 2, 2}));
  EXPECT_THROW(squeeze2x2(Tensor({1, 3, 4})), DimensionError);

  Rng rng(6);
  const Tensor r = random_tensor({3, 6, 4}, rng);
  EXPECT_EQ(unsqueeze2x2(squeeze2x2(r)), r);
  // Channel 4c+1 holds the top-right sub-pixel of channel c.
  const Tensor rs = squeeze2x2(r);
  EXPECT_EQ(rs.at(4 * 2 + 1, 1, 0), r.at(2, 2, 1));
  EXPECT_EQ(rs.at(4 * 1 + 2, 0, 1), r.at(1, 1, 2));
}

TEST(Split, HalvesAndMerges) {
  Rng rng(12);
  const Tensor x = random_tensor({8, 2, 3}, rng);
  auto [keep, out] = split_channels(x);
  EXPECT_EQ(keep.shape(), (Shape{4, 2, 3}));
  EXPECT_EQ(keep.slice0(0), x.slice0(0));
  EXPECT_EQ(out.slice0(0), x.slice0(4));
  EXPECT_EQ(merge_channels(keep, out), x);
  auto [zk, zo] = split_channels(Tensor({2, 1, 1}));
  EXPECT_EQ(zk, Tensor({1, 1, 1}));
  EXPECT_EQ(zo, Tensor({1, 1, 1}));
  EXPECT_THROW(split_channels(Tensor({3, 2, 2})), DimensionError);
}

TEST(Masks, Definitions) {
  EXPECT_EQ(make_mask(MaskKind::Checkerboard, 1, 2, 2, 1).values, Tensor({1, 2, 2}, std::vector<double>{1, 0, 0, 1}));
  EXPECT_EQ(make_mask(MaskKind::Checkerboard, 1, 2, 2, 0).values, Tensor({1, 2, 2}, std::vector<double>{0, 1, 1, 0}));
  EXPECT_EQ(make_mask(MaskKind::Channelwise, 4, 1, 1, 0).values, Tensor({4, 1, 1}, std::vector<double>{1, 1, 0, 0}));
  EXPECT_THROW(make_mask(MaskKind::Channelwise, 3, 2, 2, 0), ContractError);
  EXPECT_THROW(mask_kind_from_string("diagonal"), ContractError);
  EXPECT_EQ(mask_kind_from_string("checkerboard"), MaskKind::Checkerboard);
}

TEST(Masks, Complementarity) {
  for (auto kind : {MaskKind::Checkerboard, MaskKind::Channelwise, MaskKind::Application}) {
    const Tensor m0 = make_mask(kind, 4, 6, 8, 0).values;
    const Tensor m1 = make_mask(kind, 4, 6, 8, 1).values;
    EXPECT_TRUE(is_binary(m0));
    EXPECT_EQ(m0 + m1, Tensor({4, 6, 8}, 1.0)) << to_string(kind);
  }
}

TEST(Masks, EllipseInteriorFraction) {
  const Tensor m = make_mask(MaskKind::Application, 1, 16, 16, 0).values;
  const double frac = sum(m) / 256.0;
  EXPECT_GE(frac, 0.45);
  EXPECT_LE(frac, 0.55);
  // Centered: the middle pixels are inside, corners outside.
  EXPECT_EQ(m.at(0, 8, 8), 1.0);
  EXPECT_EQ(m.at(0, 0, 0), 0.0);
}
