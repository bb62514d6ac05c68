#include <gtest/gtest.h>

#include <cmath>

#include "oaug/core/rng.hpp"
#include "oaug/geometry/grid.hpp"
#include "oaug/verify/finite_diff.hpp"
#include "test_util.hpp"

namespace oaug {
namespace {

using testutil::ref_invert_3x3;
using testutil::ref_warp;
using testutil::rotation_affine;

// ---- identity_grid ----

TEST(IdentityGrid, CornersExact) {
  Tensor g = identity_grid(2, 2);
  EXPECT_DOUBLE_EQ(g[0], -1.0);  // (0,0).x
  EXPECT_DOUBLE_EQ(g[1], -1.0);  // (0,0).y
  EXPECT_DOUBLE_EQ(g[2], 1.0);   // (0,1).x
  EXPECT_DOUBLE_EQ(g[3], -1.0);
  EXPECT_DOUBLE_EQ(g[4], -1.0);  // (1,0).x
  EXPECT_DOUBLE_EQ(g[5], 1.0);
  EXPECT_DOUBLE_EQ(g[6], 1.0);  // (1,1)
  EXPECT_DOUBLE_EQ(g[7], 1.0);
}

TEST(IdentityGrid, CenterOfOddGridIsOrigin) {
  Tensor g = identity_grid(3, 3);
  EXPECT_DOUBLE_EQ(g[(1 * 3 + 1) * 2 + 0], 0.0);
  EXPECT_DOUBLE_EQ(g[(1 * 3 + 1) * 2 + 1], 0.0);
}

TEST(IdentityGrid, SingleRowUsesZeroY) {
  Tensor g = identity_grid(1, 4);
  const double expect_x[4] = {-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0};
  for (int j = 0; j < 4; ++j) {
    EXPECT_NEAR(g[j * 2 + 0], expect_x[j], 1e-15);
    EXPECT_DOUBLE_EQ(g[j * 2 + 1], 0.0);
  }
}

TEST(IdentityGrid, RejectsNonPositiveDims) {
  EXPECT_THROW(identity_grid(0, 4), std::invalid_argument);
  EXPECT_THROW(identity_grid(4, 0), std::invalid_argument);
}

// ---- affine_to_grid ----

TEST(AffineToGrid, IdentityMatrixGivesIdentityGrid) {
  Var th = make_const(Tensor::of({2, 3}, {1, 0, 0, 0, 1, 0}));
  Var g = affine_to_grid(th, 5, 7);
  Tensor id = identity_grid(5, 7);
  for (int64_t i = 0; i < id.numel(); ++i) EXPECT_DOUBLE_EQ(g->val[i], id[i]);
}

TEST(AffineToGrid, PureTranslationShiftsX) {
  Var th = make_const(Tensor::of({2, 3}, {1, 0, 0.5, 0, 1, 0}));
  Var g = affine_to_grid(th, 3, 3);
  Tensor id = identity_grid(3, 3);
  for (int64_t p = 0; p < 9; ++p) {
    EXPECT_DOUBLE_EQ(g->val[p * 2 + 0], id[p * 2 + 0] + 0.5);
    EXPECT_DOUBLE_EQ(g->val[p * 2 + 1], id[p * 2 + 1]);
  }
}

TEST(AffineToGrid, UniformScaleByTwo) {
  Var th = make_const(Tensor::of({2, 3}, {2, 0, 0, 0, 2, 0}));
  Var g = affine_to_grid(th, 3, 3);
  EXPECT_DOUBLE_EQ(g->val[0], -2.0);
  EXPECT_DOUBLE_EQ(g->val[1], -2.0);
  EXPECT_DOUBLE_EQ(g->val[(2 * 3 + 2) * 2 + 0], 2.0);
  EXPECT_DOUBLE_EQ(g->val[(2 * 3 + 2) * 2 + 1], 2.0);
  EXPECT_DOUBLE_EQ(g->val[(1 * 3 + 1) * 2 + 0], 0.0);
  EXPECT_DOUBLE_EQ(g->val[(1 * 3 + 1) * 2 + 1], 0.0);
}

TEST(AffineToGrid, FiniteDiff) {
  Rng rng(31);
  Var th = make_leaf(rng.uniform_tensor({2, 2, 3}, -0.6, 0.6));
  auto build = [&] { return mean_all(square(affine_to_grid(th, 4, 5))); };
  EXPECT_LE(finite_diff_check(build, {th}).max_rel_err, 1e-7);
}

// ---- grid_sample_bilinear ----

TEST(GridSample, IdentityGridReturnsInput) {
  Rng rng(32);
  for (auto [h, w] : {std::pair<int64_t, int64_t>{1, 1}, {2, 3}, {5, 5}, {7, 2}}) {
    Tensor img = rng.uniform_tensor({2, 3, h, w}, -2, 2);
    Var out = grid_sample_bilinear(make_const(img), make_const(identity_grid(h, w)));
    for (int64_t i = 0; i < img.numel(); ++i) EXPECT_NEAR(out->val[i], img[i], 1e-12);
  }
}

TEST(GridSample, ConstantImageStaysConstantInBounds) {
  Rng rng(33);
  Tensor img = Tensor::full({1, 1, 4, 4}, 0.7);
  Tensor grid = rng.uniform_tensor({4, 4, 2}, -1.0, 1.0);
  Var out = grid_sample_bilinear(make_const(img), make_const(grid));
  for (int64_t i = 0; i < out->val.numel(); ++i) EXPECT_NEAR(out->val[i], 0.7, 1e-12);
}

TEST(GridSample, CenterOfTwoByTwoAveragesAllPixels) {
  Tensor img({1, 1, 2, 2});
  img[0] = 1;
  img[1] = 2;
  img[2] = 3;
  img[3] = 4;
  Tensor grid({1, 1, 2});  // single output coord (0,0)
  Var out = grid_sample_bilinear(make_const(img), make_const(grid));
  EXPECT_DOUBLE_EQ(out->val.item(), 2.5);
}

TEST(GridSample, OutOfBoundsContributesZero) {
  Tensor img = Tensor::full({1, 1, 2, 2}, 3.0);
  Tensor grid({1, 1, 2});
  grid[0] = 5.0;  // far outside
  grid[1] = 0.0;
  Var out = grid_sample_bilinear(make_const(img), make_const(grid));
  EXPECT_DOUBLE_EQ(out->val.item(), 0.0);
}

TEST(GridSample, ShapeMismatchRejected) {
  Tensor img({2, 1, 4, 4});
  Tensor grid({3, 2, 2, 2});
  EXPECT_THROW(grid_sample_bilinear(make_const(img), make_const(grid)), std::invalid_argument);
}

TEST(GridSample, FiniteDiffBothInputs) {
  Rng rng(34);
  Var img = make_leaf(rng.uniform_tensor({2, 2, 4, 4}, -1, 1));
  // keep coords away from cell boundaries so the FD probe stays in one cell
  Tensor gv({2, 3, 3, 2});
  for (int64_t i = 0; i < gv.numel(); ++i) gv[i] = rng.uniform(-0.9, 0.9);
  for (int64_t i = 0; i < gv.numel(); ++i) {
    const double px = (gv[i] + 1.0) * 0.5 * 3.0;
    if (std::fabs(px - std::round(px)) < 1e-3) gv[i] += 2e-3;
  }
  Var grid = make_leaf(gv);
  auto build = [&] { return mean_all(square(grid_sample_bilinear(img, grid))); };
  EXPECT_LE(finite_diff_check(build, {img, grid}).max_rel_err, 1e-5);
}

// ---- grid_sample_nearest ----

TEST(NearestSample, IdentityGridKeepsMask) {
  IntTensor mask({1, 2, 3}, {1, 2, 0, 2, 1, 1});
  IntTensor out = grid_sample_nearest(mask, identity_grid(2, 3));
  EXPECT_EQ(out, mask);
}

TEST(NearestSample, CoordinateArithmetic) {
  // w=2 mask [5,7]; x=-0.4 -> pixel 0.3 -> nearest 0 -> label 5
  IntTensor mask({1, 1, 2}, {5, 7});
  Tensor grid({1, 1, 2});
  grid[0] = -0.4;
  grid[1] = 0.0;
  IntTensor out = grid_sample_nearest(mask, grid);
  EXPECT_EQ(out[0], 5);
}

TEST(NearestSample, NeverInventsLabels) {
  Rng rng(35);
  IntTensor mask({2, 5, 5});
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = static_cast<int32_t>(rng.uniform_int(3) + 4);
  Tensor grid = rng.uniform_tensor({2, 5, 5, 2}, -1.6, 1.6);
  IntTensor out = grid_sample_nearest(mask, grid);
  for (int64_t i = 0; i < out.numel(); ++i) {
    const int32_t v = out[i];
    EXPECT_TRUE(v == 0 || (v >= 4 && v < 7)) << v;
  }
}

// ---- invert_affine ----

TEST(InvertAffine, IdentityAndTranslation) {
  Tensor id = Tensor::of({2, 3}, {1, 0, 0, 0, 1, 0});
  Tensor inv = invert_affine(id);
  for (int64_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(inv[i], id[i]);
  Tensor tr = Tensor::of({2, 3}, {1, 0, 0.3, 0, 1, -0.7});
  Tensor itr = invert_affine(tr);
  EXPECT_DOUBLE_EQ(itr[2], -0.3);
  EXPECT_DOUBLE_EQ(itr[5], 0.7);
}

TEST(InvertAffine, MatchesGaussJordanOracle) {
  Tensor rot = rotation_affine(30.0);
  Tensor inv = invert_affine(rot);
  Tensor oracle = ref_invert_3x3(rot);
  for (int64_t i = 0; i < 6; ++i) EXPECT_NEAR(inv[i], oracle[i], 1e-12);
  Tensor back = rotation_affine(-30.0);
  for (int64_t i = 0; i < 6; ++i) EXPECT_NEAR(inv[i], back[i], 1e-12);
}

TEST(InvertAffine, CompositionIsIdentity) {
  Rng rng(36);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor m = rng.uniform_tensor({2, 3}, -1, 1);
    m[0] += 1.5;
    m[4] += 1.5;  // keep well-conditioned
    Tensor c = compose_affine(m, invert_affine(m));
    const Tensor id = Tensor::of({2, 3}, {1, 0, 0, 0, 1, 0});
    for (int64_t i = 0; i < 6; ++i) EXPECT_NEAR(c[i], id[i], 1e-6);
  }
}

TEST(InvertAffine, SingularRejected) {
  Tensor sing = Tensor::of({2, 3}, {1, 1, 0, 1, 1, 0});
  EXPECT_THROW(invert_affine(sing), SingularTransform);
}

TEST(InvertAffine, OpFiniteDiff) {
  Rng rng(37);
  Tensor t = rng.uniform_tensor({2, 2, 3}, -0.3, 0.3);
  t[0] += 1.0;
  t[4] += 1.0;
  t[6] += 1.0;
  t[10] += 1.0;
  Var th = make_leaf(t);
  auto build = [&] { return mean_all(square(invert_affine_op(th))); };
  EXPECT_LE(finite_diff_check(build, {th}).max_rel_err, 1e-6);
}

// ---- double_cycle_loss ----

TEST(DoubleCycle, IdentityTransformIsZero) {
  Rng rng(38);
  Var x = make_const(rng.uniform_tensor({1, 1, 5, 5}, -1, 1));
  Var th = make_const(Tensor::of({2, 3}, {1, 0, 0, 0, 1, 0}));
  EXPECT_LE(double_cycle_loss(x, th)->val.item(), 1e-10);
}

TEST(DoubleCycle, ZeroImageGivesZeroForAnyTransform) {
  Rng rng(39);
  Var x = make_const(Tensor::zeros({1, 1, 6, 6}));
  for (int rep = 0; rep < 5; ++rep) {
    Tensor m = rng.uniform_tensor({2, 3}, -0.4, 0.4);
    m[0] += 1.0;
    m[4] += 1.0;
    EXPECT_DOUBLE_EQ(double_cycle_loss(x, make_const(m))->val.item(), 0.0);
  }
}

TEST(DoubleCycle, ZoomMatchesTwoPassOracle) {
  Rng rng(40);
  Tensor img = rng.uniform_tensor({1, 1, 6, 6}, 0, 1);
  Tensor zoom = Tensor::of({2, 3}, {0.5, 0, 0, 0, 0.5, 0});  // scale-0.5 sampling grid
  const double got = double_cycle_loss(make_const(img), make_const(zoom))->val.item();
  EXPECT_GT(got, 0.0);

  // oracle: explicitly compose the two sampling passes with the reference sampler
  Tensor inv = ref_invert_3x3(zoom);
  Tensor a = ref_warp(ref_warp(img, zoom), inv);
  Tensor b = ref_warp(ref_warp(img, inv), zoom);
  double want = 0.0;
  for (int64_t i = 0; i < img.numel(); ++i) {
    const double da = a[i] - img[i], db = b[i] - img[i];
    want += da * da + db * db;
  }
  want /= static_cast<double>(img.numel());
  EXPECT_NEAR(got, want, 1e-12);
}

TEST(DoubleCycle, SymmetricUnderInversion) {
  Rng rng(41);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor img = rng.uniform_tensor({1, 2, 5, 5}, -1, 1);
    Tensor m = rng.uniform_tensor({2, 3}, -0.3, 0.3);
    m[0] += 1.0;
    m[4] += 1.0;
    const double a = double_cycle_loss(make_const(img), make_const(m))->val.item();
    const double b = double_cycle_loss(make_const(img), make_const(invert_affine(m)))->val.item();
    EXPECT_NEAR(a, b, 1e-8);
  }
}

TEST(DoubleCycle, FiniteDiff) {
  Rng rng(42);
  // Entries chosen so no sampling position of either pass lands on a pixel
  // boundary, where bilinear interpolation is not differentiable.
  Tensor t({1, 2, 3});
  t[0] = 0.83;
  t[1] = 0.11;
  t[2] = 0.053;
  t[3] = -0.12;
  t[4] = 1.07;
  t[5] = -0.071;
  Var th = make_leaf(t);
  Var x = make_leaf(rng.uniform_tensor({1, 1, 5, 5}, 0, 1));
  auto build = [&] { return double_cycle_loss(x, th); };
  EXPECT_LE(finite_diff_check(build, {th, x}).max_rel_err, 1e-4);
}

// ---- smoothness_loss ----

TEST(Smoothness, ConstantFieldIsZero) {
  Var d = make_const(Tensor::full({1, 3, 4, 2}, 0.37));
  EXPECT_DOUBLE_EQ(smoothness_loss(d)->val.item(), 0.0);
}

TEST(Smoothness, HandEnumeratedTwoPixel) {
  // 1x2 field, delta(0)=(0,0), delta(1)=(1,0): two directed pairs, each 1.
  Tensor d({1, 1, 2, 2});
  d[2] = 1.0;  // x-channel of second pixel
  EXPECT_DOUBLE_EQ(smoothness_loss(make_const(d))->val.item(), 1.0);
}

TEST(Smoothness, HandEnumeratedThreePixel) {
  // 1x3 field, x-channel (0,1,2): four directed pairs, each 1 -> mean 1.
  Tensor d({1, 1, 3, 2});
  d[2] = 1.0;
  d[4] = 2.0;
  EXPECT_DOUBLE_EQ(smoothness_loss(make_const(d))->val.item(), 1.0);
}

TEST(Smoothness, SinglePixelIsZero) {
  Var d = make_const(Tensor::full({1, 1, 1, 2}, 5.0));
  EXPECT_DOUBLE_EQ(smoothness_loss(d)->val.item(), 0.0);
}

TEST(Smoothness, InvariantToConstantShift) {
  Rng rng(43);
  Tensor d = rng.uniform_tensor({2, 4, 4, 2}, -1, 1);
  Tensor shifted = d;
  for (int64_t i = 0; i < shifted.numel(); i += 2) {
    shifted[i] += 0.9;
    shifted[i + 1] -= 0.4;
  }
  EXPECT_NEAR(smoothness_loss(make_const(d))->val.item(),
              smoothness_loss(make_const(shifted))->val.item(), 1e-12);
}

TEST(Smoothness, FiniteDiff) {
  Rng rng(44);
  Var d = make_leaf(rng.uniform_tensor({2, 3, 3, 2}, -1, 1));
  auto build = [&] { return smoothness_loss(d); };
  EXPECT_LE(finite_diff_check(build, {d}).max_rel_err, 1e-7);
}

// ---- cross-op invariants ----

TEST(Geometry, InverseGridComposesToIdentityCoordinates) {
  Rng rng(45);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor m = rng.uniform_tensor({2, 3}, -0.4, 0.4);
    m[0] += 1.2;
    m[4] += 1.2;
    Tensor inv = invert_affine(m);
    // applying the inverse map to the forward-mapped coordinates must give
    // the identity grid
    Var g = affine_to_grid(make_const(m), 6, 5);
    Tensor id = identity_grid(6, 5);
    for (int64_t p = 0; p < 6 * 5; ++p) {
      const double x = g->val[p * 2 + 0], y = g->val[p * 2 + 1];
      const double ix = inv[0] * x + inv[1] * y + inv[2];
      const double iy = inv[3] * x + inv[4] * y + inv[5];
      EXPECT_NEAR(ix, id[p * 2 + 0], 1e-8);
      EXPECT_NEAR(iy, id[p * 2 + 1], 1e-8);
    }
  }
}

}  // namespace
}  // namespace oaug
