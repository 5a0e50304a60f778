#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "sst/patcher.hpp"
#include "support/test_util.hpp"

using namespace sst;
using namespace sst::patcher;

namespace {
std::vector<double> iota_vec(std::size_t n) {
  std::vector<double> v(n);
  std::iota(v.begin(), v.end(), 1.0);
  return v;
}
}  // namespace

TEST(NumPatches, FloorFormula) {
  EXPECT_EQ(num_patches(672, 48, 16), 40u);
  EXPECT_EQ(num_patches(336, 16, 8), 41u);
  EXPECT_EQ(num_patches(7, 7, 3), 1u);
  EXPECT_THROW(num_patches(5, 6, 1), ParameterError);
}

TEST(Resolution, QuotedValues) {
  EXPECT_NEAR(r_pts(48, 16), 0.4330, 1e-3);
  EXPECT_EQ(r_pts(16, 8), 0.5);
  EXPECT_EQ(r_pts(1, 1), 1.0);
  EXPECT_DOUBLE_EQ(r_pts_absolute(672, 48, 16), 40 * std::sqrt(48.0));
}

TEST(Resolution, Monotonicity) {
  for (std::size_t s = 1; s <= 16; ++s) {
    for (std::size_t p = 1; p < 64; ++p) {
      EXPECT_LT(r_pts(p, s), r_pts(p + 1, s));
      EXPECT_GT(r_pts(p, s), r_pts(p, s + 1));
    }
  }
}

TEST(Patch, Examples) {
  const auto a = patch(iota_vec(6), {2, 2, 6});
  EXPECT_EQ(a.patches.to_vector(), (std::vector<double>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(a.count, 3u);
  const auto b = patch(iota_vec(5), {3, 1, 5});
  EXPECT_EQ(b.patches.to_vector(), (std::vector<double>{1, 2, 3, 2, 3, 4, 3, 4, 5}));
  const auto c = patch(iota_vec(7), {4, 2, 7});
  EXPECT_EQ(c.patches.shape(), (Shape{2, 4}));
  EXPECT_EQ(c.patches.to_vector(), (std::vector<double>{1, 2, 3, 4, 3, 4, 5, 6}));
}

TEST(Patch, SpecViolations) {
  EXPECT_THROW(patch(iota_vec(3), {4, 1, 3}), ParameterError);
  EXPECT_THROW(patch(iota_vec(3), {0, 1, 3}), ParameterError);
  EXPECT_THROW(patch(iota_vec(3), {1, 0, 3}), ParameterError);
}

TEST(Patch, NonOverlappingReconstruction) {
  std::mt19937_64 rng(2);
  const Tensor x = sst::testing::random_tensor({96}, rng);
  for (std::size_t p : {1u, 2u, 3u, 8u, 12u, 96u}) {
    const auto ps = patch(x.data(), {p, p, 96});
    EXPECT_EQ(ps.patches.to_vector(), x.to_vector());
  }
}

TEST(Patch, RowsAreVerbatimSlices) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t len = 10 + rng() % 90, p = 1 + rng() % len, s = 1 + rng() % 12;
    const Tensor x = sst::testing::random_tensor({len}, rng);
    const auto ps = patch(x.data(), {p, s, len});
    ASSERT_EQ(ps.count, num_patches(len, p, s));
    for (std::size_t i = 0; i < ps.count; ++i) {
      for (std::size_t j = 0; j < p; ++j) EXPECT_EQ(ps.patches.at({i, j}), x.data()[i * s + j]);
    }
  }
}

TEST(MultiScale, Defaults) {
  const auto x = iota_vec(672);
  const auto [lng, sht] = multi_scale_patch(x, {48, 16, 672}, {16, 8, 336}, 336);
  EXPECT_EQ(lng.patches.shape(), (Shape{40, 48}));
  EXPECT_EQ(sht.patches.shape(), (Shape{41, 16}));
  EXPECT_EQ(sht.patches.at({0, 0}), 337.0);  // short range starts at L - S
  EXPECT_EQ(lng.patches.at({0, 0}), 1.0);
}

TEST(MultiScale, EqualResolutionIsRejected) {
  const auto x = iota_vec(10);
  EXPECT_THROW(multi_scale_patch(x, {1, 1, 10}, {1, 1, 9}, 9), ConfigError);
  EXPECT_THROW(check_multi_scale(672, 336, {16, 8, 672}, {48, 16, 336}), ConfigError);
  EXPECT_NO_THROW(check_multi_scale(672, 336, {48, 16, 672}, {16, 8, 336}));
  EXPECT_THROW(check_multi_scale(672, 672, {48, 16, 672}, {16, 8, 672}), ConfigError);
}
