#include <gtest/gtest.h>

#include <ssbreg/volume.hpp>

using namespace ssbreg;

namespace {

Volume ramp_volume(Index3 d, Vec3 s, Vec3 o, double cx, double cy, double cz) {
  std::vector<float> v(d.count());
  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x)
        v[(z * d.ny + y) * d.nx + x] = static_cast<float>(
            cx * (o.x + x * s.x) + cy * (o.y + y * s.y) + cz * (o.z + z * s.z));
  return Volume(d, s, o, std::move(v));
}

Volume constant_volume(Index3 d, float c) {
  return Volume(d, {1.5, 2.0, 2.5}, {1, 2, 3}, std::vector<float>(d.count(), c));
}

} // namespace

TEST(Volume, RejectsInvalidGeometry) {
  EXPECT_THROW(Volume({0, 1, 1}, {1, 1, 1}, {}, {}), ValidationError);
  EXPECT_THROW(Volume({1, 1, 1}, {1, 0, 1}, {}, {0.f}), ValidationError);
  EXPECT_THROW(Volume({2, 2, 2}, {1, 1, 1}, {}, std::vector<float>(7)), SizeMismatchError);
}

TEST(Volume, SlicePositionsIncrease) {
  const Volume v = constant_volume({2, 2, 5}, 1.f);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_DOUBLE_EQ(v.z_position(k), 3.0 + 2.5 * k);
  EXPECT_THROW(v.slice(5), BoundsError);
}

TEST(Phantom, PureLinearProfileGivesSliceIndex) {
  PhantomSpec s;
  s.dims = {8, 8, 101};
  s.noise_sigma = 0;
  s.texture_scale = 0;
  s.anatomy_knots = {{0, 0}, {1, 100}};
  const Volume v = make_phantom(s);
  for (std::size_t k = 0; k < 101; ++k)
    for (float x : v.slice(k)) ASSERT_NEAR(x, static_cast<double>(k), 1e-4);
}

TEST(Phantom, Deterministic) {
  PhantomSpec s;
  s.dims = {16, 16, 24};
  s.seed = 42;
  EXPECT_EQ(make_phantom(s), make_phantom(s));
  PhantomSpec t = s;
  t.seed = 43;
  EXPECT_FALSE(make_phantom(s) == make_phantom(t));
}

TEST(Phantom, DefaultAxialMeansStrictlyIncrease) {
  PhantomSpec s; // default: 64x64x160
  const auto means = axial_means(make_phantom(s));
  ASSERT_EQ(means.size(), 160u);
  for (std::size_t k = 1; k < means.size(); ++k) EXPECT_GT(means[k], means[k - 1]) << "slice " << k;
}

TEST(Phantom, ValidationNamesField) {
  PhantomSpec s;
  s.anatomy_knots = {{0.0, 1.0}};
  try {
    make_phantom(s);
    FAIL();
  } catch (const ValidationError &e) {
    EXPECT_EQ(e.field(), "anatomy_knots");
  }
  s = PhantomSpec{};
  s.anatomy_knots = {{0.5, 1.0}, {0.5, 2.0}};
  EXPECT_THROW(make_phantom(s), ValidationError);
  s = PhantomSpec{};
  s.noise_sigma = -1;
  try {
    make_phantom(s);
    FAIL();
  } catch (const ValidationError &e) {
    EXPECT_EQ(e.field(), "noise_sigma");
  }
}

TEST(Crop, FullCropIsIdentity) {
  PhantomSpec s;
  s.dims = {8, 8, 30};
  const Volume v = make_phantom(s);
  EXPECT_EQ(crop_subvolume(v, 0, 30), v);
}

TEST(Crop, OriginFollowsStartSlice) {
  const Volume v(Index3{2, 2, 40}, Vec3{1, 1, 2}, Vec3{0, 0, 0}, std::vector<float>(160, 0.f));
  const Volume c = crop_subvolume(v, 10, 20);
  EXPECT_EQ(c.dims().nz, 20u);
  EXPECT_DOUBLE_EQ(c.origin().z, 20.0);
}

TEST(Crop, PreservesWorldZExactly) {
  // awkward values so naive origin arithmetic would round differently
  const Volume v(Index3{1, 1, 300}, Vec3{1, 1, 0.7}, Vec3{0, 0, -13.37}, std::vector<float>(300, 0.f));
  const Volume c = crop_subvolume(v, 123, 77);
  for (std::size_t k = 0; k < 77; ++k) ASSERT_EQ(c.z_position(k), v.z_position(123 + k));
  const Volume cc = crop_subvolume(c, 5, 10);
  for (std::size_t k = 0; k < 10; ++k) ASSERT_EQ(cc.z_position(k), v.z_position(128 + k));
}

TEST(Crop, ComposesWithCrop) {
  PhantomSpec s;
  s.dims = {8, 8, 60};
  const Volume v = make_phantom(s);
  EXPECT_EQ(crop_subvolume(crop_subvolume(v, 7, 40), 11, 20), crop_subvolume(v, 18, 20));
}

TEST(Crop, OutOfRangeThrows) {
  const Volume v = constant_volume({2, 2, 10}, 0.f);
  EXPECT_THROW(crop_subvolume(v, 5, 6), BoundsError);
  EXPECT_THROW(crop_subvolume(v, 0, 0), BoundsError);
  EXPECT_THROW(crop_subvolume(v, 11, 1), BoundsError);
}

TEST(Resample, NoOpWhenWithinBounds) {
  PhantomSpec s;
  s.dims = {64, 64, 64};
  const Volume v = make_phantom(s);
  EXPECT_EQ(resample_volume(v, {128, 128, 128}), v);
}

TEST(Resample, ConstantPreserved) {
  const Volume v = constant_volume({30, 17, 50}, 7.25f);
  const Volume r = resample_volume(v, {11, 5, 13});
  EXPECT_EQ(r.dims(), (Index3{11, 5, 13}));
  for (float x : r.voxels()) ASSERT_EQ(x, 7.25f);
  const Volume t = resample_to_spacing(v, {1.0, 3.0, 0.9});
  for (float x : t.voxels()) ASSERT_EQ(x, 7.25f);
}

TEST(Resample, LinearRampMatchesAnalyticValues) {
  const Vec3 o{-5.0, 2.0, 10.0};
  const Volume v = ramp_volume({64, 32, 48}, {1.0, 2.0, 1.5}, o, 0.01, 0.02, -0.03);
  const Volume r = resample_volume(v, {32, 16, 24});
  ASSERT_EQ(r.dims(), (Index3{32, 16, 24}));
  for (std::size_t z = 0; z < 24; ++z)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 32; ++x) {
        const double px = r.origin().x + x * r.spacing().x;
        const double py = r.origin().y + y * r.spacing().y;
        const double pz = r.origin().z + z * r.spacing().z;
        ASSERT_NEAR(r.at(x, y, z), 0.01 * px + 0.02 * py - 0.03 * pz, 1e-6);
      }
}

TEST(Resample, ExtentPreserved) {
  PhantomSpec s;
  s.dims = {50, 40, 130};
  s.spacing = {0.8, 1.1, 2.3};
  const Volume v = make_phantom(s);
  const Volume r = resample_volume(v, {17, 40, 128});
  for (int a = 0; a < 3; ++a) EXPECT_LT(std::abs(r.extent()[a] - v.extent()[a]), r.spacing()[a]);
  EXPECT_EQ(r.spacing().y, v.spacing().y);
  // the physical center stays put
  for (int a = 0; a < 3; ++a)
    EXPECT_NEAR(r.origin()[a] + 0.5 * (r.dims()[a] - 1) * r.spacing()[a],
                v.origin()[a] + 0.5 * (v.dims()[a] - 1) * v.spacing()[a], 1e-9);
}

TEST(Resample, ToSpacingKeepsExactSpacing) {
  const Volume v = constant_volume({20, 20, 20}, 1.f);
  const Volume r = resample_to_spacing(v, {1.0, 2.0, 3.0});
  EXPECT_EQ(r.spacing(), (Vec3{1.0, 2.0, 3.0}));
  EXPECT_EQ(r.dims(), (Index3{30, 20, 17}));
}

TEST(ResampleSlice, ConstantAndIdentity) {
  const Volume c = constant_volume({37, 51, 3}, -4.5f);
  const Image2D img = resample_slice(c, 1);
  ASSERT_EQ(img.pixels.size(), 128u * 128u);
  for (double p : img.pixels) ASSERT_EQ(p, -4.5);

  PhantomSpec s;
  s.dims = {128, 128, 2};
  const Volume v = make_phantom(s);
  const Image2D id = resample_slice(v, 1);
  for (std::size_t y = 0; y < 128; ++y)
    for (std::size_t x = 0; x < 128; ++x) ASSERT_NEAR(id(x, y), v.at(x, y, 1), 1e-9);
}

TEST(ResampleSlice, LinearGradientReproduced) {
  // values at input voxel centers are 0.01*x_world + 0.02*y_world
  const Volume v = ramp_volume({64, 256, 1}, {2.0, 0.5, 1.0}, {0, 0, 0}, 0.01, 0.02, 0.0);
  const Image2D img = resample_slice(v, 0);
  // output pixel centers in input index space: (j + 0.5) * n / 128 - 0.5
  for (std::size_t y = 0; y < 128; ++y)
    for (std::size_t x = 0; x < 128; ++x) {
      const double ux = std::clamp((x + 0.5) * 64.0 / 128.0 - 0.5, 0.0, 63.0);
      const double uy = (y + 0.5) * 256.0 / 128.0 - 0.5;
      ASSERT_NEAR(img(x, y), 0.01 * ux * 2.0 + 0.02 * uy * 0.5, 1e-6);
    }
}

TEST(ResampleSlice, OutOfRange) {
  const Volume c = constant_volume({4, 4, 3}, 0.f);
  EXPECT_THROW(resample_slice(c, 3), BoundsError);
}

TEST(Sample, TrilinearHitsVoxelCenters) {
  PhantomSpec s;
  s.dims = {9, 7, 5};
  const Volume v = make_phantom(s);
  for (std::size_t z = 0; z < 5; ++z)
    for (std::size_t y = 0; y < 7; ++y)
      for (std::size_t x = 0; x < 9; ++x) {
        const Vec3 p{v.origin().x + x * v.spacing().x, v.origin().y + y * v.spacing().y,
                     v.z_position(z)};
        ASSERT_NEAR(sample_trilinear(v, p), v.at(x, y, z), 1e-4);
      }
}
