#include <gtest/gtest.h>

#include "amt/features.hpp"
#include "amt/relations.hpp"
#include "amt/suite.hpp"
#include "test_helpers.hpp"

namespace {

using namespace amt;
using amt::testing::TempDir;
using amt::testing::spit;

TEST(Builtin, BlackImage) {
  const auto v = extract_builtin(RasterImage(10, 7, Rgb{0, 0, 0}));
  ASSERT_EQ(v.size(), kBuiltinFeatureDimension);
  ASSERT_EQ(v.size(), 88u);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(v[i], 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(v[64 + 8 * c], 1.0);
    for (std::size_t b = 1; b < 8; ++b) EXPECT_EQ(v[64 + 8 * c + b], 0.0);
  }
}

TEST(Builtin, WhiteImage) {
  const auto v = extract_builtin(RasterImage(5, 9, Rgb{255, 255, 255}));
  for (std::size_t i = 0; i < 64; ++i) EXPECT_DOUBLE_EQ(v[i], 1.0);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(v[64 + 8 * c + 7], 1.0);
}

TEST(Builtin, RangeAndHistogramMass) {
  RngStream rng(8);
  for (int i = 0; i < 20; ++i) {
    const auto img = smooth_random_image(3 + rng.below(40), 3 + rng.below(40), rng);
    const auto v = extract_builtin(img);
    for (double x : v.values()) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0);
    }
    for (std::size_t c = 0; c < 3; ++c) {
      double sum = 0.0;
      for (std::size_t b = 0; b < 8; ++b) sum += v[64 + 8 * c + b];
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
    EXPECT_EQ(extract_builtin(img), v);
  }
}

TEST(Builtin, FlipLrSymmetry) {
  RngStream rng(4);
  for (int i = 0; i < 20; ++i) {
    const auto img = smooth_random_image(5 + rng.below(30), 5 + rng.below(30), rng);
    const auto a = extract_builtin(img);
    const auto b = extract_builtin(apply_mr(Relation::flip_lr, std::nullopt, img));
    for (std::size_t k = 64; k < 88; ++k) EXPECT_EQ(a[k], b[k]);
    for (std::size_t y = 0; y < 8; ++y) {
      for (std::size_t x = 0; x < 8; ++x) EXPECT_EQ(a[y * 8 + x], b[y * 8 + (7 - x)]);
    }
  }
}

TEST(Builtin, EmptyImageRejected) { EXPECT_THROW(extract_builtin(RasterImage()), InvalidInput); }

TEST(Sidecar, LoadsVectors) {
  TempDir dir;
  std::string text = "id,n=512\nimg_0007";
  for (int i = 0; i < 512; ++i) text += "," + std::to_string(i * 0.001);
  text += "\nimg_0008";
  for (int i = 0; i < 512; ++i) text += ",1";
  text += "\n";
  spit(dir / "f.csv", text);
  const auto v = load_sidecar(dir / "f.csv", "img_0007");
  ASSERT_EQ(v.size(), 512u);
  EXPECT_DOUBLE_EQ(v[3], 0.003);
  const auto all = SidecarFeatures::load(dir / "f.csv");
  EXPECT_EQ(all.dimension(), 512u);
  EXPECT_EQ(all.size(), 2u);
  EXPECT_THROW(all.get("img_9999"), LoadError);
}

TEST(Sidecar, ShortRowRejected) {
  TempDir dir;
  std::string text = "id,n=512\nimg_0007";
  for (int i = 0; i < 511; ++i) text += ",0.5";
  spit(dir / "f.csv", text + "\n");
  EXPECT_THROW(SidecarFeatures::load(dir / "f.csv"), LoadError);
}

TEST(Sidecar, DuplicateIdRejected) {
  TempDir dir;
  spit(dir / "f.csv", "id,n=2\na,1,2\nb,3,4\na,5,6\n");
  EXPECT_THROW(SidecarFeatures::load(dir / "f.csv"), LoadError);
}

TEST(Sidecar, MalformedRejected) {
  TempDir dir;
  spit(dir / "a.csv", "name,dim\na,1\n");
  EXPECT_THROW(SidecarFeatures::load(dir / "a.csv"), LoadError);
  spit(dir / "b.csv", "id,n=2\na,1,x\n");
  EXPECT_THROW(SidecarFeatures::load(dir / "b.csv"), LoadError);
  spit(dir / "c.csv", "id,n=1\na,inf\n");
  EXPECT_THROW(SidecarFeatures::load(dir / "c.csv"), LoadError);
  EXPECT_THROW(SidecarFeatures::load(dir / "missing.csv"), LoadError);
}

}  // namespace
