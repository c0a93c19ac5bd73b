#include <gtest/gtest.h>

#include <cmath>

#include "amt/relations.hpp"
#include "amt/rng.hpp"
#include "amt/suite.hpp"

namespace {

using namespace amt;

RasterImage noise_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  RngStream rng(seed);
  RasterImage img(w, h);
  for (auto& v : img.pixels()) v = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

TEST(Grids, RotationAndShear) {
  const auto& rot = rotation_grid();
  ASSERT_EQ(rot.size(), 36u);
  EXPECT_EQ(rot[0], -90);
  EXPECT_EQ(rot[17], -5);
  EXPECT_EQ(rot[18], 5);
  EXPECT_EQ(rot[35], 90);
  const auto& shear = shear_grid();
  ASSERT_EQ(shear.size(), 18u);
  EXPECT_EQ(shear[0], -45);
  EXPECT_EQ(shear[17], 45);
  EXPECT_FALSE(rot.contains(0));
  EXPECT_FALSE(shear.contains(0));
  EXPECT_TRUE(std::is_sorted(rot.values().begin(), rot.values().end()));
  for (std::size_t i = 0; i < rot.size(); ++i) EXPECT_EQ(rot.index_of(rot[i]), i);
  EXPECT_EQ(arm_combination_count(), 59u);
}

TEST(Registry, NamesAndDigest) {
  EXPECT_EQ(kRelationCount, 7u);
  for (Relation r : kRelations) EXPECT_EQ(parse_relation(to_string(r)), r);
  EXPECT_THROW(parse_relation("Sharpen"), InvalidInput);
  EXPECT_EQ(registry_digest(), registry_digest());
  EXPECT_EQ(registry_digest().size(), 16u);
}

TEST(ApplyMr, FlipLrTwoPixels) {
  RasterImage img(2, 1);
  img.set(0, 0, {1, 2, 3});
  img.set(1, 0, {4, 5, 6});
  const auto out = apply_mr(Relation::flip_lr, std::nullopt, img);
  EXPECT_EQ(out.at(0, 0), (Rgb{4, 5, 6}));
  EXPECT_EQ(out.at(1, 0), (Rgb{1, 2, 3}));
}

TEST(ApplyMr, InvertPixel) {
  RasterImage img(1, 1, Rgb{10, 20, 30});
  EXPECT_EQ(apply_mr(Relation::invert, std::nullopt, img).at(0, 0), (Rgb{245, 235, 225}));
}

TEST(ApplyMr, GrayscaleRed) {
  RasterImage img(1, 1, Rgb{255, 0, 0});
  EXPECT_EQ(apply_mr(Relation::grayscale, std::nullopt, img).at(0, 0), (Rgb{76, 76, 76}));
}

TEST(ApplyMr, RotateQuarterTurnPermutation) {
  const Rgb a{1, 1, 1}, b{2, 2, 2}, c{3, 3, 3}, d{4, 4, 4};
  RasterImage img(2, 2);
  img.set(0, 0, a);
  img.set(1, 0, b);
  img.set(0, 1, c);
  img.set(1, 1, d);
  const auto out = apply_mr(Relation::rotation, 90, img);
  EXPECT_EQ(out.at(0, 0), c);
  EXPECT_EQ(out.at(1, 0), a);
  EXPECT_EQ(out.at(0, 1), d);
  EXPECT_EQ(out.at(1, 1), b);
}

TEST(ApplyMr, BlurUsesAvailableNeighbours) {
  RasterImage img(3, 3);
  img.set(0, 0, {90, 0, 0});
  const auto out = apply_mr(Relation::blur, std::nullopt, img);
  EXPECT_EQ(out.at(0, 0)[0], 23);  // 90 / 4 rounded
  EXPECT_EQ(out.at(1, 1)[0], 10);  // 90 / 9
  EXPECT_EQ(out.at(2, 2)[0], 0);
  RasterImage flat(5, 4, Rgb{7, 8, 9});
  EXPECT_EQ(apply_mr(Relation::blur, std::nullopt, flat), flat);
}

TEST(ApplyMr, ParameterContract) {
  RasterImage img(4, 4);
  EXPECT_THROW(apply_mr(Relation::rotation, std::nullopt, img), InvalidInput);
  EXPECT_THROW(apply_mr(Relation::rotation, 7, img), InvalidInput);
  EXPECT_THROW(apply_mr(Relation::rotation, 0, img), InvalidInput);
  EXPECT_THROW(apply_mr(Relation::shear, 50, img), InvalidInput);
  EXPECT_THROW(apply_mr(Relation::blur, 5, img), InvalidInput);
}

TEST(ApplyMr, DimensionsPreserved) {
  const auto img = noise_image(13, 7, 4);
  for (Relation r : kRelations) {
    if (is_parameterized(r)) {
      for (int v : grid_for(r).values()) {
        const auto out = apply_mr(r, v, img);
        EXPECT_EQ(out.width(), 13u);
        EXPECT_EQ(out.height(), 7u);
      }
    } else {
      const auto out = apply_mr(r, std::nullopt, img);
      EXPECT_EQ(out.width(), 13u);
      EXPECT_EQ(out.height(), 7u);
    }
  }
}

TEST(Properties, InvolutionsAndIdempotence) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto img = noise_image(9 + seed % 5, 6 + seed % 3, seed);
    for (Relation r : {Relation::flip_lr, Relation::flip_ud, Relation::invert}) {
      EXPECT_EQ(apply_mr(r, std::nullopt, apply_mr(r, std::nullopt, img)), img);
    }
    const auto g = apply_mr(Relation::grayscale, std::nullopt, img);
    EXPECT_EQ(apply_mr(Relation::grayscale, std::nullopt, g), g);
  }
}

TEST(Properties, RightAngleRoundTripExact) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (std::size_t side : {1u, 2u, 5u, 8u, 17u}) {
      const auto img = noise_image(side, side, seed);
      EXPECT_EQ(apply_mr(Relation::rotation, -90, apply_mr(Relation::rotation, 90, img)), img);
      EXPECT_EQ(apply_mr(Relation::rotation, 90, apply_mr(Relation::rotation, -90, img)), img);
    }
  }
}

// Mean absolute channel error over pixels at distance < min(W,H)/2 - 2 from
// the centre, which no rotation ever fills with black.
double interior_rotation_error(const RasterImage& img, int phi) {
  const auto back = apply_mr(Relation::rotation, -phi, apply_mr(Relation::rotation, phi, img));
  const double cx = (static_cast<double>(img.width()) - 1) / 2;
  const double cy = (static_cast<double>(img.height()) - 1) / 2;
  const double radius = static_cast<double>(std::min(img.width(), img.height())) / 2 - 2;
  double err = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      if (std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy) >= radius) continue;
      for (std::size_t k = 0; k < 3; ++k) {
        err += std::abs(static_cast<double>(img.channel(x, y, k)) - back.channel(x, y, k));
        ++n;
      }
    }
  }
  return err / static_cast<double>(n) / 255.0;
}

TEST(Properties, RotationApproximateInverse) {
  RngStream rng(99);
  for (int i = 0; i < 100; ++i) {
    const auto img = smooth_random_image(32, 32, rng);
    for (int phi = 5; phi <= 45; phi += 5) {
      EXPECT_LE(interior_rotation_error(img, phi), 8.0 / 255.0) << "image " << i << " phi " << phi;
      EXPECT_LE(interior_rotation_error(img, -phi), 8.0 / 255.0) << "image " << i << " phi " << -phi;
    }
  }
}

TEST(Boxes, FlipLr) {
  const std::vector<BoundingBox> in{{10, 5, 30, 25}};
  const auto out = transform_boxes(Relation::flip_lr, std::nullopt, in, 100, 100);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], (BoundingBox{70, 5, 90, 25}));
}

TEST(Boxes, PhotometricUnchanged) {
  const std::vector<BoundingBox> in{{10, 5, 30, 25}, {1, 2, 3, 4}};
  for (Relation r : {Relation::invert, Relation::blur, Relation::grayscale}) {
    EXPECT_EQ(transform_boxes(r, std::nullopt, in, 100, 100), in);
  }
}

TEST(Boxes, QuarterTurn) {
  const std::vector<BoundingBox> in{{0, 0, 10, 10}};
  const auto out = transform_boxes(Relation::rotation, 90, in, 100, 100);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], (BoundingBox{90, 0, 100, 10}));
}

TEST(Boxes, ClippedAndDropped) {
  // A thin box at the top-left corner leaves the canvas under a 45-degree shear.
  const std::vector<BoundingBox> in{{0, 0, 5, 2}, {40, 40, 60, 60}};
  const auto out = transform_boxes(Relation::shear, 45, in, 100, 100);
  ASSERT_EQ(out.size(), 1u);
  for (const auto& b : out) {
    EXPECT_GE(b.x_min, 0.0);
    EXPECT_LE(b.x_max, 100.0);
    EXPECT_GT(b.area(), 0.0);
  }
}

RasterImage mask_of(const BoundingBox& b, std::size_t w, std::size_t h) {
  RasterImage m(w, h);
  for (auto y = static_cast<std::size_t>(b.y_min); y < static_cast<std::size_t>(b.y_max); ++y) {
    for (auto x = static_cast<std::size_t>(b.x_min); x < static_cast<std::size_t>(b.x_max); ++x) {
      m.set(x, y, {255, 255, 255});
    }
  }
  return m;
}

BoundingBox extent_of(const RasterImage& m) {
  BoundingBox b{1e9, 1e9, -1e9, -1e9};
  for (std::size_t y = 0; y < m.height(); ++y) {
    for (std::size_t x = 0; x < m.width(); ++x) {
      if (m.at(x, y)[0] == 0) continue;
      b.x_min = std::min(b.x_min, static_cast<double>(x));
      b.y_min = std::min(b.y_min, static_cast<double>(y));
      b.x_max = std::max(b.x_max, static_cast<double>(x + 1));
      b.y_max = std::max(b.y_max, static_cast<double>(y + 1));
    }
  }
  return b;
}

TEST(Boxes, ConsistentWithPixels) {
  RngStream rng(12);
  const std::size_t side = 24;
  for (int i = 0; i < 200; ++i) {
    const double x0 = static_cast<double>(rng.below(side - 1));
    const double y0 = static_cast<double>(rng.below(side - 1));
    const double x1 = x0 + 1 + static_cast<double>(rng.below(side - static_cast<std::size_t>(x0)));
    const double y1 = y0 + 1 + static_cast<double>(rng.below(side - static_cast<std::size_t>(y0)));
    const BoundingBox box{x0, y0, std::min(x1, double(side)), std::min(y1, double(side))};
    const auto mask = mask_of(box, side, side);
    const std::pair<Relation, std::optional<int>> cases[] = {{Relation::flip_lr, std::nullopt},
                                                            {Relation::flip_ud, std::nullopt},
                                                            {Relation::rotation, 90},
                                                            {Relation::rotation, -90}};
    for (const auto& [r, p] : cases) {
      const auto moved = transform_boxes(r, p, std::span(&box, 1), side, side);
      ASSERT_EQ(moved.size(), 1u);
      EXPECT_EQ(moved[0], extent_of(apply_mr(r, p, mask))) << to_string(r);
    }
  }
}

TEST(Ppm, RoundTrip) {
  const auto img = noise_image(7, 5, 3);
  EXPECT_EQ(decode_ppm(encode_ppm(img)), img);
  EXPECT_THROW(decode_ppm("P3\n1 1\n255\n0 0 0\n"), LoadError);
  EXPECT_EQ(decode_ppm(std::string("P6\n# c\n1 1\n255\n") + std::string("\x01\x02\x03", 3)).at(0, 0),
            (Rgb{1, 2, 3}));
}

}  // namespace
