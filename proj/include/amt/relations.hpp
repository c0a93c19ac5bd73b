#pragma once

// The seven image metamorphic relations, their parameter grids, and the
// matching bounding-box co-transformation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "amt/error.hpp"
#include "amt/image.hpp"
#include "amt/rng.hpp"

namespace amt {

/// Arm order of the main bandit.
enum class Relation : std::uint8_t { blur, flip_lr, flip_ud, grayscale, invert, rotation, shear };

inline constexpr std::size_t kRelationCount = 7;
inline constexpr std::array<Relation, kRelationCount> kRelations = {
    Relation::blur,   Relation::flip_lr,  Relation::flip_ud, Relation::grayscale,
    Relation::invert, Relation::rotation, Relation::shear};

inline constexpr std::array<std::string_view, kRelationCount> kRelationNames = {
    "Blur", "FlipLR", "FlipUD", "Grayscale", "Invert", "Rotation", "Shear"};

constexpr std::size_t index_of(Relation r) noexcept { return static_cast<std::size_t>(r); }

inline std::string_view to_string(Relation r) { return kRelationNames[index_of(r)]; }

inline Relation parse_relation(std::string_view name) {
  for (std::size_t i = 0; i < kRelationCount; ++i) {
    if (kRelationNames[i] == name) return kRelations[i];
  }
  throw InvalidInput("unknown metamorphic relation: " + std::string(name));
}

constexpr bool is_parameterized(Relation r) noexcept {
  return r == Relation::rotation || r == Relation::shear;
}

/// Ascending signed-degree grid; index i selects value i.
class ParamGrid {
 public:
  ParamGrid() = default;
  ParamGrid(int max_degrees, int step) {
    for (int v = -max_degrees; v <= max_degrees; v += step) {
      if (v != 0) values_.push_back(v);
    }
  }

  std::size_t size() const noexcept { return values_.size(); }
  int operator[](std::size_t i) const { return values_.at(i); }
  std::span<const int> values() const noexcept { return values_; }

  std::optional<std::size_t> index_of(int degrees) const {
    const auto it = std::lower_bound(values_.begin(), values_.end(), degrees);
    if (it == values_.end() || *it != degrees) return std::nullopt;
    return static_cast<std::size_t>(it - values_.begin());
  }
  bool contains(int degrees) const { return index_of(degrees).has_value(); }

 private:
  std::vector<int> values_;
};

inline const ParamGrid& rotation_grid() {
  static const ParamGrid grid(90, 5);
  return grid;
}

inline const ParamGrid& shear_grid() {
  static const ParamGrid grid(45, 5);
  return grid;
}

inline const ParamGrid& grid_for(Relation r) {
  if (r == Relation::rotation) return rotation_grid();
  if (r == Relation::shear) return shear_grid();
  throw InvalidInput(std::string(to_string(r)) + " takes no parameter");
}

/// Number of distinct (relation, parameter) arms: 5 plain + 36 + 18.
inline std::size_t arm_combination_count() {
  std::size_t n = 0;
  for (Relation r : kRelations) n += is_parameterized(r) ? grid_for(r).size() : 1;
  return n;
}

/// Digest of relation names and grids; snapshots and logs carry it so that
/// artifacts built against a different relation set are rejected.
inline std::string registry_digest() {
  std::uint64_t h = fnv1a("amt-registry/1");
  for (Relation r : kRelations) {
    h = fnv1a(to_string(r), h);
    h = fnv1a(";", h);
    if (is_parameterized(r)) {
      for (int v : grid_for(r).values()) h = fnv1a(std::to_string(v) + ",", h);
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void check_param(Relation r, std::optional<int> param) {
  if (is_parameterized(r)) {
    if (!param) throw InvalidInput(std::string(to_string(r)) + " requires a parameter");
    if (!grid_for(r).contains(*param)) {
      throw InvalidInput(std::string(to_string(r)) + " parameter " + std::to_string(*param) + " is off-grid");
    }
  } else if (param) {
    throw InvalidInput(std::string(to_string(r)) + " takes no parameter");
  }
}

namespace detail {

struct Trig {
  double cos;
  double sin;
};

/// Exact values at right angles so that +-90 rotations of square images are
/// pixel permutations.
inline Trig degrees_trig(int degrees) {
  switch (((degrees % 360) + 360) % 360) {
    case 0: return {1.0, 0.0};
    case 90: return {0.0, 1.0};
    case 180: return {-1.0, 0.0};
    case 270: return {0.0, -1.0};
    default: {
      const double rad = degrees * std::numbers::pi / 180.0;
      return {std::cos(rad), std::sin(rad)};
    }
  }
}

inline double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

/// Bilinear sample with black outside the image.
inline Rgb sample_bilinear(const RasterImage& img, double x, double y) {
  x = snap(x);
  y = snap(y);
  const auto w = static_cast<double>(img.width());
  const auto h = static_cast<double>(img.height());
  if (x <= -1.0 || y <= -1.0 || x >= w || y >= h) return {0, 0, 0};
  const double fx0 = std::floor(x);
  const double fy0 = std::floor(y);
  const double ax = x - fx0;
  const double ay = y - fy0;
  const auto x0 = static_cast<long>(fx0);
  const auto y0 = static_cast<long>(fy0);
  std::array<double, 3> acc{0.0, 0.0, 0.0};
  const auto tap = [&](long px, long py, double weight) {
    if (weight == 0.0 || px < 0 || py < 0 || px >= static_cast<long>(img.width()) ||
        py >= static_cast<long>(img.height())) {
      return;
    }
    const Rgb c = img.at(static_cast<std::size_t>(px), static_cast<std::size_t>(py));
    for (int k = 0; k < 3; ++k) acc[k] += weight * c[k];
  };
  tap(x0, y0, (1.0 - ax) * (1.0 - ay));
  tap(x0 + 1, y0, ax * (1.0 - ay));
  tap(x0, y0 + 1, (1.0 - ax) * ay);
  tap(x0 + 1, y0 + 1, ax * ay);
  Rgb out;
  for (int k = 0; k < 3; ++k) {
    out[k] = static_cast<std::uint8_t>(std::clamp(std::lround(acc[k]), 0L, 255L));
  }
  return out;
}

template <class InverseMap>
RasterImage resample(const RasterImage& img, InverseMap inverse) {
  RasterImage out(img.width(), img.height());
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      const auto [sx, sy] = inverse(static_cast<double>(x), static_cast<double>(y));
      out.set(x, y, sample_bilinear(img, sx, sy));
    }
  }
  return out;
}

inline std::uint8_t luma(Rgb c) {
  return static_cast<std::uint8_t>((299u * c[0] + 587u * c[1] + 114u * c[2] + 500u) / 1000u);
}

}  // namespace detail

/// Applies relation `r` (with `param` degrees for Rotation/Shear). Output
/// has the input's dimensions.
///
/// Positive rotation angles turn the picture clockwise as displayed (y axis
/// pointing down). Shear is horizontal: x' = x + tan(phi) * (y - cy).
inline RasterImage apply_mr(Relation r, std::optional<int> param, const RasterImage& img) {
  check_param(r, param);
  if (img.empty()) throw InvalidInput("apply_mr: empty image");
  const std::size_t w = img.width();
  const std::size_t h = img.height();

  switch (r) {
    case Relation::blur: {
      RasterImage out(w, h);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          std::array<unsigned, 3> sum{0, 0, 0};
          unsigned count = 0;
          for (std::size_t ny = (y == 0 ? 0 : y - 1); ny <= std::min(h - 1, y + 1); ++ny) {
            for (std::size_t nx = (x == 0 ? 0 : x - 1); nx <= std::min(w - 1, x + 1); ++nx) {
              const Rgb c = img.at(nx, ny);
              for (int k = 0; k < 3; ++k) sum[k] += c[k];
              ++count;
            }
          }
          Rgb c;
          for (int k = 0; k < 3; ++k) c[k] = static_cast<std::uint8_t>((sum[k] + count / 2) / count);
          out.set(x, y, c);
        }
      }
      return out;
    }
    case Relation::flip_lr: {
      RasterImage out(w, h);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) out.set(w - 1 - x, y, img.at(x, y));
      }
      return out;
    }
    case Relation::flip_ud: {
      RasterImage out(w, h);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) out.set(x, h - 1 - y, img.at(x, y));
      }
      return out;
    }
    case Relation::grayscale: {
      RasterImage out = img;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const std::uint8_t v = detail::luma(img.at(x, y));
          out.set(x, y, {v, v, v});
        }
      }
      return out;
    }
    case Relation::invert: {
      RasterImage out = img;
      for (auto& v : out.pixels()) v = static_cast<std::uint8_t>(255 - v);
      return out;
    }
    case Relation::rotation: {
      const auto [c, s] = detail::degrees_trig(*param);
      const double cx = (static_cast<double>(w) - 1.0) / 2.0;
      const double cy = (static_cast<double>(h) - 1.0) / 2.0;
      return detail::resample(img, [&](double x, double y) {
        const double dx = x - cx;
        const double dy = y - cy;
        return std::pair{cx + c * dx + s * dy, cy - s * dx + c * dy};
      });
    }
    case Relation::shear: {
      const double t = std::tan(*param * std::numbers::pi / 180.0);
      const double cy = (static_cast<double>(h) - 1.0) / 2.0;
      return detail::resample(img, [&](double x, double y) { return std::pair{x - t * (y - cy), y}; });
    }
  }
  throw InvalidInput("apply_mr: unknown relation");
}

/// Maps every box through the same geometric map as `apply_mr`, takes the
/// axis-aligned hull, clips it to the image, and drops boxes left with no
/// area. Photometric relations leave boxes unchanged.
inline std::vector<BoundingBox> transform_boxes(Relation r, std::optional<int> param,
                                                std::span<const BoundingBox> boxes, std::size_t width,
                                                std::size_t height) {
  check_param(r, param);
  const auto w = static_cast<double>(width);
  const auto h = static_cast<double>(height);
  if (r == Relation::blur || r == Relation::grayscale || r == Relation::invert) {
    return {boxes.begin(), boxes.end()};
  }

  std::function<std::pair<double, double>(double, double)> map;
  switch (r) {
    case Relation::flip_lr: map = [&](double x, double y) { return std::pair{w - x, y}; }; break;
    case Relation::flip_ud: map = [&](double x, double y) { return std::pair{x, h - y}; }; break;
    case Relation::rotation: {
      const auto [c, s] = detail::degrees_trig(*param);
      map = [=](double x, double y) {
        const double dx = x - w / 2.0;
        const double dy = y - h / 2.0;
        return std::pair{w / 2.0 + c * dx - s * dy, h / 2.0 + s * dx + c * dy};
      };
      break;
    }
    case Relation::shear: {
      const double t = std::tan(*param * std::numbers::pi / 180.0);
      map = [=](double x, double y) { return std::pair{x + t * (y - h / 2.0), y}; };
      break;
    }
    default: break;
  }

  std::vector<BoundingBox> out;
  out.reserve(boxes.size());
  for (const BoundingBox& b : boxes) {
    const std::array<std::pair<double, double>, 4> corners = {
        map(b.x_min, b.y_min), map(b.x_max, b.y_min), map(b.x_min, b.y_max), map(b.x_max, b.y_max)};
    BoundingBox hull{corners[0].first, corners[0].second, corners[0].first, corners[0].second};
    for (const auto& [x, y] : corners) {
      hull.x_min = std::min(hull.x_min, x);
      hull.y_min = std::min(hull.y_min, y);
      hull.x_max = std::max(hull.x_max, x);
      hull.y_max = std::max(hull.y_max, y);
    }
    hull.x_min = std::clamp(hull.x_min, 0.0, w);
    hull.x_max = std::clamp(hull.x_max, 0.0, w);
    hull.y_min = std::clamp(hull.y_min, 0.0, h);
    hull.y_max = std::clamp(hull.y_max, 0.0, h);
    if (hull.area() > 0.0) out.push_back(hull);
  }
  return out;
}

}  // namespace amt
