#pragma once

// Context features for source test cases: a built-in raster descriptor and a
// loader for externally computed vectors.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "amt/bandit.hpp"
#include "amt/csv.hpp"
#include "amt/error.hpp"
#include "amt/image.hpp"

namespace amt {

inline constexpr std::size_t kThumbnailSide = 8;
inline constexpr std::size_t kHistogramBins = 8;
inline constexpr std::size_t kBuiltinFeatureDimension =
    kThumbnailSide * kThumbnailSide + 3 * kHistogramBins;  // 88

/// 8x8 area-averaged luma thumbnail in [0, 1] followed by one normalized
/// 8-bin histogram per RGB channel.
///
/// Cell and pixel boundaries are scaled by 8 so every overlap weight is an
/// integer; each cell is one exact integer sum followed by one division,
/// which keeps mirrored cells bitwise equal.
inline ContextVector extract_builtin(const RasterImage& image) {
  if (image.empty()) throw InvalidInput("extract_builtin: empty image");
  const std::size_t w = image.width();
  const std::size_t h = image.height();
  std::vector<double> out;
  out.reserve(kBuiltinFeatureDimension);

  // Scaled axis: pixel p spans [8p, 8p+8), cell c spans [c*n, (c+1)*n).
  const auto overlaps = [](std::size_t n) {
    std::vector<std::array<std::uint64_t, kThumbnailSide>> weights(n);
    for (std::size_t p = 0; p < n; ++p) {
      const std::uint64_t lo = 8 * p;
      const std::uint64_t hi = lo + 8;
      for (std::size_t c = 0; c < kThumbnailSide; ++c) {
        const std::uint64_t clo = c * n;
        const std::uint64_t chi = clo + n;
        const std::uint64_t a = std::max(lo, clo);
        const std::uint64_t b = std::min(hi, chi);
        weights[p][c] = b > a ? b - a : 0;
      }
    }
    return weights;
  };
  const auto wx = overlaps(w);
  const auto wy = overlaps(h);

  std::array<std::uint64_t, kThumbnailSide * kThumbnailSide> cells{};
  std::array<std::array<std::uint64_t, kHistogramBins>, 3> hist{};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const Rgb c = image.at(x, y);
      const std::uint64_t luma = 299u * c[0] + 587u * c[1] + 114u * c[2];  // 1000 x luma
      for (int k = 0; k < 3; ++k) ++hist[k][c[k] / (256 / kHistogramBins)];
      for (std::size_t cy = 0; cy < kThumbnailSide; ++cy) {
        if (wy[y][cy] == 0) continue;
        for (std::size_t cx = 0; cx < kThumbnailSide; ++cx) {
          if (wx[x][cx] == 0) continue;
          cells[cy * kThumbnailSide + cx] += wx[x][cx] * wy[y][cy] * luma;
        }
      }
    }
  }
  // Each cell covers w*h scaled units; luma is scaled by 1000 * 255.
  const double cell_norm = static_cast<double>(w) * static_cast<double>(h) * 1000.0 * 255.0;
  for (std::uint64_t s : cells) out.push_back(static_cast<double>(s) / cell_norm);
  const auto pixels = static_cast<double>(w * h);
  for (const auto& channel : hist) {
    for (std::uint64_t n : channel) out.push_back(static_cast<double>(n) / pixels);
  }
  return ContextVector(std::move(out));
}

/// Precomputed feature vectors, one CSV row per source:
///   id,n=<dimension>
///   img_0007,0.12,0.5,...
/// The whole file is validated when loaded.
class SidecarFeatures {
 public:
  static SidecarFeatures load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open feature sidecar " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw LoadError("feature sidecar is empty");
    const auto header = csv::split(line);
    if (header.size() != 2 || header[0] != "id" || header[1].rfind("n=", 0) != 0) {
      throw LoadError("feature sidecar header must be 'id,n=<dimension>'");
    }
    SidecarFeatures out;
    const long long n = csv::parse_int(std::string_view(header[1]).substr(2));
    if (n <= 0) throw LoadError("feature sidecar dimension must be positive");
    out.dimension_ = static_cast<std::size_t>(n);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      const auto fields = csv::split(line);
      if (fields.size() != out.dimension_ + 1) {
        throw LoadError("feature sidecar line " + std::to_string(line_no) + ": expected " +
                        std::to_string(out.dimension_) + " values, got " + std::to_string(fields.size() - 1));
      }
      std::vector<double> values;
      values.reserve(out.dimension_);
      for (std::size_t i = 1; i < fields.size(); ++i) {
        const double v = csv::parse_double(fields[i]);
        if (!std::isfinite(v)) {
          throw LoadError("feature sidecar line " + std::to_string(line_no) + ": non-finite value");
        }
        values.push_back(v);
      }
      if (!out.vectors_.emplace(fields[0], ContextVector(std::move(values))).second) {
        throw LoadError("feature sidecar: duplicate id '" + fields[0] + "'");
      }
    }
    return out;
  }

  std::size_t dimension() const noexcept { return dimension_; }
  std::size_t size() const noexcept { return vectors_.size(); }
  bool contains(const std::string& id) const { return vectors_.count(id) != 0; }

  const ContextVector& get(const std::string& id) const {
    const auto it = vectors_.find(id);
    if (it == vectors_.end()) throw LoadError("feature sidecar has no row for '" + id + "'");
    return it->second;
  }

 private:
  std::size_t dimension_ = 0;
  std::unordered_map<std::string, ContextVector> vectors_;
};

inline ContextVector load_sidecar(const std::filesystem::path& path, const std::string& source_id) {
  return SidecarFeatures::load(path).get(source_id);
}

}  // namespace amt
