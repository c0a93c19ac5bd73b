#pragma once

// Synthetic test suites: smooth random images plus a manifest, for
// oracle-driven campaigns and tests.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "amt/error.hpp"
#include "amt/image.hpp"
#include "amt/rng.hpp"
#include "amt/suts.hpp"
#include "amt/verdicts.hpp"

namespace amt {

/// Bilinear upsampling of a random (grid x grid) control lattice, so the
/// image varies smoothly across its extent.
inline RasterImage smooth_random_image(std::size_t w, std::size_t h, RngStream& rng, std::size_t grid = 4) {
  std::vector<double> ctrl(grid * grid * 3);
  for (double& v : ctrl) v = 255.0 * rng.uniform();
  RasterImage img(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    const double gy = (static_cast<double>(y) + 0.5) / static_cast<double>(h) * static_cast<double>(grid - 1);
    const auto y0 = std::min(static_cast<std::size_t>(gy), grid - 2);
    const double fy = gy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double gx = (static_cast<double>(x) + 0.5) / static_cast<double>(w) * static_cast<double>(grid - 1);
      const auto x0 = std::min(static_cast<std::size_t>(gx), grid - 2);
      const double fx = gx - static_cast<double>(x0);
      Rgb c{};
      for (std::size_t k = 0; k < 3; ++k) {
        const auto at = [&](std::size_t gxi, std::size_t gyi) { return ctrl[(gyi * grid + gxi) * 3 + k]; };
        const double v = (1 - fx) * (1 - fy) * at(x0, y0) + fx * (1 - fy) * at(x0 + 1, y0) +
                         (1 - fx) * fy * at(x0, y0 + 1) + fx * fy * at(x0 + 1, y0 + 1);
        c[k] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
      img.set(x, y, c);
    }
  }
  return img;
}

struct SuiteSpec {
  std::size_t count = 100;
  std::size_t classes = 10;
  std::size_t width = 32;
  std::size_t height = 32;
  Task task = Task::classification;
  std::uint64_t seed = 0;
};

/// Writes images/, annotations/ (detection only) and manifest.csv under
/// `dir`. Source i gets class i mod classes. Returns the manifest path.
inline std::filesystem::path write_synthetic_suite(const std::filesystem::path& dir, const SuiteSpec& spec) {
  if (spec.count == 0 || spec.classes == 0) throw InvalidInput("synthetic suite needs sources and classes");
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  if (spec.task == Task::detection) fs::create_directories(dir / "annotations");
  RngStream rng(spec.seed);
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw LoadError("cannot write " + (dir / "manifest.csv").string());
  manifest << "id,image,target\n";
  for (std::size_t i = 0; i < spec.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "src_%05zu", i);
    const std::string image = std::string("images/") + id + ".ppm";
    write_ppm(dir / image, smooth_random_image(spec.width, spec.height, rng));
    const int cls = static_cast<int>(i % spec.classes);
    if (spec.task == Task::classification) {
      manifest << id << ',' << image << ',' << cls << '\n';
    } else {
      const double w = static_cast<double>(spec.width);
      const double h = static_cast<double>(spec.height);
      const double x0 = std::floor(rng.uniform() * w / 2);
      const double y0 = std::floor(rng.uniform() * h / 2);
      const double x1 = x0 + 4 + std::floor(rng.uniform() * (w / 2 - 4));
      const double y1 = y0 + 4 + std::floor(rng.uniform() * (h / 2 - 4));
      const std::string ann = std::string("annotations/") + id + ".json";
      std::ofstream(dir / ann, std::ios::trunc) << truths_to_json({{{x0, y0, x1, y1}, cls}}).dump() << '\n';
      manifest << id << ',' << image << ',' << ann << '\n';
    }
  }
  return dir / "manifest.csv";
}

}  // namespace amt
