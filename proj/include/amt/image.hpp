#pragma once

#include <array>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "amt/error.hpp"

namespace amt {

using Rgb = std::array<std::uint8_t, 3>;

/// Row-major RGB8 raster.
class RasterImage {
 public:
  RasterImage() = default;
  RasterImage(std::size_t width, std::size_t height, Rgb fill = {0, 0, 0})
      : width_(width), height_(height), pixels_(width * height * 3) {
    if (width == 0 || height == 0) throw InvalidInput("RasterImage: empty dimensions");
    for (std::size_t i = 0; i < width * height; ++i) {
      pixels_[3 * i] = fill[0];
      pixels_[3 * i + 1] = fill[1];
      pixels_[3 * i + 2] = fill[2];
    }
  }
  RasterImage(std::size_t width, std::size_t height, std::vector<std::uint8_t> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (width == 0 || height == 0) throw InvalidInput("RasterImage: empty dimensions");
    if (pixels_.size() != width * height * 3) throw InvalidInput("RasterImage: pixel buffer size mismatch");
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  bool empty() const noexcept { return pixels_.empty(); }

  Rgb at(std::size_t x, std::size_t y) const {
    const std::size_t i = 3 * (y * width_ + x);
    return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
  }
  void set(std::size_t x, std::size_t y, Rgb c) {
    const std::size_t i = 3 * (y * width_ + x);
    pixels_[i] = c[0];
    pixels_[i + 1] = c[1];
    pixels_[i + 2] = c[2];
  }
  std::uint8_t channel(std::size_t x, std::size_t y, std::size_t c) const {
    return pixels_[3 * (y * width_ + x) + c];
  }

  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }
  std::span<std::uint8_t> pixels() noexcept { return pixels_; }

  bool operator==(const RasterImage&) const = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Axis-aligned box in continuous pixel coordinates; pixel (x, y) covers
/// [x, x+1) x [y, y+1).
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept { return width() > 0.0 && height() > 0.0 ? width() * height() : 0.0; }
  bool valid() const noexcept { return x_min < x_max && y_min < y_max; }

  bool operator==(const BoundingBox&) const = default;
};

namespace detail {

inline std::size_t read_ppm_int(std::string_view buf, std::size_t& pos) {
  for (;;) {
    while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (pos < buf.size() && buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= buf.size() || !std::isdigit(static_cast<unsigned char>(buf[pos]))) {
    throw LoadError("malformed PPM header");
  }
  std::size_t v = 0;
  while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
    v = v * 10 + static_cast<std::size_t>(buf[pos] - '0');
    if (v > (1u << 24)) throw LoadError("PPM header value too large");
    ++pos;
  }
  return v;
}

}  // namespace detail

/// Decodes a binary P6 image with maxval 255.
inline RasterImage decode_ppm(std::string_view buf) {
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '6') throw LoadError("not a binary PPM (P6)");
  std::size_t pos = 2;
  const std::size_t width = detail::read_ppm_int(buf, pos);
  const std::size_t height = detail::read_ppm_int(buf, pos);
  const std::size_t maxval = detail::read_ppm_int(buf, pos);
  if (maxval != 255) throw LoadError("only PPM maxval 255 is supported");
  if (width == 0 || height == 0) throw LoadError("PPM has empty dimensions");
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos]))) {
    throw LoadError("malformed PPM header");
  }
  ++pos;
  const std::size_t n = width * height * 3;
  if (buf.size() - pos < n) throw LoadError("truncated PPM pixel data");
  std::vector<std::uint8_t> px(n);
  for (std::size_t i = 0; i < n; ++i) px[i] = static_cast<std::uint8_t>(buf[pos + i]);
  return RasterImage(width, height, std::move(px));
}

inline RasterImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open image " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_ppm(buf);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

inline std::string encode_ppm(const RasterImage& image) {
  std::string out = "P6\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
  const auto px = image.pixels();
  out.append(reinterpret_cast<const char*>(px.data()), px.size());
  return out;
}

inline void write_ppm(const std::filesystem::path& path, const RasterImage& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write image " + path.string());
  const std::string bytes = encode_ppm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace amt
