#pragma once

// Binary grayscale portable pixmaps (P5, maxval 255).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sre/tensor.hpp"

namespace sre {

// [0,1] -> 0..255, rounding half up; out-of-range values clamp.
inline std::uint8_t to_gray_level(double v) {
  const double scaled = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(scaled);
}

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;  // row-major, height x width
};

inline GrayImage gray_image(const Tensor& t, std::size_t height, std::size_t width) {
  if (t.size() != height * width) {
    throw ShapeError("gray_image: " + shape_str(t.shape()) + " is not " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  return {width, height, std::vector<double>(t.data().begin(), t.data().end())};
}

// Panels of equal height side by side.
inline GrayImage hstack(const std::vector<GrayImage>& panels) {
  if (panels.empty()) throw std::invalid_argument("hstack: no panels");
  GrayImage out;
  out.height = panels.front().height;
  for (const auto& p : panels) {
    if (p.height != out.height) throw ShapeError("hstack: panel heights differ");
    out.width += p.width;
  }
  out.pixels.resize(out.width * out.height);
  std::size_t x0 = 0;
  for (const auto& p : panels) {
    for (std::size_t r = 0; r < p.height; ++r)
      std::copy_n(p.pixels.begin() + r * p.width, p.width, out.pixels.begin() + r * out.width + x0);
    x0 += p.width;
  }
  return out;
}

inline std::string encode_pgm(const GrayImage& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.pixels.size());
  for (double v : image.pixels) out.push_back(static_cast<char>(to_gray_level(v)));
  return out;
}

inline void write_pgm(const GrayImage& image, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  const std::string bytes = encode_pgm(image);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path);
}

}  // namespace sre
