#include "nucreg/extraction.hpp"

#include <stdexcept>

namespace nucreg {

NucleiMask::NucleiMask(int width, int height, std::vector<bool> bitmap)
    : width_(width), height_(height), bitmap_(std::move(bitmap)) {
  if (width_ <= 0 || height_ <= 0) throw std::invalid_argument("mask dimensions must be positive");
  if (bitmap_.size() != static_cast<std::size_t>(width_) * height_) {
    throw std::invalid_argument("mask bitmap length does not match dimensions");
  }
}

NucleiMask NucleiMask::from_raster(const Raster& img) {
  std::vector<bool> bits(static_cast<std::size_t>(img.width()) * img.height());
  const auto px = img.pixels();
  const int c = img.channels();
  for (std::size_t i = 0; i < bits.size(); ++i) {
    bool on = false;
    for (int k = 0; k < c; ++k) on = on || px[i * c + k] != 0;
    bits[i] = on;
  }
  return NucleiMask(img.width(), img.height(), std::move(bits));
}

PointSet2D extract_points(const NucleiMask& mask, const ExtractionOptions& opts) {
  const int w = mask.width();
  const int h = mask.height();
  std::vector<Point2D> pts;

  if (opts.mode == ExtractionMode::Pixels) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (mask.active(x, y)) pts.push_back({static_cast<double>(x), static_cast<double>(y)});
      }
    }
    return PointSet2D(std::move(pts), w, h);
  }

  // Iterative 8-connected flood fill.
  std::vector<std::uint8_t> visited(static_cast<std::size_t>(w) * h, 0);
  std::vector<std::pair<int, int>> stack;
  for (int y0 = 0; y0 < h; ++y0) {
    for (int x0 = 0; x0 < w; ++x0) {
      const std::size_t id0 = static_cast<std::size_t>(y0) * w + x0;
      if (!mask.active(x0, y0) || visited[id0]) continue;
      visited[id0] = 1;
      stack.assign(1, {x0, y0});
      double sx = 0, sy = 0;
      long long count = 0;
      while (!stack.empty()) {
        const auto [x, y] = stack.back();
        stack.pop_back();
        sx += x;
        sy += y;
        ++count;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = x + dx, ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const std::size_t id = static_cast<std::size_t>(ny) * w + nx;
            if (visited[id] || !mask.active(nx, ny)) continue;
            visited[id] = 1;
            stack.emplace_back(nx, ny);
          }
        }
      }
      if (count >= opts.min_component_size) {
        pts.push_back({sx / static_cast<double>(count), sy / static_cast<double>(count)});
      }
    }
  }
  return PointSet2D(std::move(pts), w, h);
}

}  // namespace nucreg
