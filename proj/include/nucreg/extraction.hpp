#pragma once

#include <cstdint>
#include <vector>

#include "nucreg/core.hpp"

namespace nucreg {

/// Binary nuclei mask, row-major; true marks nucleus evidence.
class NucleiMask {
 public:
  NucleiMask(int width, int height, std::vector<bool> bitmap);
  /// Any nonzero pixel (luma) is active.
  static NucleiMask from_raster(const Raster& img);

  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] bool active(int x, int y) const {
    return bitmap_[static_cast<std::size_t>(y) * width_ + x];
  }

 private:
  int width_;
  int height_;
  std::vector<bool> bitmap_;
};

enum class ExtractionMode { Centroids, Pixels };

struct ExtractionOptions {
  ExtractionMode mode = ExtractionMode::Centroids;
  /// Components smaller than this many pixels are dropped (centroid mode).
  int min_component_size = 3;
};

/// Pixels mode: one point per active pixel at its center. Centroids mode:
/// one point per 8-connected component at the unweighted mean of its pixel
/// centers, in row-major order of each component's first pixel.
[[nodiscard]] PointSet2D extract_points(const NucleiMask& mask, const ExtractionOptions& opts = {});

}  // namespace nucreg
