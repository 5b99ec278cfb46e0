#include <algorithm>
#include <stdexcept>

#include "nucreg/warp.hpp"

namespace nucreg {

namespace {

constexpr double kEdgeSlack = 1e-9;

bool locate(int width, int height, double& x, double& y, int& x0, int& y0, double& fx, double& fy) {
  if (!(x >= -kEdgeSlack && y >= -kEdgeSlack && x <= width - 1 + kEdgeSlack &&
        y <= height - 1 + kEdgeSlack)) {
    return false;
  }
  x = std::clamp(x, 0.0, static_cast<double>(width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(height - 1));
  x0 = std::min(static_cast<int>(x), std::max(width - 2, 0));
  y0 = std::min(static_cast<int>(y), std::max(height - 2, 0));
  fx = x - x0;
  fy = y - y0;
  return true;
}

}  // namespace

bool sample_bilinear(std::span<const double> values, int width, int height, double x, double y,
                     double& out) {
  int x0 = 0, y0 = 0;
  double fx = 0, fy = 0;
  if (!locate(width, height, x, y, x0, y0, fx, fy)) return false;
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const auto at = [&](int xx, int yy) { return values[static_cast<std::size_t>(yy) * width + xx]; };
  out = (1 - fy) * ((1 - fx) * at(x0, y0) + fx * at(x1, y0)) +
        fy * ((1 - fx) * at(x0, y1) + fx * at(x1, y1));
  return true;
}

namespace {

Raster warp_into(const Raster& img, const RigidTransform2D& rigid, const DeformationField& field, int w,
                 int h) {
  const bool has_field = field.width() != 0 || field.height() != 0;
  if (has_field && (field.width() != w || field.height() != h)) {
    throw std::invalid_argument("warp_image: field is " + std::to_string(field.width()) + "x" +
                                std::to_string(field.height()) + ", output frame is " +
                                std::to_string(w) + "x" + std::to_string(h));
  }
  if (w <= 0 || h <= 0) throw std::invalid_argument("warp_image: empty output frame");
  const RigidTransform2D inv = rigid.inverse();
  const int ch = img.channels();
  Raster out(w, h, ch);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Displacement d = has_field ? field.at(x, y) : Displacement{};
      Point2D s = inv.apply({x + d.dx, y + d.dy});
      int x0 = 0, y0 = 0;
      double fx = 0, fy = 0;
      if (!locate(img.width(), img.height(), s.x, s.y, x0, y0, fx, fy)) continue;
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const int y1 = std::min(y0 + 1, img.height() - 1);
      for (int c = 0; c < ch; ++c) {
        const double v = (1 - fy) * ((1 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c)) +
                         fy * ((1 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c));
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

}  // namespace

Raster warp_image(const Raster& img, const RigidTransform2D& rigid, const DeformationField& field) {
  return warp_into(img, rigid, field, img.width(), img.height());
}

Raster warp_image(const Raster& img, const RigidTransform2D& rigid, const DeformationField& field,
                  int width, int height) {
  return warp_into(img, rigid, field, width, height);
}

Raster warp_image(const Raster& img, const DeformationField& field) {
  if (field.width() == 0 && field.height() == 0) return img;
  return warp_into(img, RigidTransform2D::identity(), field, field.width(), field.height());
}

}  // namespace nucreg
