#include "nucreg/core.hpp"

#include <algorithm>
#include <numbers>
#include <unordered_set>
#include <utility>

namespace nucreg {

namespace {

// Exact values at multiples of 90 degrees keep quarter-turn warps on the
// pixel lattice.
std::pair<double, double> cos_sin_deg(double angle_deg) {
  const double quarter = angle_deg / 90.0;
  if (quarter == std::round(quarter)) {
    switch (((static_cast<long long>(std::round(quarter)) % 4) + 4) % 4) {
      case 0: return {1.0, 0.0};
      case 1: return {0.0, 1.0};
      case 2: return {-1.0, 0.0};
      default: return {0.0, -1.0};
    }
  }
  const double rad = angle_deg * std::numbers::pi / 180.0;
  return {std::cos(rad), std::sin(rad)};
}

}  // namespace

PointSet2D::PointSet2D(std::vector<Point2D> points, int frame_width, int frame_height)
    : points_(std::move(points)), frame_width_(frame_width), frame_height_(frame_height) {
  if (frame_width_ <= 0 || frame_height_ <= 0) {
    throw std::invalid_argument("point set frame dimensions must be positive");
  }
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!points_[i].finite()) {
      throw std::invalid_argument("point " + std::to_string(i) + " is not finite");
    }
  }
}

double PointSet2D::frame_diagonal() const {
  return std::hypot(static_cast<double>(frame_width_), static_cast<double>(frame_height_));
}

PointSet2D PointSet2D::with_points(std::vector<Point2D> points) const {
  return PointSet2D(std::move(points), frame_width_, frame_height_);
}

Point2D PointSet2D::centroid() const {
  if (points_.empty()) throw std::invalid_argument("centroid of an empty point set");
  Point2D sum;
  for (const auto& p : points_) sum = sum + p;
  return (1.0 / static_cast<double>(points_.size())) * sum;
}

Point2D RigidTransform2D::apply(Point2D p) const {
  const auto [c, s] = cos_sin_deg(angle_deg);
  const double rx = p.x - cx;
  const double ry = p.y - cy;
  return {c * rx - s * ry + cx + tx, s * rx + c * ry + cy + ty};
}

RigidTransform2D RigidTransform2D::inverse() const {
  // p = R^-1 (q - (c + t)) + (c + t) - t
  return {-angle_deg, -tx, -ty, cx + tx, cy + ty};
}

RigidTransform2D RigidTransform2D::after(const RigidTransform2D& first) const {
  // Rotation composes additively; the translation about first's center is
  // whatever maps that center to its composed image.
  const Point2D center{first.cx, first.cy};
  const Point2D image = apply(first.apply(center));
  return {angle_deg + first.angle_deg, image.x - center.x, image.y - center.y, center.x,
          center.y};
}

RigidTransform2D RigidTransform2D::recentered(Point2D center) const {
  const Point2D image = apply(center);
  return {angle_deg, image.x - center.x, image.y - center.y, center.x, center.y};
}

double wrap_degrees(double angle) {
  double a = std::fmod(angle, 360.0);
  if (a <= -180.0) a += 360.0;
  if (a > 180.0) a -= 360.0;
  return a;
}

void validate_correspondences(const Correspondences& c, std::size_t n_moving,
                              std::size_t n_fixed) {
  std::unordered_set<std::size_t> seen;
  for (const auto& m : c) {
    if (m.moving_index >= n_moving || m.fixed_index >= n_fixed) {
      throw std::invalid_argument("correspondence index out of range");
    }
    if (!(m.distance >= 0.0)) throw std::invalid_argument("negative correspondence distance");
    if (!seen.insert(m.moving_index).second) {
      throw std::invalid_argument("moving index " + std::to_string(m.moving_index) +
                                  " matched twice");
    }
  }
}

Raster::Raster(int width, int height, int channels)
    : Raster(width, height, channels,
             std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(width, 0)) *
                                       std::max(height, 0) * std::max(channels, 0))) {}

Raster::Raster(int width, int height, int channels, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), channels_(channels), pixels_(std::move(pixels)) {
  if (width_ <= 0 || height_ <= 0) throw std::invalid_argument("raster dimensions must be positive");
  if (channels_ != 1 && channels_ != 3) throw std::invalid_argument("raster must have 1 or 3 channels");
  if (pixels_.size() != static_cast<std::size_t>(width_) * height_ * channels_) {
    throw std::invalid_argument("raster buffer length does not match dimensions");
  }
}

std::vector<double> Raster::luma() const {
  const std::size_t n = static_cast<std::size_t>(width_) * height_;
  std::vector<double> out(n);
  if (channels_ == 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = pixels_[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = 0.299 * pixels_[3 * i] + 0.587 * pixels_[3 * i + 1] + 0.114 * pixels_[3 * i + 2];
    }
  }
  return out;
}

DeformationField::DeformationField(int width, int height)
    : DeformationField(width, height,
                       std::vector<Displacement>(static_cast<std::size_t>(std::max(width, 0)) *
                                                 std::max(height, 0))) {}

DeformationField::DeformationField(int width, int height, std::vector<Displacement> displacements)
    : width_(width), height_(height), data_(std::move(displacements)) {
  if (width_ < 0 || height_ < 0) throw std::invalid_argument("negative field dimensions");
  if (data_.size() != static_cast<std::size_t>(width_) * height_) {
    throw std::invalid_argument("field grid does not match declared dimensions");
  }
  for (const auto& d : data_) {
    if (!std::isfinite(d.dx) || !std::isfinite(d.dy)) {
      throw std::invalid_argument("field displacement is not finite");
    }
  }
}

Displacement DeformationField::sample(double x, double y) const {
  if (data_.empty()) return {};
  x = std::clamp(x, 0.0, static_cast<double>(width_ - 1));
  y = std::clamp(y, 0.0, static_cast<double>(height_ - 1));
  const int x0 = std::min(static_cast<int>(x), std::max(width_ - 2, 0));
  const int y0 = std::min(static_cast<int>(y), std::max(height_ - 2, 0));
  const int x1 = std::min(x0 + 1, width_ - 1);
  const int y1 = std::min(y0 + 1, height_ - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const auto& a = at(x0, y0);
  const auto& b = at(x1, y0);
  const auto& c = at(x0, y1);
  const auto& d = at(x1, y1);
  const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy), w01 = (1 - fx) * fy, w11 = fx * fy;
  return {w00 * a.dx + w10 * b.dx + w01 * c.dx + w11 * d.dx,
          w00 * a.dy + w10 * b.dy + w01 * c.dy + w11 * d.dy};
}

double DeformationField::max_norm() const {
  double m = 0.0;
  for (const auto& d : data_) m = std::max(m, std::hypot(d.dx, d.dy));
  return m;
}

bool DeformationField::is_zero() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](const Displacement& d) { return d.dx == 0.0 && d.dy == 0.0; });
}

PointSet2D apply_rigid(const RigidTransform2D& t, const PointSet2D& ps) {
  std::vector<Point2D> out;
  out.reserve(ps.size());
  for (const auto& p : ps.points()) out.push_back(t.apply(p));
  return ps.with_points(std::move(out));
}

DeformationField compose_field(const RigidTransform2D& rigid, const DeformationField& field) {
  return compose_field(rigid, field, field.width(), field.height());
}

DeformationField compose_field(const RigidTransform2D& rigid, const DeformationField& field,
                               int width, int height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("output frame must be positive");
  const bool zero = field.width() == 0 && field.height() == 0;
  if (!zero && (field.width() != width || field.height() != height)) {
    throw std::invalid_argument("field dimensions " + std::to_string(field.width()) + "x" +
                                std::to_string(field.height()) + " do not match output frame " +
                                std::to_string(width) + "x" + std::to_string(height));
  }
  const RigidTransform2D inv = rigid.inverse();
  DeformationField out(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Displacement d = zero ? Displacement{} : field.at(x, y);
      const Point2D src = inv.apply({x + d.dx, y + d.dy});
      out.at(x, y) = {src.x - x, src.y - y};
    }
  }
  return out;
}

Point2D invert_backward(const DeformationField& field, Point2D p, int max_iterations,
                        double tol) {
  Point2D x = p;
  for (int i = 0; i < max_iterations; ++i) {
    const Displacement d = field.sample(x.x, x.y);
    const Point2D next{p.x - d.dx, p.y - d.dy};
    const double step = distance(next, x);
    x = next;
    if (step < tol) break;
  }
  return x;
}

}  // namespace nucreg
