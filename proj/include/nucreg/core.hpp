#pragma once

// Shared geometry, raster and transform types.
//
// Coordinate convention: pixel (i, j) has its center at (x = i, y = j);
// x runs along columns, y along rows. Angles are degrees, counterclockwise.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nucreg {

/// Raised for numerical failures (singular systems, non-finite iterates).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a registration stage cannot proceed on its inputs (too few
/// matches, degenerate configuration).
class RegistrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Point2D {
  double x = 0.0;
  double y = 0.0;

  friend constexpr Point2D operator+(Point2D a, Point2D b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Point2D operator-(Point2D a, Point2D b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Point2D operator*(double s, Point2D a) { return {s * a.x, s * a.y}; }
  friend constexpr bool operator==(Point2D a, Point2D b) = default;

  [[nodiscard]] bool finite() const { return std::isfinite(x) && std::isfinite(y); }
};

[[nodiscard]] inline double squared_distance(Point2D a, Point2D b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

[[nodiscard]] inline double distance(Point2D a, Point2D b) {
  return std::sqrt(squared_distance(a, b));
}

/// Ordered nucleus coordinates inside a frame. Index i refers to the same
/// nucleus in every set derived from this one.
class PointSet2D {
 public:
  PointSet2D() = default;
  PointSet2D(std::vector<Point2D> points, int frame_width, int frame_height);

  [[nodiscard]] std::span<const Point2D> points() const { return points_; }
  [[nodiscard]] const Point2D& operator[](std::size_t i) const { return points_[i]; }
  [[nodiscard]] std::size_t size() const { return points_.size(); }
  [[nodiscard]] bool empty() const { return points_.empty(); }
  [[nodiscard]] int frame_width() const { return frame_width_; }
  [[nodiscard]] int frame_height() const { return frame_height_; }
  [[nodiscard]] double frame_diagonal() const;

  /// Same frame, new coordinates.
  [[nodiscard]] PointSet2D with_points(std::vector<Point2D> points) const;

  [[nodiscard]] Point2D centroid() const;

  friend bool operator==(const PointSet2D&, const PointSet2D&) = default;

 private:
  std::vector<Point2D> points_;
  int frame_width_ = 1;
  int frame_height_ = 1;
};

/// p' = R(angle) (p - c) + c + t
struct RigidTransform2D {
  double angle_deg = 0.0;
  double tx = 0.0;
  double ty = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  [[nodiscard]] static RigidTransform2D identity() { return {}; }

  [[nodiscard]] Point2D apply(Point2D p) const;
  [[nodiscard]] RigidTransform2D inverse() const;

  /// The transform equal to `first` followed by `*this`, expressed about
  /// the center of `first`.
  [[nodiscard]] RigidTransform2D after(const RigidTransform2D& first) const;

  /// Same mapping, re-expressed about a different rotation center.
  [[nodiscard]] RigidTransform2D recentered(Point2D center) const;
};

/// Wrap an angle into (-180, 180].
[[nodiscard]] double wrap_degrees(double angle);

struct Match {
  std::size_t moving_index = 0;
  std::size_t fixed_index = 0;
  double distance = 0.0;
};

using Correspondences = std::vector<Match>;

/// Throws std::invalid_argument when indices are out of range, a distance
/// is negative or a moving index repeats.
void validate_correspondences(const Correspondences& c, std::size_t n_moving, std::size_t n_fixed);

/// 8-bit image, 1 (gray) or 3 (RGB) interleaved channels, row-major.
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, int channels);
  Raster(int width, int height, int channels, std::vector<std::uint8_t> pixels);

  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int channels() const { return channels_; }
  [[nodiscard]] std::span<const std::uint8_t> pixels() const { return pixels_; }
  [[nodiscard]] std::span<std::uint8_t> pixels() { return pixels_; }

  [[nodiscard]] std::uint8_t at(int x, int y, int c = 0) const {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  /// Luma (BT.601) for RGB, copy for gray; values in [0, 255].
  [[nodiscard]] std::vector<double> luma() const;

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<std::uint8_t> pixels_;
};

struct Displacement {
  double dx = 0.0;
  double dy = 0.0;
  friend constexpr bool operator==(Displacement, Displacement) = default;
};

/// Dense backward map: output pixel (x, y) samples the source at
/// (x + dx, y + dy).
class DeformationField {
 public:
  DeformationField() = default;
  DeformationField(int width, int height);  // zero field
  DeformationField(int width, int height, std::vector<Displacement> displacements);

  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] std::span<const Displacement> displacements() const { return data_; }

  [[nodiscard]] const Displacement& at(int x, int y) const {
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  Displacement& at(int x, int y) { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  /// Bilinear interpolation, clamped to the grid.
  [[nodiscard]] Displacement sample(double x, double y) const;

  [[nodiscard]] double max_norm() const;
  [[nodiscard]] bool is_zero() const;

  friend bool operator==(const DeformationField&, const DeformationField&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Displacement> data_;
};

[[nodiscard]] PointSet2D apply_rigid(const RigidTransform2D& t, const PointSet2D& ps);

/// Single backward map equivalent to sampling through `field` and then
/// through the inverse of `rigid`: d'(x) = rigid^-1(x + d(x)) - x.
[[nodiscard]] DeformationField compose_field(const RigidTransform2D& rigid,
                                             const DeformationField& field);

/// As above for an explicit output frame. An empty (0x0) field stands for
/// the zero field; any other size must match the frame.
[[nodiscard]] DeformationField compose_field(const RigidTransform2D& rigid,
                                             const DeformationField& field, int width,
                                             int height);

/// Solve x + d(x) = p for x by fixed-point iteration; maps a point of the
/// source image into the output frame of a backward field.
[[nodiscard]] Point2D invert_backward(const DeformationField& field, Point2D p,
                                      int max_iterations = 50, double tol = 1e-6);

}  // namespace nucreg
