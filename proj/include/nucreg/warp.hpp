#pragma once

// Thin-plate-spline fields and backward image resampling.

#include <Eigen/Core>
#include <span>
#include <vector>

#include "nucreg/core.hpp"

namespace nucreg {

/// f(p) = a0 + A p + sum_j w_j U(|p - c_j|), U(r) = r^2 ln r.
///
/// Fitted and evaluated in coordinates centered on the control points and
/// scaled to unit RMS radius; the pixel-unit accessors below convert.
class TpsModel {
 public:
  [[nodiscard]] Point2D operator()(Point2D p) const;

  [[nodiscard]] std::span<const Point2D> control_points() const { return controls_; }
  [[nodiscard]] double regularization() const { return reg_; }

  /// Kernel weights in pixel units (N x 2).
  [[nodiscard]] Eigen::MatrixX2d kernel_weights() const;
  /// Affine part in pixel units, rows (x, y), columns (1, p.x, p.y).
  [[nodiscard]] Eigen::Matrix<double, 2, 3> affine() const;

 private:
  friend TpsModel tps_fit(std::span<const Point2D>, std::span<const Point2D>, double);

  std::vector<Point2D> controls_;
  // Fitted state is kept in long double: the kernel sum cancels heavily and
  // double storage alone costs about 1e-9 px away from the controls.
  std::vector<long double> nu_, nv_;  // controls in fitting coordinates
  Point2D center_;
  double scale_ = 1.0;
  double reg_ = 0.0;
  std::vector<long double> wu_, wv_;  // kernel weights, fitting coordinates
  long double au_[3] = {}, av_[3] = {};  // affine part, (1, u, v)
};

[[nodiscard]] double tps_kernel(double r);

/// Fit source -> target. `reg` (px^2) is added to the kernel diagonal;
/// reg = 0 interpolates. Throws RegistrationError for collinear controls.
[[nodiscard]] TpsModel tps_fit(std::span<const Point2D> source, std::span<const Point2D> target,
                               double reg = 0.0);

/// field(x, y) = model(x, y) - (x, y)
[[nodiscard]] DeformationField tps_field(const TpsModel& model, int width, int height);

/// Backward model for warping: maps registered (fixed-frame) positions
/// `moving_after` back to `moving_before`.
[[nodiscard]] TpsModel make_backward_tps(const PointSet2D& moving_before,
                                         const PointSet2D& moving_after, double reg = 0.0);

/// Output pixel p samples the source at rigid^-1(p + field(p)); bilinear,
/// zero outside the source. The output has the image's size and a non-empty
/// field must match it; an empty (0x0) field means no non-rigid part.
[[nodiscard]] Raster warp_image(const Raster& img, const RigidTransform2D& rigid,
                                const DeformationField& field);

/// As above into an explicit output frame; a non-empty field must match it.
[[nodiscard]] Raster warp_image(const Raster& img, const RigidTransform2D& rigid,
                                const DeformationField& field, int width, int height);

/// Warp through a backward field alone into a frame of the field's size.
[[nodiscard]] Raster warp_image(const Raster& img, const DeformationField& field);

/// Bilinear sample of a float grid; returns false outside [0, w-1] x [0, h-1].
bool sample_bilinear(std::span<const double> values, int width, int height, double x, double y,
                     double& out);

}  // namespace nucreg
