#pragma once

// Synthetic nuclei pairs with known ground truth.

#include <cstdint>
#include <optional>

#include "nucreg/core.hpp"

namespace nucreg {

struct GaussianBump {
  Point2D center;
  Point2D amplitude;  // px displacement at the center
  double sigma = 1.0;
};

struct SynthConfig {
  std::size_t n_points = 500;
  std::uint64_t seed = 1;
  int width = 1024;
  int height = 1024;
  double min_spacing = 20.0;
  /// Rigid map from the moving frame onto the fixed frame, about the frame
  /// center; the registration target.
  double angle_deg = 0.0;
  double tx = 0.0;
  double ty = 0.0;
  int n_bumps = 0;
  double bump_amp = 10.0;
  double bump_sigma = 150.0;
  double jitter_sigma = 1.0;  // px, isotropic Gaussian truncated at radius 3 sigma
  double dropout_frac = 0.1;
  double clutter_frac = 0.05;
  bool render = false;
  double blob_sigma = 3.0;
};

struct SynthPair {
  PointSet2D fixed;
  PointSet2D moving;
  /// Surviving moving point -> its fixed origin; distance is the raw
  /// moving-to-fixed coordinate distance.
  Correspondences gt_correspondences;
  /// Maps moving onto fixed up to the non-rigid part.
  RigidTransform2D gt_rigid;
  std::vector<GaussianBump> bumps;
  /// Backward field in the fixed frame: moving = gt_rigid^-1(fixed + field(fixed)).
  DeformationField gt_field;
  std::optional<Raster> fixed_image;
  std::optional<Raster> moving_image;

  /// Sum of bumps at an arbitrary point.
  [[nodiscard]] Point2D field_at(Point2D p) const;
  /// Ground-truth image of a moving-frame point in the fixed frame.
  [[nodiscard]] Point2D map_to_fixed(Point2D moving_point) const;
};

/// Throws std::invalid_argument when min_spacing cannot fit n_points.
[[nodiscard]] SynthPair generate(const SynthConfig& cfg);

/// Gray image with a Gaussian splat of peak 255 at every point, clipped.
[[nodiscard]] Raster render_blobs(const PointSet2D& ps, double blob_sigma);

}  // namespace nucreg
