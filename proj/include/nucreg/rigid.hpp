#pragma once

// Rigid point-set alignment: translation candidates (center of mass and
// phase correlation), an equidistant rotation sweep, and ICP refinement at
// every sweep angle.

#include <limits>
#include <vector>

#include "nucreg/core.hpp"
#include "nucreg/kdtree.hpp"

namespace nucreg {

struct IcpConfig {
  int max_iterations = 50;
  double match_threshold = 30.0;  // px
  double convergence_tol = 0.01;  // px, mean point shift between iterations
};

struct AraConfig {
  int num_angles = 72;
  double raster_cell = 4.0;  // px per phase-correlation bin
  IcpConfig icp;
};

struct RigidResult {
  RigidTransform2D transform;
  double mse = 0.0;  // px^2, capped at match_threshold^2 per point
  double matched_fraction = 0.0;
  bool converged = false;
  int iterations = 0;
  /// Capped MSE before the first iteration and after every iteration.
  std::vector<double> mse_trace;
  /// Final ICP MSE for each sweep angle (ara only), in sweep order.
  std::vector<double> per_angle_mse;
  std::vector<double> sweep_angles;
};

/// Mean squared nearest-neighbor residual of `moving` against the tree;
/// residuals above `cap` count as cap^2.
[[nodiscard]] double pointset_mse(const PointSet2D& moving, const KdTree2D& fixed_tree,
                                  double cap = std::numeric_limits<double>::infinity());

/// centroid(fixed) - centroid(moving)
[[nodiscard]] Point2D com_translation(const PointSet2D& moving, const PointSet2D& fixed);

/// Occupancy grid used by phase correlation: counts splatted with a
/// Gaussian of one cell, on a power-of-two grid covering twice the frame
/// (frame centered). Exposed for tests.
struct OccupancyGrid {
  int nx = 0;
  int ny = 0;
  double cell = 1.0;
  Point2D origin;  // world position of bin (0, 0)
  std::vector<double> values;  // row-major, ny rows of nx
};

[[nodiscard]] OccupancyGrid rasterize_points(const PointSet2D& ps, double cell);

/// Translation t such that moving + t best overlaps fixed, from the peak of
/// the normalized cross-power spectrum with parabolic sub-cell refinement.
[[nodiscard]] Point2D phase_correlation_translation(const PointSet2D& moving,
                                                    const PointSet2D& fixed, double cell);

/// Closed-form least-squares rotation + translation mapping src onto dst
/// (reflections rejected). Returned about the origin.
[[nodiscard]] RigidTransform2D fit_rigid(std::span<const Point2D> src, std::span<const Point2D> dst);

[[nodiscard]] RigidResult icp(const PointSet2D& moving, const KdTree2D& fixed_tree,
                              const RigidTransform2D& init, const IcpConfig& cfg = {});

[[nodiscard]] RigidResult ara(const PointSet2D& moving, const PointSet2D& fixed,
                              const AraConfig& cfg = {});

}  // namespace nucreg
