#pragma once

// Non-rigid point-set registration: coherent point drift (GMM E/M steps with
// a Gaussian-kernel displacement field) regularised by locally linear
// embedding weights of the moving set.

#include <Eigen/Core>
#include <vector>

#include "nucreg/core.hpp"

namespace nucreg {

/// Row-stochastic reconstruction weights; row i spans the K nearest
/// neighbors of point i (never i itself).
struct LleMatrix {
  std::size_t n = 0;
  std::vector<std::vector<std::size_t>> neighbors;
  std::vector<std::vector<double>> weights;

  [[nodiscard]] double row_sum(std::size_t i) const;
  [[nodiscard]] Eigen::MatrixXd dense() const;
};

struct GaussianKernel {
  double beta = 1.0;
  Eigen::MatrixXd values;  // G_ij = exp(-|y_i - y_j|^2 / (2 beta^2))
};

struct CpdConfig {
  double beta = 0.0;  // px; <= 0 means 0.1 * frame diagonal
  double lambda = 2.0;
  double alpha = 1.0;
  int k_neighbors = 8;
  double outlier_weight = 0.1;
  int max_iterations = 150;
  double sigma_tol = 1e-5;
  /// Above this many moving points the displacement basis is a
  /// farthest-point subsample (all points still enter the mixture).
  std::size_t max_points = 3000;
};

struct NonRigidSolution {
  Eigen::MatrixXd coefficients;  // W, rows follow `control_indices`
  std::vector<std::size_t> control_indices;  // moving indices carrying W (all, unless subsampled)
  PointSet2D displaced;  // moving + G W
  std::vector<double> sigma2_trace;  // px^2, initial value first
  int iterations = 0;
  bool converged = false;
};

[[nodiscard]] LleMatrix lle_weights(const PointSet2D& moving, int k);

[[nodiscard]] GaussianKernel gaussian_kernel(const PointSet2D& moving, double beta);

/// Greedy farthest-point subsample, seeded at the point nearest the centroid.
[[nodiscard]] std::vector<std::size_t> farthest_point_sample(const PointSet2D& ps, std::size_t count);

/// Register a rigidly pre-aligned moving set onto fixed. Coordinates are
/// normalised by the fixed set's mean and RMS radius inside the solver.
[[nodiscard]] NonRigidSolution cpd_lle_register(const PointSet2D& moving, const PointSet2D& fixed,
                                                const CpdConfig& cfg = {});

}  // namespace nucreg
