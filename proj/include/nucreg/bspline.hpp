#pragma once

// Multi-resolution cubic B-spline free-form deformation refined by gradient
// descent on intensity MSE.

#include <array>
#include <vector>

#include "nucreg/core.hpp"

namespace nucreg {

/// Uniform cubic B-spline basis at local parameter u in [0, 1).
[[nodiscard]] std::array<double, 4> cubic_bspline_basis(double u);

/// Control displacements on a lattice of spacing s; node k sits at pixel
/// coordinate (k - 1) s, so one extra node pads each side.
class BsplineGrid {
 public:
  BsplineGrid(int width, int height, double spacing);

  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] double spacing() const { return spacing_; }
  [[nodiscard]] int nodes_x() const { return nx_; }
  [[nodiscard]] int nodes_y() const { return ny_; }

  [[nodiscard]] Displacement& control(int i, int j) {
    return controls_[static_cast<std::size_t>(j) * nx_ + i];
  }
  [[nodiscard]] const Displacement& control(int i, int j) const {
    return controls_[static_cast<std::size_t>(j) * nx_ + i];
  }
  [[nodiscard]] std::vector<Displacement>& controls() { return controls_; }
  [[nodiscard]] const std::vector<Displacement>& controls() const { return controls_; }

  /// First lattice index of the 4x4 support and the local parameter.
  void locate(double coord, int nodes, int& first, double& u) const;

  [[nodiscard]] Displacement eval(double x, double y) const;
  [[nodiscard]] DeformationField to_field() const;

  /// Same deformation on a lattice of half the spacing (exact dyadic
  /// subdivision).
  [[nodiscard]] BsplineGrid refined() const;

 private:
  int width_;
  int height_;
  double spacing_;
  int nx_;
  int ny_;
  std::vector<Displacement> controls_;
};

[[nodiscard]] Displacement bspline_eval(const BsplineGrid& grid, double x, double y);

struct RefineConfig {
  int levels = 3;
  double initial_spacing = 128.0;  // px, halved per level
  int max_iters_per_level = 100;
  double step_init = 2.0;     // px, largest control move per step
  double step_shrink = 0.5;
  double min_improvement = 1e-4;  // relative MSE per accepted step
  double min_step = 1e-3;         // px; line search gives up below this
};

struct RefineResult {
  DeformationField field;
  double initial_mse = 0.0;
  double final_mse = 0.0;
  std::vector<double> mse_trace;        // after every accepted step, initial first
  std::vector<double> level_end_mse;    // one per completed level
  std::vector<double> level_spacing;
};

/// Mean squared luma difference between fixed(x) and moving(x + field(x))
/// over pixels with an in-bounds source.
[[nodiscard]] double image_mse(const Raster& fixed, const Raster& moving,
                               const DeformationField& field = {});

[[nodiscard]] RefineResult refine_detailed(const Raster& fixed, const Raster& moving_warped,
                                           const RefineConfig& cfg = {});

[[nodiscard]] DeformationField refine(const Raster& fixed, const Raster& moving_warped,
                                      const RefineConfig& cfg = {});

}  // namespace nucreg
