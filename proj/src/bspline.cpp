#include "nucreg/bspline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "nucreg/warp.hpp"

namespace nucreg {

std::array<double, 4> cubic_bspline_basis(double u) {
  const double u2 = u * u;
  const double u3 = u2 * u;
  const double v = 1.0 - u;
  return {v * v * v / 6.0, (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
          (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0, u3 / 6.0};
}

BsplineGrid::BsplineGrid(int width, int height, double spacing)
    : width_(width), height_(height), spacing_(spacing) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("bspline grid: dimensions must be positive");
  if (!(spacing > 0)) throw std::invalid_argument("bspline grid: spacing must be positive");
  nx_ = static_cast<int>(std::floor((width - 1) / spacing)) + 4;
  ny_ = static_cast<int>(std::floor((height - 1) / spacing)) + 4;
  controls_.assign(static_cast<std::size_t>(nx_) * ny_, Displacement{});
}

void BsplineGrid::locate(double coord, int nodes, int& first, double& u) const {
  const double t = coord / spacing_;
  first = std::clamp(static_cast<int>(std::floor(t)), 0, nodes - 4);
  u = t - first;
}

Displacement BsplineGrid::eval(double x, double y) const {
  int ix = 0, iy = 0;
  double u = 0, v = 0;
  locate(x, nx_, ix, u);
  locate(y, ny_, iy, v);
  const auto bx = cubic_bspline_basis(u);
  const auto by = cubic_bspline_basis(v);
  Displacement d;
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      const double w = by[a] * bx[b];
      const Displacement& c = control(ix + b, iy + a);
      d.dx += w * c.dx;
      d.dy += w * c.dy;
    }
  }
  return d;
}

DeformationField BsplineGrid::to_field() const {
  DeformationField f(width_, height_);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) f.at(x, y) = eval(x, y);
  }
  return f;
}

BsplineGrid BsplineGrid::refined() const {
  BsplineGrid fine(width_, height_, spacing_ / 2.0);
  // Fine node j sits at (j - 1) s/2. Odd j coincides with coarse node
  // k = (j + 1) / 2, even j lies midway between coarse k = j / 2 and k + 1.
  auto coarse_1d = [](int j, int nodes, std::array<int, 3>& idx, std::array<double, 3>& w) {
    auto clampi = [nodes](int k) { return std::clamp(k, 0, nodes - 1); };
    if (j % 2 != 0) {
      const int k = (j + 1) / 2;
      idx = {clampi(k - 1), clampi(k), clampi(k + 1)};
      w = {1.0 / 8.0, 6.0 / 8.0, 1.0 / 8.0};
    } else {
      const int k = j / 2;
      idx = {clampi(k), clampi(k + 1), clampi(k + 1)};
      w = {0.5, 0.5, 0.0};
    }
  };
  for (int jy = 0; jy < fine.ny_; ++jy) {
    std::array<int, 3> iy{};
    std::array<double, 3> wy{};
    coarse_1d(jy, ny_, iy, wy);
    for (int jx = 0; jx < fine.nx_; ++jx) {
      std::array<int, 3> ix{};
      std::array<double, 3> wx{};
      coarse_1d(jx, nx_, ix, wx);
      Displacement d;
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          const double w = wy[a] * wx[b];
          if (w == 0.0) continue;
          d.dx += w * control(ix[b], iy[a]).dx;
          d.dy += w * control(ix[b], iy[a]).dy;
        }
      }
      fine.control(jx, jy) = d;
    }
  }
  return fine;
}

Displacement bspline_eval(const BsplineGrid& grid, double x, double y) { return grid.eval(x, y); }

namespace {

// Per-level evaluation state: separable basis tables and the two images.
class LevelObjective {
 public:
  LevelObjective(const BsplineGrid& grid, const std::vector<double>& fixed,
                 const std::vector<double>& moving)
      : grid_(grid), fixed_(fixed), moving_(moving), w_(grid.width()), h_(grid.height()) {
    build_table(w_, grid.nodes_x(), first_x_, basis_x_);
    build_table(h_, grid.nodes_y(), first_y_, basis_y_);
  }

  /// MSE of controls; fills `grad` (same layout as controls) when non-null.
  double evaluate(const std::vector<Displacement>& controls, std::vector<Displacement>* grad) const {
    const int nx = grid_.nodes_x();
    std::vector<Displacement> row(nx);
    std::vector<Displacement> row_grad;
    if (grad) grad->assign(controls.size(), Displacement{});
    double sum = 0.0;
    std::size_t valid = 0;
    for (int y = 0; y < h_; ++y) {
      const int fy = first_y_[y];
      const auto& by = basis_y_[y];
      for (int i = 0; i < nx; ++i) {
        Displacement acc;
        for (int a = 0; a < 4; ++a) {
          const Displacement& c = controls[static_cast<std::size_t>(fy + a) * nx + i];
          acc.dx += by[a] * c.dx;
          acc.dy += by[a] * c.dy;
        }
        row[i] = acc;
      }
      if (grad) row_grad.assign(nx, Displacement{});
      for (int x = 0; x < w_; ++x) {
        const int fx = first_x_[x];
        const auto& bx = basis_x_[x];
        double dx = 0, dy = 0;
        for (int b = 0; b < 4; ++b) {
          dx += bx[b] * row[fx + b].dx;
          dy += bx[b] * row[fx + b].dy;
        }
        double sx = x + dx, sy = y + dy;
        if (!(sx >= 0 && sy >= 0 && sx <= w_ - 1 && sy <= h_ - 1)) continue;
        const int x0 = std::min(static_cast<int>(sx), std::max(w_ - 2, 0));
        const int y0 = std::min(static_cast<int>(sy), std::max(h_ - 2, 0));
        const int x1 = std::min(x0 + 1, w_ - 1);
        const int y1 = std::min(y0 + 1, h_ - 1);
        const double tx = sx - x0, ty = sy - y0;
        const double m00 = at(moving_, x0, y0), m10 = at(moving_, x1, y0);
        const double m01 = at(moving_, x0, y1), m11 = at(moving_, x1, y1);
        const double m = (1 - ty) * ((1 - tx) * m00 + tx * m10) + ty * ((1 - tx) * m01 + tx * m11);
        const double r = m - at(fixed_, x, y);
        sum += r * r;
        ++valid;
        if (grad) {
          const double gx = (1 - ty) * (m10 - m00) + ty * (m11 - m01);
          const double gy = (1 - tx) * (m01 - m00) + tx * (m11 - m10);
          for (int b = 0; b < 4; ++b) {
            row_grad[fx + b].dx += bx[b] * r * gx;
            row_grad[fx + b].dy += bx[b] * r * gy;
          }
        }
      }
      if (grad) {
        for (int a = 0; a < 4; ++a) {
          for (int i = 0; i < nx; ++i) {
            Displacement& g = (*grad)[static_cast<std::size_t>(fy + a) * nx + i];
            g.dx += by[a] * row_grad[i].dx;
            g.dy += by[a] * row_grad[i].dy;
          }
        }
      }
    }
    if (valid == 0) return std::numeric_limits<double>::infinity();
    if (grad) {
      const double scale = 2.0 / static_cast<double>(valid);
      for (auto& g : *grad) {
        g.dx *= scale;
        g.dy *= scale;
      }
    }
    return sum / static_cast<double>(valid);
  }

 private:
  void build_table(int n, int nodes, std::vector<int>& first,
                   std::vector<std::array<double, 4>>& basis) const {
    first.resize(n);
    basis.resize(n);
    for (int i = 0; i < n; ++i) {
      double u = 0;
      grid_.locate(i, nodes, first[i], u);
      basis[i] = cubic_bspline_basis(u);
    }
  }

  double at(const std::vector<double>& img, int x, int y) const {
    return img[static_cast<std::size_t>(y) * w_ + x];
  }

  const BsplineGrid& grid_;
  const std::vector<double>& fixed_;
  const std::vector<double>& moving_;
  int w_;
  int h_;
  std::vector<int> first_x_, first_y_;
  std::vector<std::array<double, 4>> basis_x_, basis_y_;
};

void clamp_controls(std::vector<Displacement>& c, double limit) {
  for (auto& d : c) {
    const double n = std::hypot(d.dx, d.dy);
    if (n > limit) {
      d.dx *= limit / n;
      d.dy *= limit / n;
    }
  }
}

}  // namespace

double image_mse(const Raster& fixed, const Raster& moving, const DeformationField& field) {
  if (fixed.width() != moving.width() || fixed.height() != moving.height()) {
    throw std::invalid_argument("image_mse: image dimensions differ");
  }
  const bool has_field = field.width() != 0 || field.height() != 0;
  if (has_field && (field.width() != fixed.width() || field.height() != fixed.height())) {
    throw std::invalid_argument("image_mse: field dimensions differ from images");
  }
  const auto f = fixed.luma();
  const auto m = moving.luma();
  double sum = 0.0;
  std::size_t valid = 0;
  for (int y = 0; y < fixed.height(); ++y) {
    for (int x = 0; x < fixed.width(); ++x) {
      const Displacement d = has_field ? field.at(x, y) : Displacement{};
      double v = 0;
      if (!sample_bilinear(m, moving.width(), moving.height(), x + d.dx, y + d.dy, v)) continue;
      const double r = v - f[static_cast<std::size_t>(y) * fixed.width() + x];
      sum += r * r;
      ++valid;
    }
  }
  return valid ? sum / static_cast<double>(valid) : std::numeric_limits<double>::infinity();
}

RefineResult refine_detailed(const Raster& fixed, const Raster& moving_warped, const RefineConfig& cfg) {
  if (fixed.width() != moving_warped.width() || fixed.height() != moving_warped.height()) {
    throw std::invalid_argument("refine: fixed is " + std::to_string(fixed.width()) + "x" +
                                std::to_string(fixed.height()) + ", moving is " +
                                std::to_string(moving_warped.width()) + "x" +
                                std::to_string(moving_warped.height()));
  }
  if (cfg.levels < 1 || !(cfg.initial_spacing >= 8.0) || cfg.max_iters_per_level < 1 ||
      !(cfg.step_init > 0) || !(cfg.step_shrink > 0 && cfg.step_shrink < 1) ||
      !(cfg.min_improvement >= 0) || !(cfg.min_step > 0)) {
    throw std::invalid_argument("refine: invalid configuration");
  }
  const std::vector<double> f = fixed.luma();
  const std::vector<double> m = moving_warped.luma();
  const double limit = 2.0 * cfg.initial_spacing;

  RefineResult res;
  BsplineGrid grid(fixed.width(), fixed.height(), cfg.initial_spacing);
  double mse = LevelObjective(grid, f, m).evaluate(grid.controls(), nullptr);
  if (!std::isfinite(mse)) throw NumericalError("refine: initial metric is not finite");
  res.initial_mse = mse;
  res.mse_trace.push_back(mse);

  for (int level = 0; level < cfg.levels; ++level) {
    if (level > 0) {
      if (grid.spacing() / 2.0 < 8.0) break;
      grid = grid.refined();
    }
    const LevelObjective objective(grid, f, m);
    std::vector<Displacement> grad;
    double step = cfg.step_init;
    for (int it = 0; it < cfg.max_iters_per_level && mse > 0.0; ++it) {
      objective.evaluate(grid.controls(), &grad);
      double gmax = 0.0;
      for (const auto& g : grad) gmax = std::max({gmax, std::abs(g.dx), std::abs(g.dy)});
      if (!(gmax > 0.0)) break;
      if (!std::isfinite(gmax)) throw NumericalError("refine: gradient is not finite");

      bool accepted = false;
      std::vector<Displacement> trial;
      double trial_mse = mse;
      while (step >= cfg.min_step) {
        trial = grid.controls();
        for (std::size_t k = 0; k < trial.size(); ++k) {
          trial[k].dx -= step * grad[k].dx / gmax;
          trial[k].dy -= step * grad[k].dy / gmax;
        }
        clamp_controls(trial, limit);
        trial_mse = objective.evaluate(trial, nullptr);
        if (trial_mse < mse) {
          accepted = true;
          break;
        }
        step *= cfg.step_shrink;
      }
      if (!accepted) break;
      const double improvement = (mse - trial_mse) / mse;
      grid.controls() = std::move(trial);
      mse = trial_mse;
      res.mse_trace.push_back(mse);
      step = std::min(cfg.step_init, step / cfg.step_shrink);
      if (improvement < cfg.min_improvement) break;
    }
    res.level_end_mse.push_back(mse);
    res.level_spacing.push_back(grid.spacing());
  }
  res.final_mse = mse;
  res.field = grid.to_field();
  return res;
}

DeformationField refine(const Raster& fixed, const Raster& moving_warped, const RefineConfig& cfg) {
  return refine_detailed(fixed, moving_warped, cfg).field;
}

}  // namespace nucreg
