#include "nucreg/rigid.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <complex>
#include <mutex>
#include <numbers>
#include <optional>

namespace nucreg {

namespace {

// FFTW planning touches global state.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

int next_pow2(int v) {
  int p = 1;
  while (p < v) p <<= 1;
  return p;
}

double parabolic_offset(double left, double center, double right) {
  const double denom = left - 2.0 * center + right;
  if (!(denom < 0.0)) return 0.0;
  return std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
}

}  // namespace

double pointset_mse(const PointSet2D& moving, const KdTree2D& fixed_tree, double cap) {
  if (moving.empty()) throw std::invalid_argument("pointset_mse: moving set is empty");
  const double cap2 = cap * cap;
  double sum = 0.0;
  for (const auto& p : moving.points()) {
    const double d = fixed_tree.nearest(p).distance;
    sum += std::min(d * d, cap2);
  }
  return sum / static_cast<double>(moving.size());
}

Point2D com_translation(const PointSet2D& moving, const PointSet2D& fixed) {
  if (moving.empty() || fixed.empty()) {
    throw std::invalid_argument("com_translation: point sets must be non-empty");
  }
  return fixed.centroid() - moving.centroid();
}

OccupancyGrid rasterize_points(const PointSet2D& ps, double cell) {
  if (!(cell >= 1.0)) throw std::invalid_argument("raster cell must be >= 1 px");
  const int bins_x = static_cast<int>(std::ceil(ps.frame_width() / cell));
  const int bins_y = static_cast<int>(std::ceil(ps.frame_height() / cell));
  if (bins_x < 8 || bins_y < 8) {
    throw RegistrationError("phase correlation grid is degenerate (" + std::to_string(bins_x) +
                            "x" + std::to_string(bins_y) + " bins, need at least 8x8)");
  }
  OccupancyGrid g;
  g.nx = next_pow2(2 * bins_x);
  g.ny = next_pow2(2 * bins_y);
  g.cell = cell;
  g.origin = {0.5 * ps.frame_width() - 0.5 * g.nx * cell,
              0.5 * ps.frame_height() - 0.5 * g.ny * cell};
  g.values.assign(static_cast<std::size_t>(g.nx) * g.ny, 0.0);

  constexpr int kRadius = 3;  // bins; smoothing sigma is one bin
  for (const auto& p : ps.points()) {
    const double u = (p.x - g.origin.x) / cell;
    const double v = (p.y - g.origin.y) / cell;
    const int iu = static_cast<int>(std::lround(u));
    const int iv = static_cast<int>(std::lround(v));
    for (int j = std::max(iv - kRadius, 0); j <= std::min(iv + kRadius, g.ny - 1); ++j) {
      const double wy = std::exp(-0.5 * (j - v) * (j - v));
      for (int i = std::max(iu - kRadius, 0); i <= std::min(iu + kRadius, g.nx - 1); ++i) {
        g.values[static_cast<std::size_t>(j) * g.nx + i] += wy * std::exp(-0.5 * (i - u) * (i - u));
      }
    }
  }
  return g;
}

namespace {

// Fixed-set spectrum is computed once; each moving set then costs one
// forward and one inverse transform on a reused plan pair.
class PhaseCorrelator {
 public:
  PhaseCorrelator(const PointSet2D& fixed, double cell) : cell_(cell) {
    const OccupancyGrid gf = rasterize_points(fixed, cell);
    nx_ = gf.nx;
    ny_ = gf.ny;
    n_ = gf.values.size();
    buf_ = fftw_alloc_complex(n_);
    {
      std::lock_guard lock(fftw_planner_mutex());
      forward_ = fftw_plan_dft_2d(ny_, nx_, buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
      backward_ = fftw_plan_dft_2d(ny_, nx_, buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    load(gf.values);
    fftw_execute(forward_);
    fixed_spec_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) fixed_spec_[i] = {buf_[i][0], buf_[i][1]};
  }
  PhaseCorrelator(const PhaseCorrelator&) = delete;
  PhaseCorrelator& operator=(const PhaseCorrelator&) = delete;
  ~PhaseCorrelator() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
    fftw_free(buf_);
  }

  [[nodiscard]] Point2D shift(const PointSet2D& moving) {
    load(rasterize_points(moving, cell_).values);
    fftw_execute(forward_);
    std::vector<std::complex<double>> cross(n_);
    double max_mag = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      cross[i] = fixed_spec_[i] * std::conj(std::complex<double>{buf_[i][0], buf_[i][1]});
      max_mag = std::max(max_mag, std::abs(cross[i]));
    }
    const double floor = max_mag * 1e-14;
    for (std::size_t i = 0; i < n_; ++i) {
      const double m = std::abs(cross[i]);
      const std::complex<double> z = m > floor ? cross[i] / m : std::complex<double>{};
      buf_[i][0] = z.real();
      buf_[i][1] = z.imag();
    }
    fftw_execute(backward_);

    std::size_t best = 0;
    for (std::size_t i = 1; i < n_; ++i) {
      if (buf_[i][0] > buf_[best][0]) best = i;
    }
    const int nx = nx_, ny = ny_;
    const int bx = static_cast<int>(best % nx);
    const int by = static_cast<int>(best / nx);
    auto val = [&](int x, int y) {
      return buf_[static_cast<std::size_t>((y + ny) % ny) * nx + (x + nx) % nx][0];
    };
    const double ox = parabolic_offset(val(bx - 1, by), val(bx, by), val(bx + 1, by));
    const double oy = parabolic_offset(val(bx, by - 1), val(bx, by), val(bx, by + 1));
    const int sx = bx > nx / 2 ? bx - nx : bx;
    const int sy = by > ny / 2 ? by - ny : by;
    return {(sx + ox) * cell_, (sy + oy) * cell_};
  }

 private:
  void load(const std::vector<double>& v) {
    for (std::size_t i = 0; i < n_; ++i) {
      buf_[i][0] = v[i];
      buf_[i][1] = 0.0;
    }
  }

  double cell_;
  int nx_ = 0, ny_ = 0;
  std::size_t n_ = 0;
  fftw_complex* buf_ = nullptr;
  fftw_plan forward_ = nullptr, backward_ = nullptr;
  std::vector<std::complex<double>> fixed_spec_;
};

void check_pc_inputs(const PointSet2D& moving, const PointSet2D& fixed) {
  if (moving.empty() || fixed.empty()) {
    throw std::invalid_argument("phase correlation: point sets must be non-empty");
  }
  if (moving.frame_width() != fixed.frame_width() || moving.frame_height() != fixed.frame_height()) {
    throw std::invalid_argument("phase correlation: frames differ");
  }
}

}  // namespace

Point2D phase_correlation_translation(const PointSet2D& moving, const PointSet2D& fixed,
                                      double cell) {
  check_pc_inputs(moving, fixed);
  PhaseCorrelator pc(fixed, cell);
  return pc.shift(moving);
}

RigidTransform2D fit_rigid(std::span<const Point2D> src, std::span<const Point2D> dst) {
  if (src.size() != dst.size() || src.size() < 2) {
    throw RegistrationError("rigid fit needs at least two paired points");
  }
  Eigen::Vector2d ms = Eigen::Vector2d::Zero(), md = Eigen::Vector2d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    ms += Eigen::Vector2d(src[i].x, src[i].y);
    md += Eigen::Vector2d(dst[i].x, dst[i].y);
  }
  ms /= static_cast<double>(src.size());
  md /= static_cast<double>(src.size());
  Eigen::Matrix2d h = Eigen::Matrix2d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    h += (Eigen::Vector2d(src[i].x, src[i].y) - ms) *
         (Eigen::Vector2d(dst[i].x, dst[i].y) - md).transpose();
  }
  Eigen::JacobiSVD<Eigen::Matrix2d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix2d d = Eigen::Matrix2d::Identity();
  d(1, 1) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Eigen::Matrix2d r = svd.matrixV() * d * svd.matrixU().transpose();
  const Eigen::Vector2d t = md - r * ms;
  const double angle = std::atan2(r(1, 0), r(0, 0)) * 180.0 / std::numbers::pi;
  return {angle, t.x(), t.y(), 0.0, 0.0};
}

RigidResult icp(const PointSet2D& moving, const KdTree2D& fixed_tree, const RigidTransform2D& init,
                const IcpConfig& cfg) {
  if (moving.empty()) throw std::invalid_argument("icp: moving set is empty");
  if (cfg.max_iterations < 1 || !(cfg.match_threshold > 0) || !(cfg.convergence_tol > 0)) {
    throw std::invalid_argument("icp: invalid configuration");
  }
  const std::size_t n = moving.size();
  RigidResult res;
  res.transform = init;
  res.mse_trace.push_back(pointset_mse(apply_rigid(init, moving), fixed_tree, cfg.match_threshold));

  std::vector<Point2D> current(n), src, dst;
  src.reserve(n);
  dst.reserve(n);
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) current[i] = res.transform.apply(moving[i]);
    src.clear();
    dst.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Neighbor nb = fixed_tree.nearest(current[i]);
      if (nb.distance < cfg.match_threshold) {
        src.push_back(current[i]);
        dst.push_back(fixed_tree.point(nb.index));
      }
    }
    if (src.size() < 2) {
      throw RegistrationError("icp: only " + std::to_string(src.size()) +
                              " pairs within match threshold at iteration " + std::to_string(it));
    }
    const RigidTransform2D step = fit_rigid(src, dst);
    res.iterations = it;

    double shift = 0.0, cost = 0.0;
    const double cap2 = cfg.match_threshold * cfg.match_threshold;
    for (std::size_t i = 0; i < n; ++i) {
      const Point2D moved = step.apply(current[i]);
      shift += distance(moved, current[i]);
      const double d = fixed_tree.nearest(moved).distance;
      cost += std::min(d * d, cap2);
    }
    cost /= static_cast<double>(n);
    // The fit cannot raise the capped cost except by rounding once
    // converged; keep the previous transform then.
    if (cost > res.mse_trace.back()) break;
    res.transform = step.after(res.transform);
    res.mse_trace.push_back(cost);
    if (shift / static_cast<double>(n) < cfg.convergence_tol) break;
  }

  res.transform.angle_deg = wrap_degrees(res.transform.angle_deg);
  res.mse = res.mse_trace.back();
  std::size_t matched = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (fixed_tree.nearest(res.transform.apply(moving[i])).distance < cfg.match_threshold) ++matched;
  }
  res.matched_fraction = static_cast<double>(matched) / static_cast<double>(n);
  res.converged = res.matched_fraction >= 0.25;
  return res;
}

RigidResult ara(const PointSet2D& moving, const PointSet2D& fixed, const AraConfig& cfg) {
  if (moving.size() < 2 || fixed.size() < 2) {
    throw std::invalid_argument("ara: both point sets need at least two points");
  }
  if (cfg.num_angles < 1 || !(cfg.raster_cell >= 1.0)) {
    throw std::invalid_argument("ara: invalid configuration");
  }
  const KdTree2D tree(fixed);
  const double cap = cfg.icp.match_threshold;

  // Translation candidates are re-scored at every angle: a shift that is
  // right for the unrotated set says nothing about the rotated one.
  const Point2D com = com_translation(moving, fixed);
  std::optional<PhaseCorrelator> pc;
  try {
    check_pc_inputs(moving, fixed);
    pc.emplace(fixed, cfg.raster_cell);
  } catch (const std::exception&) {
    // Frames differ or the grid is too small: center of mass only.
  }

  const Point2D c = moving.centroid();
  RigidResult best;
  bool have_best = false;
  double best_angle = 0.0;
  std::vector<double> per_angle(cfg.num_angles, std::numeric_limits<double>::infinity());
  std::vector<double> angles(cfg.num_angles);
  std::string last_error;
  for (int k = 0; k < cfg.num_angles; ++k) {
    const double angle = 360.0 * k / cfg.num_angles;
    angles[k] = angle;
    Point2D shift = com;
    if (pc) {
      const PointSet2D turned = apply_rigid({angle, 0, 0, c.x, c.y}, moving);
      const Point2D alt = pc->shift(turned);
      const double com_mse = pointset_mse(apply_rigid({0, com.x, com.y, 0, 0}, turned), tree, cap);
      const double pc_mse = pointset_mse(apply_rigid({0, alt.x, alt.y, 0, 0}, turned), tree, cap);
      if (pc_mse < com_mse) shift = alt;
    }
    RigidResult r;
    try {
      r = icp(moving, tree, {angle, shift.x, shift.y, c.x, c.y}, cfg.icp);
    } catch (const RegistrationError& e) {
      last_error = e.what();
      continue;
    }
    per_angle[k] = r.mse;
    const bool better =
        !have_best || r.mse < best.mse ||
        (r.mse == best.mse && std::abs(wrap_degrees(angle)) < std::abs(wrap_degrees(best_angle)));
    if (better) {
      best = std::move(r);
      best_angle = angle;
      have_best = true;
    }
  }
  if (!have_best) throw RegistrationError("ara: icp failed at every sweep angle (" + last_error + ")");
  best.per_angle_mse = std::move(per_angle);
  best.sweep_angles = std::move(angles);
  return best;
}

}  // namespace nucreg
