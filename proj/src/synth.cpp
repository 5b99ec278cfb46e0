#include "nucreg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace nucreg {

namespace {

// Hand-rolled draws on top of mt19937_64: the standard distributions are
// implementation-defined, and pairs must be identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

std::vector<Point2D> blue_noise(Rng& rng, std::size_t n, int width, int height, double min_spacing) {
  std::vector<Point2D> pts;
  if (n == 0) return pts;
  if (min_spacing <= 0) {
    for (std::size_t i = 0; i < n; ++i) pts.push_back({rng.uniform(0, width), rng.uniform(0, height)});
    return pts;
  }
  // Densest packing of discs of diameter min_spacing.
  const double packing = static_cast<double>(n) * (std::sqrt(3.0) / 2.0) * min_spacing * min_spacing;
  if (packing > static_cast<double>(width) * height) {
    throw std::invalid_argument("synth: min_spacing " + std::to_string(min_spacing) +
                                " px cannot fit " + std::to_string(n) + " points in the frame");
  }
  const double cell = min_spacing / std::sqrt(2.0);
  const int gx = static_cast<int>(std::ceil(width / cell));
  const int gy = static_cast<int>(std::ceil(height / cell));
  std::vector<int> grid(static_cast<std::size_t>(gx) * gy, -1);
  const double r2 = min_spacing * min_spacing;
  const std::size_t max_attempts = 1000 * n + 10000;
  for (std::size_t attempt = 0; attempt < max_attempts && pts.size() < n; ++attempt) {
    const Point2D p{rng.uniform(0, width), rng.uniform(0, height)};
    const int cx = std::min(static_cast<int>(p.x / cell), gx - 1);
    const int cy = std::min(static_cast<int>(p.y / cell), gy - 1);
    bool ok = true;
    for (int y = std::max(cy - 2, 0); ok && y <= std::min(cy + 2, gy - 1); ++y) {
      for (int x = std::max(cx - 2, 0); x <= std::min(cx + 2, gx - 1); ++x) {
        const int id = grid[static_cast<std::size_t>(y) * gx + x];
        if (id >= 0 && squared_distance(pts[static_cast<std::size_t>(id)], p) < r2) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) continue;
    grid[static_cast<std::size_t>(cy) * gx + cx] = static_cast<int>(pts.size());
    pts.push_back(p);
  }
  if (pts.size() < n) {
    throw std::invalid_argument("synth: could not place " + std::to_string(n) +
                                " points with min_spacing " + std::to_string(min_spacing) + " px");
  }
  return pts;
}

}  // namespace

Point2D SynthPair::field_at(Point2D p) const {
  Point2D u;
  for (const auto& b : bumps) {
    const double g = std::exp(-squared_distance(p, b.center) / (2.0 * b.sigma * b.sigma));
    u = u + g * b.amplitude;
  }
  return u;
}

Point2D SynthPair::map_to_fixed(Point2D moving_point) const {
  // Solve x + u(x) = gt_rigid(m).
  const Point2D q = gt_rigid.apply(moving_point);
  Point2D x = q;
  for (int i = 0; i < 100; ++i) {
    const Point2D next = q - field_at(x);
    if (squared_distance(next, x) < 1e-24) return next;
    x = next;
  }
  return x;
}

SynthPair generate(const SynthConfig& cfg) {
  if (cfg.n_points < 1) throw std::invalid_argument("synth: n_points must be >= 1");
  if (cfg.width <= 0 || cfg.height <= 0) throw std::invalid_argument("synth: frame must be positive");
  if (cfg.n_bumps < 0 || (cfg.n_bumps > 0 && !(cfg.bump_sigma > 0))) {
    throw std::invalid_argument("synth: bump_sigma must be positive when bumps are requested");
  }
  if (!(cfg.dropout_frac >= 0 && cfg.dropout_frac < 1) || !(cfg.clutter_frac >= 0) ||
      !(cfg.jitter_sigma >= 0)) {
    throw std::invalid_argument("synth: dropout in [0,1), clutter >= 0 and jitter >= 0 required");
  }
  Rng rng(cfg.seed);
  SynthPair pair;
  // Bumps first, so a seed fixes the deformation whatever n_points is.
  for (int b = 0; b < cfg.n_bumps; ++b) {
    GaussianBump bump;
    bump.center = {rng.uniform(0, cfg.width), rng.uniform(0, cfg.height)};
    const double dir = rng.uniform(0, 2.0 * std::numbers::pi);
    bump.amplitude = {cfg.bump_amp * std::cos(dir), cfg.bump_amp * std::sin(dir)};
    bump.sigma = cfg.bump_sigma;
    pair.bumps.push_back(bump);
  }

  const auto fixed_pts = blue_noise(rng, cfg.n_points, cfg.width, cfg.height, cfg.min_spacing);
  pair.fixed = PointSet2D(fixed_pts, cfg.width, cfg.height);
  pair.gt_rigid = {cfg.angle_deg, cfg.tx, cfg.ty, 0.5 * cfg.width, 0.5 * cfg.height};

  const RigidTransform2D to_moving = pair.gt_rigid.inverse();
  std::vector<Point2D> moved(fixed_pts.size());
  for (std::size_t i = 0; i < fixed_pts.size(); ++i) {
    const Point2D warped = fixed_pts[i] + pair.field_at(fixed_pts[i]);
    moved[i] = to_moving.apply(warped);
    if (cfg.jitter_sigma > 0) {
      // Truncated at 3 sigma radius so ground truth holds to a hard bound.
      double jx = 0, jy = 0;
      do {
        jx = rng.normal();
        jy = rng.normal();
      } while (jx * jx + jy * jy > 9.0);
      moved[i].x += cfg.jitter_sigma * jx;
      moved[i].y += cfg.jitter_sigma * jy;
    }
  }

  const auto n_drop = static_cast<std::size_t>(std::floor(cfg.dropout_frac * static_cast<double>(cfg.n_points) + 0.5));
  std::vector<std::size_t> order(fixed_pts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = 0; i < n_drop; ++i) {
    std::swap(order[i], order[i + rng.below(order.size() - i)]);
  }
  std::vector<bool> dropped(fixed_pts.size(), false);
  for (std::size_t i = 0; i < n_drop; ++i) dropped[order[i]] = true;

  std::vector<Point2D> moving_pts;
  for (std::size_t i = 0; i < fixed_pts.size(); ++i) {
    if (dropped[i]) continue;
    pair.gt_correspondences.push_back({moving_pts.size(), i, distance(moved[i], fixed_pts[i])});
    moving_pts.push_back(moved[i]);
  }
  const auto n_clutter = static_cast<std::size_t>(std::floor(cfg.clutter_frac * static_cast<double>(cfg.n_points) + 0.5));
  for (std::size_t i = 0; i < n_clutter; ++i) {
    moving_pts.push_back({rng.uniform(0, cfg.width), rng.uniform(0, cfg.height)});
  }
  pair.moving = PointSet2D(std::move(moving_pts), cfg.width, cfg.height);

  pair.gt_field = DeformationField(cfg.width, cfg.height);
  if (!pair.bumps.empty()) {
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        const Point2D u = pair.field_at({static_cast<double>(x), static_cast<double>(y)});
        pair.gt_field.at(x, y) = {u.x, u.y};
      }
    }
  }
  if (cfg.render) {
    pair.fixed_image = render_blobs(pair.fixed, cfg.blob_sigma);
    pair.moving_image = render_blobs(pair.moving, cfg.blob_sigma);
  }
  return pair;
}

Raster render_blobs(const PointSet2D& ps, double blob_sigma) {
  if (!(blob_sigma > 0)) throw std::invalid_argument("render_blobs: blob_sigma must be positive");
  const int w = ps.frame_width();
  const int h = ps.frame_height();
  std::vector<double> acc(static_cast<std::size_t>(w) * h, 0.0);
  const int radius = static_cast<int>(std::ceil(4.0 * blob_sigma));
  const double inv = -1.0 / (2.0 * blob_sigma * blob_sigma);
  for (const auto& p : ps.points()) {
    const int px = static_cast<int>(std::lround(p.x));
    const int py = static_cast<int>(std::lround(p.y));
    for (int y = std::max(py - radius, 0); y <= std::min(py + radius, h - 1); ++y) {
      for (int x = std::max(px - radius, 0); x <= std::min(px + radius, w - 1); ++x) {
        const double d2 = (x - p.x) * (x - p.x) + (y - p.y) * (y - p.y);
        acc[static_cast<std::size_t>(y) * w + x] += std::exp(inv * d2);
      }
    }
  }
  Raster img(w, h, 1);
  auto px = img.pixels();
  for (std::size_t i = 0; i < acc.size(); ++i) {
    px[i] = static_cast<std::uint8_t>(std::clamp(std::lround(255.0 * acc[i]), 0L, 255L));
  }
  return img;
}

}  // namespace nucreg
