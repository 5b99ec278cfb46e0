#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "nucreg/cpd_lle.hpp"
#include "oracles.hpp"

using namespace nucreg;

namespace {

std::vector<Point2D> grid_points() {
  std::vector<Point2D> g;
  for (int y = 0; y < 15; ++y) {
    for (int x = 0; x < 20; ++x) g.push_back({56.0 + 48 * x, 176.0 + 48 * y});
  }
  return g;
}

std::vector<Point2D> bumped(const std::vector<Point2D>& pts, Point2D c, Point2D amp, double sigma) {
  std::vector<Point2D> out;
  for (const auto& p : pts) {
    const double dx = p.x - c.x, dy = p.y - c.y;
    const double g = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
    out.push_back({p.x + amp.x * g, p.y + amp.y * g});
  }
  return out;
}

double mean_nn(const std::vector<Point2D>& from, const std::vector<Point2D>& to) {
  double s = 0;
  for (const auto& p : from) s += oracle::nearest(to, p).distance;
  return s / from.size();
}

std::vector<Point2D> as_vec(const PointSet2D& ps) { return {ps.points().begin(), ps.points().end()}; }

}  // namespace

TEST_CASE("lle_weights: symmetric example, row sums, sparsity") {
  const PointSet2D line({{0, 0}, {1, 0}, {2, 0}}, 10, 10);
  const auto m = lle_weights(line, 2);
  REQUIRE(m.neighbors[1].size() == 2);
  CHECK(m.weights[1][0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(m.weights[1][1] == doctest::Approx(0.5).epsilon(1e-12));

  std::mt19937_64 rng(1);
  for (int k : {1, 3, 5, 8, 12}) {
    const PointSet2D ps(oracle::random_points(rng, 100, 1024, 1024), 1024, 1024);
    const auto w = lle_weights(ps, k);
    const auto dense = w.dense();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      CHECK(std::abs(w.row_sum(i) - 1.0) <= 1e-10);
      CHECK(w.neighbors[i].size() <= static_cast<std::size_t>(k));
      CHECK(dense(i, i) == 0.0);
      for (auto j : w.neighbors[i]) CHECK(j != i);
    }
  }
  CHECK_THROWS_AS((void)lle_weights(line, 3), std::invalid_argument);
}

TEST_CASE("lle_weights: reconstruction is no worse than uniform weights") {
  std::mt19937_64 rng(2);
  const auto pts = oracle::random_points(rng, 100, 1024, 1024);
  const PointSet2D ps(pts, 1024, 1024);
  const int k = 5;
  const auto w = lle_weights(ps, k);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    // Oracle neighbors: exhaustive scan, skipping the point itself.
    const auto hits = oracle::all_sorted(pts, pts[i]);
    Point2D uni{0, 0}, rec{0, 0};
    int taken = 0;
    for (const auto& h : hits) {
      if (h.index == i) continue;
      uni.x += pts[h.index].x / k;
      uni.y += pts[h.index].y / k;
      if (++taken == k) break;
    }
    for (std::size_t j = 0; j < w.neighbors[i].size(); ++j) {
      rec.x += w.weights[i][j] * pts[w.neighbors[i][j]].x;
      rec.y += w.weights[i][j] * pts[w.neighbors[i][j]].y;
    }
    CHECK(distance(rec, pts[i]) <= distance(uni, pts[i]) + 1e-9);
  }
}

TEST_CASE("gaussian_kernel examples") {
  const double beta = 10;
  const PointSet2D two({{0, 0}, {beta * std::sqrt(2.0), 0}}, 100, 100);
  const auto g = gaussian_kernel(two, beta);
  CHECK(g.values(0, 0) == 1.0);
  CHECK(g.values(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

  std::mt19937_64 rng(3);
  const auto k = gaussian_kernel(PointSet2D(oracle::random_points(rng, 50, 500, 500), 500, 500), 40);
  for (int i = 0; i < 50; ++i) {
    CHECK(k.values(i, i) == 1.0);
    for (int j = 0; j < 50; ++j) {
      CHECK(std::abs(k.values(i, j) - k.values(j, i)) <= 1e-12);
      CHECK(k.values(i, j) > 0);
      CHECK(k.values(i, j) <= 1);
    }
  }
  CHECK_THROWS_AS((void)gaussian_kernel(two, 0), std::invalid_argument);
}

TEST_CASE("farthest_point_sample") {
  std::mt19937_64 rng(4);
  const PointSet2D ps(oracle::random_points(rng, 200, 800, 800), 800, 800);
  const auto idx = farthest_point_sample(ps, 40);
  REQUIRE(idx.size() == 40);
  for (std::size_t i = 1; i < idx.size(); ++i) CHECK(idx[i - 1] < idx[i]);
  CHECK(farthest_point_sample(ps, 500).size() == 200);
}

TEST_CASE("cpd: moving = fixed barely moves") {
  const auto g = grid_points();
  const PointSet2D ps(g, 1024, 1024);
  const auto sol = cpd_lle_register(ps, ps);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(distance(sol.displaced[i], g[i]) < 1e-3);
}

TEST_CASE("cpd: single bump on a 300-point grid") {
  const auto fixed = grid_points();
  const auto moving = bumped(fixed, {512, 512}, {10, 0}, 100);
  const double before = mean_nn(moving, fixed);
  const auto sol = cpd_lle_register(PointSet2D(moving, 1024, 1024), PointSet2D(fixed, 1024, 1024));
  const double after = mean_nn(as_vec(sol.displaced), fixed);
  CHECK(after < 0.25 * before);

  for (double s : sol.sigma2_trace) CHECK(s > 0);
  CHECK(sol.sigma2_trace.back() <= sol.sigma2_trace.front());
}

TEST_CASE("cpd: alpha = 0 matches an independent plain-CPD implementation") {
  const auto fixed = grid_points();
  for (int trial = 0; trial < 3; ++trial) {
    const Point2D c{400.0 + 100 * trial, 450.0 + 40 * trial};
    const auto moving = bumped(fixed, c, {6.0 + trial, -4.0}, 120);
    CpdConfig cfg;
    cfg.alpha = 0;
    cfg.max_iterations = 300;
    const auto sol = cpd_lle_register(PointSet2D(moving, 1024, 1024), PointSet2D(fixed, 1024, 1024), cfg);
    const double beta = 0.1 * std::hypot(1024.0, 1024.0);
    const auto ref = oracle::plain_cpd(moving, fixed, beta, cfg.lambda, cfg.outlier_weight,
                                       cfg.max_iterations, cfg.sigma_tol);
    double worst = 0;
    for (std::size_t i = 0; i < moving.size(); ++i) worst = std::max(worst, distance(sol.displaced[i], ref[i]));
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("cpd: displaced - moving equals G W row by row") {
  // beta below the grid pitch keeps G well conditioned, so recomputing G W
  // in pixel units is exact to rounding.
  const auto fixed = grid_points();
  const auto moving = bumped(fixed, {512, 512}, {10, 0}, 100);
  CpdConfig cfg;
  cfg.beta = 40;
  const auto sol = cpd_lle_register(PointSet2D(moving, 1024, 1024), PointSet2D(fixed, 1024, 1024), cfg);
  const auto gk = gaussian_kernel(PointSet2D(moving, 1024, 1024), cfg.beta);
  const Eigen::MatrixXd gw = gk.values * sol.coefficients;
  for (std::size_t i = 0; i < moving.size(); ++i) {
    CHECK(std::abs(sol.displaced[i].x - moving[i].x - gw(i, 0)) <= 1e-9);
    CHECK(std::abs(sol.displaced[i].y - moving[i].y - gw(i, 1)) <= 1e-9);
  }
}

TEST_CASE("cpd: translation equivariance") {
  const auto fixed = grid_points();
  auto moving = bumped(fixed, {600, 400}, {-8, 5}, 110);
  auto run = [&](Point2D c, const CpdConfig& cfg) {
    std::vector<Point2D> m2, f2;
    for (const auto& p : moving) m2.push_back(p + c);
    for (const auto& p : fixed) f2.push_back(p + c);
    return cpd_lle_register(PointSet2D(m2, 1024, 1024), PointSet2D(f2, 1024, 1024), cfg);
  };
  SUBCASE("well-conditioned kernel: W identical within 1e-9") {
    CpdConfig cfg;
    cfg.beta = 40;
    const auto base = run({0, 0}, cfg);
    for (Point2D c : std::vector<Point2D>{{13.5, -7.25}, {-200, 150}}) {
      const auto shifted = run(c, cfg);
      REQUIRE(shifted.iterations == base.iterations);
      CHECK((shifted.coefficients - base.coefficients).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }
  SUBCASE("default kernel: displacements within 1e-9 px, W to 1e-9 relative") {
    // With beta = 0.1 * diagonal, G is nearly singular and |W| reaches 1e8;
    // the input rounding of p + c alone moves such a W by more than 1e-9.
    // Detector-like jitter keeps sigma^2 from collapsing as it would on
    // noise-free input, where W is fitted to rounding noise.
    std::mt19937_64 rng(6);
    std::normal_distribution<double> jit(0, 1);
    for (auto& p : moving) p = p + Point2D{jit(rng), jit(rng)};
    const CpdConfig cfg;
    const auto base = run({0, 0}, cfg);
    const double w_scale = base.coefficients.cwiseAbs().maxCoeff();
    for (Point2D c : std::vector<Point2D>{{13.5, -7.25}, {-200, 150}}) {
      const auto shifted = run(c, cfg);
      REQUIRE(shifted.iterations == base.iterations);
      CHECK((shifted.coefficients - base.coefficients).cwiseAbs().maxCoeff() <= 1e-9 * w_scale);
      for (std::size_t i = 0; i < moving.size(); ++i) {
        const Point2D a = base.displaced[i] - moving[i];
        const Point2D b = shifted.displaced[i] - (moving[i] + c);
        CHECK(distance(a, b) <= 1e-9);
      }
    }
  }
}

TEST_CASE("cpd: nearby points move coherently (95th percentile)") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uc(300, 700), ua(-10, 10);
  // One broad bump per trial so the true field is non-negligible everywhere.
  const auto fixed = grid_points();
  const double beta = 0.1 * std::hypot(1024.0, 1024.0);
  std::vector<int> ok_flags;
  for (int trial = 0; trial < 4; ++trial) {
    const auto moving = bumped(fixed, {uc(rng), uc(rng)}, {ua(rng), ua(rng)}, 300);
    const auto sol = cpd_lle_register(PointSet2D(moving, 1024, 1024), PointSet2D(fixed, 1024, 1024));
    for (std::size_t i = 0; i < moving.size(); ++i) {
      for (std::size_t j = i + 1; j < moving.size(); ++j) {
        if (distance(moving[i], moving[j]) >= beta / 2) continue;
        const Point2D di = sol.displaced[i] - moving[i], dj = sol.displaced[j] - moving[j];
        const double bound = std::max(std::hypot(di.x, di.y), std::hypot(dj.x, dj.y));
        ok_flags.push_back(distance(di, dj) < bound ? 1 : 0);
      }
    }
  }
  REQUIRE(!ok_flags.empty());
  const double frac = std::accumulate(ok_flags.begin(), ok_flags.end(), 0.0) / ok_flags.size();
  CHECK(frac >= 0.95);
}

TEST_CASE("cpd: subsampled controls still displace every point") {
  const auto fixed = grid_points();
  const auto moving = bumped(fixed, {512, 512}, {10, 0}, 100);
  CpdConfig cfg;
  cfg.max_points = 120;
  const auto sol = cpd_lle_register(PointSet2D(moving, 1024, 1024), PointSet2D(fixed, 1024, 1024), cfg);
  CHECK(sol.control_indices.size() == 120);
  CHECK(sol.displaced.size() == moving.size());
  CHECK(mean_nn(as_vec(sol.displaced), fixed) < 0.5 * mean_nn(moving, fixed));
}

TEST_CASE("cpd: configuration and size errors") {
  const PointSet2D few({{0, 0}, {1, 1}, {2, 0}}, 10, 10);
  CHECK_THROWS_AS((void)cpd_lle_register(few, few), std::invalid_argument);
  const PointSet2D ps(grid_points(), 1024, 1024);
  CpdConfig bad;
  bad.outlier_weight = 1.0;
  CHECK_THROWS_AS((void)cpd_lle_register(ps, ps, bad), std::invalid_argument);
  bad = {};
  bad.lambda = -1;
  CHECK_THROWS_AS((void)cpd_lle_register(ps, ps, bad), std::invalid_argument);
}
