#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "nucreg/bspline.hpp"
#include "nucreg/synth.hpp"
#include "nucreg/warp.hpp"
#include "oracles.hpp"

using namespace nucreg;

namespace {

void check_side_conditions(const TpsModel& m) {
  const Eigen::MatrixX2d w = m.kernel_weights();
  const auto ctrl = m.control_points();
  // Scale the moment sums by the coordinate magnitude so 1e-8 means the
  // same thing on a 1024 px frame as on a unit square.
  double mag = 1;
  for (const auto& c : ctrl) mag = std::max({mag, std::abs(c.x), std::abs(c.y)});
  for (int d = 0; d < 2; ++d) {
    double s = 0, sx = 0, sy = 0;
    for (std::size_t j = 0; j < ctrl.size(); ++j) {
      s += w(j, d);
      sx += w(j, d) * ctrl[j].x / mag;
      sy += w(j, d) * ctrl[j].y / mag;
    }
    CHECK(std::abs(s) <= 1e-8);
    CHECK(std::abs(sx) <= 1e-8);
    CHECK(std::abs(sy) <= 1e-8);
  }
}

Raster pattern(int n) {
  Raster img(n, n, 1);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) img.at(x, y) = static_cast<std::uint8_t>((x * 7 + y * 3 + (x / 5) * 40) % 256);
  }
  return img;
}

}  // namespace

TEST_CASE("tps: pure translation is carried by the affine part") {
  const std::vector<Point2D> src{{0, 0}, {100, 0}, {0, 100}, {100, 100}};
  std::vector<Point2D> dst;
  for (const auto& p : src) dst.push_back(p + Point2D{5, 0});
  const auto m = tps_fit(src, dst);
  for (Point2D q : std::vector<Point2D>{{50, 50}, {-300, 17}, {1000, 999}}) {
    const Point2D r = m(q);
    CHECK(std::abs(r.x - q.x - 5) <= 1e-9);
    CHECK(std::abs(r.y - q.y) <= 1e-9);
  }
  CHECK(m.kernel_weights().cwiseAbs().maxCoeff() <= 1e-9);
  const auto a = m.affine();
  CHECK(a(0, 0) == doctest::Approx(5));
  CHECK(a(0, 1) == doctest::Approx(1));
  CHECK(std::abs(a(0, 2)) < 1e-12);
}

TEST_CASE("tps: interpolation, side conditions and the dense oracle") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> jitter(-20, 20);
  for (int trial = 0; trial < 10; ++trial) {
    const auto src = oracle::random_points(rng, 50, 1024, 1024);
    std::vector<Point2D> dst;
    for (const auto& p : src) dst.push_back(p + Point2D{jitter(rng), jitter(rng)});
    const auto m = tps_fit(src, dst);
    for (std::size_t i = 0; i < src.size(); ++i) CHECK(distance(m(src[i]), dst[i]) <= 1e-9);
    check_side_conditions(m);

    const auto ref = oracle::dense_tps(src, dst, 0.0);
    for (const auto& q : oracle::random_points(rng, 1000, 1024, 1024)) {
      CHECK(distance(m(q), ref(q)) <= 1e-9);
    }
  }
}

TEST_CASE("tps: regularized fit matches the dense oracle and smooths") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> jitter(-5, 5);
  const auto src = oracle::random_points(rng, 40, 512, 512);
  std::vector<Point2D> dst;
  for (const auto& p : src) dst.push_back(p + Point2D{jitter(rng), jitter(rng)});
  const double reg = 1e-3 * 512.0 * 512.0;
  const auto m = tps_fit(src, dst, reg);
  CHECK(m.regularization() == reg);
  check_side_conditions(m);
  const auto ref = oracle::dense_tps(src, dst, reg);
  for (const auto& q : oracle::random_points(rng, 200, 512, 512)) CHECK(distance(m(q), ref(q)) <= 1e-9);
  double residual = 0;
  for (std::size_t i = 0; i < src.size(); ++i) residual = std::max(residual, distance(m(src[i]), dst[i]));
  CHECK(residual > 1e-6);  // no longer an interpolant
}

TEST_CASE("tps: affine targets have vanishing kernel weights") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> coef(-0.3, 0.3), off(-50, 50);
  for (int trial = 0; trial < 20; ++trial) {
    const double a11 = 1 + coef(rng), a12 = coef(rng), a21 = coef(rng), a22 = 1 + coef(rng);
    const Point2D b{off(rng), off(rng)};
    const auto src = oracle::random_points(rng, 30, 1024, 1024);
    std::vector<Point2D> dst;
    for (const auto& p : src) dst.push_back({a11 * p.x + a12 * p.y + b.x, a21 * p.x + a22 * p.y + b.y});
    const auto m = tps_fit(src, dst);
    CHECK(m.kernel_weights().cwiseAbs().maxCoeff() <= 1e-8);
    const auto a = m.affine();
    CHECK(a(0, 1) == doctest::Approx(a11).epsilon(1e-9));
    CHECK(a(1, 2) == doctest::Approx(a22).epsilon(1e-9));
    CHECK(a(0, 0) == doctest::Approx(b.x).epsilon(1e-9));
  }
}

TEST_CASE("tps: degenerate inputs") {
  const std::vector<Point2D> line{{0, 0}, {1, 1}, {2, 2}, {5, 5}};
  CHECK_THROWS_AS((void)tps_fit(line, line), RegistrationError);
  const std::vector<Point2D> tri{{0, 0}, {10, 0}, {0, 10}};
  CHECK_THROWS_AS((void)tps_fit(tri, line), std::invalid_argument);
  CHECK_THROWS_AS((void)tps_fit(tri, tri, -1), std::invalid_argument);
  CHECK_NOTHROW((void)tps_fit(tri, tri));
}

TEST_CASE("tps_field examples") {
  const std::vector<Point2D> src{{10, 10}, {90, 15}, {20, 70}, {80, 80}, {50, 40}};
  SUBCASE("identity model") {
    const auto f = tps_field(tps_fit(src, src), 100, 90);
    for (const auto& d : f.displacements()) {
      CHECK(std::abs(d.dx) <= 1e-6);
      CHECK(std::abs(d.dy) <= 1e-6);
    }
  }
  SUBCASE("translated model") {
    std::vector<Point2D> dst;
    for (const auto& p : src) dst.push_back(p + Point2D{5, 0});
    const auto f = tps_field(tps_fit(src, dst), 100, 90);
    for (const auto& d : f.displacements()) {
      CHECK(d.dx == doctest::Approx(5.0).epsilon(1e-6));
      CHECK(std::abs(d.dy) <= 1e-5);
    }
  }
  SUBCASE("read back at rounded control coordinates") {
    std::mt19937_64 rng(4);
    const auto ctrl = oracle::random_points(rng, 40, 500, 500);
    std::vector<Point2D> dst;
    for (const auto& p : ctrl) {
      const double g = std::exp(-squared_distance(p, {250, 250}) / (2 * 120.0 * 120.0));
      dst.push_back(p + Point2D{8 * g, -6 * g});
    }
    const auto f = tps_field(tps_fit(ctrl, dst), 500, 500);
    for (std::size_t i = 0; i < ctrl.size(); ++i) {
      const int x = std::clamp(static_cast<int>(std::lround(ctrl[i].x)), 0, 499);
      const int y = std::clamp(static_cast<int>(std::lround(ctrl[i].y)), 0, 499);
      CHECK(std::abs(f.at(x, y).dx - (dst[i].x - ctrl[i].x)) <= 0.5);
      CHECK(std::abs(f.at(x, y).dy - (dst[i].y - ctrl[i].y)) <= 0.5);
    }
  }
  CHECK_THROWS_AS((void)tps_field(tps_fit(src, src), 0, 5), std::invalid_argument);
}

TEST_CASE("make_backward_tps examples") {
  const PointSet2D before({{10, 10}, {200, 30}, {40, 180}, {190, 210}, {100, 100}}, 256, 256);
  SUBCASE("no motion") {
    const auto m = make_backward_tps(before, before);
    for (Point2D q : std::vector<Point2D>{{0, 0}, {128, 64}, {255, 255}}) CHECK(distance(m(q), q) <= 1e-9);
  }
  SUBCASE("constant motion inverts") {
    std::vector<Point2D> moved;
    for (const auto& p : before.points()) moved.push_back(p + Point2D{3, -2});
    const auto m = make_backward_tps(before, before.with_points(moved));
    for (Point2D q : std::vector<Point2D>{{0, 0}, {128, 64}, {255, 255}}) {
      CHECK(distance(m(q), q + Point2D{-3, 2}) <= 1e-9);
    }
  }
}

TEST_CASE("make_backward_tps reduces image MSE on a bump-deformed pair") {
  SynthConfig c;
  c.seed = 5;
  c.n_points = 400;
  c.n_bumps = 3;
  c.bump_amp = 12;
  c.dropout_frac = 0;
  c.clutter_frac = 0;
  c.render = true;
  const auto pair = generate(c);
  std::vector<Point2D> before, after;
  for (const auto& m : pair.gt_correspondences) {
    before.push_back(pair.moving[m.moving_index]);
    after.push_back(pair.fixed[m.fixed_index]);
  }
  const double reg = 1e-3 * pair.fixed.frame_diagonal() * pair.fixed.frame_diagonal();
  const auto model = make_backward_tps(pair.moving.with_points(before), pair.fixed.with_points(after), reg);
  const auto field = tps_field(model, c.width, c.height);
  const Raster warped = warp_image(*pair.moving_image, RigidTransform2D::identity(), field);
  const double rigid_only = image_mse(*pair.fixed_image, *pair.moving_image);
  const double with_tps = image_mse(*pair.fixed_image, warped);
  CHECK(with_tps < rigid_only);
}

TEST_CASE("warp_image examples") {
  const Raster img = pattern(40);
  SUBCASE("identity is bit-identical") {
    CHECK(warp_image(img, RigidTransform2D::identity(), DeformationField(40, 40)) == img);
    CHECK(warp_image(img, RigidTransform2D::identity(), DeformationField{}) == img);
  }
  SUBCASE("integer translation is an exact shift with zero fill") {
    const Raster out = warp_image(img, {0, 7, 0, 0, 0}, DeformationField(40, 40));
    for (int y = 0; y < 40; ++y) {
      for (int x = 0; x < 40; ++x) CHECK(out.at(x, y) == (x >= 7 ? img.at(x - 7, y) : 0));
    }
  }
  SUBCASE("quarter turn about the center equals index permutation") {
    const Raster out = warp_image(img, {90, 0, 0, 19.5, 19.5}, DeformationField(40, 40));
    for (int y = 0; y < 40; ++y) {
      for (int x = 0; x < 40; ++x) CHECK(std::abs(int(out.at(x, y)) - int(img.at(y, 39 - x))) <= 1);
    }
  }
  SUBCASE("channels are independent") {
    Raster rgb(40, 40, 3);
    for (int y = 0; y < 40; ++y) {
      for (int x = 0; x < 40; ++x) {
        rgb.at(x, y, 0) = img.at(x, y);
        rgb.at(x, y, 1) = static_cast<std::uint8_t>(255 - img.at(x, y));
        rgb.at(x, y, 2) = static_cast<std::uint8_t>(x * 6);
      }
    }
    const RigidTransform2D t{13, 2.5, -1.25, 20, 20};
    const Raster out = warp_image(rgb, t, DeformationField(40, 40));
    const Raster gray = warp_image(img, t, DeformationField(40, 40));
    for (int y = 0; y < 40; ++y) {
      for (int x = 0; x < 40; ++x) CHECK(out.at(x, y, 0) == gray.at(x, y));
    }
  }
  SUBCASE("field shifts and dimension checks") {
    DeformationField f(40, 40, std::vector<Displacement>(1600, {-2, 0}));
    const Raster out = warp_image(img, f);
    CHECK(out.at(10, 5) == img.at(8, 5));
    CHECK(out.at(1, 5) == 0);
    CHECK_THROWS_AS((void)warp_image(img, RigidTransform2D::identity(), DeformationField(30, 40)),
                    std::invalid_argument);
    const Raster big = warp_image(img, RigidTransform2D::identity(), DeformationField(60, 50), 60, 50);
    CHECK(big.width() == 60);
    CHECK(big.at(45, 10) == 0);
  }
}
