#include "nucreg/cpd_lle.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <numbers>
#include <numeric>

#include "nucreg/kdtree.hpp"

namespace nucreg {

namespace {

constexpr double kLleRegularization = 1e-3;

Eigen::MatrixXd to_matrix(std::span<const Point2D> pts, Point2D center, double scale) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(pts.size()), 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    m(static_cast<Eigen::Index>(i), 0) = (pts[i].x - center.x) / scale;
    m(static_cast<Eigen::Index>(i), 1) = (pts[i].y - center.y) / scale;
  }
  return m;
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double beta) {
  const double inv = -1.0 / (2.0 * beta * beta);
  Eigen::MatrixXd g(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      g(i, j) = std::exp(inv * (a.row(i) - b.row(j)).squaredNorm());
    }
  }
  return g;
}

}  // namespace

double LleMatrix::row_sum(std::size_t i) const {
  return std::accumulate(weights[i].begin(), weights[i].end(), 0.0);
}

Eigen::MatrixXd LleMatrix::dense() const {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < neighbors[i].size(); ++k) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(neighbors[i][k])) += weights[i][k];
    }
  }
  return m;
}

LleMatrix lle_weights(const PointSet2D& moving, int k) {
  if (k < 1) throw std::invalid_argument("lle_weights: k must be >= 1");
  const auto kk = static_cast<std::size_t>(k);
  if (moving.size() < kk + 1) {
    throw std::invalid_argument("lle_weights: need at least k+1 = " + std::to_string(k + 1) +
                                " points, got " + std::to_string(moving.size()));
  }
  const KdTree2D tree(moving);
  LleMatrix m;
  m.n = moving.size();
  m.neighbors.resize(m.n);
  m.weights.resize(m.n);
  for (std::size_t i = 0; i < m.n; ++i) {
    std::vector<std::size_t> nb;
    nb.reserve(kk);
    for (const auto& c : tree.k_nearest(moving[i], kk + 1)) {
      if (c.index != i && nb.size() < kk) nb.push_back(c.index);
    }
    Eigen::MatrixXd z(static_cast<Eigen::Index>(kk), 2);
    for (std::size_t a = 0; a < kk; ++a) {
      z(static_cast<Eigen::Index>(a), 0) = moving[nb[a]].x - moving[i].x;
      z(static_cast<Eigen::Index>(a), 1) = moving[nb[a]].y - moving[i].y;
    }
    Eigen::MatrixXd gram = z * z.transpose();
    const double tr = gram.trace();
    gram.diagonal().array() += tr > 0 ? kLleRegularization * tr : 1.0;
    Eigen::VectorXd w = gram.ldlt().solve(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(kk)));
    const double s = w.sum();
    if (!std::isfinite(s) || std::abs(s) < 1e-300) {
      w.setConstant(1.0 / static_cast<double>(kk));
    } else {
      w /= s;
    }
    m.neighbors[i] = std::move(nb);
    m.weights[i].assign(w.data(), w.data() + w.size());
  }
  return m;
}

GaussianKernel gaussian_kernel(const PointSet2D& moving, double beta) {
  if (!(beta > 0)) throw std::invalid_argument("gaussian_kernel: beta must be positive");
  const Eigen::MatrixXd y = to_matrix(moving.points(), {}, 1.0);
  GaussianKernel g{beta, kernel_matrix(y, y, beta)};
  return g;
}

std::vector<std::size_t> farthest_point_sample(const PointSet2D& ps, std::size_t count) {
  const std::size_t n = ps.size();
  if (count >= n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0u);
    return all;
  }
  std::vector<std::size_t> picked;
  if (count == 0) return picked;
  const Point2D c = ps.centroid();
  std::size_t seed = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (squared_distance(ps[i], c) < squared_distance(ps[seed], c)) seed = i;
  }
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  picked.push_back(seed);
  while (picked.size() < count) {
    const Point2D last = ps[picked.back()];
    std::size_t far = 0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(ps[i], last));
      if (d2[i] > d2[far]) far = i;
    }
    picked.push_back(far);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

NonRigidSolution cpd_lle_register(const PointSet2D& moving, const PointSet2D& fixed,
                                  const CpdConfig& cfg) {
  if (cfg.lambda < 0 || cfg.alpha < 0 || cfg.k_neighbors < 1 || cfg.outlier_weight < 0 ||
      cfg.outlier_weight >= 1 || cfg.max_iterations < 1 || !(cfg.sigma_tol > 0)) {
    throw std::invalid_argument("cpd_lle_register: invalid configuration");
  }
  const auto min_points = static_cast<std::size_t>(cfg.k_neighbors) + 1;
  if (moving.size() < min_points || fixed.size() < min_points) {
    throw std::invalid_argument("cpd_lle_register: both sets need at least k_neighbors+1 = " +
                                std::to_string(min_points) + " points");
  }
  const double beta_px = cfg.beta > 0 ? cfg.beta : 0.1 * fixed.frame_diagonal();

  // Shared normalisation keeps the rigid pre-alignment between the sets.
  const Point2D center = fixed.centroid();
  double scale = 0.0;
  for (const auto& p : fixed.points()) scale += distance(p, center);
  scale /= static_cast<double>(fixed.size());
  if (!(scale > 0)) scale = 1.0;
  const double beta = beta_px / scale;

  NonRigidSolution sol;
  const Eigen::MatrixXd y = to_matrix(moving.points(), center, scale);
  const Eigen::MatrixXd x = to_matrix(fixed.points(), center, scale);
  const Eigen::Index n = y.rows();
  const Eigen::Index m = x.rows();

  // Above the cap every moving point stays a mixture component, but the
  // displacement lives on a farthest-point subset of Gaussian bases
  // (T = Y + K W with K = G(Y, C)). Subsampling the components instead
  // breaks the one-to-one structure CPD relies on.
  const std::size_t cap = std::max(cfg.max_points, min_points);
  const bool reduced = moving.size() > cap;
  if (reduced) {
    sol.control_indices = farthest_point_sample(moving, cap);
  } else {
    sol.control_indices.resize(moving.size());
    std::iota(sol.control_indices.begin(), sol.control_indices.end(), std::size_t{0});
  }
  const auto c = static_cast<Eigen::Index>(sol.control_indices.size());
  Eigen::MatrixXd yc(c, 2);
  for (Eigen::Index i = 0; i < c; ++i) yc.row(i) = y.row(static_cast<Eigen::Index>(sol.control_indices[i]));

  const Eigen::MatrixXd g = kernel_matrix(y, yc, beta);  // n x c; square and symmetric when !reduced
  Eigen::MatrixXd gcc;
  if (reduced) gcc = kernel_matrix(yc, yc, beta);

  Eigen::MatrixXd lg, ly;  // full: L G and L Y; reduced: K^T L K and K^T L Y
  if (cfg.alpha > 0) {
    const LleMatrix lle = lle_weights(moving, cfg.k_neighbors);
    if (reduced) {
      // (I - M) applied row-wise keeps this sparse in n.
      Eigen::MatrixXd dk = g, dy = y;
      for (std::size_t i = 0; i < lle.n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        for (std::size_t q = 0; q < lle.neighbors[i].size(); ++q) {
          const auto j = static_cast<Eigen::Index>(lle.neighbors[i][q]);
          dk.row(r) -= lle.weights[i][q] * g.row(j);
          dy.row(r) -= lle.weights[i][q] * y.row(j);
        }
      }
      lg = dk.transpose() * dk;
      ly = dk.transpose() * dy;
    } else {
      const Eigen::MatrixXd i_minus_m = Eigen::MatrixXd::Identity(n, n) - lle.dense();
      const Eigen::MatrixXd l = i_minus_m.transpose() * i_minus_m;
      lg = l * g;
      ly = l * y;
    }
  }

  double sigma2 = 0.0;
  {
    const Eigen::RowVector2d sx = x.colwise().sum(), sy = y.colwise().sum();
    const double total = m * y.squaredNorm() + n * x.squaredNorm() - 2.0 * sx.dot(sy);
    sigma2 = total / (2.0 * static_cast<double>(n) * static_cast<double>(m));
  }
  if (!(sigma2 > 0)) sigma2 = 1.0;
  sol.sigma2_trace.push_back(sigma2 * scale * scale);

  const double w = cfg.outlier_weight;
  Eigen::MatrixXd coeff = Eigen::MatrixXd::Zero(c, 2);
  Eigen::MatrixXd t = y;
  Eigen::MatrixXd p(n, m);
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    // E-step: posterior of component (moving point) i for data point j.
    const double outlier =
        2.0 * std::numbers::pi * sigma2 * (w / (1.0 - w)) * static_cast<double>(n) / static_cast<double>(m);
    const double inv = -1.0 / (2.0 * sigma2);
    for (Eigen::Index j = 0; j < m; ++j) {
      double denom = outlier;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double v = std::exp(inv * (t.row(i) - x.row(j)).squaredNorm());
        p(i, j) = v;
        denom += v;
      }
      if (denom > 0) p.col(j) /= denom;
    }
    const Eigen::VectorXd p1 = p.rowwise().sum();
    const Eigen::VectorXd pt1 = p.colwise().sum().transpose();
    const double np = p1.sum();
    if (!(np > 1e-12)) {
      sol.iterations = it - 1;
      break;
    }
    const Eigen::MatrixXd px = p * x;

    // M-step: (d(P1) G + lambda s2 I + alpha s2 L G) W = P X - d(P1) Y - alpha s2 L Y,
    // or its projection onto the basis when reduced.
    Eigen::MatrixXd a, b;
    if (reduced) {
      const Eigen::MatrixXd pk = p1.asDiagonal() * g;
      a = g.transpose() * pk + (cfg.lambda * sigma2) * gcc;
      b = g.transpose() * (px - p1.asDiagonal() * y);
    } else {
      a = p1.asDiagonal() * g;
      a.diagonal().array() += cfg.lambda * sigma2;
      b = px - p1.asDiagonal() * y;
    }
    if (cfg.alpha > 0) {
      a.noalias() += (cfg.alpha * sigma2) * lg;
      b.noalias() -= (cfg.alpha * sigma2) * ly;
    }
    if (reduced) {
      // Symmetric PSD but squared-kernel conditioning: a near-null W
      // direction changes nothing in K W, so LDLT without a rcond gate.
      coeff = a.ldlt().solve(b);
    } else {
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
      if (!(lu.rcond() > 1e-15)) {
        throw NumericalError("cpd_lle_register: singular linear system at iteration " +
                             std::to_string(it) + " (beta too large for the point spacing?)");
      }
      coeff = lu.solve(b);
    }
    if (!coeff.allFinite()) {
      throw NumericalError("cpd_lle_register: non-finite coefficients at iteration " +
                           std::to_string(it));
    }
    t = y + g * coeff;

    const double num = (pt1.array() * x.rowwise().squaredNorm().array()).sum() -
                       2.0 * (px.array() * t.array()).sum() +
                       (p1.array() * t.rowwise().squaredNorm().array()).sum();
    double next = num / (2.0 * np);
    if (!std::isfinite(next)) {
      throw NumericalError("cpd_lle_register: non-finite sigma^2 at iteration " + std::to_string(it));
    }
    next = std::max(next, 1e-12);
    sol.sigma2_trace.push_back(next * scale * scale);
    sol.iterations = it;
    const double change = std::abs(next - sigma2) / sigma2;
    sigma2 = next;
    if (change < cfg.sigma_tol) {
      sol.converged = true;
      break;
    }
  }

  const Eigen::MatrixXd disp = g * coeff;
  std::vector<Point2D> out(moving.size());
  for (std::size_t i = 0; i < moving.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out[i] = {moving[i].x + disp(r, 0) * scale, moving[i].y + disp(r, 1) * scale};
  }
  sol.displaced = moving.with_points(std::move(out));
  sol.coefficients = coeff * scale;
  return sol;
}

}  // namespace nucreg
