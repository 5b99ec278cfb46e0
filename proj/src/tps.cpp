#include <Eigen/Dense>
#include <stdexcept>

#include "nucreg/warp.hpp"

namespace nucreg {

double tps_kernel(double r) { return r > 0.0 ? r * r * std::log(r) : 0.0; }

Point2D TpsModel::operator()(Point2D p) const {
  const long double u = (p.x - center_.x) / static_cast<long double>(scale_);
  const long double v = (p.y - center_.y) / static_cast<long double>(scale_);
  long double fx = au_[0] + u * au_[1] + v * au_[2];
  long double fy = av_[0] + u * av_[1] + v * av_[2];
  for (std::size_t j = 0; j < nu_.size(); ++j) {
    const long double du = u - nu_[j];
    const long double dv = v - nv_[j];
    const long double r2 = du * du + dv * dv;
    if (r2 <= 0) continue;
    const long double k = 0.5L * r2 * std::log(r2);
    fx += wu_[j] * k;
    fy += wv_[j] * k;
  }
  return {static_cast<double>(center_.x + scale_ * fx), static_cast<double>(center_.y + scale_ * fy)};
}

Eigen::MatrixX2d TpsModel::kernel_weights() const {
  Eigen::MatrixX2d w(static_cast<Eigen::Index>(wu_.size()), 2);
  for (std::size_t j = 0; j < wu_.size(); ++j) {
    w(static_cast<Eigen::Index>(j), 0) = static_cast<double>(wu_[j] / scale_);
    w(static_cast<Eigen::Index>(j), 1) = static_cast<double>(wv_[j] / scale_);
  }
  return w;
}

Eigen::Matrix<double, 2, 3> TpsModel::affine() const {
  // Undo the centering/scaling; the r^2 ln(scale) part of the scaled kernel
  // reduces to a constant under the side conditions.
  const long double s = scale_, cx = center_.x, cy = center_.y;
  long double ku = 0, kv = 0;
  for (std::size_t j = 0; j < nu_.size(); ++j) {
    const long double n2 = nu_[j] * nu_[j] + nv_[j] * nv_[j];
    ku += n2 * wu_[j];
    kv += n2 * wv_[j];
  }
  const long double ls = s * std::log(s);
  Eigen::Matrix<double, 2, 3> out;
  out(0, 1) = static_cast<double>(au_[1]);
  out(0, 2) = static_cast<double>(au_[2]);
  out(1, 1) = static_cast<double>(av_[1]);
  out(1, 2) = static_cast<double>(av_[2]);
  out(0, 0) = static_cast<double>(cx + s * au_[0] - au_[1] * cx - au_[2] * cy - ls * ku);
  out(1, 0) = static_cast<double>(cy + s * av_[0] - av_[1] * cx - av_[2] * cy - ls * kv);
  return out;
}

TpsModel tps_fit(std::span<const Point2D> source, std::span<const Point2D> target, double reg) {
  if (source.size() != target.size()) {
    throw std::invalid_argument("tps_fit: " + std::to_string(source.size()) + " sources vs " +
                                std::to_string(target.size()) + " targets");
  }
  if (source.size() < 3) throw RegistrationError("tps_fit: need at least 3 control points");
  if (!(reg >= 0)) throw std::invalid_argument("tps_fit: regularization must be >= 0");

  TpsModel model;
  model.controls_.assign(source.begin(), source.end());
  model.reg_ = reg;
  const auto n = static_cast<Eigen::Index>(source.size());

  Point2D c;
  for (const auto& p : source) c = c + p;
  c = (1.0 / static_cast<double>(n)) * c;
  double rms = 0.0;
  for (const auto& p : source) rms += squared_distance(p, c);
  rms = std::sqrt(rms / static_cast<double>(n));
  if (!(rms > 0)) throw RegistrationError("tps_fit: control points coincide");
  model.center_ = c;
  model.scale_ = rms;

  // The solve runs in long double: the kernel block is poorly conditioned
  // and double precision loses digits away from the controls.
  using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  MatL p(n, 3), v(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = source[static_cast<std::size_t>(i)];
    const auto& t = target[static_cast<std::size_t>(i)];
    p(i, 0) = 1.0L;
    p(i, 1) = (static_cast<long double>(s.x) - c.x) / rms;
    p(i, 2) = (static_cast<long double>(s.y) - c.y) / rms;
    v(i, 0) = (static_cast<long double>(t.x) - c.x) / rms;
    v(i, 1) = (static_cast<long double>(t.y) - c.y) / rms;
  }
  MatL k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = static_cast<long double>(reg) / (static_cast<long double>(rms) * rms);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const long double du = p(i, 1) - p(j, 1), dv = p(i, 2) - p(j, 2);
      const long double r2 = du * du + dv * dv;
      k(i, j) = k(j, i) = r2 > 0 ? 0.5L * r2 * std::log(r2) : 0.0L;
    }
  }

  // Kernel weights live in the null space of P^T, which enforces the side
  // conditions exactly: w = Q2 (Q2^T K Q2)^-1 Q2^T v, then R a = Q1^T (v - K w).
  Eigen::HouseholderQR<MatL> qr(p);
  const MatL r = qr.matrixQR().topRows(3).triangularView<Eigen::Upper>();
  const long double rscale = std::abs(r(0, 0));
  for (int d = 0; d < 3; ++d) {
    if (std::abs(r(d, d)) <= 1e-10L * rscale) {
      throw RegistrationError("tps_fit: control points are collinear");
    }
  }
  const MatL q = qr.householderQ();
  const MatL q1 = q.leftCols(3);
  MatL w = MatL::Zero(n, 2);
  if (n > 3) {
    const MatL q2 = q.rightCols(n - 3);
    const MatL reduced = q2.transpose() * k * q2;
    Eigen::PartialPivLU<MatL> lu(reduced);
    if (!(lu.rcond() > 1e-14L)) throw RegistrationError("tps_fit: singular kernel system");
    w = q2 * lu.solve(MatL(q2.transpose() * v));
  }
  const MatL rhs = q1.transpose() * (v - k * w);
  const MatL a = r.triangularView<Eigen::Upper>().solve(rhs);
  model.nu_.resize(source.size());
  model.nv_.resize(source.size());
  model.wu_.resize(source.size());
  model.wv_.resize(source.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(i);
    model.nu_[j] = p(i, 1);
    model.nv_[j] = p(i, 2);
    model.wu_[j] = w(i, 0);
    model.wv_[j] = w(i, 1);
  }
  for (int d = 0; d < 3; ++d) {
    model.au_[d] = a(d, 0);
    model.av_[d] = a(d, 1);
  }
  if (!w.allFinite() || !a.allFinite()) throw NumericalError("tps_fit: non-finite coefficients");
  return model;
}

DeformationField tps_field(const TpsModel& model, int width, int height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("tps_field: dimensions must be positive");
  DeformationField field(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Point2D src = model({static_cast<double>(x), static_cast<double>(y)});
      field.at(x, y) = {src.x - x, src.y - y};
    }
  }
  return field;
}

TpsModel make_backward_tps(const PointSet2D& moving_before, const PointSet2D& moving_after,
                           double reg) {
  return tps_fit(moving_after.points(), moving_before.points(), reg);
}

}  // namespace nucreg
