#include "nucreg/metrics.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "nucreg/kdtree.hpp"

namespace nucreg {

double tre(Point2D target, Point2D fixed) { return distance(target, fixed); }

double rtre(double tre_px, double width, double height) {
  if (!(width > 0) || !(height > 0)) throw std::invalid_argument("rtre: frame dimensions must be positive");
  return tre_px / std::hypot(width, height);
}

double mean(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double median(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const std::size_t h = s.size() / 2;
  return s.size() % 2 ? s[h] : 0.5 * (s[h - 1] + s[h]);
}

RegistrationReport report_from_pairs(const PointSet2D& warped, const PointSet2D& fixed,
                                     const Correspondences& pairs) {
  validate_correspondences(pairs, warped.size(), fixed.size());
  RegistrationReport r;
  r.frame_diagonal = fixed.frame_diagonal();
  r.matches = pairs;
  r.n_matched = pairs.size();
  for (auto& m : r.matches) {
    const double e = tre(warped[m.moving_index], fixed[m.fixed_index]);
    m.distance = e;
    r.tre_values.push_back(e);
    r.rtre_values.push_back(rtre(e, fixed.frame_width(), fixed.frame_height()));
  }
  r.artre = mean(r.rtre_values);
  r.mrtre = median(r.rtre_values);
  return r;
}

Correspondences mutual_nearest_matches(const PointSet2D& warped, const PointSet2D& fixed,
                                       double match_radius) {
  if (warped.empty() || fixed.empty()) throw std::invalid_argument("matching needs non-empty sets");
  const KdTree2D fixed_tree(fixed);
  const KdTree2D warped_tree(warped);
  Correspondences out;
  for (std::size_t i = 0; i < warped.size(); ++i) {
    const Neighbor f = fixed_tree.nearest(warped[i]);
    if (f.distance > match_radius) continue;
    if (warped_tree.nearest(fixed[f.index]).index != i) continue;
    out.push_back({i, f.index, f.distance});
  }
  return out;
}

RegistrationReport evaluate_by_nuclei(const PointSet2D& warped_nuclei, const PointSet2D& fixed_nuclei,
                                      double match_radius) {
  return report_from_pairs(warped_nuclei, fixed_nuclei,
                           mutual_nearest_matches(warped_nuclei, fixed_nuclei, match_radius));
}

nlohmann::json RegistrationReport::to_json() const {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"n_matched", n_matched}, {"artre", num(artre)},     {"mrtre", num(mrtre)},
          {"frame_diagonal", frame_diagonal}, {"tre_px", tre_values}};
}

}  // namespace nucreg
