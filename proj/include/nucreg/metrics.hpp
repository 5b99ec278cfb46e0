#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "nucreg/core.hpp"

namespace nucreg {

struct RegistrationReport {
  std::size_t n_matched = 0;
  Correspondences matches;  // warped index -> fixed index
  std::vector<double> tre_values;   // px
  std::vector<double> rtre_values;  // TRE / fixed diagonal
  double artre = 0.0;
  double mrtre = 0.0;
  double frame_diagonal = 0.0;

  [[nodiscard]] nlohmann::json to_json() const;
};

/// Euclidean landmark distance.
[[nodiscard]] double tre(Point2D target, Point2D fixed);

/// TRE normalised by the diagonal of a width x height frame.
[[nodiscard]] double rtre(double tre_px, double width, double height);

[[nodiscard]] double mean(std::span<const double> v);
[[nodiscard]] double median(std::span<const double> v);

/// Report over explicit pairs (warped point, fixed point); rTRE uses the
/// fixed frame diagonal.
[[nodiscard]] RegistrationReport report_from_pairs(const PointSet2D& warped, const PointSet2D& fixed,
                                                   const Correspondences& pairs);

/// Mutual nearest neighbors within match_radius: a pair counts only when
/// each point is the other's nearest neighbor.
[[nodiscard]] Correspondences mutual_nearest_matches(const PointSet2D& warped,
                                                     const PointSet2D& fixed, double match_radius);

/// Nuclei detections as landmarks: mutual-NN matching, then TRE per pair.
/// Zero matches yields an empty report (n_matched = 0, artre = mrtre = NaN).
[[nodiscard]] RegistrationReport evaluate_by_nuclei(const PointSet2D& warped_nuclei,
                                                    const PointSet2D& fixed_nuclei,
                                                    double match_radius = 50.0);

}  // namespace nucreg
