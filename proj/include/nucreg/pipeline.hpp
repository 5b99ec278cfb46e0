#pragma once

// End-to-end orchestration: ARA + ICP, CPD-LLE, TPS field, optional B-spline
// refinement, and nuclei-based evaluation.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nucreg/bspline.hpp"
#include "nucreg/cpd_lle.hpp"
#include "nucreg/metrics.hpp"
#include "nucreg/rigid.hpp"

namespace nucreg {

struct PipelineConfig {
  AraConfig ara;
  CpdConfig cpd;
  double tps_reg = -1.0;  // px^2; negative means 1e-3 * diagonal^2
  std::size_t tps_max_controls = 300;
  RefineConfig refine;
  bool refine_enabled = true;
  double match_radius = 50.0;
  int threads = 1;
  std::uint64_t seed = 1;
  std::size_t min_points_warning = 100;

  [[nodiscard]] double tps_regularization(double frame_diagonal) const {
    return tps_reg >= 0 ? tps_reg : 1e-3 * frame_diagonal * frame_diagonal;
  }

  /// Apply `key=value` lines; '#' starts a comment. Unknown keys throw.
  void apply(std::istream& in, const std::string& name = "<config>");
  void apply(const std::string& key, const std::string& value);
  static PipelineConfig from_file(const std::filesystem::path& path);

  [[nodiscard]] std::map<std::string, std::string> to_map() const;
};

struct PointRegistration {
  RigidResult rigid;
  PointSet2D rigid_aligned;  // moving after the rigid transform
  std::optional<NonRigidSolution> nonrigid;
  PointSet2D registered;  // final moving positions in the fixed frame
  std::vector<std::string> warnings;
};

[[nodiscard]] PointRegistration register_pointsets(const PointSet2D& moving, const PointSet2D& fixed,
                                                   const PipelineConfig& cfg, bool skip_nonrigid = false);

/// Backward TPS field (fixed frame) from the non-rigid stage on at most
/// tps_max_controls farthest-point-sampled nuclei; zero field when the
/// registration was rigid-only.
[[nodiscard]] DeformationField nonrigid_field(const PointRegistration& reg, int width, int height,
                                              const PipelineConfig& cfg);

/// Correspondence CSV: moving_index,x_before,y_before,x_after,y_after
void write_correspondence_csv(std::ostream& out, const PointSet2D& before, const PointSet2D& after);
void write_correspondence_csv(const std::filesystem::path& path, const PointSet2D& before,
                              const PointSet2D& after);

/// Push points through the inverse of a backward field (forward warp).
[[nodiscard]] PointSet2D forward_through_field(const PointSet2D& ps, const DeformationField& field);

struct BatchRow {
  std::string name;
  std::filesystem::path fixed_points;
  std::filesystem::path moving_points;
  std::optional<std::filesystem::path> fixed_image;
  std::optional<std::filesystem::path> moving_image;
  int width = 1024;
  int height = 1024;
};

/// Manifest CSV with header; columns fixed_points and moving_points are
/// required, name/fixed_image/moving_image/width/height optional. Relative
/// paths resolve against the manifest's directory.
[[nodiscard]] std::vector<BatchRow> read_manifest(const std::filesystem::path& path);

struct PairOutcome {
  std::string name;
  bool ok = false;
  std::string error;
  std::size_t n_fixed = 0;
  std::size_t n_moving = 0;
  RegistrationReport report;
  RigidResult rigid;
  bool refined = false;
};

struct CohortStats {
  double average = 0.0;
  double median = 0.0;
  double stddev = 0.0;
};

struct BatchSummary {
  std::vector<PairOutcome> pairs;
  CohortStats artre;
  CohortStats mrtre;
  [[nodiscard]] nlohmann::json to_json() const;
};

[[nodiscard]] PairOutcome run_pair(const BatchRow& row, const std::filesystem::path& out_dir,
                                   const PipelineConfig& cfg);

/// Runs every manifest row (up to cfg.threads concurrently), writes per-pair
/// outputs under out_dir/<name>/, then summary.json and nuclei_count.csv.
[[nodiscard]] BatchSummary run_batch(const std::vector<BatchRow>& rows,
                                     const std::filesystem::path& out_dir, const PipelineConfig& cfg);

[[nodiscard]] CohortStats cohort_stats(std::span<const double> values);

}  // namespace nucreg
