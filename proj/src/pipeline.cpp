#include "nucreg/pipeline.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include "nucreg/io.hpp"
#include "nucreg/warp.hpp"

namespace nucreg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument("config key '" + key + "': not a number: " + v);
  return d;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument("config key '" + key + "': not an integer: " + v);
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config key '" + key + "': not a boolean: " + v);
}

struct Field {
  std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

template <typename T>
std::string fmt(T v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

#define NUCREG_REAL(KEY, MEMBER)                                                                 \
  {                                                                                            \
    KEY, {                                                                                     \
      [](PipelineConfig& c, const std::string& k, const std::string& v) { c.MEMBER = to_double(k, v); }, \
          [](const PipelineConfig& c) { return fmt(c.MEMBER); }                                \
    }                                                                                          \
  }
#define NUCREG_INT(KEY, MEMBER, TYPE)                                                            \
  {                                                                                            \
    KEY, {                                                                                     \
      [](PipelineConfig& c, const std::string& k, const std::string& v) {                      \
        c.MEMBER = static_cast<TYPE>(to_int(k, v));                                            \
      },                                                                                       \
          [](const PipelineConfig& c) { return fmt(c.MEMBER); }                                \
    }                                                                                          \
  }

const std::map<std::string, Field>& config_fields() {
  static const std::map<std::string, Field> fields = {
      NUCREG_INT("ara.num_angles", ara.num_angles, int),
      NUCREG_REAL("ara.raster_cell", ara.raster_cell),
      NUCREG_INT("icp.max_iterations", ara.icp.max_iterations, int),
      NUCREG_REAL("icp.match_threshold", ara.icp.match_threshold),
      NUCREG_REAL("icp.convergence_tol", ara.icp.convergence_tol),
      NUCREG_REAL("cpd.beta", cpd.beta),
      NUCREG_REAL("cpd.lambda", cpd.lambda),
      NUCREG_REAL("cpd.alpha", cpd.alpha),
      NUCREG_INT("cpd.k_neighbors", cpd.k_neighbors, int),
      NUCREG_REAL("cpd.outlier_weight", cpd.outlier_weight),
      NUCREG_INT("cpd.max_iterations", cpd.max_iterations, int),
      NUCREG_REAL("cpd.sigma_tol", cpd.sigma_tol),
      NUCREG_INT("cpd.max_points", cpd.max_points, std::size_t),
      NUCREG_REAL("tps.reg", tps_reg),
      NUCREG_INT("tps.max_controls", tps_max_controls, std::size_t),
      {"refine.enabled",
       {[](PipelineConfig& c, const std::string& k, const std::string& v) { c.refine_enabled = to_bool(k, v); },
        [](const PipelineConfig& c) { return std::string(c.refine_enabled ? "true" : "false"); }}},
      NUCREG_INT("refine.levels", refine.levels, int),
      NUCREG_REAL("refine.initial_spacing", refine.initial_spacing),
      NUCREG_INT("refine.max_iters_per_level", refine.max_iters_per_level, int),
      NUCREG_REAL("refine.step_init", refine.step_init),
      NUCREG_REAL("refine.step_shrink", refine.step_shrink),
      NUCREG_REAL("refine.min_improvement", refine.min_improvement),
      NUCREG_REAL("eval.match_radius", match_radius),
      NUCREG_INT("threads", threads, int),
      NUCREG_INT("seed", seed, std::uint64_t),
      NUCREG_INT("warn.min_points", min_points_warning, std::size_t),
  };
  return fields;
}

#undef NUCREG_REAL
#undef NUCREG_INT

std::string csv_field(std::string s) { return trim(s); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(csv_field(item));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

void PipelineConfig::apply(const std::string& key, const std::string& value) {
  const auto& fields = config_fields();
  const auto it = fields.find(key);
  if (it == fields.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  it->second.set(*this, key, value);
}

void PipelineConfig::apply(std::istream& in, const std::string& name) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(name + ":" + std::to_string(lineno) + ": expected key=value");
    }
    try {
      apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(name + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

PipelineConfig PipelineConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io::FormatError("cannot open config " + path.string());
  PipelineConfig cfg;
  cfg.apply(in, path.string());
  return cfg;
}

std::map<std::string, std::string> PipelineConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : config_fields()) out[k] = f.get(*this);
  return out;
}

PointRegistration register_pointsets(const PointSet2D& moving, const PointSet2D& fixed,
                                     const PipelineConfig& cfg, bool skip_nonrigid) {
  PointRegistration reg;
  if (moving.size() < cfg.min_points_warning || fixed.size() < cfg.min_points_warning) {
    reg.warnings.push_back("fewer than " + std::to_string(cfg.min_points_warning) +
                           " nuclei (fixed " + std::to_string(fixed.size()) + ", moving " +
                           std::to_string(moving.size()) + "); accuracy may suffer");
  }
  reg.rigid = ara(moving, fixed, cfg.ara);
  if (!reg.rigid.converged) {
    reg.warnings.push_back("rigid stage matched only " +
                           std::to_string(static_cast<int>(100 * reg.rigid.matched_fraction)) +
                           "% of moving nuclei");
  }
  reg.rigid_aligned = apply_rigid(reg.rigid.transform, moving);
  reg.registered = reg.rigid_aligned;
  if (skip_nonrigid) return reg;

  const auto need = static_cast<std::size_t>(cfg.cpd.k_neighbors) + 1;
  if (moving.size() < need || fixed.size() < need) {
    reg.warnings.push_back("too few nuclei for the non-rigid stage; result is rigid only");
    return reg;
  }
  try {
    reg.nonrigid = cpd_lle_register(reg.rigid_aligned, fixed, cfg.cpd);
  } catch (const NumericalError& e) {
    // Keep the rigid answer rather than losing the pair.
    reg.warnings.push_back(std::string("non-rigid stage failed (") + e.what() + "); result is rigid only");
    return reg;
  }
  reg.registered = reg.nonrigid->displaced;
  return reg;
}

DeformationField nonrigid_field(const PointRegistration& reg, int width, int height,
                                const PipelineConfig& cfg) {
  if (!reg.nonrigid) return DeformationField(width, height);
  const auto idx = farthest_point_sample(reg.rigid_aligned, cfg.tps_max_controls);
  std::vector<Point2D> before, after;
  for (auto i : idx) {
    before.push_back(reg.rigid_aligned[i]);
    after.push_back(reg.registered[i]);
  }
  const double diag = std::hypot(static_cast<double>(width), static_cast<double>(height));
  const TpsModel model = make_backward_tps(reg.rigid_aligned.with_points(before),
                                           reg.registered.with_points(after),
                                           cfg.tps_regularization(diag));
  return tps_field(model, width, height);
}

void write_correspondence_csv(std::ostream& out, const PointSet2D& before, const PointSet2D& after) {
  if (before.size() != after.size()) throw std::invalid_argument("correspondence CSV: size mismatch");
  out << "moving_index,x_before,y_before,x_after,y_after\n";
  out.precision(17);
  for (std::size_t i = 0; i < before.size(); ++i) {
    out << i << "," << before[i].x << "," << before[i].y << "," << after[i].x << "," << after[i].y
        << "\n";
  }
}

void write_correspondence_csv(const std::filesystem::path& path, const PointSet2D& before,
                              const PointSet2D& after) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw io::FormatError("cannot write " + path.string());
  write_correspondence_csv(out, before, after);
}

PointSet2D forward_through_field(const PointSet2D& ps, const DeformationField& field) {
  std::vector<Point2D> out;
  out.reserve(ps.size());
  for (const auto& p : ps.points()) out.push_back(invert_backward(field, p));
  return ps.with_points(std::move(out));
}

std::vector<BatchRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io::FormatError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw io::FormatError(path.string() + ": empty manifest");
  const auto header = split_csv(trim(line));
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* req : {"fixed_points", "moving_points"}) {
    if (!col.count(req)) throw io::FormatError(path.string() + ": manifest lacks column '" + req + "'");
  }
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::vector<BatchRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv(line);
    auto cell = [&](const std::string& name) -> std::string {
      const auto it = col.find(name);
      return it != col.end() && it->second < cells.size() ? cells[it->second] : std::string{};
    };
    BatchRow row;
    row.name = cell("name");
    if (row.name.empty()) row.name = "pair_" + std::to_string(rows.size());
    row.fixed_points = resolve(cell("fixed_points"));
    row.moving_points = resolve(cell("moving_points"));
    if (!cell("fixed_image").empty()) row.fixed_image = resolve(cell("fixed_image"));
    if (!cell("moving_image").empty()) row.moving_image = resolve(cell("moving_image"));
    try {
      if (!cell("width").empty()) row.width = std::stoi(cell("width"));
      if (!cell("height").empty()) row.height = std::stoi(cell("height"));
    } catch (const std::exception&) {
      throw io::FormatError(path.string() + ":" + std::to_string(lineno) + ": bad width/height");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

PairOutcome run_pair(const BatchRow& row, const std::filesystem::path& out_dir,
                     const PipelineConfig& cfg) {
  PairOutcome outcome;
  outcome.name = row.name;
  std::string stage = "read points";
  try {
    const PointSet2D fixed = io::read_points_csv(row.fixed_points, row.width, row.height);
    const PointSet2D moving = io::read_points_csv(row.moving_points, row.width, row.height);
    outcome.n_fixed = fixed.size();
    outcome.n_moving = moving.size();
    const auto dir = out_dir / row.name;
    std::filesystem::create_directories(dir);

    stage = "register";
    const PointRegistration reg = register_pointsets(moving, fixed, cfg);
    outcome.rigid = reg.rigid;
    auto tj = io::rigid_to_json(reg.rigid.transform);
    tj["mse"] = reg.rigid.mse;
    tj["matched_fraction"] = reg.rigid.matched_fraction;
    io::write_json(dir / "transform.json", tj);
    write_correspondence_csv(dir / "registered.csv", moving, reg.registered);

    PointSet2D final_points = reg.registered;
    if (row.fixed_image && row.moving_image && cfg.refine_enabled) {
      stage = "warp";
      const Raster fixed_img = io::read_image(*row.fixed_image);
      const Raster moving_img = io::read_image(*row.moving_image);
      const DeformationField field = nonrigid_field(reg, fixed_img.width(), fixed_img.height(), cfg);
      io::write_field(dir / "field.dfld", field);
      const Raster warped = warp_image(moving_img, reg.rigid.transform, field, fixed_img.width(),
                                      fixed_img.height());
      io::write_image(dir / "warped.png", warped);

      stage = "refine";
      const DeformationField refined = refine(fixed_img, warped, cfg.refine);
      io::write_field(dir / "refine_field.dfld", refined);
      io::write_image(dir / "refined.png", warp_image(warped, refined));
      final_points = forward_through_field(reg.registered, refined);
      outcome.refined = true;
    }

    stage = "evaluate";
    outcome.report = evaluate_by_nuclei(final_points, fixed, cfg.match_radius);
    auto rj = outcome.report.to_json();
    rj["warnings"] = reg.warnings;
    io::write_json(dir / "report.json", rj);
    outcome.ok = true;
  } catch (const std::exception& e) {
    outcome.error = stage + ": " + e.what();
  }
  return outcome;
}

CohortStats cohort_stats(std::span<const double> values) {
  CohortStats s;
  s.average = mean(values);
  s.median = median(values);
  if (values.size() > 1) {
    double acc = 0;
    for (double v : values) acc += (v - s.average) * (v - s.average);
    s.stddev = std::sqrt(acc / static_cast<double>(values.size() - 1));
  }
  return s;
}

nlohmann::json BatchSummary::to_json() const {
  nlohmann::json pj = nlohmann::json::array();
  for (const auto& p : pairs) {
    nlohmann::json j = {{"name", p.name},       {"ok", p.ok},
                        {"n_fixed", p.n_fixed},  {"n_moving", p.n_moving},
                        {"n_matched", p.report.n_matched}, {"artre", finite_or_null(p.report.artre)},
                        {"mrtre", finite_or_null(p.report.mrtre)}, {"refined", p.refined}};
    if (!p.ok) j["error"] = p.error;
    pj.push_back(std::move(j));
  }
  auto stats = [](const CohortStats& s) {
    return nlohmann::json{{"average", finite_or_null(s.average)},
                          {"median", finite_or_null(s.median)},
                          {"std", finite_or_null(s.stddev)}};
  };
  return {{"pairs", pj}, {"cohort", {{"artre", stats(artre)}, {"mrtre", stats(mrtre)}}}};
}

BatchSummary run_batch(const std::vector<BatchRow>& rows, const std::filesystem::path& out_dir,
                       const PipelineConfig& cfg) {
  BatchSummary summary;
  summary.pairs.resize(rows.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < rows.size(); i = next++) {
      summary.pairs[i] = run_pair(rows[i], out_dir, cfg);
    }
  };
  const int n_threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(rows.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  std::vector<double> ar, mr;
  for (const auto& p : summary.pairs) {
    if (p.ok && p.report.n_matched > 0) {
      ar.push_back(p.report.artre);
      mr.push_back(p.report.mrtre);
    }
  }
  summary.artre = cohort_stats(ar);
  summary.mrtre = cohort_stats(mr);

  std::filesystem::create_directories(out_dir);
  io::write_json(out_dir / "summary.json", summary.to_json());
  std::ofstream csv(out_dir / "nuclei_count.csv");
  csv.precision(10);
  csv << "name,n_fixed,n_moving,n_matched,artre,mrtre\n";
  for (const auto& p : summary.pairs) {
    csv << p.name << "," << p.n_fixed << "," << p.n_moving << "," << p.report.n_matched << ","
        << p.report.artre << "," << p.report.mrtre << "\n";
  }
  return summary;
}

}  // namespace nucreg
