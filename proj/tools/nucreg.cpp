// nucreg: nuclei point-set registration of histology tile pairs.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "nucreg/extraction.hpp"
#include "nucreg/io.hpp"
#include "nucreg/pipeline.hpp"
#include "nucreg/synth.hpp"
#include "nucreg/warp.hpp"

namespace fs = std::filesystem;
using namespace nucreg;

namespace {

struct StageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Runs f, tagging any failure with the stage and the file involved.
template <typename F>
auto stage(const std::string& name, const std::string& file, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    std::string msg = name + " failed";
    if (!file.empty()) msg += " (" + file + ")";
    throw StageError(msg + ": " + e.what());
  }
}

// Either a plain `x,y` point CSV or a correspondence CSV, in which case the
// registered (`x_after`, `y_after`) columns are read.
PointSet2D read_any_points(const fs::path& path, int w, int h) {
  std::ifstream in(path);
  if (!in) throw io::FormatError("cannot open " + path.string());
  std::string header;
  std::getline(in, header);
  if (header.rfind("moving_index", 0) != 0) return io::read_points_csv(path, w, h);
  std::vector<Point2D> pts;
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    double idx, xb, yb, xa, ya;
    if (!(ss >> idx >> xb >> yb >> xa >> ya)) {
      throw io::FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    pts.push_back({xa, ya});
  }
  return PointSet2D(std::move(pts), w, h);
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

std::string fmt_sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4e", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nucreg: nuclei point-set registration of histology tiles"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(NUCREG_VERSION));

  std::string config_path;
  std::vector<std::string> overrides;
  int threads = 0;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "key=value configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "override one configuration key (key=value)");
  auto* threads_opt = app.add_option("--threads", threads, "worker threads for batch runs")
                          ->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed", seed, "random seed");

  int width = 1024, height = 1024;
  auto add_frame = [&](CLI::App* sub) {
    sub->add_option("--width", width, "frame width of point CSVs (px)")->check(CLI::PositiveNumber);
    sub->add_option("--height", height, "frame height of point CSVs (px)")->check(CLI::PositiveNumber);
  };

  // extract
  auto* extract = app.add_subcommand("extract", "binary nuclei mask -> point CSV");
  std::string mask_path, extract_out, mode = "centroids";
  int min_size = 3;
  extract->add_option("--mask", mask_path, "mask image (PNG/PGM), nonzero = active")->required();
  extract->add_option("--mode", mode, "centroids | pixels")->check(CLI::IsMember({"centroids", "pixels"}));
  extract->add_option("--min-size", min_size, "smallest component kept in centroid mode");
  extract->add_option("--out", extract_out, "output point CSV")->required();

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic pair with ground truth");
  SynthConfig sc;
  std::string synth_dir;
  synth->add_option("--n-points", sc.n_points)->capture_default_str();
  synth->add_option("--width", sc.width)->capture_default_str();
  synth->add_option("--height", sc.height)->capture_default_str();
  synth->add_option("--min-spacing", sc.min_spacing)->capture_default_str();
  synth->add_option("--angle", sc.angle_deg, "rigid angle (deg), moving -> fixed")->capture_default_str();
  synth->add_option("--tx", sc.tx)->capture_default_str();
  synth->add_option("--ty", sc.ty)->capture_default_str();
  synth->add_option("--n-bumps", sc.n_bumps)->capture_default_str();
  synth->add_option("--bump-amp", sc.bump_amp)->capture_default_str();
  synth->add_option("--bump-sigma", sc.bump_sigma)->capture_default_str();
  synth->add_option("--jitter", sc.jitter_sigma)->capture_default_str();
  synth->add_option("--dropout", sc.dropout_frac)->capture_default_str();
  synth->add_option("--clutter", sc.clutter_frac)->capture_default_str();
  synth->add_flag("--render", sc.render, "also write fixed.png / moving.png");
  synth->add_option("--blob-sigma", sc.blob_sigma)->capture_default_str();
  synth->add_option("--out-dir", synth_dir)->required();

  // register
  auto* reg = app.add_subcommand("register", "rigid + non-rigid point-set registration");
  std::string fixed_path, moving_path, out_transform, out_field, out_points, out_report;
  bool skip_nonrigid = false;
  reg->add_option("--fixed", fixed_path, "fixed point CSV")->required();
  reg->add_option("--moving", moving_path, "moving point CSV")->required();
  reg->add_flag("--skip-nonrigid", skip_nonrigid, "rigid stage only");
  reg->add_option("--out-transform", out_transform, "rigid transform JSON")->required();
  reg->add_option("--out-field", out_field, "backward TPS field (DFLD)");
  reg->add_option("--out-points", out_points, "correspondence CSV of registered moving points");
  reg->add_option("--out-report", out_report, "nuclei-based report JSON of the registered points");
  add_frame(reg);

  // warp
  auto* warp = app.add_subcommand("warp", "resample an image through rigid + field");
  std::string image_path, transform_path, field_path, warp_out;
  warp->add_option("--image", image_path)->required();
  warp->add_option("--transform", transform_path, "rigid transform JSON");
  warp->add_option("--field", field_path, "backward field (DFLD)");
  warp->add_option("--out", warp_out)->required();

  // refine
  auto* ref = app.add_subcommand("refine", "B-spline intensity refinement");
  std::string fixed_image, moving_image, refine_field_out, refine_image_out;
  RefineConfig rc_cli;
  ref->add_option("--fixed-image", fixed_image)->required();
  ref->add_option("--moving-image", moving_image, "already warped moving image")->required();
  auto* o_levels = ref->add_option("--levels", rc_cli.levels);
  auto* o_spacing = ref->add_option("--initial-spacing", rc_cli.initial_spacing);
  auto* o_iters = ref->add_option("--max-iters", rc_cli.max_iters_per_level);
  auto* o_step = ref->add_option("--step-init", rc_cli.step_init);
  auto* o_shrink = ref->add_option("--step-shrink", rc_cli.step_shrink);
  auto* o_improve = ref->add_option("--min-improvement", rc_cli.min_improvement);
  ref->add_option("--out-field", refine_field_out)->required();
  ref->add_option("--out-image", refine_image_out, "refined image");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "nuclei-based TRE report");
  std::string eval_fixed, eval_warped, eval_out;
  double radius = -1;
  eval->add_option("--fixed", eval_fixed, "fixed point CSV")->required();
  eval->add_option("--warped", eval_warped, "warped point CSV or correspondence CSV")->required();
  eval->add_option("--radius", radius, "mutual-NN match radius (px)");
  eval->add_option("--out", eval_out, "report JSON");
  add_frame(eval);

  // batch
  auto* batch = app.add_subcommand("batch", "run the full pipeline over a manifest");
  std::string manifest, batch_dir;
  batch->add_option("--pairs", manifest, "manifest CSV")->required();
  batch->add_option("--out-dir", batch_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    PipelineConfig cfg;
    if (!config_path.empty()) {
      cfg = stage("read config", config_path, [&] { return PipelineConfig::from_file(config_path); });
    }
    for (const auto& kv : overrides) {
      stage("override", kv, [&] {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("expected key=value");
        cfg.apply(kv.substr(0, eq), kv.substr(eq + 1));
      });
    }
    if (*threads_opt) cfg.threads = threads;
    if (*seed_opt) cfg.seed = seed;

    if (*extract) {
      const Raster img = stage("read mask", mask_path, [&] { return io::read_image(mask_path); });
      ExtractionOptions opts;
      opts.mode = mode == "pixels" ? ExtractionMode::Pixels : ExtractionMode::Centroids;
      opts.min_component_size = min_size;
      const PointSet2D ps = stage("extract", mask_path, [&] {
        return extract_points(NucleiMask::from_raster(img), opts);
      });
      stage("write points", extract_out, [&] { io::write_points_csv(extract_out, ps); });
      std::cout << "extracted " << ps.size() << " points (" << mode << ") from " << img.width() << "x"
                << img.height() << " mask\n";
    } else if (*synth) {
      sc.seed = cfg.seed;
      const SynthPair pair = stage("synth", "", [&] { return generate(sc); });
      const fs::path dir(synth_dir);
      stage("write synth", synth_dir, [&] {
        fs::create_directories(dir);
        io::write_points_csv(dir / "fixed.csv", pair.fixed);
        io::write_points_csv(dir / "moving.csv", pair.moving);
        std::ofstream gt(dir / "gt.csv");
        gt.precision(17);
        gt << "moving_index,fixed_index,distance\n";
        for (const auto& m : pair.gt_correspondences) {
          gt << m.moving_index << "," << m.fixed_index << "," << m.distance << "\n";
        }
        io::write_json(dir / "gt_rigid.json", io::rigid_to_json(pair.gt_rigid));
        io::write_field(dir / "gt_field.dfld", pair.gt_field);
        if (pair.fixed_image) io::write_image(dir / "fixed.png", *pair.fixed_image);
        if (pair.moving_image) io::write_image(dir / "moving.png", *pair.moving_image);
      });
      std::cout << "synth: " << pair.fixed.size() << " fixed, " << pair.moving.size() << " moving, "
                << pair.gt_correspondences.size() << " ground-truth pairs -> " << synth_dir << "\n";
    } else if (*reg) {
      const PointSet2D fixed =
          stage("read fixed points", fixed_path, [&] { return io::read_points_csv(fixed_path, width, height); });
      const PointSet2D moving = stage("read moving points", moving_path,
                                      [&] { return io::read_points_csv(moving_path, width, height); });
      const PointRegistration r =
          stage("register", moving_path, [&] { return register_pointsets(moving, fixed, cfg, skip_nonrigid); });
      print_warnings(r.warnings);
      stage("write transform", out_transform, [&] {
        auto j = io::rigid_to_json(r.rigid.transform);
        j["mse"] = r.rigid.mse;
        j["matched_fraction"] = r.rigid.matched_fraction;
        io::write_json(out_transform, j);
      });
      if (!out_field.empty()) {
        const DeformationField f =
            stage("tps field", out_field, [&] { return nonrigid_field(r, width, height, cfg); });
        stage("write field", out_field, [&] { io::write_field(out_field, f); });
      }
      if (!out_points.empty()) {
        stage("write points", out_points, [&] { write_correspondence_csv(fs::path(out_points), moving, r.registered); });
      }
      const RegistrationReport rep = evaluate_by_nuclei(r.registered, fixed, cfg.match_radius);
      if (!out_report.empty()) {
        stage("write report", out_report, [&] { io::write_json(out_report, rep.to_json()); });
      }
      const auto& t = r.rigid.transform;
      std::cout << "rigid: angle " << t.angle_deg << " deg, t (" << t.tx << ", " << t.ty << ") about ("
                << t.cx << ", " << t.cy << "), mse " << r.rigid.mse << " px^2, matched "
                << r.rigid.matched_fraction << "\n";
      if (r.nonrigid) {
        std::cout << "non-rigid: " << r.nonrigid->iterations << " EM iterations, sigma^2 "
                  << r.nonrigid->sigma2_trace.back() << " px^2\n";
      }
      std::cout << "nuclei matched " << rep.n_matched << ", ArTRE " << fmt_sci(rep.artre) << ", MrTRE "
                << fmt_sci(rep.mrtre) << "\n";
    } else if (*warp) {
      const Raster img = stage("read image", image_path, [&] { return io::read_image(image_path); });
      RigidTransform2D t;
      if (!transform_path.empty()) {
        t = stage("read transform", transform_path, [&] { return io::read_rigid_json(transform_path); });
      }
      DeformationField f;
      if (!field_path.empty()) f = stage("read field", field_path, [&] { return io::read_field(field_path); });
      const Raster out = stage("warp", image_path, [&] { return warp_image(img, t, f); });
      stage("write image", warp_out, [&] { io::write_image(warp_out, out); });
      std::cout << "warped " << img.width() << "x" << img.height() << " -> " << out.width() << "x"
                << out.height() << "\n";
    } else if (*ref) {
      RefineConfig rc = cfg.refine;
      if (*o_levels) rc.levels = rc_cli.levels;
      if (*o_spacing) rc.initial_spacing = rc_cli.initial_spacing;
      if (*o_iters) rc.max_iters_per_level = rc_cli.max_iters_per_level;
      if (*o_step) rc.step_init = rc_cli.step_init;
      if (*o_shrink) rc.step_shrink = rc_cli.step_shrink;
      if (*o_improve) rc.min_improvement = rc_cli.min_improvement;
      const Raster fi = stage("read image", fixed_image, [&] { return io::read_image(fixed_image); });
      const Raster mi = stage("read image", moving_image, [&] { return io::read_image(moving_image); });
      const RefineResult res = stage("refine", moving_image, [&] { return refine_detailed(fi, mi, rc); });
      stage("write field", refine_field_out, [&] { io::write_field(refine_field_out, res.field); });
      if (!refine_image_out.empty()) {
        stage("write image", refine_image_out, [&] { io::write_image(refine_image_out, warp_image(mi, res.field)); });
      }
      std::cout << "refine: MSE " << res.initial_mse << " -> " << res.final_mse << " over "
                << res.level_end_mse.size() << " levels, max displacement " << res.field.max_norm()
                << " px\n";
    } else if (*eval) {
      const PointSet2D fixed =
          stage("read fixed points", eval_fixed, [&] { return io::read_points_csv(eval_fixed, width, height); });
      const PointSet2D warped =
          stage("read warped points", eval_warped, [&] { return read_any_points(eval_warped, width, height); });
      const double r = radius > 0 ? radius : cfg.match_radius;
      const RegistrationReport rep =
          stage("evaluate", eval_warped, [&] { return evaluate_by_nuclei(warped, fixed, r); });
      if (!eval_out.empty()) stage("write report", eval_out, [&] { io::write_json(eval_out, rep.to_json()); });
      std::cout << "matched " << rep.n_matched << " nuclei, ArTRE " << fmt_sci(rep.artre) << ", MrTRE "
                << fmt_sci(rep.mrtre) << " (diagonal " << rep.frame_diagonal << " px)\n";
    } else if (*batch) {
      const auto rows = stage("read manifest", manifest, [&] { return read_manifest(manifest); });
      const BatchSummary s = stage("batch", manifest, [&] { return run_batch(rows, batch_dir, cfg); });
      int failed = 0;
      for (const auto& p : s.pairs) {
        if (p.ok) {
          std::cout << p.name << ": " << p.report.n_matched << " matched, ArTRE " << fmt_sci(p.report.artre)
                    << ", MrTRE " << fmt_sci(p.report.mrtre) << "\n";
        } else {
          ++failed;
          std::cout << p.name << ": FAILED " << p.error << "\n";
        }
      }
      std::cout << "cohort ArTRE average " << fmt_sci(s.artre.average) << " median " << fmt_sci(s.artre.median)
                << "; MrTRE average " << fmt_sci(s.mrtre.average) << " median " << fmt_sci(s.mrtre.median)
                << "\n";
      if (failed > 0) {
        std::cerr << "nucreg: batch: " << failed << " of " << s.pairs.size() << " pairs failed (see "
                  << (fs::path(batch_dir) / "summary.json").string() << ")\n";
        return 1;
      }
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "nucreg: " << msg << "\n";
    return 1;
  }
  return 0;
}
