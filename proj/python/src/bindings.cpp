#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "nucreg/bspline.hpp"
#include "nucreg/extraction.hpp"
#include "nucreg/io.hpp"
#include "nucreg/kdtree.hpp"
#include "nucreg/pipeline.hpp"
#include "nucreg/synth.hpp"
#include "nucreg/warp.hpp"

namespace py = pybind11;
using namespace nucreg;

namespace {

using Points = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Bytes = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

std::vector<Point2D> to_points(const Points& a) {
  if (a.ndim() != 2 || a.shape(1) != 2) throw std::invalid_argument("expected an (N, 2) array of points");
  auto r = a.unchecked<2>();
  std::vector<Point2D> out(static_cast<std::size_t>(a.shape(0)));
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out[static_cast<std::size_t>(i)] = {r(i, 0), r(i, 1)};
  return out;
}

PointSet2D to_set(const Points& a, int w, int h) { return PointSet2D(to_points(a), w, h); }

py::array_t<double> from_points(std::span<const Point2D> pts) {
  py::array_t<double> out({static_cast<py::ssize_t>(pts.size()), py::ssize_t{2}});
  auto r = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    r(static_cast<py::ssize_t>(i), 0) = pts[i].x;
    r(static_cast<py::ssize_t>(i), 1) = pts[i].y;
  }
  return out;
}

Raster to_raster(const Bytes& a) {
  if (a.ndim() != 2 && !(a.ndim() == 3 && (a.shape(2) == 1 || a.shape(2) == 3))) {
    throw std::invalid_argument("expected an (H, W) or (H, W, 3) uint8 image");
  }
  const int h = static_cast<int>(a.shape(0));
  const int w = static_cast<int>(a.shape(1));
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  std::vector<std::uint8_t> px(a.data(), a.data() + a.size());
  return Raster(w, h, c, std::move(px));
}

py::array_t<std::uint8_t> from_raster(const Raster& r) {
  std::vector<py::ssize_t> shape{r.height(), r.width()};
  if (r.channels() > 1) shape.push_back(r.channels());
  py::array_t<std::uint8_t> out(shape);
  std::copy(r.pixels().begin(), r.pixels().end(), out.mutable_data());
  return out;
}

DeformationField to_field(const std::optional<Points>& a) {
  if (!a) return {};
  if (a->ndim() != 3 || a->shape(2) != 2) throw std::invalid_argument("expected an (H, W, 2) field");
  const int h = static_cast<int>(a->shape(0));
  const int w = static_cast<int>(a->shape(1));
  std::vector<Displacement> d(static_cast<std::size_t>(w) * h);
  const double* p = a->data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = {p[2 * i], p[2 * i + 1]};
  return DeformationField(w, h, std::move(d));
}

py::array_t<double> from_field(const DeformationField& f) {
  py::array_t<double> out({py::ssize_t{f.height()}, py::ssize_t{f.width()}, py::ssize_t{2}});
  double* p = out.mutable_data();
  const auto d = f.displacements();
  for (std::size_t i = 0; i < d.size(); ++i) {
    p[2 * i] = d[i].dx;
    p[2 * i + 1] = d[i].dy;
  }
  return out;
}

PipelineConfig to_config(const py::dict& overrides) {
  PipelineConfig cfg;
  for (const auto& [k, v] : overrides) {
    std::string value;
    if (py::isinstance<py::bool_>(v)) {
      value = v.cast<bool>() ? "true" : "false";
    } else {
      value = py::str(v);
    }
    cfg.apply(py::str(k), value);
  }
  return cfg;
}

py::dict rigid_result(const RigidResult& r) {
  py::dict d;
  d["transform"] = r.transform;
  d["mse"] = r.mse;
  d["matched_fraction"] = r.matched_fraction;
  d["converged"] = r.converged;
  d["iterations"] = r.iterations;
  d["mse_trace"] = r.mse_trace;
  d["per_angle_mse"] = r.per_angle_mse;
  d["sweep_angles"] = r.sweep_angles;
  return d;
}

py::dict report_dict(const RegistrationReport& r) {
  py::dict d;
  d["n_matched"] = r.n_matched;
  d["artre"] = r.artre;
  d["mrtre"] = r.mrtre;
  d["frame_diagonal"] = r.frame_diagonal;
  d["tre_px"] = r.tre_values;
  d["rtre"] = r.rtre_values;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& m : r.matches) pairs.emplace_back(m.moving_index, m.fixed_index);
  d["matches"] = pairs;
  return d;
}

py::list neighbors(const std::vector<Neighbor>& v) {
  py::list out;
  for (const auto& n : v) out.append(py::make_tuple(n.index, n.distance));
  return out;
}

}  // namespace

PYBIND11_MODULE(_nucreg, m) {
  m.doc() = "Nuclei point-set registration of histology tiles";
  m.attr("__version__") = NUCREG_VERSION;

  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<RegistrationError>(m, "RegistrationError", PyExc_RuntimeError);
  py::register_exception<io::FormatError>(m, "FormatError", PyExc_ValueError);

  py::class_<RigidTransform2D>(m, "RigidTransform")
      .def(py::init([](double a, double tx, double ty, double cx, double cy) {
             return RigidTransform2D{a, tx, ty, cx, cy};
           }),
           py::arg("angle_deg") = 0.0, py::arg("tx") = 0.0, py::arg("ty") = 0.0, py::arg("cx") = 0.0,
           py::arg("cy") = 0.0)
      .def_readwrite("angle_deg", &RigidTransform2D::angle_deg)
      .def_readwrite("tx", &RigidTransform2D::tx)
      .def_readwrite("ty", &RigidTransform2D::ty)
      .def_readwrite("cx", &RigidTransform2D::cx)
      .def_readwrite("cy", &RigidTransform2D::cy)
      .def("inverse", &RigidTransform2D::inverse)
      .def("apply", [](const RigidTransform2D& t, const Points& p) {
        auto pts = to_points(p);
        for (auto& q : pts) q = t.apply(q);
        return from_points(pts);
      })
      .def("__repr__", [](const RigidTransform2D& t) {
        return "RigidTransform(angle_deg=" + std::to_string(t.angle_deg) + ", tx=" + std::to_string(t.tx) +
               ", ty=" + std::to_string(t.ty) + ", cx=" + std::to_string(t.cx) + ", cy=" +
               std::to_string(t.cy) + ")";
      });

  py::class_<KdTree2D>(m, "KdTree")
      .def(py::init([](const Points& p) { return KdTree2D(to_points(p)); }), py::arg("points"))
      .def("__len__", &KdTree2D::size)
      .def("nearest", [](const KdTree2D& t, double x, double y) {
        const Neighbor n = t.nearest({x, y});
        return py::make_tuple(n.index, n.distance);
      })
      .def("k_nearest", [](const KdTree2D& t, double x, double y, std::size_t k) {
        return neighbors(t.k_nearest({x, y}, k));
      })
      .def("within_radius", [](const KdTree2D& t, double x, double y, double r) {
        return neighbors(t.within_radius({x, y}, r));
      });

  m.def(
      "extract_points",
      [](const Bytes& mask, const std::string& mode, int min_size) {
        ExtractionOptions opts;
        if (mode == "pixels") {
          opts.mode = ExtractionMode::Pixels;
        } else if (mode != "centroids") {
          throw std::invalid_argument("mode must be 'centroids' or 'pixels'");
        }
        opts.min_component_size = min_size;
        return from_points(extract_points(NucleiMask::from_raster(to_raster(mask)), opts).points());
      },
      py::arg("mask"), py::arg("mode") = "centroids", py::arg("min_size") = 3);

  m.def(
      "pointset_mse",
      [](const Points& moving, const Points& fixed, double cap) {
        return pointset_mse(to_set(moving, 1, 1), KdTree2D(to_points(fixed)), cap);
      },
      py::arg("moving"), py::arg("fixed"), py::arg("cap") = std::numeric_limits<double>::infinity());

  m.def(
      "phase_correlation_translation",
      [](const Points& moving, const Points& fixed, int w, int h, double cell) {
        const Point2D t = phase_correlation_translation(to_set(moving, w, h), to_set(fixed, w, h), cell);
        return py::make_tuple(t.x, t.y);
      },
      py::arg("moving"), py::arg("fixed"), py::arg("width"), py::arg("height"), py::arg("cell") = 4.0);

  m.def(
      "icp",
      [](const Points& moving, const Points& fixed, const RigidTransform2D& init, int max_iterations,
         double match_threshold, double convergence_tol) {
        IcpConfig cfg{max_iterations, match_threshold, convergence_tol};
        return rigid_result(icp(to_set(moving, 1, 1), KdTree2D(to_points(fixed)), init, cfg));
      },
      py::arg("moving"), py::arg("fixed"), py::arg("init") = RigidTransform2D{},
      py::arg("max_iterations") = 50, py::arg("match_threshold") = 30.0, py::arg("convergence_tol") = 0.01);

  m.def(
      "ara",
      [](const Points& moving, const Points& fixed, int w, int h, int num_angles, double cell,
         double match_threshold) {
        AraConfig cfg;
        cfg.num_angles = num_angles;
        cfg.raster_cell = cell;
        cfg.icp.match_threshold = match_threshold;
        return rigid_result(ara(to_set(moving, w, h), to_set(fixed, w, h), cfg));
      },
      py::arg("moving"), py::arg("fixed"), py::arg("width") = 1024, py::arg("height") = 1024,
      py::arg("num_angles") = 72, py::arg("raster_cell") = 4.0, py::arg("match_threshold") = 30.0);

  m.def(
      "lle_weights", [](const Points& p, int k) { return lle_weights(to_set(p, 1, 1), k).dense(); },
      py::arg("points"), py::arg("k") = 8);
  m.def(
      "gaussian_kernel", [](const Points& p, double beta) { return gaussian_kernel(to_set(p, 1, 1), beta).values; },
      py::arg("points"), py::arg("beta"));

  m.def(
      "cpd_lle_register",
      [](const Points& moving, const Points& fixed, int w, int h, double beta, double lambda, double alpha,
         int k, double outlier_weight, int max_iterations, double sigma_tol) {
        CpdConfig cfg;
        cfg.beta = beta;
        cfg.lambda = lambda;
        cfg.alpha = alpha;
        cfg.k_neighbors = k;
        cfg.outlier_weight = outlier_weight;
        cfg.max_iterations = max_iterations;
        cfg.sigma_tol = sigma_tol;
        const PointSet2D mv = to_set(moving, w, h), fx = to_set(fixed, w, h);
        NonRigidSolution s;
        {
          py::gil_scoped_release release;
          s = cpd_lle_register(mv, fx, cfg);
        }
        py::dict d;
        d["displaced"] = from_points(s.displaced.points());
        d["coefficients"] = s.coefficients;
        d["sigma2_trace"] = s.sigma2_trace;
        d["iterations"] = s.iterations;
        d["converged"] = s.converged;
        return d;
      },
      py::arg("moving"), py::arg("fixed"), py::arg("width") = 1024, py::arg("height") = 1024,
      py::arg("beta") = 0.0, py::arg("lambda_") = 2.0, py::arg("alpha") = 1.0, py::arg("k") = 8,
      py::arg("outlier_weight") = 0.1, py::arg("max_iterations") = CpdConfig{}.max_iterations,
      py::arg("sigma_tol") = 1e-5);

  py::class_<TpsModel>(m, "TpsModel")
      .def("__call__",
           [](const TpsModel& t, const Points& p) {
             auto pts = to_points(p);
             for (auto& q : pts) q = t(q);
             return from_points(pts);
           })
      .def_property_readonly("kernel_weights", &TpsModel::kernel_weights)
      .def_property_readonly("affine", &TpsModel::affine)
      .def_property_readonly("regularization", &TpsModel::regularization)
      .def_property_readonly("control_points", [](const TpsModel& t) { return from_points(t.control_points()); });

  m.def(
      "tps_fit", [](const Points& s, const Points& t, double reg) { return tps_fit(to_points(s), to_points(t), reg); },
      py::arg("source"), py::arg("target"), py::arg("reg") = 0.0);
  m.def(
      "tps_field", [](const TpsModel& t, int w, int h) { return from_field(tps_field(t, w, h)); },
      py::arg("model"), py::arg("width"), py::arg("height"));

  m.def(
      "warp_image",
      [](const Bytes& img, const RigidTransform2D& rigid, const std::optional<Points>& field) {
        return from_raster(warp_image(to_raster(img), rigid, to_field(field)));
      },
      py::arg("image"), py::arg("rigid") = RigidTransform2D{}, py::arg("field") = py::none());

  m.def("cubic_bspline_basis", &cubic_bspline_basis, py::arg("u"));
  m.def(
      "refine",
      [](const Bytes& fixed, const Bytes& moving, int levels, double spacing, int max_iters) {
        RefineConfig cfg;
        cfg.levels = levels;
        cfg.initial_spacing = spacing;
        cfg.max_iters_per_level = max_iters;
        const Raster f = to_raster(fixed), mv = to_raster(moving);
        RefineResult r;
        {
          py::gil_scoped_release release;
          r = refine_detailed(f, mv, cfg);
        }
        py::dict d;
        d["field"] = from_field(r.field);
        d["initial_mse"] = r.initial_mse;
        d["final_mse"] = r.final_mse;
        d["mse_trace"] = r.mse_trace;
        return d;
      },
      py::arg("fixed"), py::arg("moving"), py::arg("levels") = 3, py::arg("initial_spacing") = 128.0,
      py::arg("max_iters_per_level") = 100);

  m.def("tre", [](double tx, double ty, double fx, double fy) { return tre({tx, ty}, {fx, fy}); });
  m.def("rtre", &rtre, py::arg("tre_px"), py::arg("width"), py::arg("height"));
  m.def(
      "evaluate_by_nuclei",
      [](const Points& warped, const Points& fixed, int w, int h, double radius) {
        return report_dict(evaluate_by_nuclei(to_set(warped, w, h), to_set(fixed, w, h), radius));
      },
      py::arg("warped"), py::arg("fixed"), py::arg("width") = 1024, py::arg("height") = 1024,
      py::arg("match_radius") = 50.0);

  m.def(
      "synth",
      [](std::size_t n_points, std::uint64_t seed, int w, int h, double min_spacing, double angle, double tx,
         double ty, int n_bumps, double bump_amp, double bump_sigma, double jitter, double dropout,
         double clutter, bool render) {
        SynthConfig c;
        c.n_points = n_points;
        c.seed = seed;
        c.width = w;
        c.height = h;
        c.min_spacing = min_spacing;
        c.angle_deg = angle;
        c.tx = tx;
        c.ty = ty;
        c.n_bumps = n_bumps;
        c.bump_amp = bump_amp;
        c.bump_sigma = bump_sigma;
        c.jitter_sigma = jitter;
        c.dropout_frac = dropout;
        c.clutter_frac = clutter;
        c.render = render;
        const SynthPair p = generate(c);
        py::dict d;
        d["fixed"] = from_points(p.fixed.points());
        d["moving"] = from_points(p.moving.points());
        std::vector<std::pair<std::size_t, std::size_t>> gt;
        for (const auto& mm : p.gt_correspondences) gt.emplace_back(mm.moving_index, mm.fixed_index);
        d["gt_correspondences"] = gt;
        d["gt_rigid"] = p.gt_rigid;
        d["gt_field"] = from_field(p.gt_field);
        if (p.fixed_image) d["fixed_image"] = from_raster(*p.fixed_image);
        if (p.moving_image) d["moving_image"] = from_raster(*p.moving_image);
        return d;
      },
      py::arg("n_points") = 500, py::arg("seed") = 1, py::arg("width") = 1024, py::arg("height") = 1024,
      py::arg("min_spacing") = 20.0, py::arg("angle_deg") = 0.0, py::arg("tx") = 0.0, py::arg("ty") = 0.0,
      py::arg("n_bumps") = 0, py::arg("bump_amp") = 10.0, py::arg("bump_sigma") = 150.0,
      py::arg("jitter_sigma") = 1.0, py::arg("dropout_frac") = 0.1, py::arg("clutter_frac") = 0.05,
      py::arg("render") = false);

  m.def(
      "register_pointsets",
      [](const Points& moving, const Points& fixed, int w, int h, bool skip_nonrigid, const py::dict& config) {
        const PipelineConfig cfg = to_config(config);
        const PointSet2D mv = to_set(moving, w, h), fx = to_set(fixed, w, h);
        PointRegistration r;
        {
          py::gil_scoped_release release;
          r = register_pointsets(mv, fx, cfg, skip_nonrigid);
        }
        py::dict d;
        d["rigid"] = rigid_result(r.rigid);
        d["rigid_aligned"] = from_points(r.rigid_aligned.points());
        d["registered"] = from_points(r.registered.points());
        d["warnings"] = r.warnings;
        return d;
      },
      py::arg("moving"), py::arg("fixed"), py::arg("width") = 1024, py::arg("height") = 1024,
      py::arg("skip_nonrigid") = false, py::arg("config") = py::dict());

  m.def(
      "read_points_csv",
      [](const std::string& path, int w, int h) { return from_points(io::read_points_csv(path, w, h).points()); },
      py::arg("path"), py::arg("width") = 1024, py::arg("height") = 1024);
  m.def("read_field", [](const std::string& path) { return from_field(io::read_field(path)); }, py::arg("path"));
  m.def(
      "write_field", [](const std::string& path, const Points& f) { io::write_field(path, to_field(f)); },
      py::arg("path"), py::arg("field"));
}
