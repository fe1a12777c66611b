// Python bindings for the core operations: persistence diagrams, the
// topology loss, direct steering, mask generators, counting and sampling.
// Images cross the boundary as 2D float64 numpy arrays in [-1, 1].

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "topogen/datagen.hpp"
#include "topogen/denoiser.hpp"
#include "topogen/errors.hpp"
#include "topogen/image.hpp"
#include "topogen/metrics.hpp"
#include "topogen/optimize.hpp"
#include "topogen/persistence.hpp"
#include "topogen/sampler.hpp"
#include "topogen/schedule.hpp"
#include "topogen/topo_loss.hpp"

namespace py = pybind11;
using namespace topogen;

namespace {

ImageGrid to_grid(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw UsageError("image must be a 2D array");
  ImageGrid g(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  const double* p = a.data();
  std::copy(p, p + g.size(), g.v.begin());
  return g;
}

py::array_t<double> to_array(const ImageGrid& g) {
  py::array_t<double> a({g.h, g.w});
  std::copy(g.v.begin(), g.v.end(), a.mutable_data());
  return a;
}

py::dict dot_to_dict(const PersistentDot& d) {
  py::dict out;
  out["dim"] = d.dim;
  out["birth"] = d.birth;
  out["death"] = d.death;
  out["birth_px"] = py::make_tuple(d.birth_px.row, d.birth_px.col);
  out["death_px"] = py::make_tuple(d.death_px.row, d.death_px.col);
  out["essential"] = d.essential;
  return out;
}

LossConfig loss_config(bool preserve, bool denoise) {
  LossConfig cfg;
  cfg.enable_preserve = preserve;
  cfg.enable_denoise = denoise;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_topogen, m) {
  m.doc() = "topology-controlled mask generation: persistence, loss, steering, sampling";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def(
      "diagram",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img, int dim) {
        const ImageGrid g = to_grid(img);
        const PersistenceDiagram d = dim == 0 ? diagram_0d(g) : diagram_1d(g);
        py::list dots;
        for (const PersistentDot& dot : d.dots) dots.append(dot_to_dict(dot));
        return dots;
      },
      py::arg("image"), py::arg("dim"),
      "Persistence diagram of the super-level-set filtration, as a list of "
      "dicts sorted by persistence (descending).");

  m.def(
      "betti_at",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img, double u,
         int dim) { return betti_at(to_grid(img), u, dim); },
      py::arg("image"), py::arg("u"), py::arg("dim"),
      "Betti number of {pixels >= u}: components (dim 0) or holes (dim 1).");

  m.def(
      "topo_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img, int c,
         int dim, bool preserve, bool denoise) {
        const ImageGrid g = to_grid(img);
        const TopoLossResult r = topo_loss(g, {c, dim}, loss_config(preserve, denoise));
        ImageGrid grad(g.h, g.w);
        for (const PixelGrad& pg : r.grad) grad.at(pg.px.row, pg.px.col) += pg.g;
        py::dict out;
        out["value"] = r.value;
        out["preserve"] = r.preserve_term;
        out["denoise"] = r.denoise_term;
        out["grad"] = to_array(grad);
        return out;
      },
      py::arg("image"), py::arg("c"), py::arg("dim"), py::arg("preserve") = true,
      py::arg("denoise") = true,
      "Topology loss of an image in [-1, 1] under the constraint of exactly "
      "c structures, with its dense pixel gradient.");

  m.def(
      "optimize",
      [](int c, int dim, int size, int steps, double lr, std::uint64_t seed, bool preserve,
         bool denoise) {
        OptimizeConfig cfg;
        cfg.constraint = {c, dim};
        cfg.size = size;
        cfg.steps = steps;
        cfg.lr = lr;
        cfg.seed = seed;
        cfg.enable_preserve = preserve;
        cfg.enable_denoise = denoise;
        const OptimizeResult r = optimize_topology(cfg);
        std::vector<double> values;
        values.reserve(r.trace.size());
        for (const auto& row : r.trace) values.push_back(row.value);
        py::dict out;
        out["image"] = to_array(r.image);
        out["measured"] = r.measured;
        out["values"] = values;
        return out;
      },
      py::arg("c"), py::arg("dim"), py::arg("size") = 64, py::arg("steps") = 500,
      py::arg("lr") = 0.1, py::arg("seed") = 0, py::arg("preserve") = true,
      py::arg("denoise") = true,
      "Gradient-descend the topology loss on seeded noise until it carries "
      "the requested structure count.");

  m.def(
      "gen_shapes",
      [](int c, const std::string& shape_class, int size, std::uint64_t seed) {
        Rng rng(seed);
        return to_array(gen_shapes(c, shape_class_from_string(shape_class), size, rng));
      },
      py::arg("c"), py::arg("shape_class") = "mixed", py::arg("size") = 32, py::arg("seed") = 0,
      "Binary mask with exactly c separated shapes.");

  m.def(
      "gen_regions",
      [](int c, int size, std::uint64_t seed) {
        Rng rng(seed);
        return to_array(gen_regions(c, size, rng));
      },
      py::arg("c"), py::arg("size") = 64, py::arg("seed") = 0,
      "Binary wall mask enclosing exactly c holes.");

  m.def(
      "measured_count",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img, int dim,
         double u, int min_area) { return measured_count(to_grid(img), dim, u, min_area); },
      py::arg("image"), py::arg("dim"), py::arg("u") = 0.0, py::arg("min_area") = 0,
      "Count structures in a generated image after binarizing at u.");

  m.def(
      "welch_ttest",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        const WelchResult r = welch_ttest(a, b);
        py::dict out;
        out["t"] = r.t;
        out["dof"] = r.dof;
        out["p_two_sided"] = r.p_two_sided;
        out["significant_at_95"] = r.significant_at_95;
        return out;
      },
      py::arg("a"), py::arg("b"), "Welch's unequal-variance two-sided t-test.");

  m.def(
      "sample",
      [](const std::string& checkpoint, int c, int steps, std::uint64_t seed, int class_id) {
        const Denoiser<float> model = load_checkpoint<float>(checkpoint);
        const NoiseSchedule ns = cosine_schedule(model.config().T);
        SampleConfig cfg;
        cfg.steps = steps;
        cfg.seed = seed;
        cfg.c = c;
        cfg.class_id = class_id;
        return to_array(ddim_sample(model, ns, cfg));
      },
      py::arg("checkpoint"), py::arg("c"), py::arg("steps") = 50, py::arg("seed") = 0,
      py::arg("class_id") = -1,
      "Draw one mask from a trained checkpoint with the deterministic "
      "strided sampler.");

  m.def(
      "load_image", [](const std::string& path) { return to_array(load_image(path)); },
      py::arg("path"), "Load a PNG or raw float image file.");

  m.def(
      "save_png",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img,
         const std::string& path) { save_png(to_grid(img), path); },
      py::arg("image"), py::arg("path"), "Write an image as 8-bit grayscale PNG.");
}
