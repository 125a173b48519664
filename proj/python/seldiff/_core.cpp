#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>

#include "seldiff/checkpoint.hpp"
#include "seldiff/config.hpp"
#include "seldiff/ddpm.hpp"
#include "seldiff/harness.hpp"
#include "seldiff/metrics.hpp"
#include "seldiff/selective.hpp"

namespace py = pybind11;
using namespace seldiff;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::list metric_rows(const std::vector<MetricRow>& rows) {
  py::list out;
  for (const auto& r : rows) out.append(py::make_tuple(r.run_id, r.step, r.sample_id, r.metric, r.value));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Selective-noising unlearning for diffusion models.";

  py::class_<RunConfig>(m, "Config")
      .def(py::init<>())
      .def_static("toy", &toy_defaults, "Two-moons window study preset.")
      .def_static("image", &image_defaults, "16x16 texture preset.")
      .def_static("parse", [](const std::string& text) { return parse_config(text); })
      .def_static("load", &load_config)
      .def("to_text", &serialize_config)
      .def("set", &apply_setting, py::arg("key"), py::arg("value"))
      .def("validate", &RunConfig::validate)
      .def("run_id", &run_id)
      .def_readwrite("seed", &RunConfig::seed)
      .def("__eq__", [](const RunConfig& a, const RunConfig& b) { return a == b; })
      .def("__repr__", [](const RunConfig& c) { return "Config(run_id='" + run_id(c) + "')"; });

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("data", [](const Dataset& d) { return to_array(d.data); })
      .def_readonly("forget_idx", &Dataset::forget_idx)
      .def_readonly("retain_idx", &Dataset::retain_idx)
      .def_readonly("retain_eval_idx", &Dataset::retain_eval_idx)
      .def_property_readonly("image_shape",
                             [](const Dataset& d) { return py::make_tuple(d.image_h, d.image_w); });
  m.def("make_dataset", [](const RunConfig& c) { return make_dataset(c.dataset); });

  py::class_<Denoiser>(m, "Denoiser")
      .def("predict",
           [](const Denoiser& d, const Array& x_t, const std::vector<int>& t) { return to_array(d.predict(to_tensor(x_t), t)); })
      .def_property_readonly("n_params", [](const Denoiser& d) {
        std::size_t n = 0;
        for (const auto& p : d.params()) n += p.numel();
        return n;
      });

  m.def(
      "train_base",
      [](const RunConfig& c, const Dataset& d) {
        py::gil_scoped_release release;
        return train_base(c, d).model;
      },
      py::arg("config"), py::arg("dataset"));
  m.def(
      "run_unlearn",
      [](const RunConfig& c, const Dataset& d, const Denoiser& base) {
        UnlearnResult r = [&] {
          py::gil_scoped_release release;
          return run_unlearn(c, d, base);
        }();
        return py::make_tuple(std::move(r.model), metric_rows(r.record.metrics));
      },
      py::arg("config"), py::arg("dataset"), py::arg("base"),
      "Returns (model, rows) with rows as (run_id, step, sample_id, metric, value).");
  m.def(
      "sample",
      [](const Denoiser& model, const RunConfig& c, std::size_t n, std::uint64_t seed) {
        return to_array(sample(model, c.schedule(), n, seed));
      },
      py::arg("model"), py::arg("config"), py::arg("n"), py::arg("seed"));
  m.def("save_checkpoint", [](const std::filesystem::path& p, const Denoiser& model, const RunConfig& c) {
    save_checkpoint(p, model, c.schedule());
  });
  m.def("load_checkpoint", [](const std::filesystem::path& p) { return load_checkpoint(p).model; });

  m.def(
      "time_window_pmf",
      [](double k, int t1, int t2, int T) {
        const TimeWindowConfig c{k, t1, t2, T};
        c.validate();
        std::vector<double> out(T);
        for (int t = 0; t < T; ++t) out[t] = pdf(c, t);
        return out;
      },
      py::arg("k"), py::arg("t1"), py::arg("t2"), py::arg("T"));
  m.def(
      "low_pass", [](const Array& img, double r_t, double s) { return to_array(low_pass(to_tensor(img), r_t, s)); },
      py::arg("image"), py::arg("r_t"), py::arg("s") = 0.0);
  m.def(
      "sscd_norm",
      [](const Array& x0, const Array& x0_hat, double rho) {
        SscdNormConfig cfg;
        cfg.rho = rho;
        return sscd_norm(to_tensor(x0), to_tensor(x0_hat), flatten_cosine(), cfg);
      },
      py::arg("x0"), py::arg("x0_hat"), py::arg("rho") = 100.0);
  m.def(
      "psd_radial",
      [](const Array& img, std::size_t n_bins) {
        const PsdCurve c = psd_radial(to_tensor(img), n_bins);
        return py::make_tuple(c.radius, c.power, c.count);
      },
      py::arg("image"), py::arg("n_bins"));
  m.def("forget_hit_rate", [](const Array& s, const Array& f, double r) {
    return forget_hit_rate(to_tensor(s), to_tensor(f), r);
  });
  m.def("retain_coverage", [](const Array& s, const Array& f, double r) {
    return retain_coverage(to_tensor(s), to_tensor(f), r);
  });
}
