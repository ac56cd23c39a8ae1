// Python module dualfilter._core: HMM models, the forward filter, the
// path-local dual filter with its weight heatmap, and the experiment runners.

#include <cstdint>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dualfilter/errors.h"
#include "dualfilter/experiments.h"
#include "dualfilter/hmm.h"
#include "dualfilter/io.h"
#include "dualfilter/layers.h"

namespace py = pybind11;
using namespace dualfilter;

namespace {

hmm::PerturbTarget ParseTarget(const std::string& target) {
  if (target == "transition") return hmm::PerturbTarget::kTransition;
  if (target == "emission") return hmm::PerturbTarget::kEmission;
  throw ArgumentError("target must be 'transition' or 'emission'");
}

xcli::Format ParseFormat(const std::string& format) {
  if (format == "csv") return xcli::Format::kCsv;
  if (format == "json") return xcli::Format::kJson;
  throw ArgumentError("format must be 'csv' or 'json'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dual filter core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ModelError>(m, "ModelError", base.ptr());
  py::register_exception<ArgumentError>(m, "ArgumentError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ImpossiblePathError>(m, "ImpossiblePathError", base.ptr());
  py::register_exception<ConvergenceError>(m, "ConvergenceError", base.ptr());
  py::register_exception<TreeTooLargeError>(m, "TreeTooLargeError", base.ptr());

  py::class_<hmm::Hmm>(m, "Hmm")
      .def(py::init([](const Eigen::MatrixXd& A, const Eigen::MatrixXd& C,
                       const Eigen::VectorXd& mu) {
             hmm::Hmm h;
             h.d = static_cast<int>(A.rows());
             h.m = static_cast<int>(C.cols()) - 1;
             h.A = A;
             h.C = C;
             h.mu = mu;
             h.Validate();
             return h;
           }),
           py::arg("A"), py::arg("C"), py::arg("mu"))
      .def_readonly("d", &hmm::Hmm::d)
      .def_readonly("m", &hmm::Hmm::m)
      .def_readonly("A", &hmm::Hmm::A)
      .def_readonly("C", &hmm::Hmm::C)
      .def_readonly("mu", &hmm::Hmm::mu)
      .def("to_json", &io::HmmToJson)
      .def_static("from_json", &io::HmmFromJson);

  m.def("two_cycle", [](int d, int q) { return hmm::TwoCycle({d, q}); },
        py::arg("d") = 16, py::arg("q") = 4);
  m.def("perturb",
        [](const hmm::Hmm& h, double eps, const std::string& target) {
          return hmm::Perturb(h, eps, ParseTarget(target));
        },
        py::arg("model"), py::arg("epsilon"), py::arg("target") = "transition");
  m.def("sample_paths", &hmm::SamplePaths, py::arg("model"), py::arg("T"),
        py::arg("count"), py::arg("seed"));

  m.def("forward_filter",
        [](const hmm::Hmm& h, const std::vector<int>& z) {
          hmm::FilterPath f = hmm::ForwardFilter(h, z);
          return py::make_tuple(f.pi, f.loglik);
        },
        py::arg("model"), py::arg("z"),
        "Returns (pi, loglik); column t-1 of pi is P(X_t | Z_1..Z_t).");

  m.def("dual_filter",
        [](const hmm::Hmm& h, const std::vector<int>& z, double tol,
           int max_layers, double damping) {
          dual::LayerOptions opts{tol, max_layers, damping};
          const int T = static_cast<int>(z.size());
          dual::PathIteration it = dual::IteratePath(h, z, T, opts);
          py::dict report;
          report["layers"] = it.report.layers;
          report["residual"] = it.report.residual;
          report["converged"] = it.report.converged;
          report["clipped_mass"] = it.report.clipped_mass;
          return py::make_tuple(it.rho, report);
        },
        py::arg("model"), py::arg("z"), py::arg("tol") = 1e-8,
        py::arg("max_layers") = 100, py::arg("damping") = 1.0,
        "Iterates the path layer from the uniform sequence; returns (rho, report).");

  m.def("path_weights",
        [](const hmm::Hmm& h, const Eigen::MatrixXd& rho, const std::vector<int>& z) {
          return dual::PathWeights(h, rho, z).magnitude;
        },
        py::arg("model"), py::arg("rho"), py::arg("z"));
  m.def("event_columns", [](const std::vector<int>& z) {
    return dual::EventColumns(z, static_cast<int>(z.size()));
  });

  m.def("entropy_benchmark", &hmm::EntropyBenchmark, py::arg("truth"),
        py::arg("paths"));
  m.def("entropy_benchmark_exact", &hmm::EntropyBenchmarkExact,
        py::arg("truth"), py::arg("T"));

  m.def("default_config",
        [](const std::string& experiment) { return xcli::Defaults(experiment).dump(); },
        py::arg("experiment"));
  m.def("run_experiment",
        [](const std::string& experiment, const std::string& config_json,
           const std::string& out_dir, const std::string& format) {
          const xcli::Format f = ParseFormat(format);
          const xcli::Json config = config_json.empty()
                                        ? xcli::Json::object()
                                        : xcli::Json::parse(config_json);
          py::gil_scoped_release release;
          return xcli::Run(experiment, config, out_dir, f).Manifest().dump();
        },
        py::arg("experiment"), py::arg("config_json"), py::arg("out_dir"),
        py::arg("format") = "csv");
}
