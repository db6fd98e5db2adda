#include "rslq/rslq.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace pybind11::literals;
using namespace rslq;

namespace {

std::vector<double> grid_times(const TimeGrid& grid) {
  std::vector<double> t(grid.nodes());
  for (std::size_t k = 0; k < grid.nodes(); ++k) t[k] = grid.time(k);
  return t;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Regime-switching stochastic LQ solver";
  py::register_exception<Error>(m, "RslqError", PyExc_RuntimeError);

  py::class_<ProblemSpec>(m, "ProblemSpec")
      .def_readonly("n", &ProblemSpec::n)
      .def_readonly("m", &ProblemSpec::m)
      .def_readonly("horizon", &ProblemSpec::horizon)
      .def_readwrite("x", &ProblemSpec::x)
      .def_property_readonly("regimes", &ProblemSpec::regimes)
      .def_property_readonly("initial_regime", [](const ProblemSpec& s) { return s.initial_regime + 1; })
      .def_property_readonly("mode", [](const ProblemSpec& s) { return to_string(s.mode); })
      .def_property_readonly("generator", [](const ProblemSpec& s) { return s.generator.rates; })
      .def("to_toml", &write_spec);

  m.def("load_spec", [](const std::string& path) { return load_spec(path); }, "path"_a);
  m.def("parse_spec", [](const std::string& text) { return parse_spec(text); }, "text"_a);
  m.def(
      "validate",
      [](const ProblemSpec& spec, std::size_t steps) {
        const ValidationReport r = validate_spec(spec, TimeGrid(spec.horizon, steps));
        return py::make_tuple(r.valid(), r.to_string());
      },
      "spec"_a, "steps"_a = 100, "Returns (valid, report text).");

  py::class_<RiccatiSolution>(m, "RiccatiSolution")
      .def_property_readonly("times", [](const RiccatiSolution& s) { return grid_times(s.grid); })
      .def_readonly("regimes", &RiccatiSolution::regimes)
      .def_property_readonly("iterations", [](const RiccatiSolution& s) { return s.diagnostics.iterations; })
      .def("P", [](const RiccatiSolution& s, std::size_t k, std::size_t i) { return s.P_at(k, i - 1); },
           "node"_a, "regime"_a)
      .def("Gamma", [](const RiccatiSolution& s, std::size_t k, std::size_t i) { return s.Gamma_at(k, i - 1); },
           "node"_a, "regime"_a);

  py::class_<AdjointSolution>(m, "AdjointSolution")
      .def_property_readonly("times", [](const AdjointSolution& s) { return grid_times(s.grid); })
      .def("K", [](const AdjointSolution& s, std::size_t k, std::size_t i) { return s.K_at(k, i - 1); },
           "node"_a, "regime"_a)
      .def("L", [](const AdjointSolution& s, std::size_t k, std::size_t i) { return s.L_at(k, i - 1); },
           "node"_a, "regime"_a);

  py::class_<FeedbackPolicy>(m, "FeedbackPolicy")
      .def("Gamma", [](const FeedbackPolicy& p, std::size_t k, std::size_t i) { return p.Gamma_at(k, i - 1); },
           "node"_a, "regime"_a)
      .def("phi", [](const FeedbackPolicy& p, std::size_t k, std::size_t i) { return p.phi_at(k, i - 1); },
           "node"_a, "regime"_a)
      .def("__call__", [](const FeedbackPolicy& p, double t, const Vector& x, std::size_t i) {
        return p.evaluate(t, x, i - 1);
      }, "t"_a, "x"_a, "regime"_a);

  m.def("solve_riccati_ode",
        [](const ProblemSpec& spec, std::size_t steps) { return solve_riccati_ode(spec, TimeGrid(spec.horizon, steps)); },
        "spec"_a, "steps"_a, py::call_guard<py::gil_scoped_release>());
  m.def(
      "solve_riccati_picard",
      [](const ProblemSpec& spec, std::size_t steps, double tol, std::size_t max_iter) {
        return solve_riccati_picard(spec, TimeGrid(spec.horizon, steps), tol, max_iter);
      },
      "spec"_a, "steps"_a, "tol"_a = 1e-10, "max_iter"_a = 50, py::call_guard<py::gil_scoped_release>());
  m.def(
      "solve_adjoint_ode",
      [](const ProblemSpec& spec, const RiccatiSolution& riccati) {
        return solve_adjoint_ode(spec, riccati, riccati.grid);
      },
      "spec"_a, "riccati"_a);
  m.def("build_policy", &build_policy, "riccati"_a, "adjoint"_a, "spec"_a);
  m.def(
      "optimal_value",
      [](const ProblemSpec& spec, const RiccatiSolution& riccati, const AdjointSolution& adjoint) {
        const OccupationTable occ = occupation_probabilities(spec.generator, spec.initial_regime, riccati.grid);
        const ValueReport r = optimal_value(spec, riccati, adjoint, occ);
        py::dict terms;
        for (const auto& [name, value] : r.terms) terms[py::str(name)] = value;
        return py::make_tuple(r.V, terms);
      },
      "spec"_a, "riccati"_a, "adjoint"_a, "Returns (V, {term: value}).");
  m.def(
      "occupation_probabilities",
      [](const Matrix& rates, std::size_t initial, double horizon, std::size_t steps) {
        return occupation_probabilities(Generator{rates}, initial - 1, TimeGrid(horizon, steps)).probs;
      },
      "rates"_a, "initial"_a, "horizon"_a, "steps"_a, "Marginal regime law, (steps+1) x regimes.");
  m.def(
      "simulate_closed_loop",
      [](const ProblemSpec& spec, const FeedbackPolicy& policy, std::size_t paths, std::uint64_t seed) {
        SimulationBatch b;
        {
          py::gil_scoped_release release;
          b = simulate_closed_loop(spec, policy, policy.grid, paths, SimulationOptions{seed, 1, false});
        }
        return py::dict("mean"_a = b.mean, "std_error"_a = b.std_error, "ci99_half_width"_a = b.ci99_half_width,
                        "blowups"_a = b.blowups);
      },
      "spec"_a, "policy"_a, "paths"_a, "seed"_a = 0);
}
