#include "bregiot/closed_form.hpp"
#include "bregiot/constraint_sets.hpp"
#include "bregiot/errors.hpp"
#include "bregiot/experiments.hpp"
#include "bregiot/iot_bcd.hpp"
#include "bregiot/transport.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>

namespace py = pybind11;
using namespace bregiot;

namespace {

// Reports cross the boundary as JSON text; the package wrapper decodes them.
std::string dump(const nlohmann::json& j) { return j.dump(); }

InverseSet parse_inverse_set(const std::string& id) {
  if (id == "sh") return InverseSet::sh;
  if (id == "shw") return InverseSet::shw;
  if (id == "free") return InverseSet::whole_space;
  throw DataError("unknown inverse set '" + id + "' (expected sh, shw or free)");
}

PlanSet parse_plan_set(const std::string& id) {
  if (id == "u") return PlanSet::u_phi;
  if (id == "uw") return PlanSet::u_phi_w;
  if (id == "v") return PlanSet::v_phi;
  if (id == "w") return PlanSet::w_phi;
  throw DataError("unknown plan set '" + id + "' (expected u, uw, v or w)");
}

py::dict report_dict(const SolveReport& r) {
  py::dict d;
  d["objective"] = r.objective;
  d["residual"] = r.residual;
  d["iterations"] = r.iterations;
  d["reason"] = to_string(r.reason);
  d["wall_seconds"] = r.wall_seconds;
  return d;
}

}  // namespace

PYBIND11_MODULE(_bregiot, m) {
  m.doc() = "Bregman-regularized optimal transport and its inverse problem";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<GeneratorError>(m, "GeneratorError", base.ptr());
  py::register_exception<UnsupportedCase>(m, "UnsupportedCase", base.ptr());
  py::register_exception<ConvergenceError>(m, "ConvergenceError", base.ptr());
  py::register_exception<MaxIterationsExceeded>(m, "MaxIterationsExceeded", base.ptr());
  py::register_exception<LineSearchFailure>(m, "LineSearchFailure", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());

  m.def(
      "generator_eval",
      [](const std::string& gen, const std::string& func, double x) {
        const Generator g = Generator::parse(gen);
        if (func == "phi") return g.phi(x);
        if (func == "phi_prime") return g.phi_prime(x);
        if (func == "psi") return g.psi(x);
        if (func == "psi_prime") return g.psi_prime(x);
        if (func == "psi_second") return g.psi_second(x);
        throw DataError("unknown generator function '" + func + "'");
      },
      py::arg("gen"), py::arg("func"), py::arg("x"));

  m.def(
      "solve_forward",
      [](const Matrix& cost, const Vector& mu, const Vector& nu, double gamma,
         const std::string& gen, double tol, int max_sweeps) {
        SolverConfig cfg;
        cfg.tol = tol;
        cfg.max_sweeps = max_sweeps;
        ForwardSolution sol;
        {
          py::gil_scoped_release release;
          sol = solve_forward({cost, mu, nu, gamma, Generator::parse(gen)}, cfg);
        }
        py::dict d;
        d["plan"] = sol.plan;
        d["u"] = sol.potentials.u;
        d["v"] = sol.potentials.v;
        d["report"] = report_dict(sol.report);
        return d;
      },
      py::arg("cost"), py::arg("mu"), py::arg("nu"), py::arg("gamma") = 1.0,
      py::arg("gen") = "entropy", py::arg("tol") = 1e-10, py::arg("max_sweeps") = 10000);

  m.def(
      "g_map",
      [](const Matrix& x, double gamma, const std::string& gen) {
        return g_map(Generator::parse(gen), x, gamma);
      },
      py::arg("x"), py::arg("gamma") = 1.0, py::arg("gen") = "entropy");

  m.def(
      "set_membership",
      [](const Matrix& x, double gamma, const std::string& set, double tol,
         const std::string& gen, const Vector& w) {
        return set_membership(Generator::parse(gen), x, gamma, parse_plan_set(set), tol, w);
      },
      py::arg("x"), py::arg("gamma"), py::arg("set"), py::arg("tol") = 1e-9,
      py::arg("gen") = "entropy", py::arg("w") = Vector());

  m.def(
      "invert_closed_form",
      [](const Matrix& x, double gamma, const std::string& set, const std::string& gen,
         const Vector& w) {
        const auto cert =
            invert_closed_form(Generator::parse(gen), x, gamma, parse_inverse_set(set), w);
        py::dict d;
        d["cost"] = cert.cost;
        d["membership_ok"] = cert.membership_ok;
        d["roundtrip_residual"] = cert.roundtrip_residual;
        return d;
      },
      py::arg("x"), py::arg("gamma") = 1.0, py::arg("set") = "sh", py::arg("gen") = "entropy",
      py::arg("w") = Vector());

  m.def(
      "stability_rhs",
      [](const Matrix& x_hat, const Matrix& x_tilde, double gamma, const std::string& gen) {
        return stability_rhs(Generator::parse(gen), x_hat, x_tilde, gamma);
      },
      py::arg("x_hat"), py::arg("x_tilde"), py::arg("gamma") = 1.0, py::arg("gen") = "entropy");

  m.def(
      "project",
      [](const Matrix& mat, const std::string& set) { return ConstraintSet::parse(set).project(mat); },
      py::arg("m"), py::arg("set"));
  m.def(
      "contains",
      [](const Matrix& mat, const std::string& set, double tol) {
        return ConstraintSet::parse(set).contains(mat, tol);
      },
      py::arg("m"), py::arg("set"), py::arg("tol") = 1e-9);

  m.def(
      "solve_iot",
      [](const Matrix& x_hat, const Vector& mu, const Vector& nu, double gamma, double lambda,
         const std::string& set, const std::string& gen, int max_iters, double kkt_tol,
         const std::string& cost_step) {
        BcdConfig cfg;
        cfg.max_iters = max_iters;
        cfg.kkt_tol = kkt_tol;
        if (cost_step == "newton") {
          cfg.cost_step = CostStep::newton;
        } else if (cost_step == "pg") {
          cfg.cost_step = CostStep::projected_gradient;
        } else {
          throw DataError("unknown cost step '" + cost_step + "' (expected newton or pg)");
        }
        IotSolution sol;
        {
          py::gil_scoped_release release;
          sol = solve_iot(x_hat, mu, nu, gamma, lambda, ConstraintSet::parse(set),
                          Generator::parse(gen), cfg);
        }
        py::dict d;
        d["cost"] = sol.cost;
        d["u"] = sol.u;
        d["v"] = sol.v;
        d["report"] = report_dict(sol.report);
        d["monotone"] = sol.monotone;
        return d;
      },
      py::arg("x_hat"), py::arg("mu"), py::arg("nu"), py::arg("gamma") = 1.0,
      py::arg("lam") = 1e-8, py::arg("set") = "sh", py::arg("gen") = "entropy",
      py::arg("max_iters") = 100, py::arg("kkt_tol") = 1e-6, py::arg("cost_step") = "newton");

  m.def(
      "run_experiment_json",
      [](const std::string& config_json) {
        const ExperimentConfig cfg = experiment_config_from_json(nlohmann::json::parse(config_json));
        nlohmann::json rep;
        {
          py::gil_scoped_release release;
          if (cfg.experiment == "exp-random") {
            rep = exp_random_marginals(cfg);
          } else if (cfg.experiment == "exp-stability") {
            rep = exp_stability(cfg);
          } else if (cfg.experiment == "exp-lambda") {
            rep = exp_lambda_sweep(cfg);
          } else {
            throw DataError("unknown experiment '" + cfg.experiment + "'");
          }
        }
        return dump(rep);
      },
      py::arg("config_json"));

  m.def("version_json", [] { return dump(version_info()); });
}
