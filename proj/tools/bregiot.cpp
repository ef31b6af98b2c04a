// Command line front end: forward solves, inversions and the experiment drivers.

#include "bregiot/closed_form.hpp"
#include "bregiot/constraint_sets.hpp"
#include "bregiot/errors.hpp"
#include "bregiot/experiments.hpp"
#include "bregiot/io.hpp"
#include "bregiot/iot_bcd.hpp"
#include "bregiot/transport.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>

namespace {

using namespace bregiot;
using nlohmann::json;

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
  int threads = 1;
};

Vector read_vector(const std::string& path) {
  const Matrix m = read_matrix(path);
  if (m.rows() != 1 && m.cols() != 1) {
    throw DataError(path + ": expected a single row or column, got " + std::to_string(m.rows()) +
                    "x" + std::to_string(m.cols()));
  }
  return Eigen::Map<const Vector>(m.data(), m.size());
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

// `lo:hi:count` becomes a log grid, anything else a comma separated list.
std::vector<double> parse_grid(const std::string& text) {
  const auto first = text.find(':');
  if (first == std::string::npos) return parse_list(text);
  const auto second = text.find(':', first + 1);
  if (second == std::string::npos) throw CLI::ValidationError("grid", "use lo:hi:count");
  return log_grid(std::stod(text.substr(0, first)),
                  std::stod(text.substr(first + 1, second - first - 1)),
                  std::stoi(text.substr(second + 1)));
}

CostStep parse_cost_step(const std::string& s) {
  if (s == "newton") return CostStep::newton;
  if (s == "pg" || s == "projected_gradient") return CostStep::projected_gradient;
  throw CLI::ValidationError("--c-mode", "expected newton or pg");
}

void emit(const Globals& g, const json& report) {
  if (g.out.empty()) {
    std::cout << report.dump(2) << '\n';
  } else {
    write_report(g.out, report);
    std::cerr << "wrote " << g.out << '\n';
  }
}

void require_out(const Globals& g, const char* what) {
  if (g.out.empty()) throw CLI::ValidationError("--out", std::string("required by ") + what);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bregman-regularized inverse optimal transport"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out", g.out, "Output path (.csv, .json or a directory)");
  app.add_option("--threads", g.threads, "Worker threads for independent trials")
      ->check(CLI::PositiveNumber);

  // forward
  auto* fwd = app.add_subcommand("forward", "Solve the regularized transport problem");
  std::string cost_path, mu_path, nu_path, gen_id = "entropy", fwd_report;
  double gamma = 1.0, fwd_tol = 1e-10;
  int fwd_sweeps = 10000;
  fwd->add_option("--cost", cost_path, "Cost matrix CSV")->required();
  fwd->add_option("--mu", mu_path, "Row marginal CSV")->required();
  fwd->add_option("--nu", nu_path, "Column marginal CSV")->required();
  fwd->add_option("--gen", gen_id, "Generator: entropy, burg, fermi-dirac, beta:<b>, quadratic");
  fwd->add_option("--gamma", gamma, "Regularization strength");
  fwd->add_option("--tol", fwd_tol, "Marginal residual tolerance");
  fwd->add_option("--max-iter", fwd_sweeps, "Sweep cap");
  fwd->add_option("--report", fwd_report, "Optional JSON report path");

  // invert-closed-form
  auto* icf = app.add_subcommand("invert-closed-form", "Closed-form inverse of an observed plan");
  std::string xhat_path, cf_set = "sh", cf_report;
  icf->add_option("--xhat", xhat_path, "Observed plan CSV")->required();
  icf->add_option("--gen", gen_id, "Generator id");
  icf->add_option("--gamma", gamma, "Regularization strength");
  icf->add_option("--set", cf_set, "sh, shw:<w1,...,wn> or free");
  icf->add_option("--report", cf_report, "Optional JSON certificate path");

  // invert-bcd
  auto* ibcd = app.add_subcommand("invert-bcd", "Regularized inverse by block coordinate descent");
  std::string bcd_set = "sh", c_mode = "newton", bcd_cost_out;
  double lambda = 1e-8, kkt_tol = 1e-6;
  int max_iter = 100;
  bool gauge_fix = false, allow_zero = false;
  ibcd->add_option("--xhat", xhat_path, "Observed plan CSV")->required();
  ibcd->add_option("--gen", gen_id, "Generator id");
  ibcd->add_option("--gamma", gamma, "Regularization strength");
  ibcd->add_option("--lambda", lambda, "Penalty weight");
  ibcd->add_option("--set", bcd_set, "Cost set id (sh, shw:..., ed, nonneg, free, affine:U.csv,V.csv)");
  ibcd->add_option("--tol", kkt_tol, "Relative KKT residual tolerance");
  ibcd->add_option("--max-iter", max_iter, "Iteration cap");
  ibcd->add_option("--c-mode", c_mode, "newton or pg");
  ibcd->add_flag("--gauge-fix", gauge_fix, "Pin u_n = 0");
  ibcd->add_flag("--allow-zero", allow_zero, "Accept zero entries in X_hat");
  ibcd->add_option("--cost-out", bcd_cost_out, "Write the recovered cost to this CSV");

  // experiments
  ExperimentConfig ecfg;
  std::string gamma_grid, lambda_grid;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--n", ecfg.n, "Problem size");
    sub->add_option("--trials", ecfg.trials, "Trials (per gamma for exp-stability)");
    sub->add_option("--gen", ecfg.generator, "Generator id");
    sub->add_option("--max-iter", ecfg.max_iters, "BCD iteration cap");
    sub->add_option("--tol", ecfg.kkt_tol, "BCD relative KKT tolerance");
    sub->add_option("--forward-max-sweeps", ecfg.forward_max_sweeps,
                    "Sweep cap for the forward solves");
  };
  auto* erand = app.add_subcommand("exp-random", "Recovery on random marginals");
  add_common(erand);
  erand->add_option("--gamma", gamma_grid, "Gamma");
  erand->add_option("--lambda", lambda_grid, "Lambda");
  erand->add_option("--set", ecfg.set, "sh or ed");
  erand->add_option("--c-mode", c_mode, "newton or pg");
  erand->add_option("--cost-scale", ecfg.cost_scale, "Scale of the sampled ground-truth cost");

  auto* estab = app.add_subcommand("exp-stability", "Stability bound sweep over gamma");
  add_common(estab);
  estab->add_option("--gammas", gamma_grid, "lo:hi:count or a list (default 0.01:10:20)");
  estab->add_option("--noise", ecfg.noise_level, "Perturbation size");
  estab->add_option("--epsilon", ecfg.epsilon, "Floor inside phi'");

  auto* elam = app.add_subcommand("exp-lambda", "Recovery error against the penalty weight");
  add_common(elam);
  elam->add_option("--gamma", gamma_grid, "Gamma (default 0.1)");
  elam->add_option("--lambdas", lambda_grid, "lo:hi:count or a list (default 1e-12:1e-2:25)");
  elam->add_option("--set", ecfg.set, "sh or ed");
  elam->add_option("--c-mode", c_mode, "newton or pg");

  auto* ematch = app.add_subcommand("exp-matching", "Cross-validated matching prediction");
  MatchingConfig mcfg;
  std::string data_dir;
  ematch->add_option("--data", data_dir, "Dataset directory")->required();
  ematch->add_option("--folds", mcfg.folds, "Number of folds (1 = in-sample)");
  ematch->add_option("--gamma", mcfg.gamma, "Regularization strength");
  ematch->add_option("--lambda", mcfg.lambda, "Penalty weight");
  ematch->add_option("--max-iter", mcfg.max_iters, "BCD iteration cap");
  ematch->add_option("--k-cluster", mcfg.k_cluster, "Re-derive types by k-means (0 = off)");

  auto* gsyn = app.add_subcommand("gen-synthetic-matching", "Write a planted-A matching dataset");
  SyntheticMatchingConfig scfg;
  gsyn->add_option("--d", scfg.d, "Feature dimension");
  gsyn->add_option("--n-types", scfg.n_types, "Number of types per side");
  gsyn->add_option("--pairs", scfg.total_pairs, "Number of sampled couples");
  gsyn->add_option("--gamma", scfg.gamma, "Regularization strength of the planted model");
  gsyn->add_flag("--noiseless", scfg.noiseless, "Expected counts instead of samples");
  gsyn->add_option("--noise", scfg.multiplicative_noise, "Log-normal noise on the plan");
  gsyn->add_flag("--individuals", scfg.individuals, "Also write individuals.csv and pairs.csv");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fwd) {
      TransportProblem prob{read_matrix(cost_path), read_vector(mu_path), read_vector(nu_path),
                            gamma, Generator::parse(gen_id)};
      SolverConfig cfg;
      cfg.tol = fwd_tol;
      cfg.max_sweeps = fwd_sweeps;
      const ForwardSolution sol = solve_forward(prob, cfg);
      require_out(g, "forward");
      write_matrix(g.out, sol.plan);
      if (!fwd_report.empty()) {
        json rep = to_json(sol.report);
        rep["kkt_residual"] = kkt_residual(prob, sol);
        rep["u"] = to_json(sol.potentials.u);
        rep["v"] = to_json(sol.potentials.v);
        write_report(fwd_report, rep);
      }
    } else if (*icf) {
      const Generator gen = Generator::parse(gen_id);
      const Matrix x_hat = read_matrix(xhat_path);
      InverseCertificate cert;
      if (cf_set == "sh") {
        cert = invert_closed_form(gen, x_hat, gamma, InverseSet::sh);
      } else if (cf_set == "free") {
        cert = invert_closed_form(gen, x_hat, gamma, InverseSet::whole_space);
      } else if (cf_set.rfind("shw:", 0) == 0) {
        const auto w = parse_list(cf_set.substr(4));
        cert = invert_closed_form(gen, x_hat, gamma, InverseSet::shw,
                                  Eigen::Map<const Vector>(w.data(), Eigen::Index(w.size())));
      } else {
        throw CLI::ValidationError("--set", "expected sh, shw:<w> or free");
      }
      require_out(g, "invert-closed-form");
      write_matrix(g.out, cert.cost);
      if (!cf_report.empty()) {
        write_report(cf_report, {{"set", cf_set},
                                 {"generator", gen.id()},
                                 {"gamma", gamma},
                                 {"membership_ok", cert.membership_ok},
                                 {"roundtrip_residual", cert.roundtrip_residual}});
      }
      if (!cert.membership_ok) std::cerr << "warning: X_hat failed the set membership test\n";
    } else if (*ibcd) {
      const Generator gen = Generator::parse(gen_id);
      const Matrix x_hat = read_matrix(xhat_path);
      BcdConfig cfg;
      cfg.max_iters = max_iter;
      cfg.kkt_tol = kkt_tol;
      cfg.cost_step = parse_cost_step(c_mode);
      cfg.gauge_fix_un = gauge_fix;
      cfg.allow_zero_entries = allow_zero;
      const ConstraintSet set = ConstraintSet::parse(bcd_set);
      const IotSolution sol = solve_iot(x_hat, x_hat.rowwise().sum(),
                                        x_hat.colwise().sum().transpose(), gamma, lambda, set,
                                        gen, cfg);
      if (!bcd_cost_out.empty()) write_matrix(bcd_cost_out, sol.cost);
      json rep = {{"experiment", "invert-bcd"},
                  {"config",
                   {{"xhat", xhat_path},
                    {"generator", gen.id()},
                    {"gamma", gamma},
                    {"lambda", lambda},
                    {"set", set.id()},
                    {"tol", kkt_tol},
                    {"max_iter", max_iter},
                    {"c_mode", c_mode},
                    {"gauge_fix", gauge_fix},
                    {"allow_zero", allow_zero}}},
                  {"seed", g.seed},
                  {"versions", version_info()},
                  {"report", to_json(sol.report)},
                  {"cost", to_json(sol.cost)},
                  {"u", to_json(sol.u)},
                  {"v", to_json(sol.v)},
                  {"monotone", sol.monotone},
                  {"step_floor", sol.step_floor},
                  {"step_floor_ok", sol.step_floor_ok},
                  {"sufficient_decrease_ok", sol.sufficient_decrease_ok}};
      if (lambda > 0.0) {
        IotState st;
        st.u = sol.u;
        st.v = sol.v;
        st.cost = sol.cost;
        st.x_hat = x_hat;
        st.gamma = gamma;
        st.lambda = lambda;
        st.set = set;
        st.gen = gen;
        rep["q_linear_rate"] = q_linear_tail_rate(sol.report.objective, objective_gap_bound(st));
      }
      emit(g, rep);
    } else if (*erand || *estab || *elam) {
      ecfg.seed = g.seed;
      ecfg.out = g.out;
      ecfg.threads = g.threads;
      ecfg.cost_step = parse_cost_step(c_mode);
      json rep;
      if (*erand) {
        ecfg.experiment = "exp-random";
        if (!gamma_grid.empty()) ecfg.gammas = parse_grid(gamma_grid);
        if (!lambda_grid.empty()) ecfg.lambdas = parse_grid(lambda_grid);
        rep = exp_random_marginals(ecfg);
      } else if (*estab) {
        ecfg.experiment = "exp-stability";
        ecfg.trials = estab->count("--trials") ? ecfg.trials : 50;
        ecfg.gammas = parse_grid(gamma_grid.empty() ? "0.01:10:20" : gamma_grid);
        rep = exp_stability(ecfg);
      } else {
        ecfg.experiment = "exp-lambda";
        ecfg.gammas = gamma_grid.empty() ? std::vector<double>{0.1} : parse_grid(gamma_grid);
        ecfg.lambdas = parse_grid(lambda_grid.empty() ? "1e-12:1e-2:25" : lambda_grid);
        rep = exp_lambda_sweep(ecfg);
      }
      emit(g, rep);
    } else if (*ematch) {
      mcfg.seed = g.seed;
      mcfg.threads = g.threads;
      json rep = exp_matching(load_matching_dataset(data_dir), mcfg);
      rep["config"]["data"] = data_dir;
      emit(g, rep);
    } else if (*gsyn) {
      require_out(g, "gen-synthetic-matching (dataset directory)");
      scfg.seed = g.seed;
      const SyntheticMatching syn = generate_synthetic_matching(scfg);
      save_matching_dataset(g.out, syn.dataset);
      write_matrix(g.out + "/planted_A.csv", syn.planted_a);
      write_matrix(g.out + "/plan.csv", syn.plan);
      std::cerr << "wrote dataset to " << g.out << '\n';
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
