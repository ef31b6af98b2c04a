// Acceptance run: one PASS/FAIL line per criterion.
//
// Usage: acceptance [--expect-fail N[,M...]] [--only N[,M...]]
//
// The exit status is nonzero when a criterion fails that is not listed in
// --expect-fail, or when a listed criterion unexpectedly passes.

#include "bregiot/closed_form.hpp"
#include "bregiot/constraint_sets.hpp"
#include "bregiot/errors.hpp"
#include "bregiot/experiments.hpp"
#include "bregiot/iot_bcd.hpp"
#include "bregiot/transport.hpp"

#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace bregiot;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

constexpr std::uint64_t kSeed = 20240601;

int worker_threads() { return std::max(1, int(std::thread::hardware_concurrency())); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

std::string fmt6(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

double rel_frob(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

Matrix forward(const Generator& gen, const Matrix& c, const Vector& mu, const Vector& nu,
               double gamma, double tol = 1e-10) {
  SolverConfig cfg;
  cfg.tol = tol;
  return solve_forward({c, mu, nu, gamma, gen}, cfg).plan;
}

Matrix uniform_matrix(Rng& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(n, n);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
  return m;
}

Matrix gaussian(Rng& rng, Eigen::Index r, Eigen::Index c, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = g(rng);
  return m;
}

// 1 ---------------------------------------------------------------------------
Outcome forward_oracle() {
  const int ns[] = {5, 10, 50};
  const double gammas[] = {0.05, 0.1, 1.0};
  double worst = 0.0, slowest = 0.0;
  for (int k = 0; k < 20; ++k) {
    Rng rng(sub_seed(kSeed, std::uint64_t(k)));
    const int n = ns[k % 3];
    const double gamma = gammas[(k / 3) % 3];
    const Vector mu = sample_marginal(rng, n), nu = sample_marginal(rng, n);
    const Matrix c = uniform_matrix(rng, n, 0.0, 1.0);
    const auto t0 = std::chrono::steady_clock::now();
    const Matrix x = forward(Generator::entropy(), c, mu, nu, gamma);
    slowest = std::max(slowest, seconds_since(t0));
    worst = std::max(worst, max_abs(x - oracle::classic_sinkhorn(c, mu, nu, gamma)));
  }
  return {worst <= 1e-10 && slowest < 1.0,
          "max |X - X_sinkhorn| = " + fmt(worst) + ", slowest solve " + fmt(slowest) + " s"};
}

// 2 ---------------------------------------------------------------------------
Outcome brute_force_n2() {
  double worst = 0.0;
  Rng rng(sub_seed(kSeed, 2));
  for (const auto& gen : {Generator::entropy(), Generator::quadratic()}) {
    for (int rep = 0; rep < 10; ++rep) {
      const Vector mu = sample_marginal(rng, 2), nu = sample_marginal(rng, 2);
      const Matrix c = uniform_matrix(rng, 2, 0.0, 1.0);
      const double gamma = rep % 2 ? 0.2 : 1.0;
      const Matrix brute =
          oracle::brute_force_n2([&](double x) { return gen.phi(x); }, c, mu, nu, gamma);
      worst = std::max(worst, max_abs(forward(gen, c, mu, nu, gamma) - brute));
    }
  }
  return {worst <= 2e-5, "max |X - X_grid| = " + fmt(worst) + " over 20 problems"};
}

// 3 ---------------------------------------------------------------------------
Outcome closed_form_round_trip() {
  const auto t0 = std::chrono::steady_clock::now();
  const Generator gen = Generator::entropy();
  const int n = 10;
  const double gamma = 1.0;
  Rng rng(sub_seed(kSeed, 3));
  double forward_err = 0.0, reverse_err = 0.0, generic_err = 0.0;
  int members = 0;
  std::normal_distribution<double> normal(0.0, 0.5);
  for (int k = 0; k < 50; ++k) {
    // X_hat_ij = exp((a_i + b_j - C_ij) / gamma) with C in S_h, normalized.
    // This lies in U_phi with G(X_hat) = C; no transport solve is involved.
    const Matrix c = sample_cost(rng, n, SetKind::sh);
    Vector a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a(i) = normal(rng);
      b(i) = normal(rng);
    }
    Matrix x = ((tensor_sum(a, b) - c) / gamma).array().exp().matrix();
    x /= x.sum();
    if (set_membership(gen, x, gamma, PlanSet::u_phi, 1e-12)) ++members;
    const Matrix back = forward(gen, g_map(gen, x, gamma), x.rowwise().sum(),
                                x.colwise().sum().transpose(), gamma, 1e-12);
    forward_err = std::max(forward_err, max_abs(back - x));
  }
  // Reported only: matrices with G >= 0 but no (a (+) b - C) structure, for
  // which the forward map cannot return X_hat when n >= 3.
  for (int k = 0; k < 10; ++k) {
    Matrix x = uniform_matrix(rng, n, 0.05, 1.0);
    std::uniform_real_distribution<double> diag(1.0, 2.0);
    for (int i = 0; i < n; ++i) x(i, i) = diag(rng);
    x /= x.sum();
    const Matrix back = forward(gen, g_map(gen, x, gamma), x.rowwise().sum(),
                                x.colwise().sum().transpose(), gamma, 1e-12);
    generic_err = std::max(generic_err, max_abs(back - x));
  }
  for (int k = 0; k < 50; ++k) {
    const Vector mu = sample_marginal(rng, n), nu = sample_marginal(rng, n);
    const Matrix c = sample_cost(rng, n, SetKind::sh);
    reverse_err = std::max(reverse_err,
                           max_abs(g_map(gen, forward(gen, c, mu, nu, gamma, 1e-12), gamma) - c));
  }
  const double t = seconds_since(t0);
  return {members == 50 && forward_err <= 1e-8 && reverse_err <= 1e-8 && t < 10.0,
          "|F(G(X)) - X| = " + fmt(forward_err) + ", |G(F(C)) - C| = " + fmt(reverse_err) +
              ", U_phi members " + std::to_string(members) + "/50, " + fmt(t) +
              " s (G >= 0 without the range structure: " + fmt(generic_err) + ", not scored)"};
}

// 4 ---------------------------------------------------------------------------
Outcome stability_bound() {
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream detail;
  bool ok = true;
  for (const std::string gen : {"entropy", "burg", "fermi-dirac", "beta:0.5"}) {
    ExperimentConfig cfg;
    cfg.experiment = "exp-stability";
    cfg.n = 10;
    cfg.trials = 50;
    cfg.gammas = log_grid(0.01, 10.0, 20);
    cfg.generator = gen;
    cfg.seed = kSeed;
    cfg.threads = worker_threads();
    const auto rep = exp_stability(cfg);
    const double rate = rep["aggregates"]["pass_rate"].get<double>();
    double min_ratio = INFINITY;
    for (const auto& b : rep["per_gamma"]) {
      min_ratio = b["min_ratio"].is_number() ? std::min(min_ratio, b["min_ratio"].get<double>())
                                             : -INFINITY;
    }
    ok = ok && rate == 1.0 && min_ratio >= 1.0 - 1e-9;
    detail << gen << " pass " << fmt(100.0 * rate) << "% min ratio " << fmt(min_ratio) << "; ";
  }
  const double t = seconds_since(t0);
  detail << fmt(t) << " s";
  return {ok && t < 300.0, detail.str()};
}

// 5 ---------------------------------------------------------------------------
Outcome bcd_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg;
  cfg.experiment = "exp-random";
  cfg.n = 10;
  cfg.trials = 10;
  cfg.gammas = {1.0};
  cfg.lambdas = {1e-8};
  cfg.seed = kSeed;
  cfg.threads = worker_threads();
  const auto small = exp_random_marginals(cfg);
  cfg.n = 50;
  const auto large = exp_random_marginals(cfg);
  const double t = seconds_since(t0);

  const auto& a10 = small["aggregates"];
  const auto& a50 = large["aggregates"];
  const bool ok = a10["failed_trials"] == 0 && a50["failed_trials"] == 0 &&
                  a10["mean_x_err"].get<double>() <= 1e-2 &&
                  a10["mean_c_err"].get<double>() <= 0.1 &&
                  a50["mean_x_err"].get<double>() <= 0.1 && t < 120.0;
  return {ok, "n=10 mean X err " + fmt(a10["mean_x_err"].get<double>()) + ", mean C err " +
                  fmt(a10["mean_c_err"].get<double>()) + "; n=50 mean X err " +
                  fmt(a50["mean_x_err"].get<double>()) + ", mean C err " +
                  fmt(a50["mean_c_err"].get<double>()) + "; " + fmt(t) + " s"};
}

// 6 ---------------------------------------------------------------------------
Outcome convergence_properties() {
  const int n = 10;
  const double gamma = 1.0, lambda = 1e-4;
  const Generator gen = Generator::entropy();
  bool monotone = true, floors = true;
  double worst_res = 0.0, worst_rho = 0.0, worst_rho_bound = 0.0;
  int converged = 0;
  for (int k = 0; k < 10; ++k) {
    Rng rng(sub_seed(kSeed ^ 0x6, std::uint64_t(k)));
    const Vector mu = sample_marginal(rng, n), nu = sample_marginal(rng, n);
    const Matrix x = forward(gen, sample_cost(rng, n, SetKind::sh), mu, nu, gamma);
    BcdConfig cfg;
    cfg.max_iters = 100;
    cfg.kkt_tol = 1e-6;
    const auto sol = solve_iot(x, mu, nu, gamma, lambda, ConstraintSet::sh(), gen, cfg);
    const auto& obj = sol.report.objective;
    for (std::size_t i = 1; i < obj.size(); ++i) monotone = monotone && obj[i] <= obj[i - 1];
    floors = floors && sol.sufficient_decrease_ok;
    worst_res = std::max(worst_res, sol.report.residual.back());
    if (sol.report.reason == Termination::converged) ++converged;

    // E* comes from a long reference solve; the window is the last ten
    // transitions of the 100-iteration trace.
    BcdConfig long_cfg;
    long_cfg.max_iters = 20000;
    long_cfg.kkt_tol = 1e-9;
    const auto ref = solve_iot(x, mu, nu, gamma, lambda, ConstraintSet::sh(), gen, long_cfg);
    const double gap = obj.back() - ref.report.objective.back();
    worst_rho = std::max(worst_rho, q_linear_tail_rate(obj, gap));

    IotState fin;
    fin.u = sol.u;
    fin.v = sol.v;
    fin.cost = sol.cost;
    fin.x_hat = x;
    fin.gamma = gamma;
    fin.lambda = lambda;
    worst_rho_bound = std::max(worst_rho_bound, q_linear_tail_rate(obj, objective_gap_bound(fin)));
  }
  const bool ok = monotone && worst_res <= 1e-6 && worst_rho < 1.0;
  return {ok, std::string("monotone ") + (monotone ? "yes" : "no") + ", sufficient decrease " +
                  (floors ? "yes" : "no") + ", max final relative KKT residual " +
                  fmt(worst_res) + " (" + std::to_string(converged) +
                  "/10 reached 1e-6 in 100 iterations), max tail ratio rho " + fmt6(worst_rho) +
                  " (against the gradient gap bound: " + fmt6(worst_rho_bound) + ")"};
}

// 7 ---------------------------------------------------------------------------
Outcome gradient_checks() {
  Rng rng(sub_seed(kSeed, 7));
  std::normal_distribution<double> g(0.0, 0.3);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const int n = 3 + k % 5;
    IotState s;
    s.u = gaussian(rng, n, 1, 0.3).col(0);
    s.v = gaussian(rng, n, 1, 0.3).col(0);
    s.cost = sample_cost(rng, n, SetKind::sh);
    const Vector mu = sample_marginal(rng, n), nu = sample_marginal(rng, n);
    s.x_hat = mu * nu.transpose();
    s.gamma = k % 2 ? 0.5 : 1.5;
    s.lambda = k % 3 ? 1e-2 : 0.0;

    const auto check = [&](const std::function<double(const Matrix&)>& f, const Matrix& at,
                           const Matrix& exact) {
      worst = std::max(worst, oracle::relative_error(oracle::central_difference(f, at), exact));
    };
    check([&](const Matrix& w) { IotState t = s; t.u = w.col(0); return objective_E_lambda(t); },
          s.u, block_gradient_hessdiag(s, Block::u).gradient);
    check([&](const Matrix& w) { IotState t = s; t.v = w.col(0); return objective_E_lambda(t); },
          s.v, block_gradient_hessdiag(s, Block::v).gradient);
    check([&](const Matrix& w) { IotState t = s; t.cost = w; return objective_E_lambda(t); },
          s.cost, block_gradient_hessdiag(s, Block::cost).gradient);

    TransportProblem p{s.cost, mu, nu, s.gamma, Generator::entropy()};
    const auto [gu, gv] = dual_gradient(p, {s.u, s.v});
    const Matrix uv = (Matrix(2 * n, 1) << s.u, s.v).finished();
    check(
        [&](const Matrix& w) {
          return dual_objective(p, {w.topRows(n), w.bottomRows(n)}, s.x_hat);
        },
        uv, (Matrix(2 * n, 1) << gu, gv).finished());
  }
  return {worst <= 1e-5, "max relative FD error " + fmt(worst) + " over 20 states x 4 gradients"};
}

// 8 ---------------------------------------------------------------------------
Outcome non_injectivity() {
  const Generator quad = Generator::quadratic();
  // Raising the cost at a zero entry of the plan leaves the plan unchanged.
  Rng rng(sub_seed(kSeed, 8));
  double invariance = 0.0;
  int zeros_tested = 0;
  for (int rep = 0; rep < 200 && zeros_tested < 10; ++rep) {
    const int n = 4;
    const Vector mu = sample_marginal(rng, n), nu = sample_marginal(rng, n);
    const Matrix c = uniform_matrix(rng, n, 0.0, 3.0);
    const Matrix x = forward(quad, c, mu, nu, 0.1);
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      if (x.data()[k] != 0.0) continue;
      for (double lam : {0.1, 1.0, 10.0}) {
        Matrix c2 = c;
        c2.data()[k] += lam;
        invariance = std::max(invariance, max_abs(forward(quad, c2, mu, nu, 0.1) - x));
      }
      ++zeros_tested;
      break;
    }
  }

  // Two-point example with a = 0.2, b = 0.5.
  const double a = 0.2, b = 0.5;
  const Vector mu1 = (Vector(2) << a, 1 - a).finished();
  const Vector nu1 = (Vector(2) << b, 1 - b).finished();
  Matrix expect1(2, 2);
  expect1 << a, 0, b - a, 1 - b;
  double ex1 = 0.0;
  for (double g : {std::max(0.5 + a - b, 0.0), 1.0, 2.5}) {
    const Matrix c = (Matrix(2, 2) << 0, g, g, 0).finished();
    ex1 = std::max(ex1, max_abs(forward(quad, c, mu1, nu1, 1.0) - expect1));
  }

  // Two sparse plans with complementary supports share one cost.
  const Vector p = (Vector(2) << 0.75, 0.25).finished();
  const Vector q = (Vector(2) << 0.25, 0.75).finished();
  Matrix x1(2, 2), x2(2, 2);
  x1 << 0.25, 0.5, 0.0, 0.25;
  x2 << 0.25, 0.0, 0.5, 0.25;
  double ex2 = 0.0;
  for (double g : {0.0, 0.5, 1.0, 3.0}) {
    const Matrix c = (Matrix(2, 2) << 0, g, g, 0).finished();
    ex2 = std::max(ex2, max_abs(forward(quad, c, p, q, 1.0) - x1));
    ex2 = std::max(ex2, max_abs(forward(quad, c, q, p, 1.0) - x2));
  }
  const bool cover = ((x1.array() > 0) || (x2.array() > 0)).all();

  return {zeros_tested > 0 && invariance <= 1e-8 && ex1 <= 1e-8 && ex2 <= 1e-8 && cover,
          "zero-entry invariance " + fmt(invariance) + " (" + std::to_string(zeros_tested) +
              " instances), example plan error " + fmt(ex1) + ", two-plan error " + fmt(ex2) +
              ", supports cover " + (cover ? "yes" : "no")};
}

// 9 ---------------------------------------------------------------------------
Outcome lambda_sweep() {
  ExperimentConfig cfg;
  cfg.experiment = "exp-lambda";
  cfg.n = 10;
  cfg.gammas = {0.1};
  cfg.lambdas = log_grid(1e-12, 1e-2, 25);
  cfg.seed = kSeed;
  cfg.threads = worker_threads();
  const auto rep = exp_lambda_sweep(cfg);
  const auto& errs = rep["aggregates"]["c_err"];
  if (!errs.front().is_number() || !errs.back().is_number()) {
    return {false, "sweep endpoint failed"};
  }
  const double lo = errs.front().get<double>(), hi = errs.back().get<double>();
  return {hi >= 10.0 * lo,
          "C err " + fmt(lo) + " at 1e-12, " + fmt(hi) + " at 1e-2 (x" + fmt(hi / lo) + ")"};
}

// 10 --------------------------------------------------------------------------
Outcome matching_pipeline() {
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticMatchingConfig sc;
  sc.d = 11;
  sc.n_types = 50;
  sc.seed = kSeed;
  const auto noisy = generate_synthetic_matching(sc);
  MatchingConfig mc;
  mc.folds = 5;
  mc.seed = kSeed;
  mc.threads = worker_threads();
  const auto rep = exp_matching(noisy.dataset, mc);
  bool every_fold = rep["aggregates"]["solver_beats_random_every_fold"].get<bool>();
  for (const auto& f : rep["trials"]) every_fold = every_fold && f["ok"].get<bool>();

  sc.noiseless = true;
  const auto clean = generate_synthetic_matching(sc);
  mc.folds = 1;
  const auto clean_rep = exp_matching(clean.dataset, mc);
  const double clean_rmse = clean_rep["aggregates"]["mean_rmse"].get<double>();
  const double t = seconds_since(t0);

  return {every_fold && rep["partition_ok"].get<bool>() && clean_rmse <= 1e-4 && t < 60.0,
          "5-fold mean RMSE " + fmt(rep["aggregates"]["mean_rmse"].get<double>()) +
              " vs random " + fmt(rep["aggregates"]["random_mean_rmse"].get<double>()) +
              ", beats random every fold " + (every_fold ? "yes" : "no") +
              "; noiseless RMSE " + fmt(clean_rmse) + "; " + fmt(t) + " s"};
}

// 11 --------------------------------------------------------------------------
Outcome projections() {
  Rng rng(sub_seed(kSeed, 11));
  const int n = 6;
  const Vector w = uniform_matrix(rng, n, 0.0, 1.0).col(0);
  const std::vector<ConstraintSet> sets = {
      ConstraintSet::sh(),          ConstraintSet::shw(w),
      ConstraintSet::ed(),          ConstraintSet::affine(gaussian(rng, 3, n, 1.0), gaussian(rng, 3, n, 1.0)),
      ConstraintSet::nonnegative(), ConstraintSet::whole_space()};
  double idem = 0.0, expand = 0.0, linear = 0.0;
  int outside = 0;
  for (const auto& set : sets) {
    for (int rep = 0; rep < 100; ++rep) {
      const Matrix m1 = gaussian(rng, n, n, 2.0), m2 = gaussian(rng, n, n, 2.0);
      const Matrix p1 = set.project(m1), p2 = set.project(m2);
      idem = std::max(idem, max_abs(set.project(p1) - p1));
      expand = std::max(expand, (p1 - p2).norm() - (m1 - m2).norm());
      if (!set.contains(p1, 1e-8)) ++outside;
      if (set.kind() == SetKind::affine) {
        linear = std::max(linear, max_abs(set.project(0.7 * m1 + m2) - (0.7 * p1 + p2)));
      }
    }
  }
  double fixed = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix d = oracle::squared_distances(uniform_matrix(rng, n, 0.0, 1.0).leftCols(3));
    fixed = std::max(fixed, max_abs(ConstraintSet::ed().project(d) - d));
  }
  return {idem <= 1e-10 && expand <= 1e-10 && outside == 0 && linear <= 1e-10 && fixed <= 1e-9,
          "idempotence " + fmt(idem) + ", expansion " + fmt(expand) + ", non-members " +
              std::to_string(outside) + ", affine linearity " + fmt(linear) +
              ", ED fixed point " + fmt(fixed)};
}

std::set<int> parse_ids(const std::string& text) {
  std::set<int> ids;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) ids.insert(std::stoi(item));
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> expect_fail, only;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--expect-fail") {
      expect_fail = parse_ids(argv[i + 1]);
    } else if (flag == "--only") {
      only = parse_ids(argv[i + 1]);
    } else {
      std::fprintf(stderr, "unknown option %s\n", flag.c_str());
      return 2;
    }
  }

  const std::vector<Criterion> criteria = {
      {1, "forward solver matches classic Sinkhorn", forward_oracle},
      {2, "n=2 grid minimization equivalence", brute_force_n2},
      {3, "closed-form round trips", closed_form_round_trip},
      {4, "stability bound sweep", stability_bound},
      {5, "BCD recovery on random marginals", bcd_recovery},
      {6, "BCD convergence properties at lambda=1e-4", convergence_properties},
      {7, "finite-difference gradient checks", gradient_checks},
      {8, "quadratic non-injectivity examples", non_injectivity},
      {9, "lambda sweep shape", lambda_sweep},
      {10, "matching pipeline on planted data", matching_pipeline},
      {11, "constraint-set projections", projections},
  };

  int unexpected = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome out;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const bool expected_failure = expect_fail.count(c.id) > 0;
    if (out.pass == expected_failure) ++unexpected;
    std::printf("%s criterion %d: %s | %s | %.2f s%s\n", out.pass ? "PASS" : "FAIL", c.id,
                c.name.c_str(), out.detail.c_str(), seconds_since(t0),
                expected_failure ? (out.pass ? " (listed as expected failure)" : " (expected)")
                                 : "");
    std::fflush(stdout);
  }
  return unexpected == 0 ? 0 : 1;
}
