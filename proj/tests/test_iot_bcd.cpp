#include "bregiot/errors.hpp"
#include "bregiot/iot_bcd.hpp"
#include "bregiot/transport.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace bregiot;

namespace {

Vector sample_marginal(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Vector m(n);
  for (int i = 0; i < n; ++i) m(i) = u(rng);
  return m / m.sum();
}

Matrix sample_sh(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix c = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) c(i, j) = c(j, i) = u(rng);
  }
  return c;
}

IotState random_state(std::mt19937_64& rng, int n, double gamma, double lambda) {
  std::normal_distribution<double> g(0.0, 0.3);
  IotState s;
  s.u = Vector(n);
  s.v = Vector(n);
  for (int i = 0; i < n; ++i) {
    s.u(i) = g(rng);
    s.v(i) = g(rng);
  }
  s.cost = sample_sh(rng, n);
  s.x_hat = sample_marginal(rng, n) * sample_marginal(rng, n).transpose();
  s.gamma = gamma;
  s.lambda = lambda;
  return s;
}

double rel_frob(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST_CASE("objective E at the origin and under the gauge shift") {
  std::mt19937_64 rng(1);
  IotState s = random_state(rng, 4, 1.0, 0.0);
  s.u.setZero();
  s.v.setZero();
  s.cost.setZero();
  // The entropy conjugate here is expm1, so psi(0) = 0 and E(0) = 0.
  CHECK(objective_E(s) == doctest::Approx(0.0));
  s.lambda = 3.0;
  CHECK(objective_E_lambda(s) == objective_E(s));

  IotState r = random_state(rng, 5, 0.6, 0.0);
  const double e0 = objective_E(r);
  for (double a : {-1.3, 0.2, 2.5}) {
    IotState t = r;
    t.u.array() += a;
    t.v.array() -= a;
    CHECK(std::abs(objective_E(t) - e0) <= 1e-12 * (1.0 + std::abs(e0)));
  }

  IotState q = random_state(rng, 3, 1.0, 1.0);
  q.u = Vector::Ones(3);
  q.v.setZero();
  q.cost.setZero();
  CHECK(objective_E_lambda(q) == doctest::Approx(objective_E(q) + 1.5).epsilon(1e-14));
  q.lambda = 0.0;
  CHECK(objective_E_lambda(q) == objective_E(q));
}

TEST_CASE("E plus phi(X_hat) equals the Bregman divergence to the forward plan") {
  std::mt19937_64 rng(2);
  const int n = 5;
  for (double gamma : {0.5, 1.0, 2.0}) {
    TransportProblem p{sample_sh(rng, n), sample_marginal(rng, n), sample_marginal(rng, n), gamma,
                       Generator::entropy()};
    const auto sol = solve_forward(p);
    IotState s;
    s.u = sol.potentials.u;
    s.v = sol.potentials.v;
    s.cost = p.cost;
    s.x_hat = p.mu * p.nu.transpose();
    s.gamma = gamma;
    const double lhs = bregman_divergence(s.gen, s.x_hat, sol.plan);
    CHECK(lhs == doctest::Approx(objective_E(s) + s.gen.phi_sum(s.x_hat)).epsilon(1e-8));
  }
}

TEST_CASE("block gradients and Hessian diagonals match finite differences") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 3 + rep % 4;
    const double gamma = rep % 2 ? 0.5 : 1.5;
    const double lambda = rep % 3 == 0 ? 0.0 : 0.1;
    const IotState s = random_state(rng, n, gamma, lambda);

    const auto fu = [&](const Matrix& w) {
      IotState t = s;
      t.u = w.col(0);
      return objective_E_lambda(t);
    };
    const auto fv = [&](const Matrix& w) {
      IotState t = s;
      t.v = w.col(0);
      return objective_E_lambda(t);
    };
    const auto fc = [&](const Matrix& w) {
      IotState t = s;
      t.cost = w;
      return objective_E_lambda(t);
    };
    const auto du = block_gradient_hessdiag(s, Block::u);
    const auto dv = block_gradient_hessdiag(s, Block::v);
    const auto dc = block_gradient_hessdiag(s, Block::cost);
    CHECK(oracle::relative_error(oracle::central_difference(fu, s.u), du.gradient) <= 1e-5);
    CHECK(oracle::relative_error(oracle::central_difference(fv, s.v), dv.gradient) <= 1e-5);
    CHECK(oracle::relative_error(oracle::central_difference(fc, s.cost), dc.gradient) <= 1e-5);

    // Diagonal Hessian entries against differences of the exact gradient.
    const double h = 1e-6;
    for (int i = 0; i < n; ++i) {
      IotState a = s, b = s;
      a.u(i) += h;
      b.u(i) -= h;
      const double fd = (block_gradient_hessdiag(a, Block::u).gradient(i, 0) -
                         block_gradient_hessdiag(b, Block::u).gradient(i, 0)) /
                        (2 * h);
      CHECK(fd == doctest::Approx(du.hessian_diag(i, 0)).epsilon(1e-5));
      a = s;
      b = s;
      a.cost(i, 0) += h;
      b.cost(i, 0) -= h;
      const double fdc = (block_gradient_hessdiag(a, Block::cost).gradient(i, 0) -
                          block_gradient_hessdiag(b, Block::cost).gradient(i, 0)) /
                         (2 * h);
      CHECK(fdc == doctest::Approx(dc.hessian_diag(i, 0)).epsilon(1e-5));
    }
    CHECK(du.hessian_diag.minCoeff() > 0.0);
    CHECK(dc.hessian_diag.minCoeff() > 0.0);
  }
}

TEST_CASE("Hessian at z = 0 and the gradient at a forward optimum") {
  std::mt19937_64 rng(4);
  const int n = 6;
  IotState s = random_state(rng, n, 1.0, 0.0);
  s.u.setZero();
  s.v.setZero();
  s.cost.setZero();
  CHECK(block_gradient_hessdiag(s, Block::u).hessian_diag.isApprox(Matrix::Constant(n, 1, n)));

  TransportProblem p{sample_sh(rng, n), sample_marginal(rng, n), sample_marginal(rng, n), 0.8,
                     Generator::entropy()};
  const auto sol = solve_forward(p);
  IotState t;
  t.u = sol.potentials.u;
  t.v = sol.potentials.v;
  t.cost = p.cost;
  t.x_hat = p.mu * p.nu.transpose();
  t.gamma = p.gamma;
  CHECK(max_abs(block_gradient_hessdiag(t, Block::u).gradient) <= 1e-8);
  CHECK(max_abs(block_gradient_hessdiag(t, Block::v).gradient) <= 1e-8);
}

TEST_CASE("bcd_step leaves a global optimum in place") {
  std::mt19937_64 rng(5);
  const int n = 4;
  TransportProblem p{sample_sh(rng, n), sample_marginal(rng, n), sample_marginal(rng, n), 1.0,
                     Generator::entropy()};
  const auto sol = solve_forward(p);
  IotState s;
  s.u = sol.potentials.u;
  s.v = sol.potentials.v;
  s.cost = p.cost;
  s.x_hat = sol.plan;
  s.set = ConstraintSet::whole_space();
  const auto [next, rec] = bcd_step(s, BcdConfig{});
  CHECK(max_abs(next.u - s.u) <= 1e-10);
  CHECK(max_abs(next.v - s.v) <= 1e-10);
  CHECK(max_abs(next.cost - s.cost) <= 1e-10);
  CHECK(rec.residual <= 1e-10);
}

TEST_CASE("bcd_step strictly decreases E_lambda from a random start") {
  std::mt19937_64 rng(6);
  for (auto mode : {CostStep::newton, CostStep::projected_gradient}) {
    for (double lambda : {0.0, 1e-3}) {
      IotState s = random_state(rng, 5, 1.0, lambda);
      BcdConfig cfg;
      cfg.cost_step = mode;
      const auto [next, rec] = bcd_step(s, cfg);
      CHECK(rec.objective_after < rec.objective_before);
      CHECK(objective_E_lambda(next) == rec.objective_after);
      CHECK(rec.sufficient_decrease_ok);
      CHECK(ConstraintSet::sh().contains(next.cost, 1e-12));
    }
  }
}

TEST_CASE("solve_iot on the product plan recovers the zero cost") {
  std::mt19937_64 rng(7);
  const int n = 5;
  const Vector mu = sample_marginal(rng, n), nu = sample_marginal(rng, n);
  BcdConfig cfg;
  cfg.max_iters = 2000;
  cfg.kkt_tol = 1e-8;
  const auto sol =
      solve_iot(mu * nu.transpose(), mu, nu, 1.0, 0.0, ConstraintSet::sh(), Generator::entropy(), cfg);
  CHECK(sol.report.reason == Termination::converged);
  CHECK(max_abs(sol.cost) <= 1e-6);
  CHECK(sol.monotone);
}

TEST_CASE("solve_iot recovers an S_h cost at n = 10") {
  std::mt19937_64 rng(8);
  const int n = 10;
  const Vector mu = sample_marginal(rng, n), nu = sample_marginal(rng, n);
  const Matrix c = sample_sh(rng, n);
  const auto gen = Generator::entropy();
  const Matrix x = solve_forward({c, mu, nu, 1.0, gen}).plan;
  const auto sol = solve_iot(x, mu, nu, 1.0, 1e-8, ConstraintSet::sh(), gen);
  const Matrix x_rec = solve_forward({sol.cost, mu, nu, 1.0, gen}).plan;
  CHECK(rel_frob(x_rec, x) <= 1e-2);
  CHECK(rel_frob(sol.cost, c) <= 0.1);
  CHECK(sol.monotone);
  CHECK(sol.report.objective.size() == std::size_t(sol.report.iterations) + 1);
  CHECK(sol.report.step_sizes.size() == std::size_t(sol.report.iterations));
}

TEST_CASE("heavier regularization recovers the cost less accurately") {
  std::mt19937_64 rng(9);
  const int n = 6;
  const Vector mu = sample_marginal(rng, n), nu = sample_marginal(rng, n);
  const Matrix c = sample_sh(rng, n);
  const auto gen = Generator::entropy();
  const Matrix x = solve_forward({c, mu, nu, 0.5, gen}).plan;
  BcdConfig cfg;
  cfg.max_iters = 300;
  const auto lo = solve_iot(x, mu, nu, 0.5, 1e-10, ConstraintSet::sh(), gen, cfg);
  const auto hi = solve_iot(x, mu, nu, 0.5, 1e-3, ConstraintSet::sh(), gen, cfg);
  CHECK(rel_frob(hi.cost, c) > rel_frob(lo.cost, c));
}

TEST_CASE("gauge fixing pins u_n to zero") {
  std::mt19937_64 rng(10);
  const int n = 5;
  const Vector mu = sample_marginal(rng, n), nu = sample_marginal(rng, n);
  const Matrix x = solve_forward({sample_sh(rng, n), mu, nu, 1.0, Generator::entropy()}).plan;
  BcdConfig cfg;
  cfg.gauge_fix_un = true;
  cfg.max_iters = 30;
  const auto sol = solve_iot(x, mu, nu, 1.0, 1e-4, ConstraintSet::sh(), Generator::entropy(), cfg);
  CHECK(sol.u(n - 1) == 0.0);
  CHECK(sol.monotone);
}

TEST_CASE("runtime checks on a regularized run") {
  std::mt19937_64 rng(11);
  const int n = 6;
  const Vector mu = sample_marginal(rng, n), nu = sample_marginal(rng, n);
  const Matrix x = solve_forward({sample_sh(rng, n), mu, nu, 1.0, Generator::entropy()}).plan;
  BcdConfig cfg;
  cfg.max_iters = 50;
  const auto sol = solve_iot(x, mu, nu, 1.0, 1e-2, ConstraintSet::sh(), Generator::entropy(), cfg);
  CHECK(sol.monotone);
  CHECK(sol.sufficient_decrease_ok);
  CHECK(sol.step_floor > 0.0);
  CHECK(sol.step_floor <= 1.0);
  for (std::size_t k = 1; k < sol.report.objective.size(); ++k) {
    CHECK(sol.report.objective[k] <= sol.report.objective[k - 1]);
  }
}

TEST_CASE("solve_iot input validation") {
  const Vector half = Vector::Constant(2, 0.5);
  const Matrix x = Matrix::Constant(2, 2, 0.25);
  CHECK_THROWS_AS(solve_iot(x, half, half, 1.0, 0.0, ConstraintSet::sh(), Generator::quadratic()),
                  GeneratorError);
  Matrix z(2, 2);
  z << 0.5, 0.0, 0.0, 0.5;
  CHECK_THROWS_AS(solve_iot(z, half, half, 1.0, 0.0, ConstraintSet::sh(), Generator::entropy()),
                  DomainError);
  BcdConfig allow;
  allow.allow_zero_entries = true;
  allow.max_iters = 5;
  CHECK_NOTHROW(solve_iot(z, half, half, 1.0, 0.0, ConstraintSet::sh(), Generator::entropy(), allow));
  CHECK_THROWS_AS(solve_iot(x, Vector::Constant(2, 0.4), half, 1.0, 0.0, ConstraintSet::sh(),
                            Generator::entropy()),
                  DomainError);
  BcdConfig bad;
  bad.armijo_beta = 1.5;
  CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("tail rate of a geometric sequence") {
  std::vector<double> obj;
  for (int k = 0; k <= 30; ++k) obj.push_back(1.0 + std::pow(0.5, k));
  CHECK(q_linear_tail_rate(obj, std::pow(0.5, 30)) == doctest::Approx(0.5));
  CHECK(q_linear_tail_rate({1.0}, 0.0) == 0.0);
}
