#pragma once

#include "bregiot/generator.hpp"
#include "bregiot/types.hpp"

#include <optional>

namespace bregiot {

// min_{X in U(mu, nu)} <C, X> + gamma * phi(X).
struct TransportProblem {
  Matrix cost;
  Vector mu;
  Vector nu;
  double gamma = 1.0;
  Generator gen = Generator::entropy();

  // Throws DimensionError / DomainError when the problem is malformed:
  // shapes, positive marginals summing to one (1e-12), gamma > 0, finite cost.
  void validate() const;

  // (u (+) v - C) / gamma.
  Matrix scaled_argument(const Vector& u, const Vector& v) const;
};

struct DualPotentials {
  Vector u;
  Vector v;
};

struct SolverConfig {
  double tol = 1e-10;
  int max_sweeps = 10000;
  std::optional<DualPotentials> warm_start;
  // When false, hitting max_sweeps returns the last iterate with
  // reason = max_iterations instead of throwing MaxIterationsExceeded.
  bool throw_on_max_iterations = true;
};

struct ForwardSolution {
  Matrix plan;
  DualPotentials potentials;
  SolveReport report;
};

// X = (psi'((u (+) v - C) / gamma))_+.
Matrix plan_from_potentials(const TransportProblem& prob, const DualPotentials& pots);

// psi(Z) - <Z, target> with Z = (u (+) v - C)/gamma; the dual objective for
// generators with phi'_0 = -inf.
double dual_objective(const TransportProblem& prob, const DualPotentials& pots,
                      const Matrix& target);

// Clamped dual for any generator:
//   gamma * sum(Z X - phi(X)) - <u, mu> - <v, nu>,  X = (psi'(Z))_+.
// For phi'_0 = -inf this equals gamma * dual_objective(..., X_hat) - <C, X_hat>
// for any X_hat in U(mu, nu).
double dual_objective_clamped(const TransportProblem& prob, const DualPotentials& pots);

// Gradient of dual_objective w.r.t. (u, v) for a target in U(mu, nu):
// ((psi'(Z) 1 - mu) / gamma, (psi'(Z)^T 1 - nu) / gamma).
std::pair<Vector, Vector> dual_gradient(const TransportProblem& prob,
                                        const DualPotentials& pots);

// ||X 1 - mu||_inf + ||X^T 1 - nu||_inf.
double marginal_residual(const Matrix& plan, const Vector& mu, const Vector& nu);

// Alternating exact block minimization of the dual (matrix scaling). Each
// u-sweep solves, per row, sum_j (psi'((u_i + v_j - C_ij)/gamma))_+ = mu_i by
// safeguarded Newton; the entropy generator uses the log-domain Sinkhorn
// update instead.
ForwardSolution solve_forward(const TransportProblem& prob, const SolverConfig& cfg = {});

// max(||X1 - mu||_inf, ||X^T 1 - nu||_inf, ||X - plan_from_potentials||_inf).
double kkt_residual(const TransportProblem& prob, const ForwardSolution& sol);

}  // namespace bregiot
