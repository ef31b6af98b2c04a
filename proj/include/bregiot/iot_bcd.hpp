#pragma once

#include "bregiot/constraint_sets.hpp"
#include "bregiot/generator.hpp"
#include "bregiot/types.hpp"

#include <vector>

namespace bregiot {

// Iterate of the single-level inverse problem
//
//   E(u, v, C)   = sum psi(Z) - <Z, X_hat>,   Z = (u (+) v - C) / gamma
//   E_l(u, v, C) = E + lambda (|u|^2 / 2 + |v|^2 / 2 + |C|_F^2 / 2)
//
// over u, v in R^n and C in `set`.
struct IotState {
  Vector u;
  Vector v;
  Matrix cost;
  Matrix x_hat;
  double gamma = 1.0;
  double lambda = 0.0;
  ConstraintSet set = ConstraintSet::sh();
  Generator gen = Generator::entropy();

  Matrix scaled_argument() const;
};

enum class CostStep { newton, projected_gradient };

struct BcdConfig {
  int max_iters = 100;
  double kkt_tol = 1e-6;
  double armijo_beta = 0.5;
  double armijo_c1 = 1e-4;
  CostStep cost_step = CostStep::newton;
  // Pin u_n = 0, removing the u + a1, v - a1 invariance of E.
  bool gauge_fix_un = false;
  // Accept X_hat entries equal to zero. E stays finite for them; they are
  // outside T_phi when phi'_0 = -inf, so this is off unless asked for.
  bool allow_zero_entries = false;

  void validate() const;
};

double objective_E(const IotState& state);
double objective_E_lambda(const IotState& state);

enum class Block { u, v, cost };

// Exact gradient and diagonal Hessian of E_lambda in one block. u and v blocks
// come back as n x 1 matrices.
//   u: g_i = (sum_j psi'(Z_ij) - mu_i) / gamma + lambda u_i,
//      H_i = sum_j psi''(Z_ij) / gamma^2 + lambda
//   C: g_ij = (X_hat_ij - psi'(Z_ij)) / gamma + lambda C_ij,
//      H_ij = psi''(Z_ij) / gamma^2 + lambda
struct BlockDerivatives {
  Matrix gradient;
  Matrix hessian_diag;
};
BlockDerivatives block_gradient_hessdiag(const IotState& state, Block block);

// max(|g_u|/(1+|u|), |g_v|/(1+|v|), |C - P(C - g_C)|/(1+|C|)), all sup-norms.
double relative_kkt_residual(const IotState& state, bool gauge_fix_un = false);

struct StepRecord {
  double alpha_u = 0.0;
  double alpha_v = 0.0;
  double alpha_cost = 0.0;
  double decrease_u = 0.0;
  double decrease_v = 0.0;
  double decrease_cost = 0.0;
  double objective_before = 0.0;
  double objective_after = 0.0;
  double residual = 0.0;
  // Largest diagonal Hessian entry seen in this step.
  double max_hessian = 0.0;
  // The projected Newton trial found no descent and a projected gradient
  // step was taken instead.
  bool cost_fallback = false;
  // Blocks skipped because the directional derivative was below what the
  // objective can resolve in floating point.
  int stalled_blocks = 0;
  // f(z_k) - f(z_k+1) >= c1 min(lambda, 1) 0.99 |z_k+1 - z_k|^2, checked only
  // for lambda > 0.
  bool sufficient_decrease_ok = true;
};

// One cycle u -> v -> C with Armijo backtracking per block. Throws
// LineSearchFailure if a block with a resolvable descent direction cannot
// satisfy the Armijo test before alpha drops below 1e-16.
std::pair<IotState, StepRecord> bcd_step(const IotState& state, const BcdConfig& cfg);

struct IotSolution {
  Matrix cost;
  Vector u;
  Vector v;
  SolveReport report;
  std::vector<StepRecord> steps;
  // min(1, 2 beta (1 - c1) / L) with L the largest diagonal Hessian entry
  // over the run, and whether every accepted step was at least that long.
  double step_floor = 0.0;
  bool step_floor_ok = true;
  bool monotone = true;
  bool sufficient_decrease_ok = true;
};

// Inexact BCD for the inverse problem, starting from u = v = 0, C = P(0).
// Requires phi'_0 = -inf (GeneratorError otherwise).
IotSolution solve_iot(const Matrix& x_hat, const Vector& mu, const Vector& nu, double gamma,
                      double lambda, const ConstraintSet& set, const Generator& gen,
                      const BcdConfig& cfg = {});

// Largest ratio (E_k+1 - E*)/(E_k - E*) over the last `window` transitions of
// an objective trace, with E* = final value - gap_bound. Transitions whose
// gap has fallen to zero are skipped. Returns 0 when nothing is measurable.
double q_linear_tail_rate(const std::vector<double>& objective, double gap_bound,
                          int window = 10);

// sup-norm gradient bound turned into E - E* <= |g|^2 / (2 lambda); used as the
// gap bound for q_linear_tail_rate.
double objective_gap_bound(const IotState& state);

}  // namespace bregiot
