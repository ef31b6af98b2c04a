#include "bregiot/iot_bcd.hpp"

#include "bregiot/errors.hpp"
#include "bregiot/transport.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

namespace bregiot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kHessianFloor = 1e-12;
constexpr double kAlphaMin = 1e-16;
// Below this the projected Newton trial gives up and the C block falls back
// to a projected gradient step.
constexpr double kNewtonProjectedAlphaMin = 1e-10;
// A descent slope smaller than this (relative to 1 + |f|) cannot be seen by
// the Armijo test in double precision.
constexpr double kUnresolvableSlope = 1e-10;

double objective_or_inf(const IotState& s) {
  try {
    const double f = objective_E_lambda(s);
    return std::isfinite(f) ? f : kInf;
  } catch (const DomainError&) {
    return kInf;
  }
}

double hessian_floor(double lambda) { return lambda > 0.0 ? 0.0 : kHessianFloor; }

struct BlockOutcome {
  double alpha = 0.0;
  double decrease = 0.0;
  double max_hessian = 0.0;
  double step_sq = 0.0;
  bool stalled = false;
  bool fallback = false;
};

[[noreturn]] void line_search_failed(const char* block, const IotState& s, double f0,
                                     double slope) {
  std::ostringstream msg;
  msg.precision(6);
  msg << "Armijo backtracking on the " << block << " block underflowed alpha < 1e-16 (E_lambda = "
      << f0 << ", slope = " << slope << ", |u| = " << max_abs(s.u) << ", |v| = " << max_abs(s.v)
      << ", |C| = " << max_abs(s.cost) << ")";
  throw LineSearchFailure(msg.str());
}

// Armijo backtracking along d for the u or v block.
BlockOutcome potential_block(IotState& s, Block block, const BcdConfig& cfg, double f0) {
  const auto der = block_gradient_hessdiag(s, block);
  Vector g = der.gradient.col(0);
  const Vector h = der.hessian_diag.col(0).array() + hessian_floor(s.lambda);
  Vector d = -(g.array() / h.array()).matrix();
  if (block == Block::u && cfg.gauge_fix_un) {
    g(g.size() - 1) = 0.0;
    d(d.size() - 1) = 0.0;
  }

  BlockOutcome out;
  out.max_hessian = h.maxCoeff();
  const double slope = g.dot(d);
  if (!(slope < 0.0)) {
    out.alpha = 1.0;
    return out;
  }

  Vector& x = block == Block::u ? s.u : s.v;
  const Vector x0 = x;
  for (double alpha = 1.0; alpha >= kAlphaMin; alpha *= cfg.armijo_beta) {
    x = x0 + alpha * d;
    const double f = objective_or_inf(s);
    if (f <= f0 + cfg.armijo_c1 * alpha * slope) {
      out.alpha = alpha;
      out.decrease = f0 - f;
      out.step_sq = (alpha * d).squaredNorm();
      return out;
    }
  }
  x = x0;
  if (-slope <= kUnresolvableSlope * (1.0 + std::abs(f0))) {
    out.stalled = true;
    return out;
  }
  line_search_failed(block == Block::u ? "u" : "v", s, f0, slope);
}

// Projected trial C_t = P(C + alpha d) accepted when
// f(C_t) <= f(C) + c1 <g, C_t - C>. Returns false if alpha falls below
// alpha_min first.
bool projected_search(IotState& s, const Matrix& c0, const Matrix& g, const Matrix& d,
                      const BcdConfig& cfg, double f0, double alpha_min, bool require_motion,
                      BlockOutcome& out) {
  for (double alpha = 1.0; alpha >= alpha_min; alpha *= cfg.armijo_beta) {
    const Matrix trial = s.set.project(c0 + alpha * d);
    const Matrix step = trial - c0;
    const double slope = (g.array() * step.array()).sum();
    if (step.cwiseAbs().maxCoeff() == 0.0) {
      if (require_motion) continue;
      out.alpha = alpha;
      return true;
    }
    if (!(slope < 0.0)) continue;
    s.cost = trial;
    const double f = objective_or_inf(s);
    if (f <= f0 + cfg.armijo_c1 * slope) {
      out.alpha = alpha;
      out.decrease = f0 - f;
      out.step_sq = step.squaredNorm();
      return true;
    }
    s.cost = c0;
  }
  s.cost = c0;
  return false;
}

BlockOutcome cost_block(IotState& s, const BcdConfig& cfg, double f0) {
  const auto der = block_gradient_hessdiag(s, Block::cost);
  const Matrix& g = der.gradient;
  const Matrix h = der.hessian_diag.array() + hessian_floor(s.lambda);

  BlockOutcome out;
  out.max_hessian = h.maxCoeff();
  const Matrix c0 = s.cost;

  // Nothing to do when C is already stationary for the C block.
  if (max_abs(c0 - s.set.project(c0 - g)) == 0.0) {
    out.alpha = 1.0;
    return out;
  }

  if (cfg.cost_step == CostStep::newton) {
    const Matrix d = -(g.array() / h.array()).matrix();
    if (projected_search(s, c0, g, d, cfg, f0, kNewtonProjectedAlphaMin, true, out)) return out;
    out.fallback = true;
  }
  if (projected_search(s, c0, g, -g, cfg, f0, kAlphaMin, false, out)) return out;

  const double slope = -g.squaredNorm();
  if (-slope <= kUnresolvableSlope * (1.0 + std::abs(f0))) {
    out.stalled = true;
    out.alpha = 0.0;
    return out;
  }
  line_search_failed("C", s, f0, slope);
}

void require_state_shapes(const IotState& s) {
  if (s.x_hat.rows() == 0 || s.x_hat.cols() == 0) throw DimensionError("IotState: empty X_hat");
  if (s.u.size() != s.x_hat.rows() || s.v.size() != s.x_hat.cols() ||
      s.cost.rows() != s.x_hat.rows() || s.cost.cols() != s.x_hat.cols()) {
    throw DimensionError("IotState: u, v, C and X_hat shapes disagree");
  }
  if (!(s.gamma > 0.0)) throw DomainError("IotState: gamma must be positive");
  if (!(s.lambda >= 0.0)) throw DomainError("IotState: lambda must be nonnegative");
}

double gradient_sq_norm(const IotState& s, bool gauge_fix_un) {
  Matrix gu = block_gradient_hessdiag(s, Block::u).gradient;
  if (gauge_fix_un) gu(gu.rows() - 1, 0) = 0.0;
  const Matrix gv = block_gradient_hessdiag(s, Block::v).gradient;
  const Matrix gc = block_gradient_hessdiag(s, Block::cost).gradient;
  return gu.squaredNorm() + gv.squaredNorm() + (s.cost - s.set.project(s.cost - gc)).squaredNorm();
}

}  // namespace

void BcdConfig::validate() const {
  if (max_iters < 0) throw DomainError("BcdConfig: max_iters must be nonnegative");
  if (!(kkt_tol >= 0.0)) throw DomainError("BcdConfig: kkt_tol must be nonnegative");
  if (!(armijo_beta > 0.0 && armijo_beta < 1.0)) {
    throw DomainError("BcdConfig: armijo_beta must lie in (0, 1)");
  }
  if (!(armijo_c1 > 0.0 && armijo_c1 < 0.5)) {
    throw DomainError("BcdConfig: armijo_c1 must lie in (0, 1/2)");
  }
}

Matrix IotState::scaled_argument() const { return (tensor_sum(u, v) - cost) / gamma; }

double objective_E(const IotState& state) {
  require_state_shapes(state);
  const Matrix z = state.scaled_argument();
  const double value = state.gen.psi_sum(z) - (z.array() * state.x_hat.array()).sum();
  if (!std::isfinite(value)) throw DomainError("objective_E: value is not finite");
  return value;
}

double objective_E_lambda(const IotState& state) {
  const double e = objective_E(state);
  if (state.lambda == 0.0) return e;
  return e + 0.5 * state.lambda *
                 (state.u.squaredNorm() + state.v.squaredNorm() + state.cost.squaredNorm());
}

BlockDerivatives block_gradient_hessdiag(const IotState& state, Block block) {
  require_state_shapes(state);
  const Matrix z = state.scaled_argument();
  const Matrix p = state.gen.psi_prime(z);
  const Matrix q = state.gen.psi_second(z);
  const double inv_g = 1.0 / state.gamma;
  const double inv_g2 = inv_g * inv_g;
  const double lam = state.lambda;

  BlockDerivatives out;
  switch (block) {
    case Block::u: {
      const Vector mu = state.x_hat.rowwise().sum();
      out.gradient = inv_g * (p.rowwise().sum() - mu) + lam * state.u;
      out.hessian_diag = (inv_g2 * q.rowwise().sum()).array() + lam;
      break;
    }
    case Block::v: {
      const Vector nu = state.x_hat.colwise().sum().transpose();
      out.gradient = inv_g * (p.colwise().sum().transpose() - nu) + lam * state.v;
      out.hessian_diag = (inv_g2 * q.colwise().sum().transpose()).array() + lam;
      break;
    }
    case Block::cost:
      out.gradient = inv_g * (state.x_hat - p) + lam * state.cost;
      out.hessian_diag = (inv_g2 * q).array() + lam;
      break;
  }
  return out;
}

double relative_kkt_residual(const IotState& state, bool gauge_fix_un) {
  Matrix gu = block_gradient_hessdiag(state, Block::u).gradient;
  if (gauge_fix_un) gu(gu.rows() - 1, 0) = 0.0;
  const Matrix gv = block_gradient_hessdiag(state, Block::v).gradient;
  const Matrix gc = block_gradient_hessdiag(state, Block::cost).gradient;
  const double ru = max_abs(gu) / (1.0 + max_abs(state.u));
  const double rv = max_abs(gv) / (1.0 + max_abs(state.v));
  const double rc =
      max_abs(state.cost - state.set.project(state.cost - gc)) / (1.0 + max_abs(state.cost));
  return std::max({ru, rv, rc});
}

std::pair<IotState, StepRecord> bcd_step(const IotState& state, const BcdConfig& cfg) {
  cfg.validate();
  IotState next = state;
  StepRecord rec;
  const double f_start = objective_E_lambda(state);
  rec.objective_before = f_start;

  double f = f_start;
  const BlockOutcome bu = potential_block(next, Block::u, cfg, f);
  f -= bu.decrease;
  const BlockOutcome bv = potential_block(next, Block::v, cfg, f);
  f -= bv.decrease;
  const BlockOutcome bc = cost_block(next, cfg, f);

  rec.alpha_u = bu.alpha;
  rec.alpha_v = bv.alpha;
  rec.alpha_cost = bc.alpha;
  rec.decrease_u = bu.decrease;
  rec.decrease_v = bv.decrease;
  rec.decrease_cost = bc.decrease;
  rec.max_hessian = std::max({bu.max_hessian, bv.max_hessian, bc.max_hessian});
  rec.cost_fallback = bc.fallback;
  rec.stalled_blocks = int(bu.stalled) + int(bv.stalled) + int(bc.stalled);
  rec.objective_after = objective_E_lambda(next);
  rec.residual = relative_kkt_residual(next, cfg.gauge_fix_un);

  if (state.lambda > 0.0) {
    const double w1 = cfg.armijo_c1 * std::min(state.lambda, 1.0) * 0.99;
    const double moved = bu.step_sq + bv.step_sq + bc.step_sq;
    rec.sufficient_decrease_ok = rec.objective_before - rec.objective_after >= w1 * moved;
  }
  return {std::move(next), rec};
}

IotSolution solve_iot(const Matrix& x_hat, const Vector& mu, const Vector& nu, double gamma,
                      double lambda, const ConstraintSet& set, const Generator& gen,
                      const BcdConfig& cfg) {
  cfg.validate();
  if (!gen.zero_limit_is_infinite()) {
    throw GeneratorError("solve_iot requires a generator with phi'_0 = -inf, got " + gen.id());
  }
  if (mu.size() != x_hat.rows() || nu.size() != x_hat.cols() || x_hat.size() == 0) {
    throw DimensionError("solve_iot: marginals do not match X_hat");
  }
  if (!(gamma > 0.0)) throw DomainError("solve_iot: gamma must be positive");
  if (!(lambda >= 0.0)) throw DomainError("solve_iot: lambda must be nonnegative");
  const double marg = marginal_residual(x_hat, mu, nu);
  if (marg > 1e-8) {
    throw DomainError("solve_iot: X_hat marginals differ from (mu, nu) by " +
                      std::to_string(marg));
  }
  if (cfg.allow_zero_entries) {
    if (x_hat.minCoeff() < 0.0) throw DomainError("solve_iot: X_hat has negative entries");
    if (gen.phi1_prime() == kInf && x_hat.maxCoeff() >= 1.0) {
      throw DomainError("solve_iot: X_hat entries must be below 1 for " + gen.id());
    }
  } else if (!target_set_contains(gen, x_hat, mu, nu, 1e-8)) {
    throw DomainError("solve_iot: X_hat is outside the target set of " + gen.id());
  }

  const auto t0 = std::chrono::steady_clock::now();
  IotState state;
  state.x_hat = x_hat;
  state.gamma = gamma;
  state.lambda = lambda;
  state.set = set;
  state.gen = gen;
  state.u = Vector::Zero(x_hat.rows());
  state.v = Vector::Zero(x_hat.cols());
  state.cost = set.project(Matrix::Zero(x_hat.rows(), x_hat.cols()));

  IotSolution sol;
  SolveReport& rep = sol.report;
  rep.objective.push_back(objective_E_lambda(state));
  rep.residual.push_back(relative_kkt_residual(state, cfg.gauge_fix_un));
  rep.reason = Termination::max_iterations;

  double l_hat = 0.0;
  double min_alpha = kInf;
  if (rep.residual.back() <= cfg.kkt_tol) rep.reason = Termination::converged;
  while (rep.reason != Termination::converged && rep.iterations < cfg.max_iters) {
    auto [next, rec] = bcd_step(state, cfg);
    state = std::move(next);
    ++rep.iterations;
    rep.objective.push_back(rec.objective_after);
    rep.residual.push_back(rec.residual);
    rep.step_sizes.push_back({rec.alpha_u, rec.alpha_v, rec.alpha_cost});
    l_hat = std::max(l_hat, rec.max_hessian);
    for (double a : {rec.alpha_u, rec.alpha_v, rec.alpha_cost}) {
      if (a > 0.0) min_alpha = std::min(min_alpha, a);
    }
    if (rec.objective_after > rec.objective_before) sol.monotone = false;
    if (!rec.sufficient_decrease_ok) sol.sufficient_decrease_ok = false;
    sol.steps.push_back(rec);
    if (rec.residual <= cfg.kkt_tol) {
      rep.reason = Termination::converged;
    } else if (rec.stalled_blocks == 3) {
      rep.reason = Termination::line_search_stalled;
      break;
    }
  }

  sol.step_floor = l_hat > 0.0 ? std::min(1.0, 2.0 * cfg.armijo_beta * (1.0 - cfg.armijo_c1) / l_hat)
                               : 1.0;
  sol.step_floor_ok = !(min_alpha < sol.step_floor);
  sol.cost = state.cost;
  sol.u = state.u;
  sol.v = state.v;
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return sol;
}

double q_linear_tail_rate(const std::vector<double>& objective, double gap_bound, int window) {
  if (objective.size() < 2 || window <= 0) return 0.0;
  const double e_star = objective.back() - std::max(gap_bound, 0.0);
  const std::size_t first =
      objective.size() > std::size_t(window) + 1 ? objective.size() - std::size_t(window) - 1 : 0;
  double rho = 0.0;
  for (std::size_t k = first; k + 1 < objective.size(); ++k) {
    const double before = objective[k] - e_star;
    const double after = objective[k + 1] - e_star;
    if (!(before > 0.0)) continue;
    rho = std::max(rho, after / before);
  }
  return rho;
}

double objective_gap_bound(const IotState& state) {
  if (!(state.lambda > 0.0)) return 0.0;
  return gradient_sq_norm(state, false) / (2.0 * state.lambda);
}

}  // namespace bregiot
