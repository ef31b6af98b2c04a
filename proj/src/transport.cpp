#include "bregiot/transport.hpp"

#include "bregiot/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

namespace bregiot {

std::string to_string(Termination t) {
  switch (t) {
    case Termination::converged: return "converged";
    case Termination::max_iterations: return "max_iterations";
    case Termination::line_search_stalled: return "line_search_stalled";
  }
  return "unknown";
}

void TransportProblem::validate() const {
  if (cost.rows() != mu.size() || cost.cols() != nu.size()) {
    throw DimensionError("transport problem: cost shape does not match marginals");
  }
  if (cost.size() == 0) throw DimensionError("transport problem: empty cost matrix");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw DomainError("transport problem: gamma must be positive");
  }
  if (!cost.allFinite()) throw DomainError("transport problem: non-finite cost entry");
  if (!(mu.minCoeff() > 0.0) || !(nu.minCoeff() > 0.0)) {
    throw DomainError("transport problem: marginals must be strictly positive");
  }
  if (std::abs(mu.sum() - 1.0) > 1e-12 || std::abs(nu.sum() - 1.0) > 1e-12) {
    throw DomainError("transport problem: marginals must sum to one");
  }
}

Matrix TransportProblem::scaled_argument(const Vector& u, const Vector& v) const {
  return (tensor_sum(u, v) - cost) / gamma;
}

Matrix plan_from_potentials(const TransportProblem& prob, const DualPotentials& pots) {
  const Matrix z = prob.scaled_argument(pots.u, pots.v);
  Matrix x(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      try {
        x(i, j) = std::max(prob.gen.psi_prime(z(i, j)), 0.0);
      } catch (const DomainError& e) {
        std::ostringstream os;
        os << e.what() << " at entry (" << i << ", " << j << ")";
        throw DomainError(os.str());
      }
    }
  }
  return x;
}

double dual_objective(const TransportProblem& prob, const DualPotentials& pots,
                      const Matrix& target) {
  const Matrix z = prob.scaled_argument(pots.u, pots.v);
  if (target.rows() != z.rows() || target.cols() != z.cols()) {
    throw DimensionError("dual_objective: target shape mismatch");
  }
  return prob.gen.psi_sum(z) - (z.array() * target.array()).sum();
}

double dual_objective_clamped(const TransportProblem& prob, const DualPotentials& pots) {
  const Matrix z = prob.scaled_argument(pots.u, pots.v);
  double s = 0.0;
  for (Eigen::Index k = 0; k < z.size(); ++k) {
    const double zk = z.data()[k];
    const double xk = std::max(prob.gen.psi_prime(zk), 0.0);
    s += zk * xk - prob.gen.phi(xk);
  }
  return prob.gamma * s - pots.u.dot(prob.mu) - pots.v.dot(prob.nu);
}

std::pair<Vector, Vector> dual_gradient(const TransportProblem& prob,
                                        const DualPotentials& pots) {
  const Matrix x = prob.gen.psi_prime(prob.scaled_argument(pots.u, pots.v));
  return {(x.rowwise().sum() - prob.mu) / prob.gamma,
          (x.colwise().sum().transpose() - prob.nu) / prob.gamma};
}

double marginal_residual(const Matrix& plan, const Vector& mu, const Vector& nu) {
  return (plan.rowwise().sum() - mu).cwiseAbs().maxCoeff() +
         (plan.colwise().sum().transpose() - nu).cwiseAbs().maxCoeff();
}

namespace {

// log sum_j exp(a_j), a given as a strided view.
template <typename Vec>
double log_sum_exp(const Vec& a) {
  const double c = a.maxCoeff();
  if (!std::isfinite(c)) return c;
  return c + std::log((a.array() - c).exp().sum());
}

// Solves sum_j (psi'((t + w_j) / gamma))_+ = target for t, starting near `start`.
// The left side is nondecreasing in t and strictly increasing wherever it is
// positive, so the root is unique for target > 0.
class BlockRootSolver {
 public:
  BlockRootSolver(const Generator& gen, double gamma) : gen_(gen), gamma_(gamma) {
    const double ub = gen.psi_upper_bound();
    if (std::isfinite(ub)) arg_cap_ = ub - 1e-9 * (1.0 + std::abs(ub));
  }

  double solve(const Vector& w, double target, double start, const char* block,
               Eigen::Index index) const {
    const double t_max = std::isfinite(arg_cap_)
                             ? gamma_ * arg_cap_ - w.maxCoeff()
                             : std::numeric_limits<double>::infinity();
    const double tol = 4.0 * static_cast<double>(w.size()) *
                       std::numeric_limits<double>::epsilon() * target;

    double t = std::min(start, t_max);
    double h = 0.0, dh = 0.0;
    eval(w, t, h, dh);
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();

    // Bracket by doubling away from the start.
    double step = gamma_;
    if (h < target) {
      lo = t;
      while (true) {
        double next = t + step;
        if (next >= t_max) {
          next = t_max;
          eval(w, next, h, dh);
          if (h < target) {
            std::ostringstream os;
            os << "forward solve: " << block << " " << index
               << " marginal unreachable inside dom psi";
            throw DomainError(os.str());
          }
        } else {
          eval(w, next, h, dh);
        }
        t = next;
        if (h >= target) {
          hi = t;
          break;
        }
        lo = t;
        step *= 2.0;
      }
    } else {
      hi = t;
      while (true) {
        t -= step;
        eval(w, t, h, dh);
        if (h <= target) {
          lo = t;
          break;
        }
        hi = t;
        step *= 2.0;
        if (!std::isfinite(t)) {
          throw DomainError("forward solve: failed to bracket block root");
        }
      }
    }

    // Safeguarded Newton inside [lo, hi].
    for (int it = 0; it < 200; ++it) {
      if (std::abs(h - target) <= tol) return t;
      if (h < target) {
        lo = t;
      } else {
        hi = t;
      }
      double next = dh > 0.0 ? t - (h - target) / dh : lo - 1.0;
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (next == t || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() *
                                      (1.0 + std::abs(t))) {
        return t;
      }
      t = next;
      eval(w, t, h, dh);
    }
    return t;
  }

 private:
  void eval(const Vector& w, double t, double& h, double& dh) const {
    h = 0.0;
    dh = 0.0;
    for (Eigen::Index j = 0; j < w.size(); ++j) {
      const double z = (t + w[j]) / gamma_;
      const double x = gen_.psi_prime(z);
      if (x > 0.0) {
        h += x;
        dh += gen_.psi_second(z) / gamma_;
      }
    }
  }

  const Generator& gen_;
  double gamma_;
  double arg_cap_ = std::numeric_limits<double>::infinity();
};

}  // namespace

ForwardSolution solve_forward(const TransportProblem& prob, const SolverConfig& cfg) {
  prob.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Eigen::Index n = prob.cost.rows();
  const Eigen::Index m = prob.cost.cols();
  const double gamma = prob.gamma;

  DualPotentials pots{Vector::Zero(n), Vector::Zero(m)};
  if (cfg.warm_start) {
    if (cfg.warm_start->u.size() != n || cfg.warm_start->v.size() != m) {
      throw DimensionError("solve_forward: warm start has wrong size");
    }
    pots = *cfg.warm_start;
  }

  const bool entropy = prob.gen.kind() == GeneratorKind::boltzmann_shannon;
  const BlockRootSolver roots(prob.gen, gamma);
  const Vector log_mu = prob.mu.array().log();
  const Vector log_nu = prob.nu.array().log();

  SolveReport report;
  Matrix plan;
  double residual = std::numeric_limits<double>::infinity();
  Vector w;
  for (int sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
    if (entropy) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const Vector a = (pots.v - prob.cost.row(i).transpose()) / gamma;
        pots.u[i] = gamma * (log_mu[i] - log_sum_exp(a));
      }
      for (Eigen::Index j = 0; j < m; ++j) {
        const Vector a = (pots.u - prob.cost.col(j)) / gamma;
        pots.v[j] = gamma * (log_nu[j] - log_sum_exp(a));
      }
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        w = pots.v - prob.cost.row(i).transpose();
        pots.u[i] = roots.solve(w, prob.mu[i], pots.u[i], "row", i);
      }
      for (Eigen::Index j = 0; j < m; ++j) {
        w = pots.u - prob.cost.col(j);
        pots.v[j] = roots.solve(w, prob.nu[j], pots.v[j], "column", j);
      }
    }
    plan = plan_from_potentials(prob, pots);
    residual = marginal_residual(plan, prob.mu, prob.nu);
    report.residual.push_back(residual);
    report.objective.push_back(dual_objective_clamped(prob, pots));
    report.iterations = sweep;
    if (residual <= cfg.tol) {
      report.reason = Termination::converged;
      break;
    }
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (report.reason != Termination::converged) {
    report.reason = Termination::max_iterations;
    if (cfg.throw_on_max_iterations) {
      std::ostringstream os;
      os << "solve_forward: residual " << residual << " after " << cfg.max_sweeps
         << " sweeps";
      throw MaxIterationsExceeded(os.str(), report.residual);
    }
  }
  return {std::move(plan), std::move(pots), std::move(report)};
}

double kkt_residual(const TransportProblem& prob, const ForwardSolution& sol) {
  const double rows = (sol.plan.rowwise().sum() - prob.mu).cwiseAbs().maxCoeff();
  const double cols =
      (sol.plan.colwise().sum().transpose() - prob.nu).cwiseAbs().maxCoeff();
  const double recon = max_abs(sol.plan - plan_from_potentials(prob, sol.potentials));
  return std::max({rows, cols, recon});
}

}  // namespace bregiot
