#include "bregiot/closed_form.hpp"

#include "bregiot/constraint_sets.hpp"
#include "bregiot/errors.hpp"
#include "bregiot/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bregiot {

namespace {

void require_square(const Matrix& x, const char* what) {
  if (x.rows() != x.cols() || x.size() == 0) {
    throw DimensionError(std::string(what) + ": plan must be a nonempty square matrix");
  }
}

void require_gamma(double gamma) {
  if (!(gamma > 0.0)) throw DomainError("gamma must be positive");
}

Matrix g_from_derivatives(const Matrix& d, double gamma) {
  const Eigen::Index n = d.rows();
  Matrix g(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      g(i, j) = i == j ? 0.0 : 0.5 * gamma * (d(i, i) + d(j, j) - d(i, j) - d(j, i));
    }
  }
  return g;
}

}  // namespace

Matrix g_map(const Generator& gen, const Matrix& x, double gamma) {
  require_square(x, "g_map");
  require_gamma(gamma);
  return g_from_derivatives(gen.phi_prime(x), gamma);
}

bool set_membership(const Generator& gen, const Matrix& x, double gamma, PlanSet set,
                    double tol, const Vector& w) {
  if (tol < 0.0) throw DomainError("set_membership: tol must be nonnegative");
  require_square(x, "set_membership");
  require_gamma(gamma);
  const Matrix d = gen.phi_prime(x);
  const Matrix g = g_from_derivatives(d, gamma);

  const Vector mu = x.rowwise().sum();
  const Vector nu = x.colwise().sum().transpose();
  if (!target_set_contains(gen, x, mu, nu, tol)) return false;

  switch (set) {
    case PlanSet::u_phi:
      return g.minCoeff() >= -tol;
    case PlanSet::u_phi_w: {
      if (w.size() != x.rows()) throw DimensionError("set_membership: w has wrong size");
      return (g + 0.5 * tensor_sum(w, w)).minCoeff() >= -tol;
    }
    case PlanSet::v_phi: {
      if (g.minCoeff() < -tol) return false;
      const Eigen::Index n = x.rows();
      for (Eigen::Index k = 0; k < n; ++k) {
        for (Eigen::Index j = 0; j < n; ++j) {
          for (Eigen::Index i = 0; i < n; ++i) {
            const double lhs = 2.0 * d(k, k) + d(i, j) + d(j, i);
            const double rhs = d(i, k) + d(k, i) + d(j, k) + d(k, j);
            if (lhs - rhs < -tol) return false;
          }
        }
      }
      return true;
    }
    case PlanSet::w_phi: {
      if (g.minCoeff() < -tol) return false;
      // -G in K_+^n  <=>  J(-G)J is PSD.
      const Matrix neg = -g;
      const double radius = Eigen::SelfAdjointEigenSolver<Matrix>(neg, Eigen::EigenvaluesOnly)
                                .eigenvalues()
                                .cwiseAbs()
                                .maxCoeff();
      return centered_min_eigenvalue(neg) >= -tol * (1.0 + radius);
    }
  }
  return false;
}

Matrix construct_cost_nonneg(const Generator& gen, const Matrix& x_hat, double gamma) {
  require_square(x_hat, "construct_cost_nonneg");
  require_gamma(gamma);
  const double d0 = gen.phi0_prime();

  double k = -std::numeric_limits<double>::infinity();
  Matrix scaled(x_hat.rows(), x_hat.cols());
  for (Eigen::Index idx = 0; idx < x_hat.size(); ++idx) {
    const double v = x_hat.data()[idx];
    if (v < 0.0) throw DomainError("construct_cost_nonneg: negative plan entry");
    if (v == 0.0) {
      if (std::isinf(d0)) {
        throw UnsupportedCase(
            "construct_cost_nonneg: zero plan entry while phi'_0 = -inf (outside target set)");
      }
      scaled.data()[idx] = gamma * d0;
    } else {
      scaled.data()[idx] = gamma * gen.phi_prime(v);
    }
    k = std::max(k, scaled.data()[idx]);
  }
  return Matrix::Constant(x_hat.rows(), x_hat.cols(), k) - scaled;
}

Matrix preimage_representative(const Generator& gen, const Matrix& x_hat, double gamma,
                               const Vector& a, const Vector& b) {
  if (!gen.zero_limit_is_infinite()) {
    throw GeneratorError("preimage_representative requires phi'_0 = -inf");
  }
  require_square(x_hat, "preimage_representative");
  require_gamma(gamma);
  if (a.size() != x_hat.rows() || b.size() != x_hat.cols()) {
    throw DimensionError("preimage_representative: shift vectors have wrong size");
  }
  const Matrix d = gen.phi_prime(x_hat);
  return gamma * (Matrix::Constant(d.rows(), d.cols(), d.maxCoeff()) - d) + tensor_sum(a, b);
}

double stability_rhs(const Generator& gen, const Matrix& x_hat, const Matrix& x_tilde,
                     double gamma, double eps) {
  if (x_hat.rows() != x_tilde.rows() || x_hat.cols() != x_tilde.cols()) {
    throw DimensionError("stability_rhs: shape mismatch");
  }
  require_gamma(gamma);
  const Matrix shift = Matrix::Constant(x_hat.rows(), x_hat.cols(), eps);
  return 2.0 * gamma * max_abs(gen.phi_prime(x_hat + shift) - gen.phi_prime(x_tilde + shift));
}

InverseCertificate invert_closed_form(const Generator& gen, const Matrix& x_hat, double gamma,
                                      InverseSet set, const Vector& w, double tol) {
  InverseCertificate cert;
  cert.set = set;
  switch (set) {
    case InverseSet::sh:
      if (!gen.zero_limit_is_infinite()) {
        throw GeneratorError("closed-form S_h inverse requires phi'_0 = -inf");
      }
      cert.cost = g_map(gen, x_hat, gamma);
      cert.membership_ok = set_membership(gen, x_hat, gamma, PlanSet::u_phi, tol);
      break;
    case InverseSet::shw:
      if (!gen.zero_limit_is_infinite()) {
        throw GeneratorError("closed-form S_h^w inverse requires phi'_0 = -inf");
      }
      if (w.size() != x_hat.rows()) throw DimensionError("invert_closed_form: w has wrong size");
      cert.w = w;
      cert.cost = g_map(gen, x_hat, gamma) + 0.5 * tensor_sum(w, w);
      cert.membership_ok = set_membership(gen, x_hat, gamma, PlanSet::u_phi_w, tol, w);
      break;
    case InverseSet::whole_space: {
      cert.cost = construct_cost_nonneg(gen, x_hat, gamma);
      const Vector mu = x_hat.rowwise().sum();
      const Vector nu = x_hat.colwise().sum().transpose();
      cert.membership_ok = target_set_contains(gen, x_hat, mu, nu, tol);
      break;
    }
  }

  TransportProblem prob{cert.cost, x_hat.rowwise().sum(), x_hat.colwise().sum().transpose(),
                        gamma, gen};
  SolverConfig cfg;
  cfg.tol = 1e-12;
  cfg.throw_on_max_iterations = false;
  const auto sol = solve_forward(prob, cfg);
  cert.roundtrip_residual = max_abs(sol.plan - x_hat);
  return cert;
}

}  // namespace bregiot
