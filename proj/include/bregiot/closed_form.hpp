#pragma once

#include "bregiot/generator.hpp"
#include "bregiot/types.hpp"

namespace bregiot {

// G(X)_ij = (gamma/2) (phi'(X_ii) + phi'(X_jj) - phi'(X_ij) - phi'(X_ji)).
// Symmetric with zero diagonal. For phi'_0 = -inf this is the unique S_h cost
// whose forward plan is X, whenever X lies in U_phi.
Matrix g_map(const Generator& gen, const Matrix& x, double gamma);

enum class PlanSet { u_phi, u_phi_w, v_phi, w_phi };

// Membership of X in U_phi, U_phi^w, V_phi or W_phi. The ambient target-set
// check uses the marginals of X itself, so only the entry ranges matter.
// `w` is read only for u_phi_w.
bool set_membership(const Generator& gen, const Matrix& x, double gamma, PlanSet set,
                    double tol, const Vector& w = Vector());

// Nonnegative cost reproducing X_hat under the forward map:
//   C_ij = K - gamma phi'(X_ij) on the support, K - gamma phi'_0 elsewhere,
// with K the largest of those gamma phi' values. Throws UnsupportedCase when
// X_hat has zeros but phi'_0 = -inf.
Matrix construct_cost_nonneg(const Generator& gen, const Matrix& x_hat, double gamma);

// Point of the (2n-1)-dimensional preimage of X_hat:
//   C_ij = gamma (max_kl phi'(X_kl) - phi'(X_ij)) + a_i + b_j.
// Requires phi'_0 = -inf (GeneratorError otherwise).
Matrix preimage_representative(const Generator& gen, const Matrix& x_hat, double gamma,
                               const Vector& a, const Vector& b);

// 2 gamma max_ij |phi'(X_hat_ij + eps) - phi'(X_tilde_ij + eps)|; bounds
// ||C_hat - C_tilde||_inf for the S_h-restricted inverses.
double stability_rhs(const Generator& gen, const Matrix& x_hat, const Matrix& x_tilde,
                     double gamma, double eps = 0.0);

enum class InverseSet { sh, shw, whole_space };

struct InverseCertificate {
  Matrix cost;
  InverseSet set = InverseSet::sh;
  Vector w;
  bool membership_ok = false;
  // ||F(cost) - X_hat||_inf after a forward re-solve.
  double roundtrip_residual = 0.0;
};

// Closed-form inverse with a forward round-trip check.
//   sh          g_map(X_hat), membership in U_phi
//   shw         g_map(X_hat) + (w (+) w)/2, membership in U_phi^w
//   whole_space construct_cost_nonneg(X_hat), membership in T_phi
InverseCertificate invert_closed_form(const Generator& gen, const Matrix& x_hat, double gamma,
                                      InverseSet set, const Vector& w = Vector(),
                                      double tol = 1e-9);

}  // namespace bregiot
