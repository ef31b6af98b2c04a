#pragma once

#include "bregiot/types.hpp"

#include <string>
#include <string_view>
#include <utility>

namespace bregiot {

enum class GeneratorKind { boltzmann_shannon, burg, fermi_dirac, beta_potential, quadratic };

enum class GeneratorFunc { phi, phi_prime, psi, psi_prime, psi_second };

// Real interval with independently open/closed endpoints; bounds may be +-inf.
struct Interval {
  double lo;
  double hi;
  bool lo_closed;
  bool hi_closed;

  bool contains(double x) const;
  bool interior_contains(double x) const { return x > lo && x < hi; }
};

// Separable Bregman generator phi together with its Fenchel conjugate psi.
//
// Generators are immutable values. Every evaluation checks its argument against
// the relevant domain and throws DomainError instead of returning inf/nan.
// psi' and psi'' refuse arguments within kDomainMargin of a finite upper end of
// dom psi, where they blow up.
class Generator {
 public:
  static constexpr double kDomainMargin = 1e-12;

  static Generator entropy();
  static Generator burg();
  static Generator fermi_dirac();
  static Generator beta_potential(double beta);
  static Generator quadratic();

  // Accepts `entropy`, `burg`, `fermi-dirac`, `beta:<b>` and `quadratic`.
  static Generator parse(std::string_view id);

  GeneratorKind kind() const { return kind_; }
  double beta() const { return beta_; }
  std::string id() const;

  Interval dom_phi() const;
  Interval dom_psi_interior() const;

  // (phi'_0, phi'_1): limits of phi' at 0+ and 1-; may be -inf / +inf.
  std::pair<double, double> limiting_derivatives() const;
  double phi0_prime() const { return limiting_derivatives().first; }
  double phi1_prime() const { return limiting_derivatives().second; }
  bool zero_limit_is_infinite() const;

  double phi(double x) const;
  double phi_prime(double x) const;
  double psi(double theta) const;
  double psi_prime(double theta) const;
  double psi_second(double theta) const;

  double eval(GeneratorFunc f, double x) const;

  // Largest admissible argument for psi'/psi'' (inf when dom psi = R).
  double psi_upper_bound() const;

  // Entrywise phi summed over a matrix.
  double phi_sum(const Matrix& x) const;
  Matrix phi_prime(const Matrix& x) const;
  Matrix psi_prime(const Matrix& theta) const;
  Matrix psi_second(const Matrix& theta) const;
  double psi_sum(const Matrix& theta) const;

 private:
  Generator(GeneratorKind kind, double beta) : kind_(kind), beta_(beta) {}

  void check_psi_arg(double theta) const;

  GeneratorKind kind_;
  double beta_;
};

// B_phi(X || Y) summed entrywise.
double bregman_divergence(const Generator& gen, const Matrix& x, const Matrix& y);

// X in T_phi(mu, nu) up to tol: marginals, nonnegativity, and the open/closed
// endpoints at 0 and 1 implied by the limiting derivatives.
bool target_set_contains(const Generator& gen, const Matrix& x, const Vector& mu,
                         const Vector& nu, double tol);

}  // namespace bregiot
