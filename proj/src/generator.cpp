#include "bregiot/generator.hpp"

#include "bregiot/errors.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

namespace bregiot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt_arg(const char* what, double x) {
  std::ostringstream os;
  os.precision(17);
  os << what << ": argument " << x << " outside domain";
  return os.str();
}

double finite_or_throw(double value, const char* what, double x) {
  if (!std::isfinite(value)) throw DomainError(fmt_arg(what, x));
  return value;
}

}  // namespace

bool Interval::contains(double x) const {
  const bool above = lo_closed ? x >= lo : x > lo;
  const bool below = hi_closed ? x <= hi : x < hi;
  return above && below;
}

Generator Generator::entropy() { return {GeneratorKind::boltzmann_shannon, 0.0}; }
Generator Generator::burg() { return {GeneratorKind::burg, 0.0}; }
Generator Generator::fermi_dirac() { return {GeneratorKind::fermi_dirac, 0.0}; }
Generator Generator::quadratic() { return {GeneratorKind::quadratic, 0.0}; }

Generator Generator::beta_potential(double beta) {
  // Exponents 1/(beta-1) get extreme outside this range.
  if (!(beta >= 0.05 && beta <= 0.95)) {
    std::ostringstream os;
    os << "beta-potential requires beta in [0.05, 0.95], got " << beta;
    throw GeneratorError(os.str());
  }
  return {GeneratorKind::beta_potential, beta};
}

Generator Generator::parse(std::string_view id) {
  if (id == "entropy") return entropy();
  if (id == "burg") return burg();
  if (id == "fermi-dirac") return fermi_dirac();
  if (id == "quadratic") return quadratic();
  if (id.substr(0, 5) == "beta:") {
    const std::string rest(id.substr(5));
    double beta = 0.0;
    const auto res = std::from_chars(rest.data(), rest.data() + rest.size(), beta);
    if (res.ec != std::errc() || res.ptr != rest.data() + rest.size()) {
      throw GeneratorError("malformed beta-potential id: " + std::string(id));
    }
    return beta_potential(beta);
  }
  throw GeneratorError("unknown generator id: " + std::string(id));
}

std::string Generator::id() const {
  switch (kind_) {
    case GeneratorKind::boltzmann_shannon: return "entropy";
    case GeneratorKind::burg: return "burg";
    case GeneratorKind::fermi_dirac: return "fermi-dirac";
    case GeneratorKind::quadratic: return "quadratic";
    case GeneratorKind::beta_potential: {
      std::ostringstream os;
      os << "beta:" << beta_;
      return os.str();
    }
  }
  return "unknown";
}

Interval Generator::dom_phi() const {
  switch (kind_) {
    case GeneratorKind::boltzmann_shannon: return {0.0, kInf, true, false};
    case GeneratorKind::burg: return {0.0, kInf, false, false};
    case GeneratorKind::fermi_dirac: return {0.0, 1.0, true, true};
    case GeneratorKind::beta_potential: return {0.0, kInf, true, false};
    case GeneratorKind::quadratic: return {-kInf, kInf, false, false};
  }
  return {0.0, 0.0, false, false};
}

Interval Generator::dom_psi_interior() const {
  return {-kInf, psi_upper_bound(), false, false};
}

double Generator::psi_upper_bound() const {
  switch (kind_) {
    case GeneratorKind::burg: return 1.0;
    case GeneratorKind::beta_potential: return 1.0 / (1.0 - beta_);
    default: return kInf;
  }
}

std::pair<double, double> Generator::limiting_derivatives() const {
  switch (kind_) {
    // lim_{x->1-} log x = 0.
    case GeneratorKind::boltzmann_shannon: return {-kInf, 0.0};
    case GeneratorKind::burg: return {-kInf, 0.0};
    case GeneratorKind::fermi_dirac: return {-kInf, kInf};
    case GeneratorKind::beta_potential: return {-kInf, 0.0};
    case GeneratorKind::quadratic: return {0.0, 1.0};
  }
  return {0.0, 0.0};
}

bool Generator::zero_limit_is_infinite() const {
  const double d0 = phi0_prime();
  return std::isinf(d0) && d0 < 0;
}

double Generator::phi(double x) const {
  if (!dom_phi().contains(x)) throw DomainError(fmt_arg("phi", x));
  switch (kind_) {
    case GeneratorKind::boltzmann_shannon:
      return x == 0.0 ? 1.0 : x * std::log(x) - x + 1.0;
    case GeneratorKind::burg:
      return x - std::log(x) - 1.0;
    case GeneratorKind::fermi_dirac: {
      const double a = x == 0.0 ? 0.0 : x * std::log(x);
      const double b = x == 1.0 ? 0.0 : (1.0 - x) * std::log1p(-x);
      return a + b;
    }
    case GeneratorKind::beta_potential:
      return (std::pow(x, beta_) - beta_ * x + beta_ - 1.0) / (beta_ * (beta_ - 1.0));
    case GeneratorKind::quadratic:
      return 0.5 * x * x;
  }
  return 0.0;
}

double Generator::phi_prime(double x) const {
  if (!dom_phi().interior_contains(x)) throw DomainError(fmt_arg("phi'", x));
  switch (kind_) {
    case GeneratorKind::boltzmann_shannon: return std::log(x);
    case GeneratorKind::burg: return 1.0 - 1.0 / x;
    case GeneratorKind::fermi_dirac: return std::log(x) - std::log1p(-x);
    case GeneratorKind::beta_potential:
      return (std::pow(x, beta_ - 1.0) - 1.0) / (beta_ - 1.0);
    case GeneratorKind::quadratic: return x;
  }
  return 0.0;
}

void Generator::check_psi_arg(double theta) const {
  if (std::isnan(theta)) throw DomainError(fmt_arg("psi", theta));
  const double ub = psi_upper_bound();
  if (std::isfinite(ub) && !(theta < ub - kDomainMargin)) {
    throw DomainError(fmt_arg("psi", theta));
  }
}

double Generator::psi(double theta) const {
  check_psi_arg(theta);
  double r = 0.0;
  switch (kind_) {
    case GeneratorKind::boltzmann_shannon: r = std::expm1(theta); break;
    case GeneratorKind::burg: r = -std::log1p(-theta); break;
    case GeneratorKind::fermi_dirac:
      r = theta > 0 ? theta + std::log1p(std::exp(-theta)) : std::log1p(std::exp(theta));
      break;
    case GeneratorKind::beta_potential: {
      const double s = 1.0 + (beta_ - 1.0) * theta;
      r = (std::pow(s, beta_ / (beta_ - 1.0)) - 1.0) / beta_;
      break;
    }
    case GeneratorKind::quadratic: r = 0.5 * theta * theta; break;
  }
  return finite_or_throw(r, "psi", theta);
}

double Generator::psi_prime(double theta) const {
  check_psi_arg(theta);
  double r = 0.0;
  switch (kind_) {
    case GeneratorKind::boltzmann_shannon: r = std::exp(theta); break;
    case GeneratorKind::burg: r = 1.0 / (1.0 - theta); break;
    case GeneratorKind::fermi_dirac:
      if (theta >= 0) {
        r = 1.0 / (1.0 + std::exp(-theta));
      } else {
        const double e = std::exp(theta);
        r = e / (1.0 + e);
      }
      break;
    case GeneratorKind::beta_potential:
      r = std::pow(1.0 + (beta_ - 1.0) * theta, 1.0 / (beta_ - 1.0));
      break;
    case GeneratorKind::quadratic: r = theta; break;
  }
  return finite_or_throw(r, "psi'", theta);
}

double Generator::psi_second(double theta) const {
  check_psi_arg(theta);
  double r = 0.0;
  switch (kind_) {
    case GeneratorKind::boltzmann_shannon: r = std::exp(theta); break;
    case GeneratorKind::burg: {
      const double d = 1.0 - theta;
      r = 1.0 / (d * d);
      break;
    }
    case GeneratorKind::fermi_dirac: {
      const double e = std::exp(-std::abs(theta));
      r = e / ((1.0 + e) * (1.0 + e));
      break;
    }
    case GeneratorKind::beta_potential:
      r = std::pow(1.0 + (beta_ - 1.0) * theta, 1.0 / (beta_ - 1.0) - 1.0);
      break;
    case GeneratorKind::quadratic: r = 1.0; break;
  }
  return finite_or_throw(r, "psi''", theta);
}

double Generator::eval(GeneratorFunc f, double x) const {
  switch (f) {
    case GeneratorFunc::phi: return phi(x);
    case GeneratorFunc::phi_prime: return phi_prime(x);
    case GeneratorFunc::psi: return psi(x);
    case GeneratorFunc::psi_prime: return psi_prime(x);
    case GeneratorFunc::psi_second: return psi_second(x);
  }
  return 0.0;
}

double Generator::phi_sum(const Matrix& x) const {
  double s = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) s += phi(x.data()[k]);
  return s;
}

Matrix Generator::phi_prime(const Matrix& x) const {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index k = 0; k < x.size(); ++k) out.data()[k] = phi_prime(x.data()[k]);
  return out;
}

Matrix Generator::psi_prime(const Matrix& theta) const {
  Matrix out(theta.rows(), theta.cols());
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    out.data()[k] = psi_prime(theta.data()[k]);
  }
  return out;
}

Matrix Generator::psi_second(const Matrix& theta) const {
  Matrix out(theta.rows(), theta.cols());
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    out.data()[k] = psi_second(theta.data()[k]);
  }
  return out;
}

double Generator::psi_sum(const Matrix& theta) const {
  double s = 0.0;
  for (Eigen::Index k = 0; k < theta.size(); ++k) s += psi(theta.data()[k]);
  return s;
}

double bregman_divergence(const Generator& gen, const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw DimensionError("bregman_divergence: shape mismatch");
  }
  double total = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double xk = x.data()[k];
    const double yk = y.data()[k];
    total += gen.phi(xk) - gen.phi(yk) - (xk - yk) * gen.phi_prime(yk);
  }
  return total;
}

bool target_set_contains(const Generator& gen, const Matrix& x, const Vector& mu,
                         const Vector& nu, double tol) {
  if (x.rows() != mu.size() || x.cols() != nu.size()) {
    throw DimensionError("target_set_contains: plan shape does not match marginals");
  }
  if ((x.rowwise().sum() - mu).cwiseAbs().maxCoeff() > tol) return false;
  if ((x.colwise().sum().transpose() - nu).cwiseAbs().maxCoeff() > tol) return false;

  const auto [d0, d1] = gen.limiting_derivatives();
  const bool open_at_zero = std::isinf(d0);
  const bool open_at_one = std::isinf(d1);
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double v = x.data()[k];
    if (open_at_zero ? !(v > 0.0) : v < -tol) return false;
    if (open_at_one ? !(v < 1.0) : v > 1.0 + tol) return false;
  }
  return true;
}

}  // namespace bregiot
