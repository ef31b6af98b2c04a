#pragma once

#include "bregiot/types.hpp"

#include <string>
#include <string_view>

namespace bregiot {

enum class SetKind { sh, shw, ed, mc, affine, nonnegative, whole_space };

// Closed convex set of admissible cost matrices.
//
//   sh          symmetric, nonnegative, zero diagonal
//   shw         symmetric, nonnegative, diagonal fixed to w >= 0
//   ed          squared Euclidean distance matrices, S_h intersected with -K_+^n
//   mc          S_h plus the triangle inequality (membership only)
//   affine      { -U0^T A V0 : A in R^{d x d} }
//   nonnegative entrywise >= 0
//   whole_space R^{n x n}
class ConstraintSet {
 public:
  static ConstraintSet sh();
  static ConstraintSet shw(Vector w);
  static ConstraintSet ed();
  static ConstraintSet mc();
  static ConstraintSet affine(const Matrix& u0, const Matrix& v0);
  static ConstraintSet nonnegative();
  static ConstraintSet whole_space();

  // `sh`, `shw:<w1,w2,...>`, `ed`, `mc`, `nonneg`, `free`, and
  // `affine:<U0.csv>,<V0.csv>` (reads the two matrices from disk).
  static ConstraintSet parse(std::string_view id);

  SetKind kind() const { return kind_; }
  std::string id() const;
  const Vector& diagonal() const { return w_; }

  // Frobenius-norm projection. Throws UnsupportedCase for mc and
  // ConvergenceError if the ED alternation exhausts its round cap.
  Matrix project(const Matrix& m) const;
  bool contains(const Matrix& m, double tol) const;

  // Dykstra controls for the ED projection.
  static constexpr double kDykstraTol = 1e-10;
  static constexpr int kDykstraMaxRounds = 5000;

 private:
  explicit ConstraintSet(SetKind kind) : kind_(kind) {}

  SetKind kind_;
  Vector w_;
  Matrix row_projector_;  // U0^+ U0
  Matrix col_projector_;  // V0^+ V0
};

// Projection onto the PSD cone by eigenvalue clipping.
Matrix project_psd(const Matrix& a);

// Projection onto K_+^n (symmetric, PSD on the complement of the ones vector):
// A - JAJ + P_psd(JAJ) with J = I - 11^T / n.
Matrix project_almost_psd(const Matrix& a);

// Projection onto -K_+^n, i.e. -project_almost_psd(-A).
Matrix project_psd_cone_complement(const Matrix& a);

// min eigenvalue of J A J for symmetric A.
double centered_min_eigenvalue(const Matrix& a);

// Moore-Penrose pseudoinverse via SVD, singular values below
// rel_cutoff * sigma_max treated as zero.
Matrix pseudoinverse(const Matrix& a, double rel_cutoff = 1e-12);

}  // namespace bregiot
