#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace bregiot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Termination { converged, max_iterations, line_search_stalled };

std::string to_string(Termination t);

// Iteration trace shared by the forward solver and the inverse BCD solver.
struct SolveReport {
  std::vector<double> objective;  // one entry per iteration, plus the start
  std::vector<double> residual;
  // Accepted step sizes, one row per iteration. Forward solves leave it empty.
  std::vector<std::vector<double>> step_sizes;
  int iterations = 0;
  double wall_seconds = 0.0;
  Termination reason = Termination::max_iterations;
};

// u (+) v: the n x m matrix with entries u_i + v_j.
inline Matrix tensor_sum(const Vector& u, const Vector& v) {
  return u.replicate(1, v.size()) + v.transpose().replicate(u.size(), 1);
}

inline double max_abs(const Matrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

}  // namespace bregiot
