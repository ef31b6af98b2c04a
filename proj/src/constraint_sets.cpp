#include "bregiot/constraint_sets.hpp"

#include "bregiot/errors.hpp"
#include "bregiot/io.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bregiot {

namespace {

Matrix centering(Eigen::Index n) {
  return Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
}

Eigen::SelfAdjointEigenSolver<Matrix> eigen_sym(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
  if (es.info() != Eigen::Success) throw EigenFailure("symmetric eigendecomposition failed");
  return es;
}

void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw DimensionError(std::string(what) + ": matrix must be square");
  }
}

Matrix project_hollow(const Matrix& m, const Vector* diag) {
  Matrix s = 0.5 * (m + m.transpose());
  s = s.cwiseMax(0.0);
  if (diag) {
    s.diagonal() = *diag;
  } else {
    s.diagonal().setZero();
  }
  return s;
}

bool hollow_contains(const Matrix& m, const Vector* diag, double tol) {
  if (m.rows() != m.cols()) return false;
  if (max_abs(m - m.transpose()) > tol) return false;
  if (m.minCoeff() < -tol) return false;
  const Vector d = diag ? *diag : Vector::Zero(m.rows());
  if (d.size() != m.rows()) return false;
  return (m.diagonal() - d).cwiseAbs().maxCoeff() <= tol;
}

Matrix project_symmetric_hollow(const Matrix& m) {
  Matrix s = 0.5 * (m + m.transpose());
  s.diagonal().setZero();
  return s;
}

Matrix project_ed(const Matrix& m) {
  // A symmetric hollow matrix in -K_+^n is a squared distance matrix and so
  // already nonnegative. ED is therefore the intersection of the hollow
  // subspace with -K_+^n, and Dykstra needs a correction term only for the
  // cone.
  Matrix x = m;
  Matrix q = Matrix::Zero(m.rows(), m.cols());
  double change = 0.0;
  for (int round = 0; round < ConstraintSet::kDykstraMaxRounds; ++round) {
    const Matrix y = project_symmetric_hollow(x);
    const Matrix x_next = project_psd_cone_complement(y + q);
    q = y + q - x_next;
    change = max_abs(x_next - x);
    x = x_next;
    if (change <= ConstraintSet::kDykstraTol && max_abs(x - y) <= ConstraintSet::kDykstraTol) {
      return project_hollow(x, nullptr);
    }
  }
  std::ostringstream os;
  os << "ED projection: Dykstra did not converge in " << ConstraintSet::kDykstraMaxRounds
     << " rounds (last change " << change << ")";
  throw ConvergenceError(os.str(), change);
}

std::vector<double> parse_csv_doubles(std::string_view text) {
  std::vector<double> out;
  std::string item;
  std::istringstream is{std::string(text)};
  while (std::getline(is, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw DataError("malformed number in set id: '" + item + "'");
    }
  }
  return out;
}

}  // namespace

ConstraintSet ConstraintSet::sh() { return ConstraintSet(SetKind::sh); }

ConstraintSet ConstraintSet::shw(Vector w) {
  if (w.size() > 0 && w.minCoeff() < 0.0) {
    throw DomainError("shw: diagonal weights must be nonnegative");
  }
  ConstraintSet s(SetKind::shw);
  s.w_ = std::move(w);
  return s;
}

ConstraintSet ConstraintSet::ed() { return ConstraintSet(SetKind::ed); }
ConstraintSet ConstraintSet::mc() { return ConstraintSet(SetKind::mc); }
ConstraintSet ConstraintSet::nonnegative() { return ConstraintSet(SetKind::nonnegative); }
ConstraintSet ConstraintSet::whole_space() { return ConstraintSet(SetKind::whole_space); }

ConstraintSet ConstraintSet::affine(const Matrix& u0, const Matrix& v0) {
  if (u0.cols() != v0.cols()) {
    throw DimensionError("affine set: U0 and V0 must have the same number of columns");
  }
  if (u0.rows() > u0.cols() || v0.rows() > v0.cols()) {
    throw DimensionError("affine set: feature dimension must not exceed n");
  }
  ConstraintSet s(SetKind::affine);
  s.row_projector_ = pseudoinverse(u0) * u0;
  s.col_projector_ = pseudoinverse(v0) * v0;
  return s;
}

ConstraintSet ConstraintSet::parse(std::string_view id) {
  if (id == "sh") return sh();
  if (id == "ed") return ed();
  if (id == "mc") return mc();
  if (id == "nonneg") return nonnegative();
  if (id == "free") return whole_space();
  if (id.substr(0, 4) == "shw:") {
    const auto vals = parse_csv_doubles(id.substr(4));
    return shw(Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(vals.size())));
  }
  if (id.substr(0, 7) == "affine:") {
    const std::string rest(id.substr(7));
    const auto comma = rest.find(',');
    if (comma == std::string::npos) {
      throw DataError("affine set id must be affine:<U0.csv>,<V0.csv>");
    }
    return affine(read_matrix(rest.substr(0, comma)), read_matrix(rest.substr(comma + 1)));
  }
  throw DataError("unknown constraint set id: " + std::string(id));
}

std::string ConstraintSet::id() const {
  switch (kind_) {
    case SetKind::sh: return "sh";
    case SetKind::shw: {
      std::ostringstream os;
      os.precision(17);
      os << "shw:";
      for (Eigen::Index i = 0; i < w_.size(); ++i) os << (i ? "," : "") << w_[i];
      return os.str();
    }
    case SetKind::ed: return "ed";
    case SetKind::mc: return "mc";
    case SetKind::affine: return "affine";
    case SetKind::nonnegative: return "nonneg";
    case SetKind::whole_space: return "free";
  }
  return "unknown";
}

Matrix ConstraintSet::project(const Matrix& m) const {
  switch (kind_) {
    case SetKind::sh:
      require_square(m, "project(sh)");
      return project_hollow(m, nullptr);
    case SetKind::shw:
      require_square(m, "project(shw)");
      if (w_.size() != m.rows()) throw DimensionError("project(shw): diagonal size mismatch");
      return project_hollow(m, &w_);
    case SetKind::ed:
      require_square(m, "project(ed)");
      return project_ed(m);
    case SetKind::mc:
      throw UnsupportedCase("projection onto the metric cone is not provided");
    case SetKind::affine:
      if (row_projector_.rows() != m.rows() || col_projector_.rows() != m.cols()) {
        throw DimensionError("project(affine): matrix does not match U0/V0");
      }
      return row_projector_.transpose() * m * col_projector_;
    case SetKind::nonnegative:
      return m.cwiseMax(0.0);
    case SetKind::whole_space:
      return m;
  }
  return m;
}

bool ConstraintSet::contains(const Matrix& m, double tol) const {
  if (!m.allFinite()) return false;
  switch (kind_) {
    case SetKind::sh: return hollow_contains(m, nullptr, tol);
    case SetKind::shw: return hollow_contains(m, &w_, tol);
    case SetKind::ed: {
      if (!hollow_contains(m, nullptr, tol)) return false;
      const Matrix neg = -0.5 * (m + m.transpose());
      const double radius = max_abs(eigen_sym(neg).eigenvalues());
      return centered_min_eigenvalue(neg) >= -tol * (1.0 + radius);
    }
    case SetKind::mc: {
      if (!hollow_contains(m, nullptr, tol)) return false;
      const Eigen::Index n = m.rows();
      for (Eigen::Index k = 0; k < n; ++k) {
        for (Eigen::Index j = 0; j < n; ++j) {
          for (Eigen::Index i = 0; i < n; ++i) {
            if (m(i, j) > m(i, k) + m(k, j) + tol) return false;
          }
        }
      }
      return true;
    }
    case SetKind::affine:
      if (row_projector_.rows() != m.rows() || col_projector_.rows() != m.cols()) return false;
      return max_abs(project(m) - m) <= tol;
    case SetKind::nonnegative: return m.minCoeff() >= -tol;
    case SetKind::whole_space: return true;
  }
  return false;
}

Matrix project_psd(const Matrix& a) {
  const auto es = eigen_sym(a);
  const Vector lam = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

Matrix project_almost_psd(const Matrix& a) {
  require_square(a, "project_almost_psd");
  const Matrix j = centering(a.rows());
  const Matrix jaj = j * a * j;
  Matrix out = a - jaj + project_psd(jaj);
  return 0.5 * (out + out.transpose());
}

Matrix project_psd_cone_complement(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("project_psd_cone_complement: not square");
  return -project_almost_psd(-a);
}

double centered_min_eigenvalue(const Matrix& a) {
  require_square(a, "centered_min_eigenvalue");
  const Matrix j = centering(a.rows());
  return eigen_sym(j * a * j).eigenvalues().minCoeff();
}

Matrix pseudoinverse(const Matrix& a, double rel_cutoff) {
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double cutoff = s.size() > 0 ? rel_cutoff * s[0] : 0.0;
  Vector inv(s.size());
  for (Eigen::Index k = 0; k < s.size(); ++k) inv[k] = s[k] > cutoff ? 1.0 / s[k] : 0.0;
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace bregiot
