#include "dualfilter/linalg.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dualfilter/errors.h"

namespace dualfilter {

MatrixXd PsdFactor(const MatrixXd& S, const char* name, double clip) {
  if (S.size() == 0) return S;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(S);
  if (eig.info() != Eigen::Success) {
    throw ModelError(std::string(name) + ": eigendecomposition failed");
  }
  VectorXd lambda = eig.eigenvalues();
  double scale = std::max(1.0, lambda.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < -clip * scale) {
      throw ModelError(std::string(name) +
                       " is not positive semidefinite (eigenvalue " +
                       std::to_string(lambda(i)) + ")");
    }
    lambda(i) = lambda(i) <= clip * scale ? 0.0 : std::sqrt(lambda(i));
  }
  return eig.eigenvectors() * lambda.asDiagonal();
}

MatrixXd SymmetricPinv(const MatrixXd& S, double rel_cutoff) {
  if (S.size() == 0) return S;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(S);
  const VectorXd& lambda = eig.eigenvalues();
  double top = lambda.cwiseAbs().maxCoeff();
  VectorXd inv = VectorXd::Zero(lambda.size());
  if (top > 0.0) {
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
      // Subnormal eigenvalues would overflow on inversion.
      if (std::abs(lambda(i)) > rel_cutoff * top &&
          std::abs(lambda(i)) >= std::numeric_limits<double>::min()) {
        inv(i) = 1.0 / lambda(i);
      }
    }
  }
  return eig.eigenvectors() * inv.asDiagonal() *
         eig.eigenvectors().transpose();
}

bool IsSymmetric(const MatrixXd& S, double tol) {
  if (S.rows() != S.cols()) return false;
  double scale = std::max(1.0, S.cwiseAbs().maxCoeff());
  return (S - S.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

double MinEigenvalue(const MatrixXd& S) {
  if (S.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(S, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

VectorXd ClipToSimplex(const VectorXd& v) {
  VectorXd out = v.cwiseMax(0.0);
  double total = out.sum();
  if (!(total > 0.0)) {
    return VectorXd::Constant(v.size(), 1.0 / static_cast<double>(v.size()));
  }
  return out / total;
}

}  // namespace dualfilter
