#ifndef DUALFILTER_LINALG_H_
#define DUALFILTER_LINALG_H_

#include <Eigen/Dense>

namespace dualfilter {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Symmetric square root L with L L^T = S for a symmetric PSD matrix.
// Eigenvalues in [-clip, clip] are clipped to zero; anything more negative
// throws ModelError with `name` in the message.
MatrixXd PsdFactor(const MatrixXd& S, const char* name, double clip = 1e-12);

// Moore-Penrose pseudo-inverse of a symmetric matrix. Eigenvalues with
// |lambda| <= rel_cutoff * max|lambda|, and subnormal ones, are dropped.
MatrixXd SymmetricPinv(const MatrixXd& S, double rel_cutoff = 1e-10);

// Returns true if S is symmetric within `tol` (relative to max |entry|).
bool IsSymmetric(const MatrixXd& S, double tol = 1e-12);

// Minimum eigenvalue of a symmetric matrix.
double MinEigenvalue(const MatrixXd& S);

// Euclidean projection-free simplex cleanup: clip negatives, renormalize.
// Falls back to uniform when everything clips to zero.
VectorXd ClipToSimplex(const VectorXd& v);

}  // namespace dualfilter

#endif  // DUALFILTER_LINALG_H_
