#ifndef DUALFILTER_LGSSM_H_
#define DUALFILTER_LGSSM_H_

// Linear Gaussian model of order tau:
//
//   X_{t+1} = sum_{s=1}^{min(tau,t+1)} A_{t+1,s} X_{t+1-s} + B_{t+1}
//   Z_{t+1} = C X_t + W_{t+1}
//
// with X_0 ~ N(mu0, Sigma0), B ~ N(0, Q), W ~ N(0, R). Note the offset: the
// observation Z_{t+1} measures X_t.
//
// Sequences are stored column-wise: column t of a d x (T+1) matrix is y_t.

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace dualfilter::lgssm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct LinearGaussianModel {
  int d = 0;
  int m = 0;
  int T = 0;    // horizon
  int tau = 1;  // model order, 1 <= tau <= T

  // Time-invariant transitions, lags[s-1] = A_s. Used when `table` is empty.
  std::vector<MatrixXd> lags;
  // Optional time-varying transitions, table[t-1][s-1] = A_{t,s} for
  // t = 1..T and s = 1..min(tau, t).
  std::vector<std::vector<MatrixXd>> table;

  MatrixXd C;
  MatrixXd Q;
  MatrixXd R;
  VectorXd mu0;
  MatrixXd Sigma0;

  // A_{t,s}. Requires 1 <= s <= min(tau, t) and t <= T.
  const MatrixXd& transition(int t, int s) const;

  bool time_varying() const { return !table.empty(); }

  // Throws ModelError on inconsistent dimensions or covariance structure.
  void Validate() const;
};

struct LinearTrajectory {
  MatrixXd x;  // d x (T+1), columns X_0..X_T
  MatrixXd z;  // m x (T+1), columns Z_1..Z_{T+1}
  std::uint64_t seed = 0;
};

struct DualSolution {
  VectorXd f;
  MatrixXd u;    // m x T, columns u_0..u_{T-1}
  MatrixXd y;    // d x (T+1), columns y_0..y_T
  MatrixXd eta;  // d x T, columns eta_0..eta_{T-1}
  // max_t |u_t + R^{-1} C eta_t|_inf
  double residual = 0.0;
  bool optimal = false;
  int iterations = 0;
};

struct GaussianPrediction {
  double mean = 0.0;
  double variance = 0.0;
  // m x T; column t-1 multiplies Z_t in the affine representation of the mean.
  MatrixXd weights;
};

// Layer iteration u <- (1-damping) u + damping (-R^{-1} C eta), from u = 0.
struct FixedPoint {
  double tol = 1e-10;
  int max_iter = 10000;
  double damping = 0.5;
};

// Joint sparse solve of the backward, forward and stationarity equations.
struct Direct {};

using SolveMethod = std::variant<FixedPoint, Direct>;

LinearTrajectory Simulate(const LinearGaussianModel& model, std::uint64_t seed);

// Exact posterior of f^T X_T given Z_{1:T} by Kalman filtering on the stacked
// window (X_t, ..., X_{t-tau+1}); correct with Z_{t+1}, then predict X_{t+1}.
// `z_path` is m x T (extra trailing columns are ignored).
GaussianPrediction KalmanAugmented(const LinearGaussianModel& model,
                                   const MatrixXd& z_path, const VectorXd& f);

// y_T = f; y_t = sum_s A_{t+s,s}^T y_{t+s} + C^T u_t.
MatrixXd DualBackward(const LinearGaussianModel& model, const MatrixXd& u,
                      const VectorXd& f);

// eta_0 = Sigma0 y_0; eta_t = sum_s A_{t,s} eta_{t-s} + Q y_t.
MatrixXd DualForward(const LinearGaussianModel& model, const MatrixXd& y);

// 1/2 |y_0|^2_Sigma0 + 1/2 sum_t (|y_{t+1}|^2_Q + |u_t|^2_R).
double DualCost(const LinearGaussianModel& model, const MatrixXd& u,
                const VectorXd& f);

// E|f^T X_T - S_T|^2 for S_T = mu0^T y_0 - sum_t u_{t-1}^T Z_t, evaluated from
// the propagated joint moments of the state history.
double MseExact(const LinearGaussianModel& model, const MatrixXd& u,
                const VectorXd& f);

// Gradient of DualCost with respect to u: column t is C eta_t + R u_t.
MatrixXd DualCostGradient(const LinearGaussianModel& model, const MatrixXd& u,
                          const VectorXd& f);

// One layer: backward pass with u, forward pass, damped control update.
// Returns the updated u; y and eta of the pass are written to the outputs.
MatrixXd DualLayer(const LinearGaussianModel& model, const MatrixXd& u,
                   const VectorXd& f, double damping, MatrixXd* y,
                   MatrixXd* eta);

DualSolution DualFilterSolve(const LinearGaussianModel& model,
                             const VectorXd& f, const SolveMethod& method);

// max_t |u_t + R^{-1} C eta_t|_inf.
double OptimalityResidual(const LinearGaussianModel& model, const MatrixXd& u,
                          const MatrixXd& eta);

// Mean, variance and weights of the dual-filter estimate. Rejects solutions
// whose optimality residual exceeds `residual_tol`.
GaussianPrediction PredictLinear(const LinearGaussianModel& model,
                                 const DualSolution& sol,
                                 const MatrixXd& z_path,
                                 double residual_tol = 1e-8);

// Prior moments from the state recursion, without observations.
struct PriorMoments {
  MatrixXd mean;                  // d x (T+1)
  std::vector<MatrixXd> history;  // history[i*(T+1)+j] = Cov(X_i, X_j)
  int T = 0;
  const MatrixXd& cov(int i, int j) const { return history[i * (T + 1) + j]; }
};
PriorMoments PropagateMoments(const LinearGaussianModel& model);

// Bytes held by one layer sweep: y, eta and u.
std::size_t DualLayerBytes(const LinearGaussianModel& model);

}  // namespace dualfilter::lgssm

#endif  // DUALFILTER_LGSSM_H_
