#ifndef DUALFILTER_DUAL_HMM_H_
#define DUALFILTER_DUAL_HMM_H_

// Dual control problem for the HMM on the exact observation tree.
//
// A quantity is adapted to Z_{1:t} exactly when it is a function of the
// depth-t node of the (m+1)-ary observation tree, so adapted processes are
// stored level by level: level t is a (dim x (m+1)^t) matrix whose column n
// is the value at node n. Node n at depth t has children n*(m+1) + z.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dualfilter/hmm.h"

namespace dualfilter::dual {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Signed one-hot embedding of {0..m} into R^m with e(0) = -(e(1)+...+e(m)).
VectorXd Encode(int z, int m);

// s(z) = mean + tilde^T e(z) for z in {0..m}; `s` has m+1 entries.
struct Decomposition {
  double mean = 0.0;
  VectorXd tilde;
};
Decomposition Decompose(const VectorXd& s);

// Quantities entering the running cost, per state x:
//   c(x) = [C(x,i) - C(x,0)]_{i=1..m}          (= E[e(Z_{t+1}) | X_t = x])
//   R(x) = diag(c(x)) + C(x,0)(I + 11^T) - c(x)c(x)^T  (= Cov(e(Z_{t+1})|x))
//   (Gamma f)(x) = sum_y A(x,y) f(y)^2 - (Af)(x)^2     (= Var(f(X_{t+1})|x))
struct CostParams {
  int d = 0;
  int m = 0;
  MatrixXd A;
  MatrixXd c;               // m x d, column x is c(x)
  std::vector<MatrixXd> R;  // R[x] is m x m

  VectorXd Gamma(const VectorXd& f) const;
  // rho(R) = sum_x rho(x) R(x).
  MatrixXd WeightedR(const VectorXd& rho) const;
};
CostParams MakeCostParams(const hmm::Hmm& hmm);

class ObservationTree {
 public:
  // Refuses (m+1)^depth > 10^6 with TreeTooLargeError.
  ObservationTree(const hmm::Hmm& hmm, int depth);

  int depth() const { return depth_; }
  int arity() const { return arity_; }
  const hmm::Hmm& model() const { return hmm_; }
  long long size(int t) const { return sizes_[t]; }

  // P(Z_{1:t} = node) for every node at depth t.
  const VectorXd& prob(int t) const { return prob_[t]; }
  // alpha_t(x) = P(X_t = x, Z_{1:t} = node), d x size(t).
  const MatrixXd& alpha(int t) const { return alpha_[t]; }
  // pi_t = alpha_t / P(node); zero columns on zero-probability nodes.
  MatrixXd Posterior(int t) const;

  // Node reached by the first t observations of z.
  long long NodeOf(std::span<const int> z, int t) const;

 private:
  hmm::Hmm hmm_;
  int depth_;
  int arity_;
  std::vector<long long> sizes_;
  std::vector<VectorXd> prob_;
  std::vector<MatrixXd> alpha_;
};

// Values of an adapted quantity on tree levels first..first+levels.size()-1.
struct AdaptedProcess {
  std::vector<MatrixXd> levels;

  int dim() const { return levels.empty() ? 0 : levels[0].rows(); }
  auto node(int t, long long n) const { return levels[t].col(n); }
  auto node(int t, long long n) { return levels[t].col(n); }
};

// Zero-initialized process with `count` levels (t = 0..count-1).
AdaptedProcess ZeroProcess(const ObservationTree& tree, int dim, int count);

// Solution pair of the BSDE on the tree. Y has levels 0..T (d rows); V has
// levels 0..T-1 with m*d rows, the column-major m x d matrix whose column x
// is V_t(x).
struct BsdeSolution {
  AdaptedProcess Y;
  AdaptedProcess V;
  MatrixXd VAt(int t, long long n, int m, int d) const;
};

// Backward solve of
//   Y_t(x) = (A Y_{t+1})(x) + c(x)^T (U_t + V_t(x)) - V_t(x)^T e(Z_{t+1}),
//   Y_T = f,
// using the decomposition of z -> (A Y_{t+1}^{child z})(x) at each node.
// `horizon` defaults to the tree depth.
BsdeSolution BsdeSolveTree(const ObservationTree& tree,
                           const CostParams& params, const AdaptedProcess& U,
                           const VectorXd& f, int horizon = -1);

// max |Y_t(x) - (A Y_{t+1})(x) - c(x)^T (U_t + V_t(x)) + V_t(x)^T e(z)| over
// nodes, children and states.
double BsdeResidual(const ObservationTree& tree, const CostParams& params,
                    const AdaptedProcess& U, const BsdeSolution& sol);

// var(Y_0(X_0)) + E sum_t l(Y_{t+1}, V_t, U_t; X_t), with
// l(y, v, u; x) = (Gamma y)(x) + (u + v(x))^T R(x) (u + v(x)).
double CostJ(const ObservationTree& tree, const CostParams& params,
             const AdaptedProcess& U, const BsdeSolution& sol);

// S on every node: S_s = mu(Y_0) - sum_{t=1}^s U_{t-1}^T e(z_t).
AdaptedProcess EstimatorTree(const ObservationTree& tree,
                             const AdaptedProcess& U, const BsdeSolution& sol);

struct DualityCheck {
  double J = 0.0;
  double mse = 0.0;
  double gap = 0.0;
};
// Solves the BSDE for U and compares J with E|f(X_T) - S_T|^2.
DualityCheck CheckDuality(const ObservationTree& tree, const CostParams& params,
                          const AdaptedProcess& U, const VectorXd& f);

// Representation S_T = constant - sum_t U_{t-1}^T e(z_t) of arbitrary leaf
// values, obtained by decomposing over the last observation repeatedly.
struct ExtractedWeights {
  double constant = 0.0;
  AdaptedProcess U;  // levels 0..T-1, m rows
};
ExtractedWeights ExtractWeights(const VectorXd& leaf_values, int m, int T);

// Leaf values constant - sum_t U_{t-1}^T e(z_t).
VectorXd ReconstructLeaves(double constant, const AdaptedProcess& U, int m);

// Optimal weights for pi_T(f): extraction applied to the exact filter.
ExtractedWeights OracleWeights(const ObservationTree& tree, const VectorXd& f,
                               int horizon = -1);

// Feedback law
//   phi(y, v; rho) = -rho(R)^+ ( rho((c - rho(c)) y) + rho(R v) ),
// pseudo-inverse with relative cutoff 1e-10. `v` is m x d.
VectorXd Phi(const VectorXd& y, const MatrixXd& v, const VectorXd& rho,
             const CostParams& params);

// Joint node solve: with V fixed, find U and Y(x) = g(x) + c(x)^T (U + V(x))
// satisfying the stationarity condition
//   rho(R) U + rho((c - rho(c)) Y) + rho(R V) = 0,
// minimum-norm in U. g and the result columns are per terminal condition,
// so several conditions are solved at once: g is d x k, v holds k stacked
// m x d blocks (column-major, m*d x k). Returns U (m x k); Y is written out.
MatrixXd SolveNodeControl(const CostParams& params, const VectorXd& rho,
                          const MatrixXd& g, const MatrixXd& v, MatrixXd* Y);

// Backward pass on the tree for terminal conditions F (d x k) with the
// feedback control computed at each node from rho (levels 0..horizon-1,
// d rows). Returns U with k*m rows per node (block j is condition j).
struct FeedbackSolution {
  AdaptedProcess U;  // m*k rows
  AdaptedProcess Y;  // d*k rows
};
FeedbackSolution SolveFeedbackTree(const ObservationTree& tree,
                                   const CostParams& params,
                                   const AdaptedProcess& rho, const MatrixXd& F,
                                   int horizon);

}  // namespace dualfilter::dual

#endif  // DUALFILTER_DUAL_HMM_H_
