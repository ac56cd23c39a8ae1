#ifndef DUALFILTER_LAYERS_H_
#define DUALFILTER_LAYERS_H_

// Layer maps of the nonlinear dual filter. A layer takes a sequence of
// probability vectors rho, computes the feedback control for each basis
// terminal condition f = 1_{x = i}, and returns the sequence rho+ obtained
// from the partial sums
//   rho+_s(i) = mu(Y_0^{(i)}) - sum_{t=1}^{s} U_{t-1}^{(i)T} e(z_t),
// where for query step s the backward pass runs over horizon s (so that
// Y_s^{(i)} = 1_i and the partial sum is rho+_s(i) itself).

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dualfilter/dual_hmm.h"
#include "dualfilter/hmm.h"

namespace dualfilter::dual {

struct LayerOptions {
  double tol = 1e-8;     // stop when max |rho_new - rho| < tol
  int max_layers = 100;
  double damping = 1.0;  // rho <- (1 - damping) rho + damping rho+
};

struct LayerReport {
  int layers = 0;
  double residual = 0.0;
  bool converged = false;
  // Largest negative mass removed by the simplex projection in the final
  // layer; zero when the partial sums already lay on the simplex.
  double clipped_mass = 0.0;
};

// ---- Exact tree ----

// rho and the result have levels 0..T (d rows); level 0 is mu on output and
// ignored on input. Controls at depth t use rho level t, t < T.
struct TreeLayerResult {
  AdaptedProcess rho;
  double clipped_mass = 0.0;
};
TreeLayerResult LayerTree(const ObservationTree& tree, const CostParams& params,
                          const AdaptedProcess& rho);

// Levels 0..T of the exact filter on every node (uniform on zero-probability
// nodes).
AdaptedProcess FilterOnTree(const ObservationTree& tree);
AdaptedProcess UniformOnTree(const ObservationTree& tree);

struct TreeIteration {
  AdaptedProcess rho;
  LayerReport report;
  // Max distance to the exact filter on positive-probability nodes, one
  // entry per layer (entry 0 is the initial guess).
  std::vector<double> distance_to_filter;
};
// Iterates LayerTree from the uniform sequence.
TreeIteration IterateTree(const ObservationTree& tree, const CostParams& params,
                          const LayerOptions& opts = {});

// Max entry distance between two tree sequences on positive-probability
// nodes of depth 1..T.
double TreeDistance(const ObservationTree& tree, const AdaptedProcess& a,
                    const AdaptedProcess& b);

// ---- Realized path, V = 0 ----

// rho and the result are d x T with column s-1 holding rho_s (rho_0 = mu).
// Per step s the control solves, for V = 0,
//   [rho_s(R) + Cov_{rho_s}(c)] U_s = -rho_s((c - rho_s(c)) A Y_{s+1}),
// so that U_s = L_s Y_{s+1} and Y_s = P_s Y_{s+1}. The partial sums then
// obey the forward recursion
//   r_{s+1} = A^T [ r_s - B_s^T M_s^+ (c r_s - e(z_{s+1})) ],  r_0 = mu,
// with B_s the m x d matrix of columns rho_s(x)(c(x) - rho_s(c)).
struct PathLayerResult {
  MatrixXd rho;  // projected onto the simplex
  MatrixXd raw;  // partial sums before projection
  double clipped_mass = 0.0;
};
PathLayerResult LayerPath(const hmm::Hmm& hmm, const MatrixXd& rho,
                          std::span<const int> z);

// Same map computed by T explicit backward passes, O(T^2 d^3). Test oracle
// for LayerPath.
PathLayerResult LayerPathBackward(const hmm::Hmm& hmm, const MatrixXd& rho,
                                  std::span<const int> z);

struct PathIteration {
  MatrixXd rho;  // d x T
  LayerReport report;
};
// Iterates LayerPath from the uniform sequence over the first T symbols.
PathIteration IteratePath(const hmm::Hmm& hmm, std::span<const int> z, int T,
                          const LayerOptions& opts = {});

// Next-token predictor C^T rho_s, s = 0..T-1, from the converged path layer.
// Throws ConvergenceError when the iteration does not converge.
hmm::SequencePredictor DualFilterPredictor(const hmm::Hmm& hmm,
                                           const LayerOptions& opts = {});

// ---- Weights ----

// Lower-triangular T x T heatmap: entry (s-1, t-1) is the Frobenius norm of
// the m x d matrix [U_{t-1}^{(1)} ... U_{t-1}^{(d)}] for query step s, i.e.
// the weight placed on Z_t when predicting rho_s.
struct WeightHeatmap {
  MatrixXd magnitude;
};

// From the path-local layer at a given rho (typically converged).
WeightHeatmap PathWeights(const hmm::Hmm& hmm, const MatrixXd& rho,
                          std::span<const int> z);

// Exact optimal weights by extraction from the filter on the tree; requires
// (m+1)^T <= 10^6.
WeightHeatmap OracleTreeWeights(const hmm::Hmm& hmm, std::span<const int> z,
                                int T);

// Column t-1 is an event column when Z_{t-1} = 1 (the weight on Z_t is
// chosen from Z_{1:t-1}). Column 0 is never an event column.
std::vector<bool> EventColumns(std::span<const int> z, int T);

struct MaskStats {
  double total_mass = 0.0;
  double off_mask_mass = 0.0;
  double max_off_mask = 0.0;  // largest single off-mask entry
  double off_fraction() const {
    return total_mass > 0.0 ? off_mask_mass / total_mass : 0.0;
  }
};
// Mass of the heatmap on and off the event columns, counting entries above
// `threshold` only.
MaskStats EventMaskStats(const WeightHeatmap& heatmap,
                         const std::vector<bool>& event_columns,
                         double threshold = 0.0);

}  // namespace dualfilter::dual

#endif  // DUALFILTER_LAYERS_H_
