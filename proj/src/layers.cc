#include "dualfilter/layers.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "dualfilter/errors.h"
#include "dualfilter/linalg.h"

namespace dualfilter::dual {
namespace {

// Negative mass removed when projecting v onto the simplex.
double NegativeMass(const VectorXd& v) {
  return -v.cwiseMin(0.0).sum();
}

void CheckPath(const hmm::Hmm& hmm, const MatrixXd& rho,
               std::span<const int> z) {
  if (rho.rows() != hmm.d) throw ArgumentError("rho must have d rows");
  if (static_cast<Eigen::Index>(z.size()) < rho.cols()) {
    throw ArgumentError("path shorter than the rho sequence");
  }
  for (int v : z) {
    if (v < 0 || v > hmm.m) throw ArgumentError("symbol out of range");
  }
}

// Per-step matrices of the V = 0 control with rho_s, s = 0..T-1.
struct StepSystem {
  MatrixXd Mp;  // (rho(R) + Cov_rho(c))^+, m x m
  MatrixXd B;   // m x d, columns rho(x)(c(x) - rho(c))
};

// rho(R) + Cov_rho(c) is the covariance of e(Z) under the predictive law
// p = C^T rho, and rho(x)(c(x) - rho(c)) = rho(x) sum_z C(x,z)(e(z) - E e).
// Both use the centered encodings e(z) - E e = sum_z' p(z')(e(z) - e(z')),
// accurate to relative precision even when some p(z') is below 1e-16, where
// the uncentered forms cancel catastrophically.
StepSystem MakeStep(const hmm::Hmm& hmm, const VectorXd& rho) {
  const int m = hmm.m;
  const VectorXd p = hmm.C.transpose() * rho;
  MatrixXd centered = MatrixXd::Zero(m, m + 1);
  for (int z = 0; z <= m; ++z) {
    for (int w = 0; w <= m; ++w) {
      if (w != z) centered.col(z) += p(w) * (Encode(z, m) - Encode(w, m));
    }
  }
  StepSystem st;
  st.B = centered * hmm.C.transpose() * rho.asDiagonal();
  st.Mp = SymmetricPinv(centered * p.asDiagonal() * centered.transpose());
  return st;
}

// c r - e(z) = sum_x r(x) sum_w C(x,w)(e(w) - e(z)) + (1^T r - 1) e(z).
VectorXd Innovation(const hmm::Hmm& hmm, const VectorXd& r, int z) {
  const int m = hmm.m;
  const VectorXd ez = Encode(z, m);
  VectorXd out = (r.sum() - 1.0) * ez;
  for (int w = 0; w <= m; ++w) {
    if (w != z) out += hmm.C.col(w).dot(r) * (Encode(w, m) - ez);
  }
  return out;
}

std::vector<StepSystem> MakeSteps(const hmm::Hmm& hmm, const MatrixXd& rho) {
  const int T = static_cast<int>(rho.cols());
  std::vector<StepSystem> steps;
  steps.reserve(T);
  for (int s = 0; s < T; ++s) {
    steps.push_back(MakeStep(hmm, s == 0 ? hmm.mu : VectorXd(rho.col(s - 1))));
  }
  return steps;
}

PathLayerResult Project(MatrixXd raw) {
  PathLayerResult out;
  out.rho.resize(raw.rows(), raw.cols());
  for (Eigen::Index s = 0; s < raw.cols(); ++s) {
    out.clipped_mass = std::max(out.clipped_mass, NegativeMass(raw.col(s)));
    out.rho.col(s) = ClipToSimplex(raw.col(s));
  }
  out.raw = std::move(raw);
  return out;
}

}  // namespace

AdaptedProcess FilterOnTree(const ObservationTree& tree) {
  AdaptedProcess rho;
  const int d = tree.model().d;
  for (int t = 0; t <= tree.depth(); ++t) {
    MatrixXd pi = tree.Posterior(t);
    for (long long n = 0; n < tree.size(t); ++n) {
      if (tree.prob(t)(n) <= 0.0) pi.col(n).setConstant(1.0 / d);
    }
    rho.levels.push_back(std::move(pi));
  }
  rho.levels[0].col(0) = tree.model().mu;
  return rho;
}

AdaptedProcess UniformOnTree(const ObservationTree& tree) {
  const int d = tree.model().d;
  AdaptedProcess rho;
  for (int t = 0; t <= tree.depth(); ++t) {
    rho.levels.push_back(MatrixXd::Constant(d, tree.size(t), 1.0 / d));
  }
  rho.levels[0].col(0) = tree.model().mu;
  return rho;
}

TreeLayerResult LayerTree(const ObservationTree& tree, const CostParams& params,
                          const AdaptedProcess& rho) {
  const int T = tree.depth();
  const int d = params.d;
  const int m = params.m;
  const int a = tree.arity();
  if (static_cast<int>(rho.levels.size()) != T + 1) {
    throw ArgumentError("rho must have levels 0..T");
  }
  AdaptedProcess control_rho = rho;
  control_rho.levels[0].col(0) = tree.model().mu;

  TreeLayerResult out;
  out.rho = ZeroProcess(tree, d, T + 1);
  out.rho.levels[0].col(0) = tree.model().mu;
  const MatrixXd basis = MatrixXd::Identity(d, d);
  for (int s = 1; s <= T; ++s) {
    const FeedbackSolution fb =
        SolveFeedbackTree(tree, params, control_rho, basis, s);
    // Partial sums per basis condition, propagated from the root.
    VectorXd level = Eigen::Map<const MatrixXd>(fb.Y.levels[0].col(0).data(),
                                                d, d)
                         .transpose() *
                     tree.model().mu;
    MatrixXd p = level;  // d x nodes at depth t
    for (int t = 0; t < s; ++t) {
      MatrixXd next(d, tree.size(t + 1));
      for (long long n = 0; n < tree.size(t); ++n) {
        Eigen::Map<const MatrixXd> u(fb.U.levels[t].col(n).data(), m, d);
        for (int z = 0; z < a; ++z) {
          next.col(n * a + z) = p.col(n) - u.transpose() * Encode(z, m);
        }
      }
      p = std::move(next);
    }
    for (long long n = 0; n < tree.size(s); ++n) {
      if (tree.prob(s)(n) > 0.0) {
        out.clipped_mass = std::max(out.clipped_mass, NegativeMass(p.col(n)));
      }
      out.rho.levels[s].col(n) = ClipToSimplex(p.col(n));
    }
  }
  return out;
}

double TreeDistance(const ObservationTree& tree, const AdaptedProcess& a,
                    const AdaptedProcess& b) {
  double worst = 0.0;
  for (int t = 1; t <= tree.depth(); ++t) {
    for (long long n = 0; n < tree.size(t); ++n) {
      if (tree.prob(t)(n) <= 0.0) continue;
      worst = std::max(
          worst, (a.levels[t].col(n) - b.levels[t].col(n)).cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

TreeIteration IterateTree(const ObservationTree& tree, const CostParams& params,
                          const LayerOptions& opts) {
  const AdaptedProcess filter = FilterOnTree(tree);
  TreeIteration it;
  it.rho = UniformOnTree(tree);
  it.distance_to_filter.push_back(TreeDistance(tree, it.rho, filter));
  for (int k = 0; k < opts.max_layers; ++k) {
    TreeLayerResult next = LayerTree(tree, params, it.rho);
    for (int t = 1; t <= tree.depth(); ++t) {
      next.rho.levels[t] = (1.0 - opts.damping) * it.rho.levels[t] +
                           opts.damping * next.rho.levels[t];
    }
    it.report.residual = TreeDistance(tree, next.rho, it.rho);
    it.report.clipped_mass = next.clipped_mass;
    it.report.layers = k + 1;
    it.rho = std::move(next.rho);
    it.distance_to_filter.push_back(TreeDistance(tree, it.rho, filter));
    if (it.report.residual < opts.tol) {
      it.report.converged = true;
      break;
    }
  }
  return it;
}

PathLayerResult LayerPath(const hmm::Hmm& hmm, const MatrixXd& rho,
                          std::span<const int> z) {
  CheckPath(hmm, rho, z);
  const CostParams params = MakeCostParams(hmm);
  const int T = static_cast<int>(rho.cols());
  const MatrixXd At = hmm.A.transpose();
  MatrixXd raw(hmm.d, T);
  VectorXd r = hmm.mu;
  for (int s = 0; s < T; ++s) {
    const StepSystem st =
        MakeStep(hmm, s == 0 ? hmm.mu : VectorXd(rho.col(s - 1)));
    const VectorXd innovation = Innovation(hmm, r, z[s]);
    r = At * (r - st.B.transpose() * (st.Mp * innovation));
    raw.col(s) = r;
  }
  return Project(std::move(raw));
}

PathLayerResult LayerPathBackward(const hmm::Hmm& hmm, const MatrixXd& rho,
                                  std::span<const int> z) {
  CheckPath(hmm, rho, z);
  const CostParams params = MakeCostParams(hmm);
  const int T = static_cast<int>(rho.cols());
  const int d = hmm.d;
  const std::vector<StepSystem> steps = MakeSteps(hmm, rho);
  MatrixXd raw(d, T);
  for (int s = 1; s <= T; ++s) {
    MatrixXd Y = MatrixXd::Identity(d, d);
    VectorXd weighted = VectorXd::Zero(d);  // sum_t U_{t-1}^T e(z_t)
    for (int t = s - 1; t >= 0; --t) {
      const MatrixXd g = hmm.A * Y;
      const MatrixXd U = -steps[t].Mp * (steps[t].B * g);
      Y = g + params.c.transpose() * U;
      weighted += U.transpose() * Encode(z[t], hmm.m);
    }
    raw.col(s - 1) = Y.transpose() * hmm.mu - weighted;
  }
  return Project(std::move(raw));
}

PathIteration IteratePath(const hmm::Hmm& hmm, std::span<const int> z, int T,
                          const LayerOptions& opts) {
  if (T < 1 || static_cast<int>(z.size()) < T) {
    throw ArgumentError("path shorter than the requested horizon");
  }
  PathIteration it;
  it.rho = MatrixXd::Constant(hmm.d, T, 1.0 / hmm.d);
  for (int k = 0; k < opts.max_layers; ++k) {
    const PathLayerResult next = LayerPath(hmm, it.rho, z.first(T));
    const MatrixXd mixed =
        (1.0 - opts.damping) * it.rho + opts.damping * next.rho;
    it.report.residual = (mixed - it.rho).cwiseAbs().maxCoeff();
    it.report.clipped_mass = next.clipped_mass;
    it.report.layers = k + 1;
    it.rho = mixed;
    if (it.report.residual < opts.tol) {
      it.report.converged = true;
      break;
    }
  }
  return it;
}

hmm::SequencePredictor DualFilterPredictor(const hmm::Hmm& hmm,
                                           const LayerOptions& opts) {
  hmm.Validate();
  return [hmm, opts](std::span<const int> z) {
    const int T = static_cast<int>(z.size());
    MatrixXd out(hmm.alphabet(), T);
    if (T == 0) return out;
    const PathIteration it = IteratePath(hmm, z, T, opts);
    if (!it.report.converged) {
      throw ConvergenceError("path layer iteration did not converge",
                             it.report.residual, it.report.layers);
    }
    out.col(0) = hmm::NextToken(hmm, hmm.mu);
    for (int s = 1; s < T; ++s) {
      out.col(s) = hmm::NextToken(hmm, it.rho.col(s - 1));
    }
    return out;
  };
}

WeightHeatmap PathWeights(const hmm::Hmm& hmm, const MatrixXd& rho,
                          std::span<const int> z) {
  CheckPath(hmm, rho, z);
  const CostParams params = MakeCostParams(hmm);
  const int T = static_cast<int>(rho.cols());
  std::vector<MatrixXd> P(T);
  std::vector<MatrixXd> L(T);
  for (int s = 0; s < T; ++s) {
    const StepSystem st =
        MakeStep(hmm, s == 0 ? hmm.mu : VectorXd(rho.col(s - 1)));
    L[s] = -st.Mp * (st.B * hmm.A);
    P[s] = hmm.A + params.c.transpose() * L[s];
  }
  WeightHeatmap out;
  out.magnitude = MatrixXd::Zero(T, T);
  for (int t = 1; t <= T; ++t) {
    MatrixXd G = L[t - 1];
    for (int s = t; s <= T; ++s) {
      out.magnitude(s - 1, t - 1) = G.norm();
      if (s < T) G = G * P[s];
    }
  }
  return out;
}

WeightHeatmap OracleTreeWeights(const hmm::Hmm& hmm, std::span<const int> z,
                                int T) {
  if (static_cast<int>(z.size()) < T) {
    throw ArgumentError("path shorter than the requested horizon");
  }
  const ObservationTree tree(hmm, T);
  const int d = hmm.d;
  const int m = hmm.m;
  WeightHeatmap out;
  out.magnitude = MatrixXd::Zero(T, T);
  for (int s = 1; s <= T; ++s) {
    std::vector<ExtractedWeights> per_basis;
    for (int i = 0; i < d; ++i) {
      per_basis.push_back(OracleWeights(tree, VectorXd::Unit(d, i), s));
    }
    for (int t = 1; t <= s; ++t) {
      const long long node = tree.NodeOf(z, t - 1);
      MatrixXd G(m, d);
      for (int i = 0; i < d; ++i) G.col(i) = per_basis[i].U.levels[t - 1].col(node);
      out.magnitude(s - 1, t - 1) = G.norm();
    }
  }
  return out;
}

std::vector<bool> EventColumns(std::span<const int> z, int T) {
  std::vector<bool> mask(T, false);
  for (int t = 2; t <= T; ++t) mask[t - 1] = z[t - 2] == 1;
  return mask;
}

MaskStats EventMaskStats(const WeightHeatmap& heatmap,
                         const std::vector<bool>& event_columns,
                         double threshold) {
  MaskStats st;
  const MatrixXd& H = heatmap.magnitude;
  for (Eigen::Index s = 0; s < H.rows(); ++s) {
    for (Eigen::Index t = 0; t <= s && t < H.cols(); ++t) {
      const double w = H(s, t);
      if (w <= threshold) continue;
      st.total_mass += w;
      if (!event_columns[t]) {
        st.off_mask_mass += w;
        st.max_off_mask = std::max(st.max_off_mask, w);
      }
    }
  }
  return st;
}

}  // namespace dualfilter::dual
