#include "dualfilter/dual_hmm.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "dualfilter/errors.h"
#include "dualfilter/linalg.h"

namespace dualfilter::dual {
namespace {

constexpr long long kMaxLeaves = 1000000;

int ResolveHorizon(const ObservationTree& tree, int horizon) {
  if (horizon < 0) return tree.depth();
  if (horizon > tree.depth()) {
    throw ArgumentError("horizon " + std::to_string(horizon) +
                        " exceeds tree depth " +
                        std::to_string(tree.depth()));
  }
  return horizon;
}

void CheckControl(const ObservationTree& tree, const AdaptedProcess& U,
                  int horizon, int m) {
  if (static_cast<int>(U.levels.size()) < horizon) {
    throw ArgumentError("control has fewer levels than the horizon");
  }
  for (int t = 0; t < horizon; ++t) {
    if (U.levels[t].rows() != m || U.levels[t].cols() != tree.size(t)) {
      throw ArgumentError("control level " + std::to_string(t) +
                          " has the wrong shape");
    }
  }
}

// (A Y^{child z})(x) for every child, d x arity.
MatrixXd ChildPropagation(const MatrixXd& A, const MatrixXd& next_level,
                          long long node, int arity) {
  return A * next_level.middleCols(node * arity, arity);
}

}  // namespace

VectorXd Encode(int z, int m) {
  if (m < 1) throw ArgumentError("alphabet parameter m must be >= 1");
  if (z < 0 || z > m) {
    throw ArgumentError("symbol " + std::to_string(z) + " outside {0.." +
                        std::to_string(m) + "}");
  }
  if (z == 0) return VectorXd::Constant(m, -1.0);
  VectorXd e = VectorXd::Zero(m);
  e(z - 1) = 1.0;
  return e;
}

Decomposition Decompose(const VectorXd& s) {
  if (s.size() < 2) throw ArgumentError("decompose needs m+1 >= 2 values");
  Decomposition out;
  out.mean = s.mean();
  out.tilde = s.tail(s.size() - 1).array() - out.mean;
  return out;
}

VectorXd CostParams::Gamma(const VectorXd& f) const {
  const VectorXd af = A * f;
  return A * f.cwiseAbs2() - af.cwiseAbs2();
}

MatrixXd CostParams::WeightedR(const VectorXd& rho) const {
  MatrixXd out = MatrixXd::Zero(m, m);
  for (int x = 0; x < d; ++x) {
    if (rho(x) != 0.0) out += rho(x) * R[x];
  }
  return out;
}

CostParams MakeCostParams(const hmm::Hmm& hmm) {
  hmm.Validate();
  CostParams p;
  p.d = hmm.d;
  p.m = hmm.m;
  p.A = hmm.A;
  p.c.resize(hmm.m, hmm.d);
  p.R.resize(hmm.d);
  const MatrixXd ones = MatrixXd::Ones(hmm.m, hmm.m);
  const MatrixXd eye = MatrixXd::Identity(hmm.m, hmm.m);
  for (int x = 0; x < hmm.d; ++x) {
    const double c0 = hmm.C(x, 0);
    VectorXd cx = hmm.C.row(x).tail(hmm.m).transpose().array() - c0;
    p.c.col(x) = cx;
    p.R[x] = MatrixXd(cx.asDiagonal()) + c0 * (eye + ones) - cx * cx.transpose();
  }
  return p;
}

ObservationTree::ObservationTree(const hmm::Hmm& hmm, int depth)
    : hmm_(hmm), depth_(depth), arity_(hmm.m + 1) {
  hmm_.Validate();
  if (depth < 0) throw ArgumentError("tree depth must be nonnegative");
  sizes_.resize(depth + 1);
  sizes_[0] = 1;
  for (int t = 1; t <= depth; ++t) {
    sizes_[t] = sizes_[t - 1] * arity_;
    if (sizes_[t] > kMaxLeaves) {
      throw TreeTooLargeError("(m+1)^T exceeds the enumeration limit of 1e6");
    }
  }
  prob_.resize(depth + 1);
  alpha_.resize(depth + 1);
  alpha_[0] = hmm_.mu;
  prob_[0] = VectorXd::Constant(1, hmm_.mu.sum());
  const MatrixXd At = hmm_.A.transpose();
  for (int t = 0; t < depth; ++t) {
    alpha_[t + 1].resize(hmm_.d, sizes_[t + 1]);
    for (long long n = 0; n < sizes_[t]; ++n) {
      for (int z = 0; z < arity_; ++z) {
        alpha_[t + 1].col(n * arity_ + z) =
            At * alpha_[t].col(n).cwiseProduct(hmm_.C.col(z));
      }
    }
    prob_[t + 1] = alpha_[t + 1].colwise().sum().transpose();
  }
}

MatrixXd ObservationTree::Posterior(int t) const {
  MatrixXd pi = MatrixXd::Zero(hmm_.d, sizes_[t]);
  for (long long n = 0; n < sizes_[t]; ++n) {
    if (prob_[t](n) > 0.0) pi.col(n) = alpha_[t].col(n) / prob_[t](n);
  }
  return pi;
}

long long ObservationTree::NodeOf(std::span<const int> z, int t) const {
  if (t > depth_ || t > static_cast<int>(z.size())) {
    throw ArgumentError("prefix length exceeds tree depth or path length");
  }
  long long n = 0;
  for (int k = 0; k < t; ++k) {
    if (z[k] < 0 || z[k] >= arity_) throw ArgumentError("symbol out of range");
    n = n * arity_ + z[k];
  }
  return n;
}

AdaptedProcess ZeroProcess(const ObservationTree& tree, int dim, int count) {
  AdaptedProcess p;
  p.levels.reserve(count);
  for (int t = 0; t < count; ++t) {
    p.levels.push_back(MatrixXd::Zero(dim, tree.size(t)));
  }
  return p;
}

MatrixXd BsdeSolution::VAt(int t, long long n, int m, int d) const {
  return Eigen::Map<const MatrixXd>(V.levels[t].col(n).data(), m, d);
}

BsdeSolution BsdeSolveTree(const ObservationTree& tree,
                           const CostParams& params, const AdaptedProcess& U,
                           const VectorXd& f, int horizon) {
  const int H = ResolveHorizon(tree, horizon);
  const int d = params.d;
  const int m = params.m;
  const int a = tree.arity();
  if (f.size() != d) throw ArgumentError("terminal condition has wrong size");
  CheckControl(tree, U, H, m);

  BsdeSolution sol;
  sol.Y = ZeroProcess(tree, d, H + 1);
  sol.V = ZeroProcess(tree, m * d, H);
  sol.Y.levels[H].colwise() = f;
  for (int t = H - 1; t >= 0; --t) {
    for (long long n = 0; n < tree.size(t); ++n) {
      const MatrixXd g = ChildPropagation(params.A, sol.Y.levels[t + 1], n, a);
      Eigen::Map<MatrixXd> v(sol.V.levels[t].col(n).data(), m, d);
      const VectorXd u = U.levels[t].col(n);
      for (int x = 0; x < d; ++x) {
        const Decomposition dec = Decompose(g.row(x).transpose());
        v.col(x) = dec.tilde;
        sol.Y.levels[t](x, n) =
            dec.mean + params.c.col(x).dot(u + dec.tilde);
      }
    }
  }
  return sol;
}

double BsdeResidual(const ObservationTree& tree, const CostParams& params,
                    const AdaptedProcess& U, const BsdeSolution& sol) {
  const int d = params.d;
  const int m = params.m;
  const int a = tree.arity();
  const int H = static_cast<int>(sol.V.levels.size());
  double worst = 0.0;
  for (int t = 0; t < H; ++t) {
    for (long long n = 0; n < tree.size(t); ++n) {
      const MatrixXd g = ChildPropagation(params.A, sol.Y.levels[t + 1], n, a);
      const MatrixXd v = sol.VAt(t, n, m, d);
      const VectorXd u = U.levels[t].col(n);
      for (int z = 0; z < a; ++z) {
        const VectorXd e = Encode(z, m);
        for (int x = 0; x < d; ++x) {
          const double r = sol.Y.levels[t](x, n) - g(x, z) -
                           params.c.col(x).dot(u + v.col(x)) +
                           v.col(x).dot(e);
          worst = std::max(worst, std::abs(r));
        }
      }
    }
  }
  return worst;
}

double CostJ(const ObservationTree& tree, const CostParams& params,
             const AdaptedProcess& U, const BsdeSolution& sol) {
  const int d = params.d;
  const int m = params.m;
  const int a = tree.arity();
  const int H = static_cast<int>(sol.V.levels.size());
  const hmm::Hmm& model = tree.model();
  const VectorXd y0 = sol.Y.levels[0].col(0);
  const double mean0 = model.mu.dot(y0);
  double J = model.mu.dot(y0.cwiseAbs2()) - mean0 * mean0;
  for (int t = 0; t < H; ++t) {
    const MatrixXd& alpha = tree.alpha(t);
    for (long long n = 0; n < tree.size(t); ++n) {
      if (alpha.col(n).isZero(0.0)) continue;
      const MatrixXd v = sol.VAt(t, n, m, d);
      const VectorXd u = U.levels[t].col(n);
      VectorXd running = VectorXd::Zero(d);
      for (int z = 0; z < a; ++z) {
        running += model.C.col(z).cwiseProduct(
            params.Gamma(sol.Y.levels[t + 1].col(n * a + z)));
      }
      for (int x = 0; x < d; ++x) {
        const VectorXd w = u + v.col(x);
        running(x) += w.dot(params.R[x] * w);
      }
      J += alpha.col(n).dot(running);
    }
  }
  return J;
}

AdaptedProcess EstimatorTree(const ObservationTree& tree,
                             const AdaptedProcess& U,
                             const BsdeSolution& sol) {
  const int H = static_cast<int>(sol.Y.levels.size()) - 1;
  const int a = tree.arity();
  const int m = a - 1;
  AdaptedProcess S = ZeroProcess(tree, 1, H + 1);
  S.levels[0](0, 0) = tree.model().mu.dot(sol.Y.levels[0].col(0));
  for (int t = 0; t < H; ++t) {
    for (long long n = 0; n < tree.size(t); ++n) {
      for (int z = 0; z < a; ++z) {
        S.levels[t + 1](0, n * a + z) =
            S.levels[t](0, n) - U.levels[t].col(n).dot(Encode(z, m));
      }
    }
  }
  return S;
}

DualityCheck CheckDuality(const ObservationTree& tree, const CostParams& params,
                          const AdaptedProcess& U, const VectorXd& f) {
  const BsdeSolution sol = BsdeSolveTree(tree, params, U, f);
  const AdaptedProcess S = EstimatorTree(tree, U, sol);
  const int T = tree.depth();
  const MatrixXd& alpha = tree.alpha(T);
  double mse = 0.0;
  for (long long n = 0; n < tree.size(T); ++n) {
    const double s = S.levels[T](0, n);
    mse += alpha.col(n).dot((f.array() - s).square().matrix());
  }
  DualityCheck out;
  out.J = CostJ(tree, params, U, sol);
  out.mse = mse;
  out.gap = std::abs(out.J - out.mse);
  return out;
}

ExtractedWeights ExtractWeights(const VectorXd& leaf_values, int m, int T) {
  if (m < 1 || T < 0) throw ArgumentError("invalid alphabet or depth");
  const int a = m + 1;
  long long leaves = 1;
  for (int t = 0; t < T; ++t) leaves *= a;
  if (leaf_values.size() != leaves) {
    throw ArgumentError("expected " + std::to_string(leaves) +
                        " leaf values, got " +
                        std::to_string(leaf_values.size()));
  }
  ExtractedWeights out;
  out.U.levels.resize(T);
  VectorXd level = leaf_values;
  for (int t = T - 1; t >= 0; --t) {
    const long long nodes = level.size() / a;
    VectorXd parent(nodes);
    MatrixXd& u = out.U.levels[t];
    u.resize(m, nodes);
    for (long long n = 0; n < nodes; ++n) {
      const Decomposition dec = Decompose(level.segment(n * a, a));
      parent(n) = dec.mean;
      u.col(n) = -dec.tilde;
    }
    level = std::move(parent);
  }
  out.constant = level(0);
  return out;
}

VectorXd ReconstructLeaves(double constant, const AdaptedProcess& U, int m) {
  const int a = m + 1;
  VectorXd level = VectorXd::Constant(1, constant);
  for (const MatrixXd& u : U.levels) {
    VectorXd next(level.size() * a);
    for (long long n = 0; n < level.size(); ++n) {
      for (int z = 0; z < a; ++z) {
        next(n * a + z) = level(n) - u.col(n).dot(Encode(z, m));
      }
    }
    level = std::move(next);
  }
  return level;
}

ExtractedWeights OracleWeights(const ObservationTree& tree, const VectorXd& f,
                               int horizon) {
  const int H = ResolveHorizon(tree, horizon);
  const VectorXd leaves = tree.Posterior(H).transpose() * f;
  return ExtractWeights(leaves, tree.arity() - 1, H);
}

// Sign of the rho(R V) term. The first variation of the cost in U at a node
// gives rho(R)U + rho((c - rho(c))Y) + rho(R V) = 0.
constexpr double kRvSign = 1.0;

VectorXd Phi(const VectorXd& y, const MatrixXd& v, const VectorXd& rho,
             const CostParams& params) {
  const VectorXd rc = params.c * rho;
  VectorXd b = params.c * rho.cwiseProduct(y) - rc * rho.dot(y);
  for (int x = 0; x < params.d; ++x) {
    if (rho(x) != 0.0) b += kRvSign * rho(x) * (params.R[x] * v.col(x));
  }
  return -SymmetricPinv(params.WeightedR(rho)) * b;
}

MatrixXd SolveNodeControl(const CostParams& params, const VectorXd& rho,
                          const MatrixXd& g, const MatrixXd& v, MatrixXd* Y) {
  const int d = params.d;
  const int m = params.m;
  const int k = static_cast<int>(g.cols());
  const VectorXd rc = params.c * rho;
  const MatrixXd centered = params.c.colwise() - rc;  // m x d
  const MatrixXd M = params.WeightedR(rho) +
                     centered * rho.asDiagonal() * centered.transpose();
  const MatrixXd Mp = SymmetricPinv(M);

  MatrixXd U(m, k);
  Y->resize(d, k);
  for (int j = 0; j < k; ++j) {
    Eigen::Map<const MatrixXd> vj(v.col(j).data(), m, d);
    // h(x) = g(x) + c(x)^T V(x): the part of Y that does not depend on U.
    const VectorXd h =
        g.col(j) + (params.c.cwiseProduct(vj)).colwise().sum().transpose();
    VectorXd b = centered * rho.cwiseProduct(h);
    for (int x = 0; x < d; ++x) {
      if (rho(x) != 0.0) b += kRvSign * rho(x) * (params.R[x] * vj.col(x));
    }
    U.col(j) = -Mp * b;
    Y->col(j) = h + params.c.transpose() * U.col(j);
  }
  return U;
}

FeedbackSolution SolveFeedbackTree(const ObservationTree& tree,
                                   const CostParams& params,
                                   const AdaptedProcess& rho, const MatrixXd& F,
                                   int horizon) {
  const int H = ResolveHorizon(tree, horizon);
  const int d = params.d;
  const int m = params.m;
  const int a = tree.arity();
  const int k = static_cast<int>(F.cols());
  if (F.rows() != d) throw ArgumentError("terminal conditions have wrong rows");
  if (static_cast<int>(rho.levels.size()) < H) {
    throw ArgumentError("rho has fewer levels than the horizon");
  }

  FeedbackSolution out;
  out.U = ZeroProcess(tree, m * k, H);
  out.Y = ZeroProcess(tree, d * k, H + 1);
  out.Y.levels[H].colwise() =
      Eigen::Map<const VectorXd>(MatrixXd(F).data(), d * k);
  MatrixXd v(m * d, k);
  MatrixXd Ynode;
  for (int t = H - 1; t >= 0; --t) {
    for (long long n = 0; n < tree.size(t); ++n) {
      // G_z = A Y^{child z} as d x k, for every z.
      std::vector<MatrixXd> G(a);
      MatrixXd mean = MatrixXd::Zero(d, k);
      for (int z = 0; z < a; ++z) {
        G[z] = params.A * Eigen::Map<const MatrixXd>(
                              out.Y.levels[t + 1].col(n * a + z).data(), d, k);
        mean += G[z];
      }
      mean /= a;
      for (int j = 0; j < k; ++j) {
        for (int x = 0; x < d; ++x) {
          for (int i = 0; i < m; ++i) {
            v(i + m * x, j) = G[i + 1](x, j) - mean(x, j);
          }
        }
      }
      const MatrixXd U =
          SolveNodeControl(params, rho.levels[t].col(n), mean, v, &Ynode);
      out.U.levels[t].col(n) = Eigen::Map<const VectorXd>(U.data(), m * k);
      out.Y.levels[t].col(n) = Eigen::Map<const VectorXd>(Ynode.data(), d * k);
    }
  }
  return out;
}

}  // namespace dualfilter::dual
