#include "dualfilter/dual_hmm.h"

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "dualfilter/errors.h"
#include "dualfilter/random_models.h"

namespace dualfilter::dual {
namespace {

using hmm::Hmm;

Hmm Random(int d, int m, double floor, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return RandomHmm({d, m, floor}, rng);
}

AdaptedProcess RandomControl(const ObservationTree& tree, int T,
                             std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  AdaptedProcess U = ZeroProcess(tree, tree.model().m, T);
  for (MatrixXd& level : U.levels) {
    for (int i = 0; i < level.size(); ++i) level.data()[i] = n(rng);
  }
  return U;
}

VectorXd RandomVector(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

// Symbols of leaf n at depth T (first symbol most significant).
std::vector<int> Symbols(long long n, int arity, int T) {
  std::vector<int> z(T);
  for (int t = T - 1; t >= 0; --t) {
    z[t] = static_cast<int>(n % arity);
    n /= arity;
  }
  return z;
}

// Joint P(X_T = x, Z_{1:T} = z) by the plain forward recursion.
VectorXd LeafJoint(const Hmm& h, const std::vector<int>& z) {
  VectorXd a = h.mu;
  for (int v : z) a = h.A.transpose() * a.cwiseProduct(h.C.col(v));
  return a;
}

// E|f(X_T) - S_T|^2 with S_T = mu(Y_0) - sum_t U_{t-1}^T e(z_t), summed over
// leaves from scratch.
double MseByLeaves(const ObservationTree& tree, const AdaptedProcess& U,
                   double mu_y0, const VectorXd& f) {
  const Hmm& h = tree.model();
  const int T = tree.depth(), a = tree.arity();
  double mse = 0.0;
  for (long long n = 0; n < tree.size(T); ++n) {
    std::vector<int> z = Symbols(n, a, T);
    double s = mu_y0;
    long long node = 0;
    for (int t = 1; t <= T; ++t) {
      s -= U.levels[t - 1].col(node).dot(Encode(z[t - 1], h.m));
      node = node * a + z[t - 1];
    }
    VectorXd joint = LeafJoint(h, z);
    for (int x = 0; x < h.d; ++x) mse += joint(x) * (f(x) - s) * (f(x) - s);
  }
  return mse;
}

// For m = 1 the node equations for z = 1, 0 read
//   Y(x) = g_1(x) + c(x)(u + V(x)) - V(x),  Y(x) = g_0(x) + c(x)(u + V(x)) + V(x),
// so V = (g_1 - g_0)/2 and Y = (g_1 + g_0)/2 + c(u + V). Returns Y_0 at the root.
VectorXd HandEliminationRoot(const Hmm& h, const AdaptedProcess& U,
                             const VectorXd& f, int t, long long node, int T) {
  if (t == T) return f;
  const VectorXd g1 = h.A * HandEliminationRoot(h, U, f, t + 1, 2 * node + 1, T);
  const VectorXd g0 = h.A * HandEliminationRoot(h, U, f, t + 1, 2 * node, T);
  const double u = U.levels[t](0, node);
  VectorXd y(h.d);
  for (int x = 0; x < h.d; ++x) {
    const double c = h.C(x, 1) - h.C(x, 0);
    const double v = 0.5 * (g1(x) - g0(x));
    y(x) = 0.5 * (g1(x) + g0(x)) + c * (u + v);
  }
  return y;
}

TEST(Encode, Definition) {
  EXPECT_DOUBLE_EQ(Encode(1, 1)(0), 1.0);
  EXPECT_DOUBLE_EQ(Encode(0, 1)(0), -1.0);
  EXPECT_EQ(Encode(0, 2), VectorXd::Constant(2, -1.0));
  EXPECT_EQ(Encode(2, 3), VectorXd::Unit(3, 1));
  VectorXd sum = VectorXd::Zero(5);
  for (int z = 0; z <= 5; ++z) sum += Encode(z, 5);
  EXPECT_TRUE(sum.isZero(0));
  EXPECT_THROW(Encode(3, 2), ArgumentError);
  EXPECT_THROW(Encode(-1, 2), ArgumentError);
  EXPECT_THROW(Encode(0, 0), ArgumentError);
}

TEST(Decompose, Examples) {
  VectorXd s(2);
  s << 1.0, 3.0;  // s(0) = 1, s(1) = 3
  Decomposition dec = Decompose(s);
  EXPECT_DOUBLE_EQ(dec.mean, 2.0);
  EXPECT_DOUBLE_EQ(dec.tilde(0), 1.0);
  EXPECT_TRUE(Decompose(VectorXd::Constant(4, 2.5)).tilde.isZero(0));
  std::mt19937_64 rng(1);
  for (int k = 0; k < 20; ++k) {
    VectorXd r = RandomVector(5, rng);
    Decomposition d = Decompose(r);
    const double scale = std::max(1.0, r.cwiseAbs().maxCoeff());
    for (int z = 0; z <= 4; ++z) {
      EXPECT_NEAR(d.mean + d.tilde.dot(Encode(z, 4)), r(z), 1e-15 * scale);
    }
  }
}

TEST(CostParams, BinaryEmissionVariance) {
  Hmm h = Random(3, 1, 0.0, 2);
  CostParams p = MakeCostParams(h);
  for (int x = 0; x < 3; ++x) {
    const double q = h.C(x, 1);
    EXPECT_NEAR(p.R[x](0, 0), 4.0 * q * (1.0 - q), 1e-15);
  }
}

TEST(CostParams, DirectCovarianceAndVariance) {
  for (int m = 1; m <= 4; ++m) {
    Hmm h = Random(4, m, 0.0, 10 + m);
    h.C.row(2).setZero();
    h.C(2, m) = 1.0;  // deterministic row
    CostParams p = MakeCostParams(h);
    std::mt19937_64 rng(m);
    VectorXd f = RandomVector(4, rng);
    VectorXd gamma = p.Gamma(f);
    for (int x = 0; x < 4; ++x) {
      VectorXd mean = VectorXd::Zero(m);
      for (int z = 0; z <= m; ++z) mean += h.C(x, z) * Encode(z, m);
      MatrixXd cov = MatrixXd::Zero(m, m);
      for (int z = 0; z <= m; ++z) {
        VectorXd dev = Encode(z, m) - mean;
        cov += h.C(x, z) * dev * dev.transpose();
      }
      EXPECT_LE((p.R[x] - cov).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LE((p.c.col(x) - mean).cwiseAbs().maxCoeff(), 1e-15);
      EXPECT_GE(Eigen::SelfAdjointEigenSolver<MatrixXd>(p.R[x]).eigenvalues().minCoeff(),
                -1e-14);
      const double ef = h.A.row(x).dot(f);
      double var = 0.0;
      for (int y = 0; y < 4; ++y) var += h.A(x, y) * (f(y) - ef) * (f(y) - ef);
      EXPECT_NEAR(gamma(x), var, 1e-12);
      EXPECT_GE(gamma(x), 0.0);
    }
    EXPECT_TRUE(p.R[2].isZero(1e-15));
    EXPECT_LE(p.Gamma(VectorXd::Constant(4, 3.0)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(ObservationTree, ProbabilitiesAreConsistent) {
  Hmm h = Random(3, 2, 0.0, 3);
  ObservationTree tree(h, 4);
  EXPECT_EQ(tree.size(4), 81);
  for (int t = 0; t < 4; ++t) {
    for (long long n = 0; n < tree.size(t); ++n) {
      double kids = 0.0;
      for (int z = 0; z < 3; ++z) kids += tree.prob(t + 1)(n * 3 + z);
      EXPECT_NEAR(kids, tree.prob(t)(n), 1e-15);
    }
  }
  for (long long n = 0; n < tree.size(4); ++n) {
    VectorXd ref = LeafJoint(h, Symbols(n, 3, 4));
    EXPECT_LE((tree.alpha(4).col(n) - ref).cwiseAbs().maxCoeff(), 1e-15);
  }
  std::vector<int> z = {2, 0, 1};
  EXPECT_EQ(tree.NodeOf(z, 3), 2 * 9 + 0 * 3 + 1);
  EXPECT_THROW(ObservationTree(h, 13), TreeTooLargeError);
}

TEST(Bsde, ConstantTerminalCondition) {
  Hmm h = Random(3, 2, 0.0, 4);
  ObservationTree tree(h, 3);
  CostParams p = MakeCostParams(h);
  AdaptedProcess U = ZeroProcess(tree, 2, 3);
  BsdeSolution sol = BsdeSolveTree(tree, p, U, VectorXd::Constant(3, 1.5));
  for (int t = 0; t <= 3; ++t) {
    EXPECT_LE((sol.Y.levels[t].array() - 1.5).abs().maxCoeff(), 1e-15);
  }
  for (int t = 0; t < 3; ++t) EXPECT_LE(sol.V.levels[t].cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(CostJ(tree, p, U, sol), 0.0, 1e-15);
  DualityCheck dc = CheckDuality(tree, p, U, VectorXd::Constant(3, 1.5));
  EXPECT_NEAR(dc.J, 0.0, 1e-15);
  EXPECT_NEAR(dc.mse, 0.0, 1e-15);
}

TEST(Bsde, MatchesHandEliminationForBinaryAlphabet) {
  std::mt19937_64 rng(5);
  for (int T = 1; T <= 4; ++T) {
    Hmm h = Random(2, 1, 0.0, 50 + T);
    ObservationTree tree(h, T);
    CostParams p = MakeCostParams(h);
    AdaptedProcess U = RandomControl(tree, T, rng);
    VectorXd f = RandomVector(2, rng);
    BsdeSolution sol = BsdeSolveTree(tree, p, U, f);
    VectorXd ref = HandEliminationRoot(h, U, f, 0, 0, T);
    EXPECT_LE((sol.Y.levels[0].col(0) - ref).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Bsde, ResidualVanishesForRandomControls) {
  std::mt19937_64 rng(6);
  for (int k = 0; k < 30; ++k) {
    const int d = 2 + k % 3, m = 1 + k % 2, T = 2 + k % 4;
    Hmm h = Random(d, m, k % 2 ? 0.0 : 0.1, 60 + k);
    ObservationTree tree(h, T);
    CostParams p = MakeCostParams(h);
    AdaptedProcess U = RandomControl(tree, T, rng);
    VectorXd f = RandomVector(d, rng);
    BsdeSolution sol = BsdeSolveTree(tree, p, U, f);
    EXPECT_LE(BsdeResidual(tree, p, U, sol), 1e-12);
    for (long long n = 0; n < tree.size(T); ++n) {
      EXPECT_EQ(sol.Y.levels[T].col(n), f);
    }
  }
}

TEST(Duality, CostEqualsMseOnEnumeratedTrees) {
  std::mt19937_64 rng(7);
  for (int k = 0; k < 100; ++k) {
    const int d = 2 + k % 3, m = 1 + (k / 3) % 2, T = 2 + k % 5;
    Hmm h = Random(d, m, k % 4 == 0 ? 0.0 : 0.05, 100 + k);
    ObservationTree tree(h, T);
    CostParams p = MakeCostParams(h);
    AdaptedProcess U = RandomControl(tree, T, rng);
    VectorXd f = RandomVector(d, rng);
    DualityCheck dc = CheckDuality(tree, p, U, f);
    EXPECT_GE(dc.J, 0.0);
    EXPECT_LE(dc.gap, 1e-10);
    BsdeSolution sol = BsdeSolveTree(tree, p, U, f);
    const double mu_y0 = h.mu.dot(sol.Y.levels[0].col(0));
    EXPECT_NEAR(MseByLeaves(tree, U, mu_y0, f), dc.J, 1e-10);
  }
}

TEST(Estimator, ZeroControlAndTelescoping) {
  std::mt19937_64 rng(8);
  Hmm h = Random(3, 2, 0.0, 9);
  ObservationTree tree(h, 3);
  CostParams p = MakeCostParams(h);
  VectorXd f = RandomVector(3, rng);
  AdaptedProcess zero = ZeroProcess(tree, 2, 3);
  BsdeSolution sol0 = BsdeSolveTree(tree, p, zero, f);
  AdaptedProcess S0 = EstimatorTree(tree, zero, sol0);
  const double c0 = h.mu.dot(sol0.Y.levels[0].col(0));
  for (const MatrixXd& level : S0.levels) {
    EXPECT_LE((level.array() - c0).abs().maxCoeff(), 1e-15);
  }
  AdaptedProcess U = RandomControl(tree, 3, rng);
  BsdeSolution sol = BsdeSolveTree(tree, p, U, f);
  AdaptedProcess S = EstimatorTree(tree, U, sol);
  for (int s = 1; s <= 3; ++s) {
    for (long long n = 0; n < tree.size(s); ++n) {
      const long long parent = n / 3;
      const int z = static_cast<int>(n % 3);
      EXPECT_NEAR(S.levels[s](0, n) - S.levels[s - 1](0, parent),
                  -U.levels[s - 1].col(parent).dot(Encode(z, 2)), 1e-14);
    }
  }
}

TEST(ExtractWeights, ConstantAndBinaryExample) {
  ExtractedWeights c = ExtractWeights(VectorXd::Constant(27, 0.7), 2, 3);
  EXPECT_DOUBLE_EQ(c.constant, 0.7);
  for (const MatrixXd& level : c.U.levels) EXPECT_TRUE(level.isZero(1e-15));
  std::mt19937_64 rng(9);
  VectorXd leaves = RandomVector(8, rng);
  ExtractedWeights w = ExtractWeights(leaves, 1, 3);
  for (long long parent = 0; parent < 4; ++parent) {
    EXPECT_NEAR(w.U.levels[2](0, parent),
                -0.5 * (leaves(2 * parent + 1) - leaves(2 * parent)), 1e-15);
  }
}

TEST(ExtractWeights, RoundTrip) {
  std::mt19937_64 rng(10);
  for (int m = 1; m <= 3; ++m) {
    for (int T = 1; T <= 4; ++T) {
      long long leaves = 1;
      for (int t = 0; t < T; ++t) leaves *= m + 1;
      VectorXd s = RandomVector(static_cast<int>(leaves), rng);
      ExtractedWeights w = ExtractWeights(s, m, T);
      EXPECT_LE((ReconstructLeaves(w.constant, w.U, m) - s).cwiseAbs().maxCoeff(),
                1e-14);
    }
  }
  EXPECT_THROW(ExtractWeights(VectorXd::Zero(5), 1, 2), ArgumentError);
}

// Exact pi_T(f) on every leaf.
VectorXd FilterLeaves(const ObservationTree& tree, const VectorXd& f) {
  const int T = tree.depth();
  MatrixXd post = tree.Posterior(T);
  return post.transpose() * f;
}

TEST(OracleWeights, ReconstructFilterAndAreUnique) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 12; ++k) {
    const int d = 2 + k % 3, m = 1 + k % 2, T = 2 + k % 3;
    Hmm h = Random(d, m, 0.1, 200 + k);
    ObservationTree tree(h, T);
    VectorXd f = RandomVector(d, rng);
    ExtractedWeights w = OracleWeights(tree, f);
    VectorXd target = FilterLeaves(tree, f);
    VectorXd rec = ReconstructLeaves(w.constant, w.U, m);
    EXPECT_LE((rec - target).cwiseAbs().maxCoeff(), 1e-12);
    // Moving any single weight changes some positive-probability leaf.
    for (int t = 0; t < T; ++t) {
      for (long long n = 0; n < tree.size(t); ++n) {
        for (int i = 0; i < m; ++i) {
          ExtractedWeights bumped = w;
          bumped.U.levels[t](i, n) += 1e-3;
          VectorXd r = ReconstructLeaves(bumped.constant, bumped.U, m);
          double worst = 0.0;
          for (long long l = 0; l < tree.size(T); ++l) {
            if (tree.prob(T)(l) > 0.0) worst = std::max(worst, std::abs(r(l) - target(l)));
          }
          EXPECT_GT(worst, 1e-6);
        }
      }
    }
  }
}

TEST(OracleWeights, MinimizeCost) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  Hmm h = Random(3, 1, 0.1, 13);
  ObservationTree tree(h, 4);
  CostParams p = MakeCostParams(h);
  VectorXd f = RandomVector(3, rng);
  ExtractedWeights w = OracleWeights(tree, f);
  const double j0 = CheckDuality(tree, p, w.U, f).J;
  for (int k = 0; k < 50; ++k) {
    AdaptedProcess U = w.U;
    for (MatrixXd& level : U.levels) {
      for (int i = 0; i < level.size(); ++i) level.data()[i] += 0.05 * n(rng);
    }
    EXPECT_LE(j0, CheckDuality(tree, p, U, f).J + 1e-15);
  }
}

TEST(Phi, TrivialCases) {
  Hmm h = Random(4, 2, 0.1, 14);
  CostParams p = MakeCostParams(h);
  std::mt19937_64 rng(15);
  VectorXd y = RandomVector(4, rng);
  MatrixXd v = MatrixXd::Zero(2, 4);
  EXPECT_LE(Phi(y, v, VectorXd::Unit(4, 1), p).cwiseAbs().maxCoeff(), 1e-15);
  VectorXd rho = VectorXd::Constant(4, 0.25);
  EXPECT_LE(Phi(VectorXd::Constant(4, 2.0), v, rho, p).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Phi, FeedbackFormOfOracleWeights) {
  std::mt19937_64 rng(16);
  for (int k = 0; k < 12; ++k) {
    const int d = 2 + k % 3, m = 1 + (k / 2) % 2, T = 2 + k % 3;
    Hmm h = Random(d, m, 0.1, 300 + k);
    ObservationTree tree(h, T);
    CostParams p = MakeCostParams(h);
    VectorXd f = RandomVector(d, rng);
    ExtractedWeights w = OracleWeights(tree, f);
    BsdeSolution sol = BsdeSolveTree(tree, p, w.U, f);
    for (int t = 0; t < T; ++t) {
      MatrixXd post = tree.Posterior(t);
      for (long long n = 0; n < tree.size(t); ++n) {
        if (tree.prob(t)(n) <= 0.0) continue;
        VectorXd phi = Phi(sol.Y.levels[t].col(n), sol.VAt(t, n, m, d),
                           post.col(n), p);
        EXPECT_LE((phi - w.U.levels[t].col(n)).cwiseAbs().maxCoeff(), 1e-8)
            << "t=" << t << " n=" << n;
      }
    }
  }
}

TEST(NodeControl, AgreesWithPhiWhenWeightedRIsInvertible) {
  std::mt19937_64 rng(17);
  Hmm h = Random(3, 2, 0.2, 18);
  CostParams p = MakeCostParams(h);
  VectorXd rho = VectorXd::Constant(3, 1.0 / 3.0);
  MatrixXd g(3, 1);
  g.col(0) = RandomVector(3, rng);
  MatrixXd v(6, 1);
  v.col(0) = RandomVector(6, rng);
  MatrixXd Y;
  MatrixXd U = SolveNodeControl(p, rho, g, v, &Y);
  MatrixXd vm = Eigen::Map<MatrixXd>(v.data(), 2, 3);
  EXPECT_LE((U.col(0) - Phi(Y.col(0), vm, rho, p)).cwiseAbs().maxCoeff(), 1e-12);
  for (int x = 0; x < 3; ++x) {
    EXPECT_NEAR(Y(x, 0), g(x, 0) + p.c.col(x).dot(U.col(0) + vm.col(x)), 1e-13);
  }
}

TEST(FeedbackTree, FilterFeedbackReproducesOracle) {
  Hmm h = Random(3, 1, 0.1, 19);
  ObservationTree tree(h, 4);
  CostParams p = MakeCostParams(h);
  AdaptedProcess rho;
  for (int t = 0; t < 4; ++t) rho.levels.push_back(tree.Posterior(t));
  MatrixXd F = MatrixXd::Identity(3, 3);
  FeedbackSolution fb = SolveFeedbackTree(tree, p, rho, F, 4);
  for (int i = 0; i < 3; ++i) {
    ExtractedWeights w = OracleWeights(tree, F.col(i));
    for (int t = 0; t < 4; ++t) {
      EXPECT_LE((fb.U.levels[t].middleRows(i, 1) - w.U.levels[t]).cwiseAbs().maxCoeff(),
                1e-8);
    }
  }
}

}  // namespace
}  // namespace dualfilter::dual
