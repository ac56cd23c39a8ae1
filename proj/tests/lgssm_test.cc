#include "dualfilter/lgssm.h"

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "dualfilter/bench.h"
#include "dualfilter/errors.h"
#include "dualfilter/random_models.h"

namespace dualfilter::lgssm {
namespace {

LinearGaussianModel Scalar(double a, double c, double q, double r, double s0,
                           double mu0, int T) {
  LinearGaussianModel m;
  m.d = 1;
  m.m = 1;
  m.T = T;
  m.tau = 1;
  m.lags = {MatrixXd::Constant(1, 1, a)};
  m.C = MatrixXd::Constant(1, 1, c);
  m.Q = MatrixXd::Constant(1, 1, q);
  m.R = MatrixXd::Constant(1, 1, r);
  m.Sigma0 = MatrixXd::Constant(1, 1, s0);
  m.mu0 = VectorXd::Constant(1, mu0);
  return m;
}

struct Instance {
  LinearGaussianModel model;
  MatrixXd u;
  VectorXd f;
};

// The instance family of the duality and optimality checks: d <= 4, m <= 3,
// T <= 12, tau cycling through {1, 2, T}; every fourth one time-varying.
std::vector<Instance> RandomInstances(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Instance> out;
  for (int k = 0; k < count; ++k) {
    RandomLinearOptions o;
    o.d = 1 + static_cast<int>(rng() % 4);
    o.m = 1 + static_cast<int>(rng() % 3);
    o.T = 1 + static_cast<int>(rng() % 12);
    const int taus[3] = {1, std::min(2, o.T), o.T};
    o.tau = taus[k % 3];
    o.time_varying = (k % 4 == 3);
    Instance inst;
    inst.model = RandomLinearModel(o, rng);
    inst.u = MatrixXd(o.m, o.T);
    for (int i = 0; i < inst.u.size(); ++i) inst.u.data()[i] = n(rng);
    inst.f = VectorXd(o.d);
    for (int i = 0; i < o.d; ++i) inst.f(i) = n(rng);
    out.push_back(std::move(inst));
  }
  return out;
}

double Rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

// Enumerates chains k = k_0 < k_1 < ... < k_n = t with gaps in 1..min(tau, .)
// and calls visit(chain).
void ForEachChain(int k, int t, int tau,
                  const std::function<void(const std::vector<int>&)>& visit) {
  std::vector<int> chain = {k};
  std::function<void()> rec = [&] {
    const int last = chain.back();
    if (last == t) {
      visit(chain);
      return;
    }
    for (int gap = 1; gap <= tau && last + gap <= t; ++gap) {
      chain.push_back(last + gap);
      rec();
      chain.pop_back();
    }
  };
  rec();
}

// y_0 as the sum over all chains from 0 to a source time t of the transposed
// transition products applied to the source (C^T u_t, or f at t = T).
VectorXd BruteForceY0(const LinearGaussianModel& model, const MatrixXd& u,
                      const VectorXd& f) {
  VectorXd y0 = VectorXd::Zero(model.d);
  for (int t = 0; t <= model.T; ++t) {
    const VectorXd src =
        t == model.T ? f : VectorXd(model.C.transpose() * u.col(t));
    ForEachChain(0, t, model.tau, [&](const std::vector<int>& ch) {
      VectorXd v = src;
      for (int j = static_cast<int>(ch.size()) - 1; j >= 1; --j) {
        v = model.transition(ch[j], ch[j] - ch[j - 1]).transpose() * v;
      }
      y0 += v;
    });
  }
  return y0;
}

// eta_t as the sum over sources k <= t (Sigma0 y_0 or Q y_k) pushed forward
// along every chain k -> t.
MatrixXd UnrolledEta(const LinearGaussianModel& model, const MatrixXd& y) {
  const int tau = model.tau;
  MatrixXd eta = MatrixXd::Zero(model.d, model.T);
  for (int t = 0; t < model.T; ++t) {
    for (int k = 0; k <= t; ++k) {
      const VectorXd src =
          k == 0 ? VectorXd(model.Sigma0 * y.col(0)) : VectorXd(model.Q * y.col(k));
      ForEachChain(k, t, tau, [&](const std::vector<int>& ch) {
        VectorXd v = src;
        for (std::size_t j = 1; j < ch.size(); ++j) {
          v = model.transition(ch[j], ch[j] - ch[j - 1]) * v;
        }
        eta.col(t) += v;
      });
    }
  }
  return eta;
}

TEST(Simulate, NoiseFreeStateIsConstant) {
  LinearGaussianModel m = Scalar(1.0, 1.0, 0.0, 1.0, 0.0, 3.0, 5);
  LinearTrajectory tr = Simulate(m, 7);
  ASSERT_EQ(tr.x.cols(), 6);
  ASSERT_EQ(tr.z.cols(), 6);
  for (int t = 0; t <= 5; ++t) EXPECT_DOUBLE_EQ(tr.x(0, t), 3.0);
}

TEST(Simulate, SecondOrderRecursion) {
  LinearGaussianModel m = Scalar(0.5, 1.0, 0.0, 1.0, 0.0, 1.0, 2);
  m.tau = 2;
  m.lags = {MatrixXd::Constant(1, 1, 0.5), MatrixXd::Constant(1, 1, 0.25)};
  LinearTrajectory tr = Simulate(m, 1);
  EXPECT_DOUBLE_EQ(tr.x(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(tr.x(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(tr.x(0, 2), 0.5);
}

TEST(Simulate, SampleMeanOfFirstStateMatchesMoments) {
  LinearGaussianModel m = Scalar(0.7, 1.0, 0.5, 1.0, 2.0, 1.5, 1);
  const int n = 100000;
  double sum = 0.0;
  for (int k = 0; k < n; ++k) sum += Simulate(m, k).x(0, 1);
  // Var X_1 = a^2 Sigma0 + Q.
  const double sd = std::sqrt(0.49 * 2.0 + 0.5);
  EXPECT_NEAR(sum / n, 0.7 * 1.5, 4.0 * sd / std::sqrt(n));
}

TEST(Simulate, DeterministicPerSeed) {
  std::mt19937_64 rng(3);
  LinearGaussianModel m = RandomLinearModel({3, 2, 6, 2}, rng);
  LinearTrajectory a = Simulate(m, 42), b = Simulate(m, 42);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.z, b.z);
}

TEST(Validate, RejectsBadCovariances) {
  LinearGaussianModel m = Scalar(0.5, 1.0, -1.0, 1.0, 1.0, 0.0, 2);
  EXPECT_THROW(m.Validate(), ModelError);
  m = Scalar(0.5, 1.0, 1.0, 0.0, 1.0, 0.0, 2);
  EXPECT_THROW(m.Validate(), ModelError);
  m = Scalar(0.5, 1.0, 1.0, 1.0, 1.0, 0.0, 2);
  m.tau = 3;
  EXPECT_THROW(m.Validate(), ModelError);
}

TEST(Kalman, UninformativeObservationsGivePrior) {
  std::mt19937_64 rng(5);
  LinearGaussianModel m = RandomLinearModel({3, 2, 5, 2}, rng);
  m.C.setZero();
  VectorXd f = VectorXd::LinSpaced(3, 1.0, -0.5);
  MatrixXd z = MatrixXd::Random(2, 5);
  GaussianPrediction k = KalmanAugmented(m, z, f);
  PriorMoments pm = PropagateMoments(m);
  EXPECT_NEAR(k.mean, f.dot(pm.mean.col(5)), 1e-12);
  EXPECT_NEAR(k.variance, f.dot(pm.cov(5, 5) * f), 1e-12);
}

// Hand-rolled scalar Kalman with the offset convention: correct X_t with
// Z_{t+1}, then predict X_{t+1}.
double ScalarKalmanMean(double z1, double z2, double* variance) {
  double m = 0.5, P = 1.0;
  for (double z : {z1, z2}) {
    const double K = P / (P + 1.0);
    m += K * (z - m);
    P *= 1.0 - K;
    m *= 0.9;
    P = 0.81 * P + 1.0;
  }
  *variance = P;
  return m;
}

TEST(Kalman, MatchesScalarRecursion) {
  LinearGaussianModel m = Scalar(0.9, 1.0, 1.0, 1.0, 1.0, 0.5, 2);
  MatrixXd z(1, 2);
  z << 0.3, -1.2;
  double var = 0.0;
  const double mean = ScalarKalmanMean(0.3, -1.2, &var);
  GaussianPrediction k = KalmanAugmented(m, z, VectorXd::Ones(1));
  EXPECT_NEAR(k.mean, mean, 1e-14);
  EXPECT_NEAR(k.variance, var, 1e-14);
}

TEST(DualBackward, GeometricDecay) {
  LinearGaussianModel m = Scalar(0.5, 1.0, 0.0, 1.0, 1.0, 0.0, 2);
  MatrixXd y = DualBackward(m, MatrixXd::Zero(1, 2), VectorXd::Ones(1));
  EXPECT_DOUBLE_EQ(y(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(y(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(y(0, 2), 1.0);
}

TEST(DualBackward, ZeroInputsGiveZero) {
  std::mt19937_64 rng(8);
  LinearGaussianModel m = RandomLinearModel({3, 2, 4, 4}, rng);
  EXPECT_TRUE(DualBackward(m, MatrixXd::Zero(2, 4), VectorXd::Zero(3)).isZero(0));
}

TEST(DualBackward, MatchesChainExpansionForFullOrder) {
  for (const Instance& in : RandomInstances(30, 11)) {
    if (in.model.tau != in.model.T || in.model.T > 8) continue;
    MatrixXd y = DualBackward(in.model, in.u, in.f);
    EXPECT_TRUE(y.col(in.model.T).isApprox(in.f, 0.0));
    VectorXd y0 = BruteForceY0(in.model, in.u, in.f);
    EXPECT_LE((y.col(0) - y0).cwiseAbs().maxCoeff(),
              1e-12 * std::max(1.0, y0.cwiseAbs().maxCoeff()));
  }
}

TEST(DualBackward, Superposition) {
  std::mt19937_64 rng(9);
  LinearGaussianModel m = RandomLinearModel({3, 2, 6, 2}, rng);
  MatrixXd u1 = MatrixXd::Random(2, 6), u2 = MatrixXd::Random(2, 6);
  VectorXd f1 = VectorXd::Random(3), f2 = VectorXd::Random(3);
  MatrixXd lhs = DualBackward(m, 2.0 * u1 - 3.0 * u2, 2.0 * f1 - 3.0 * f2);
  MatrixXd rhs = 2.0 * DualBackward(m, u1, f1) - 3.0 * DualBackward(m, u2, f2);
  EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  MatrixXd e1 = DualForward(m, DualBackward(m, u1, f1));
  MatrixXd e2 = DualForward(m, DualBackward(m, u2, f2));
  MatrixXd e12 = DualForward(m, DualBackward(m, u1 + u2, f1 + f2));
  EXPECT_LE((e12 - e1 - e2).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DualForward, PurePropagation) {
  LinearGaussianModel m = Scalar(0.5, 1.0, 0.0, 1.0, 1.0, 0.0, 2);
  MatrixXd y = DualBackward(m, MatrixXd::Zero(1, 2), VectorXd::Ones(1));
  MatrixXd eta = DualForward(m, y);
  ASSERT_EQ(eta.cols(), 2);
  EXPECT_DOUBLE_EQ(eta(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(eta(0, 1), 0.125);
}

TEST(DualForward, DeterministicStateNeedsNoCorrection) {
  std::mt19937_64 rng(10);
  LinearGaussianModel m = RandomLinearModel({2, 1, 5, 2}, rng);
  m.Q.setZero();
  m.Sigma0.setZero();
  MatrixXd eta = DualForward(m, DualBackward(m, MatrixXd::Random(1, 5),
                                             VectorXd::Ones(2)));
  EXPECT_TRUE(eta.isZero(0));
  DualSolution sol = DualFilterSolve(m, VectorXd::Ones(2), Direct{});
  EXPECT_LE(sol.u.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(DualForward, MatchesUnrolledSums) {
  for (const Instance& in : RandomInstances(30, 12)) {
    if (in.model.T > 8) continue;
    MatrixXd y = DualBackward(in.model, in.u, in.f);
    MatrixXd eta = DualForward(in.model, y);
    MatrixXd ref = UnrolledEta(in.model, y);
    EXPECT_LE((eta - ref).cwiseAbs().maxCoeff(),
              1e-12 * std::max(1.0, ref.cwiseAbs().maxCoeff()));
  }
}

TEST(DualCost, SingleQuadraticTerm) {
  LinearGaussianModel m = Scalar(0.5, 1.0, 0.0, 1.0, 1.0, 0.0, 2);
  EXPECT_DOUBLE_EQ(DualCost(m, MatrixXd::Zero(1, 2), VectorXd::Ones(1)), 0.03125);
  EXPECT_DOUBLE_EQ(DualCost(m, MatrixXd::Zero(1, 2), VectorXd::Zero(1)), 0.0);
}

TEST(MseExact, UninformativeAndDeterministicCases) {
  std::mt19937_64 rng(13);
  LinearGaussianModel m = RandomLinearModel({3, 2, 4, 2}, rng);
  VectorXd f = VectorXd::Random(3);
  LinearGaussianModel blind = m;
  blind.C.setZero();
  PriorMoments pm = PropagateMoments(blind);
  EXPECT_NEAR(MseExact(blind, MatrixXd::Zero(2, 4), f), f.dot(pm.cov(4, 4) * f),
              1e-12);
  LinearGaussianModel det = m;
  det.Q.setZero();
  det.Sigma0.setZero();
  EXPECT_NEAR(MseExact(det, MatrixXd::Zero(2, 4), f), 0.0, 1e-14);
}

TEST(MseExact, MatchesMonteCarlo) {
  std::mt19937_64 rng(14);
  LinearGaussianModel m = RandomLinearModel({2, 1, 4, 2}, rng);
  MatrixXd u = MatrixXd::Random(1, 4);
  VectorXd f = VectorXd::Random(2);
  const double mu_y0 = m.mu0.dot(DualBackward(m, u, f).col(0));
  const int n = 40000;
  double sum = 0.0, sum2 = 0.0;
  for (int k = 0; k < n; ++k) {
    LinearTrajectory tr = Simulate(m, 1000 + k);
    double s = mu_y0;
    for (int t = 1; t <= 4; ++t) s -= u.col(t - 1).dot(tr.z.col(t - 1));
    const double e = f.dot(tr.x.col(4)) - s;
    sum += e * e;
    sum2 += e * e * e * e;
  }
  const double mean = sum / n;
  const double sd = std::sqrt((sum2 / n - mean * mean) / n);
  EXPECT_NEAR(MseExact(m, u, f), mean, 5.0 * sd);
}

TEST(Duality, TwiceCostEqualsMse) {
  for (const Instance& in : RandomInstances(100, 21)) {
    const double mse = MseExact(in.model, in.u, in.f);
    EXPECT_LE(std::abs(2.0 * DualCost(in.model, in.u, in.f) - mse) / mse, 1e-10);
  }
}

TEST(DualFilterSolve, BlindModelHasZeroControl) {
  std::mt19937_64 rng(15);
  LinearGaussianModel m = RandomLinearModel({3, 2, 5, 1}, rng);
  m.C.setZero();
  DualSolution sol = DualFilterSolve(m, VectorXd::Ones(3), Direct{});
  EXPECT_TRUE(sol.u.isZero(0));
  PriorMoments pm = PropagateMoments(m);
  GaussianPrediction p = PredictLinear(m, sol, MatrixXd::Random(2, 5));
  EXPECT_NEAR(p.mean, pm.mean.col(5).sum(), 1e-12);
}

TEST(DualFilterSolve, ScalarWeightsEqualKalmanCoefficients) {
  LinearGaussianModel m = Scalar(0.9, 1.0, 1.0, 1.0, 1.0, 0.5, 2);
  DualSolution sol = DualFilterSolve(m, VectorXd::Ones(1), Direct{});
  double v = 0.0;
  const double base = ScalarKalmanMean(0.0, 0.0, &v);
  EXPECT_NEAR(-sol.u(0, 0), ScalarKalmanMean(1.0, 0.0, &v) - base, 1e-14);
  EXPECT_NEAR(-sol.u(0, 1), ScalarKalmanMean(0.0, 1.0, &v) - base, 1e-14);
}

TEST(DualFilterSolve, FixedPointAgreesWithDirect) {
  for (const Instance& in : RandomInstances(100, 22)) {
    DualSolution direct = DualFilterSolve(in.model, in.f, Direct{});
    EXPECT_TRUE(direct.y.col(in.model.T).isApprox(in.f, 0.0));
    EXPECT_LE(direct.residual, 1e-10);
    // The update-size stop rule bounds the error by tol k / (1 - k) for a
    // contraction factor k, so the comparison runs with a tighter tol.
    FixedPoint fp;
    fp.tol = 1e-13;
    fp.max_iter = 100000;
    DualSolution it;
    for (;;) {
      try {
        it = DualFilterSolve(in.model, in.f, fp);
        break;
      } catch (const ConvergenceError&) {
        fp.damping *= 0.5;
        ASSERT_GT(fp.damping, 1e-3);
      }
    }
    EXPECT_LE((it.u - direct.u).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(DualFilterSolve, NonConvergenceCarriesResidual) {
  std::mt19937_64 rng(16);
  LinearGaussianModel m = RandomLinearModel({2, 1, 6, 1}, rng);
  FixedPoint fp;
  fp.max_iter = 1;
  try {
    DualFilterSolve(m, VectorXd::Ones(2), fp);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.residual(), 0.0);
    EXPECT_EQ(e.iterations(), 1);
  }
  fp.damping = 0.0;
  EXPECT_THROW(DualFilterSolve(m, VectorXd::Ones(2), fp), ArgumentError);
}

TEST(DualFilterSolve, FirstVariationVanishes) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  for (const Instance& in : RandomInstances(10, 23)) {
    DualSolution sol = DualFilterSolve(in.model, in.f, Direct{});
    const double j0 = DualCost(in.model, sol.u, in.f);
    for (int k = 0; k < 50; ++k) {
      MatrixXd du(in.model.m, in.model.T);
      for (int i = 0; i < du.size(); ++i) du.data()[i] = n(rng);
      du *= 1e-4 / du.norm();
      const double j1 = DualCost(in.model, sol.u + du, in.f);
      const double second = DualCost(in.model, du, VectorXd::Zero(in.model.d));
      EXPECT_GE(j1 - j0, -1e-15 * std::max(1.0, j0));
      EXPECT_NEAR(j1 - j0, second, 1e-12 * std::max(1.0, j0));
    }
  }
}

TEST(PredictLinear, MatchesKalmanOnRandomInstances) {
  std::mt19937_64 rng(18);
  for (const Instance& in : RandomInstances(100, 24)) {
    DualSolution sol = DualFilterSolve(in.model, in.f, Direct{});
    MatrixXd z = Simulate(in.model, rng()).z.leftCols(in.model.T);
    GaussianPrediction dual = PredictLinear(in.model, sol, z);
    GaussianPrediction kal = KalmanAugmented(in.model, z, in.f);
    EXPECT_LE(Rel(dual.mean, kal.mean), 1e-8);
    EXPECT_LE(Rel(dual.variance, kal.variance), 1e-8);
    EXPECT_GE(dual.variance, 0.0);
  }
}

TEST(PredictLinear, TrivialCases) {
  std::mt19937_64 rng(19);
  LinearGaussianModel m = RandomLinearModel({3, 2, 5, 2}, rng);
  DualSolution zero = DualFilterSolve(m, VectorXd::Zero(3), Direct{});
  GaussianPrediction p = PredictLinear(m, zero, MatrixXd::Random(2, 5));
  EXPECT_NEAR(p.mean, 0.0, 1e-14);
  EXPECT_NEAR(p.variance, 0.0, 1e-14);
  DualSolution sol = DualFilterSolve(m, VectorXd::Ones(3), Direct{});
  GaussianPrediction q = PredictLinear(m, sol, MatrixXd::Zero(2, 5));
  EXPECT_DOUBLE_EQ(q.mean, m.mu0.dot(sol.y.col(0)));
  EXPECT_TRUE(q.weights.isApprox(-sol.u, 0.0));
}

TEST(PredictLinear, RejectsNonOptimalSolution) {
  std::mt19937_64 rng(20);
  LinearGaussianModel m = RandomLinearModel({2, 1, 4, 1}, rng);
  DualSolution sol = DualFilterSolve(m, VectorXd::Ones(2), Direct{});
  sol.u(0, 0) += 0.1;
  EXPECT_THROW(PredictLinear(m, sol, MatrixXd::Zero(1, 4)), ArgumentError);
}

TEST(Bench, LogLogSlopeOfExactPowerLaw) {
  std::vector<double> x = {64, 128, 256, 512}, y;
  for (double v : x) y.push_back(3.0 * v * v);
  SlopeFit fit = FitLogLogSlope(x, y);
  EXPECT_NEAR(fit.slope, 2.0, 1e-12);
  EXPECT_NEAR(fit.ci_low, 2.0, 1e-9);
  EXPECT_NEAR(fit.ci_high, 2.0, 1e-9);
}

TEST(Bench, RowsAndLinearMemory) {
  BenchConfig c;
  c.horizons = {8, 16};
  c.repeats = 1;
  c.min_seconds = 0.0;
  std::vector<BenchRow> rows = BenchComplexity(c);
  ASSERT_EQ(rows.size(), 4u);
  std::vector<std::size_t> dual_bytes;
  for (const BenchRow& r : rows) {
    EXPECT_GT(r.seconds, 0.0);
    if (r.method == "dual_layer") dual_bytes.push_back(r.bytes);
  }
  ASSERT_EQ(dual_bytes.size(), 2u);
  // 8 (d(T+1) + dT + mT) with d = 2, m = 1.
  EXPECT_EQ(dual_bytes[0], 8u * (2 * 9 + 2 * 8 + 8));
  EXPECT_EQ(dual_bytes[1], 8u * (2 * 17 + 2 * 16 + 16));
}

}  // namespace
}  // namespace dualfilter::lgssm
