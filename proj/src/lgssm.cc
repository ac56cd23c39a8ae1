#include "dualfilter/lgssm.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>

#include <Eigen/Sparse>

#include "dualfilter/errors.h"
#include "dualfilter/linalg.h"

namespace dualfilter::lgssm {
namespace {

void CheckShape(const MatrixXd& M, int rows, int cols, const char* name) {
  if (M.rows() != rows || M.cols() != cols) {
    throw ModelError(std::string(name) + " has shape " +
                     std::to_string(M.rows()) + "x" + std::to_string(M.cols()) +
                     ", expected " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

void CheckControl(const LinearGaussianModel& model, const MatrixXd& u) {
  if (u.rows() != model.m || u.cols() != model.T) {
    throw ArgumentError("control sequence must be m x T (" +
                        std::to_string(model.m) + "x" +
                        std::to_string(model.T) + "), got " +
                        std::to_string(u.rows()) + "x" +
                        std::to_string(u.cols()));
  }
}

void CheckTerminal(const LinearGaussianModel& model, const VectorXd& f) {
  if (f.size() != model.d) {
    throw ArgumentError("terminal condition must have length d");
  }
}

}  // namespace

const MatrixXd& LinearGaussianModel::transition(int t, int s) const {
  if (time_varying()) return table[t - 1][s - 1];
  return lags[s - 1];
}

void LinearGaussianModel::Validate() const {
  if (d < 1 || m < 1) throw ModelError("dimensions d and m must be positive");
  if (T < 1) throw ModelError("horizon T must be positive");
  if (tau < 1 || tau > T) throw ModelError("order tau must satisfy 1<=tau<=T");
  if (time_varying()) {
    if (static_cast<int>(table.size()) != T) {
      throw ModelError("time-varying table must have T rows");
    }
    for (int t = 1; t <= T; ++t) {
      if (static_cast<int>(table[t - 1].size()) < std::min(tau, t)) {
        throw ModelError("time-varying table row " + std::to_string(t) +
                         " has fewer than min(tau,t) lags");
      }
      for (int s = 1; s <= std::min(tau, t); ++s) {
        CheckShape(table[t - 1][s - 1], d, d, "A_{t,s}");
      }
    }
  } else {
    if (static_cast<int>(lags.size()) < tau) {
      throw ModelError("need tau transition matrices, got " +
                       std::to_string(lags.size()));
    }
    for (int s = 0; s < tau; ++s) CheckShape(lags[s], d, d, "A_s");
  }
  CheckShape(C, m, d, "C");
  CheckShape(Q, d, d, "Q");
  CheckShape(R, m, m, "R");
  CheckShape(Sigma0, d, d, "Sigma0");
  if (mu0.size() != d) throw ModelError("mu0 must have length d");
  if (!IsSymmetric(Q, 1e-10)) throw ModelError("Q is not symmetric");
  if (!IsSymmetric(R, 1e-10)) throw ModelError("R is not symmetric");
  if (!IsSymmetric(Sigma0, 1e-10)) throw ModelError("Sigma0 is not symmetric");
  PsdFactor(Q, "Q");
  PsdFactor(Sigma0, "Sigma0");
  Eigen::LLT<MatrixXd> llt(R);
  if (llt.info() != Eigen::Success || MinEigenvalue(R) <= 0.0) {
    throw ModelError("R must be positive definite");
  }
}

LinearTrajectory Simulate(const LinearGaussianModel& model,
                          std::uint64_t seed) {
  model.Validate();
  const int d = model.d, m = model.m, T = model.T;
  MatrixXd L0 = PsdFactor(model.Sigma0, "Sigma0");
  MatrixXd LQ = PsdFactor(model.Q, "Q");
  MatrixXd LR = PsdFactor(model.R, "R");

  // Three independent streams for X_0, B and W.
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32)};
  std::array<std::uint64_t, 3> keys;
  seq.generate(keys.begin(), keys.end());
  std::mt19937_64 init_rng(keys[0]), state_rng(keys[1]), obs_rng(keys[2]);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](std::mt19937_64& rng, int n) {
    VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = normal(rng);
    return v;
  };

  LinearTrajectory traj;
  traj.seed = seed;
  traj.x.resize(d, T + 1);
  traj.z.resize(m, T + 1);
  traj.x.col(0) = model.mu0 + L0 * draw(init_rng, d);
  for (int t = 0; t < T; ++t) {
    VectorXd next = LQ * draw(state_rng, d);
    for (int s = 1; s <= std::min(model.tau, t + 1); ++s) {
      next.noalias() += model.transition(t + 1, s) * traj.x.col(t + 1 - s);
    }
    traj.x.col(t + 1) = next;
  }
  for (int t = 0; t <= T; ++t) {
    traj.z.col(t) = model.C * traj.x.col(t) + LR * draw(obs_rng, m);
  }
  return traj;
}

GaussianPrediction KalmanAugmented(const LinearGaussianModel& model,
                                   const MatrixXd& z_path, const VectorXd& f) {
  model.Validate();
  CheckTerminal(model, f);
  const int d = model.d, T = model.T;
  if (z_path.rows() != model.m || z_path.cols() < T) {
    throw ArgumentError("observation path must be m x T");
  }

  // Window blocks are newest first: block j holds X_{t-j}.
  VectorXd mean = model.mu0;
  MatrixXd P = model.Sigma0;
  int blocks = 1;
  for (int t = 0; t < T; ++t) {
    // Correct with Z_{t+1} = C X_t + W_{t+1}.
    MatrixXd PHt = P.leftCols(d) * model.C.transpose();  // (kd) x m
    MatrixXd S = model.C * PHt.topRows(d) + model.R;
    Eigen::LLT<MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) {
      throw NumericError("innovation covariance is not positive definite");
    }
    MatrixXd K = llt.solve(PHt.transpose()).transpose();
    VectorXd innovation = z_path.col(t) - model.C * mean.head(d);
    mean.noalias() += K * innovation;
    P.noalias() -= K * PHt.transpose();
    P = 0.5 * (P + P.transpose()).eval();

    // Predict X_{t+1} from the window.
    const int lags = std::min(model.tau, t + 1);
    const int kept = std::min(model.tau, t + 2) - 1;  // old blocks retained
    MatrixXd G = MatrixXd::Zero(d, blocks * d);       // Cov(X_{t+1}, window)
    VectorXd new_mean = VectorXd::Zero(d);
    for (int s = 1; s <= lags; ++s) {
      const MatrixXd& A = model.transition(t + 1, s);
      G.noalias() += A * P.middleRows((s - 1) * d, d);
      new_mean.noalias() += A * mean.segment((s - 1) * d, d);
    }
    MatrixXd top = model.Q;
    for (int s = 1; s <= lags; ++s) {
      top.noalias() +=
          model.transition(t + 1, s) * G.middleCols((s - 1) * d, d).transpose();
    }
    const int next_blocks = kept + 1;
    MatrixXd Pn(next_blocks * d, next_blocks * d);
    VectorXd mn(next_blocks * d);
    Pn.topLeftCorner(d, d) = 0.5 * (top + top.transpose());
    if (kept > 0) {
      Pn.block(0, d, d, kept * d) = G.leftCols(kept * d);
      Pn.block(d, 0, kept * d, d) = G.leftCols(kept * d).transpose();
      Pn.bottomRightCorner(kept * d, kept * d) =
          P.topLeftCorner(kept * d, kept * d);
      mn.tail(kept * d) = mean.head(kept * d);
    }
    mn.head(d) = new_mean;
    P = std::move(Pn);
    mean = std::move(mn);
    blocks = next_blocks;
  }

  GaussianPrediction out;
  out.mean = f.dot(mean.head(d));
  out.variance = f.dot(P.topLeftCorner(d, d) * f);
  return out;
}

MatrixXd DualBackward(const LinearGaussianModel& model, const MatrixXd& u,
                      const VectorXd& f) {
  CheckControl(model, u);
  CheckTerminal(model, f);
  const int T = model.T;
  MatrixXd y(model.d, T + 1);
  y.col(T) = f;
  const MatrixXd Ct = model.C.transpose();
  for (int t = T - 1; t >= 0; --t) {
    auto yt = y.col(t);
    yt.noalias() = Ct * u.col(t);
    for (int s = 1; s <= std::min(model.tau, T - t); ++s) {
      yt.noalias() += model.transition(t + s, s).transpose() * y.col(t + s);
    }
  }
  return y;
}

MatrixXd DualForward(const LinearGaussianModel& model, const MatrixXd& y) {
  if (y.rows() != model.d || y.cols() != model.T + 1) {
    throw ArgumentError("dual state must be d x (T+1)");
  }
  const int T = model.T;
  MatrixXd eta(model.d, T);
  eta.col(0).noalias() = model.Sigma0 * y.col(0);
  for (int t = 1; t < T; ++t) {
    auto et = eta.col(t);
    et.noalias() = model.Q * y.col(t);
    for (int s = 1; s <= std::min(model.tau, t); ++s) {
      et.noalias() += model.transition(t, s) * eta.col(t - s);
    }
  }
  return eta;
}

double DualCost(const LinearGaussianModel& model, const MatrixXd& u,
                const VectorXd& f) {
  MatrixXd y = DualBackward(model, u, f);
  double total = y.col(0).dot(model.Sigma0 * y.col(0));
  for (int t = 0; t < model.T; ++t) {
    total += y.col(t + 1).dot(model.Q * y.col(t + 1));
    total += u.col(t).dot(model.R * u.col(t));
  }
  return 0.5 * total;
}

PriorMoments PropagateMoments(const LinearGaussianModel& model) {
  model.Validate();
  const int d = model.d, T = model.T, n = T + 1;
  PriorMoments pm;
  pm.T = T;
  pm.mean.resize(d, n);
  pm.history.assign(static_cast<std::size_t>(n) * n, MatrixXd::Zero(d, d));
  auto at = [&](int i, int j) -> MatrixXd& { return pm.history[i * n + j]; };
  pm.mean.col(0) = model.mu0;
  at(0, 0) = model.Sigma0;
  for (int t = 0; t < T; ++t) {
    const int k = t + 1;
    VectorXd mk = VectorXd::Zero(d);
    for (int s = 1; s <= std::min(model.tau, k); ++s) {
      mk.noalias() += model.transition(k, s) * pm.mean.col(k - s);
    }
    pm.mean.col(k) = mk;
    // Cov(X_k, X_j) for j < k.
    for (int j = 0; j < k; ++j) {
      MatrixXd c = MatrixXd::Zero(d, d);
      for (int s = 1; s <= std::min(model.tau, k); ++s) {
        c.noalias() += model.transition(k, s) * at(k - s, j);
      }
      at(k, j) = c;
      at(j, k) = c.transpose();
    }
    MatrixXd c = model.Q;
    for (int s = 1; s <= std::min(model.tau, k); ++s) {
      c.noalias() += model.transition(k, s) * at(k - s, k);
    }
    at(k, k) = 0.5 * (c + c.transpose());
  }
  return pm;
}

double MseExact(const LinearGaussianModel& model, const MatrixXd& u,
                const VectorXd& f) {
  CheckControl(model, u);
  CheckTerminal(model, f);
  const int T = model.T;
  PriorMoments pm = PropagateMoments(model);
  MatrixXd y = DualBackward(model, u, f);

  // e = f^T X_T - mu0^T y_0 + sum_t u_{t-1}^T (C X_{t-1} + W_t)
  //   = sum_j a_j^T X_j + sum_t u_{t-1}^T W_t - mu0^T y_0.
  std::vector<VectorXd> a(T + 1, VectorXd::Zero(model.d));
  a[T] += f;
  for (int t = 1; t <= T; ++t) a[t - 1] += model.C.transpose() * u.col(t - 1);

  double mean = -model.mu0.dot(y.col(0));
  for (int j = 0; j <= T; ++j) mean += a[j].dot(pm.mean.col(j));
  double var = 0.0;
  for (int i = 0; i <= T; ++i) {
    for (int j = 0; j <= T; ++j) var += a[i].dot(pm.cov(i, j) * a[j]);
  }
  for (int t = 0; t < T; ++t) var += u.col(t).dot(model.R * u.col(t));
  return var + mean * mean;
}

MatrixXd DualCostGradient(const LinearGaussianModel& model, const MatrixXd& u,
                          const VectorXd& f) {
  MatrixXd y = DualBackward(model, u, f);
  MatrixXd eta = DualForward(model, y);
  return model.C * eta + model.R * u;
}

MatrixXd DualLayer(const LinearGaussianModel& model, const MatrixXd& u,
                   const VectorXd& f, double damping, MatrixXd* y,
                   MatrixXd* eta) {
  *y = DualBackward(model, u, f);
  *eta = DualForward(model, *y);
  MatrixXd target = -model.R.llt().solve(model.C * *eta);
  return (1.0 - damping) * u + damping * target;
}

double OptimalityResidual(const LinearGaussianModel& model, const MatrixXd& u,
                          const MatrixXd& eta) {
  MatrixXd r = u + model.R.llt().solve(model.C * eta);
  return r.size() == 0 ? 0.0 : r.cwiseAbs().maxCoeff();
}

namespace {

DualSolution SolveFixedPoint(const LinearGaussianModel& model,
                             const VectorXd& f, const FixedPoint& opts) {
  if (!(opts.damping > 0.0 && opts.damping <= 1.0)) {
    throw ArgumentError("damping must lie in (0, 1]");
  }
  DualSolution sol;
  sol.f = f;
  sol.u = MatrixXd::Zero(model.m, model.T);
  double change = 0.0;
  for (int it = 1; it <= opts.max_iter; ++it) {
    MatrixXd next = DualLayer(model, sol.u, f, opts.damping, &sol.y, &sol.eta);
    change = (next - sol.u).cwiseAbs().maxCoeff();
    sol.u = std::move(next);
    sol.iterations = it;
    if (!std::isfinite(change) || change > 1e150) break;
    if (change < opts.tol) {
      sol.y = DualBackward(model, sol.u, f);
      sol.eta = DualForward(model, sol.y);
      sol.residual = OptimalityResidual(model, sol.u, sol.eta);
      sol.optimal = true;
      return sol;
    }
  }
  throw ConvergenceError(
      "layer iteration did not converge; retry with smaller damping", change,
      sol.iterations);
}

DualSolution SolveDirect(const LinearGaussianModel& model, const VectorXd& f) {
  const int d = model.d, m = model.m, T = model.T;
  const int ny = T * d, ne = T * d, nu = T * m, n = ny + ne + nu;
  auto yi = [&](int t) { return t * d; };
  auto ei = [&](int t) { return ny + t * d; };
  auto ui = [&](int t) { return ny + ne + t * m; };

  std::vector<Eigen::Triplet<double>> trip;
  VectorXd rhs = VectorXd::Zero(n);
  auto add_block = [&](int r0, int c0, const MatrixXd& B, double sign) {
    for (int i = 0; i < B.rows(); ++i) {
      for (int j = 0; j < B.cols(); ++j) {
        if (B(i, j) != 0.0) trip.emplace_back(r0 + i, c0 + j, sign * B(i, j));
      }
    }
  };
  const MatrixXd Id = MatrixXd::Identity(d, d);
  // Backward rows: y_t - sum_s A^T y_{t+s} - C^T u_t = 0, y_T = f on the rhs.
  for (int t = 0; t < T; ++t) {
    add_block(yi(t), yi(t), Id, 1.0);
    for (int s = 1; s <= std::min(model.tau, T - t); ++s) {
      MatrixXd At = model.transition(t + s, s).transpose();
      if (t + s == T) {
        rhs.segment(yi(t), d) += At * f;
      } else {
        add_block(yi(t), yi(t + s), At, -1.0);
      }
    }
    add_block(yi(t), ui(t), model.C.transpose(), -1.0);
  }
  // Forward rows.
  for (int t = 0; t < T; ++t) {
    add_block(ei(t), ei(t), Id, 1.0);
    if (t == 0) {
      add_block(ei(0), yi(0), model.Sigma0, -1.0);
      continue;
    }
    for (int s = 1; s <= std::min(model.tau, t); ++s) {
      add_block(ei(t), ei(t - s), model.transition(t, s), -1.0);
    }
    add_block(ei(t), yi(t), model.Q, -1.0);
  }
  // Stationarity rows: C eta_t + R u_t = 0.
  for (int t = 0; t < T; ++t) {
    add_block(ui(t), ei(t), model.C, 1.0);
    add_block(ui(t), ui(t), model.R, 1.0);
  }
  Eigen::SparseMatrix<double> K(n, n);
  K.setFromTriplets(trip.begin(), trip.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(K);
  if (lu.info() != Eigen::Success) {
    throw NumericError("stationarity system is singular");
  }
  VectorXd sol_vec = lu.solve(rhs);
  if (lu.info() != Eigen::Success) {
    throw NumericError("stationarity solve failed");
  }

  DualSolution sol;
  sol.f = f;
  sol.u = Eigen::Map<const MatrixXd>(sol_vec.data() + ny + ne, m, T);
  sol.y = DualBackward(model, sol.u, f);
  sol.eta = DualForward(model, sol.y);
  sol.residual = OptimalityResidual(model, sol.u, sol.eta);
  sol.optimal = true;
  sol.iterations = 1;
  return sol;
}

}  // namespace

DualSolution DualFilterSolve(const LinearGaussianModel& model,
                             const VectorXd& f, const SolveMethod& method) {
  model.Validate();
  CheckTerminal(model, f);
  if (const auto* fp = std::get_if<FixedPoint>(&method)) {
    return SolveFixedPoint(model, f, *fp);
  }
  return SolveDirect(model, f);
}

GaussianPrediction PredictLinear(const LinearGaussianModel& model,
                                 const DualSolution& sol,
                                 const MatrixXd& z_path, double residual_tol) {
  CheckControl(model, sol.u);
  if (z_path.rows() != model.m || z_path.cols() < model.T) {
    throw ArgumentError("observation path must be m x T");
  }
  MatrixXd y = DualBackward(model, sol.u, sol.f);
  MatrixXd eta = DualForward(model, y);
  double residual = OptimalityResidual(model, sol.u, eta);
  double scale = std::max(1.0, sol.u.size() ? sol.u.cwiseAbs().maxCoeff() : 0.0);
  if (!sol.optimal || residual > residual_tol * scale) {
    throw ArgumentError("dual solution is not optimal (residual " +
                        std::to_string(residual) + ")");
  }
  GaussianPrediction out;
  out.mean = model.mu0.dot(y.col(0));
  for (int t = 1; t <= model.T; ++t) {
    out.mean -= sol.u.col(t - 1).dot(z_path.col(t - 1));
  }
  out.variance = 2.0 * DualCost(model, sol.u, sol.f);
  out.weights = -sol.u;
  return out;
}

std::size_t DualLayerBytes(const LinearGaussianModel& model) {
  std::size_t doubles = static_cast<std::size_t>(model.d) * (model.T + 1) +
                        static_cast<std::size_t>(model.d) * model.T +
                        static_cast<std::size_t>(model.m) * model.T;
  return doubles * sizeof(double);
}

}  // namespace dualfilter::lgssm
