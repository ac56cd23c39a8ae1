#include "dualfilter/random_models.h"

#include <algorithm>

#include <Eigen/Dense>

namespace dualfilter {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd Gaussian(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixXd M(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) M(i, j) = n(rng);
  }
  return M;
}

double SpectralNorm(const MatrixXd& M) {
  return Eigen::JacobiSVD<MatrixXd>(M).singularValues()(0);
}

std::vector<MatrixXd> RandomLags(int d, int count, double total,
                                 std::mt19937_64& rng) {
  std::vector<MatrixXd> lags;
  for (int s = 0; s < count; ++s) {
    MatrixXd A = Gaussian(d, d, rng);
    const double norm = SpectralNorm(A);
    lags.push_back(norm > 0.0 ? A * (total / count / norm) : A);
  }
  return lags;
}

VectorXd StochasticRow(int n, double floor, std::mt19937_64& rng) {
  std::exponential_distribution<double> expo(1.0);
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = expo(rng);
  v /= v.sum();
  return (1.0 - floor) * v + VectorXd::Constant(n, floor / n);
}

}  // namespace

lgssm::LinearGaussianModel RandomLinearModel(const RandomLinearOptions& opts,
                                             std::mt19937_64& rng) {
  lgssm::LinearGaussianModel model;
  model.d = opts.d;
  model.m = opts.m;
  model.T = opts.T;
  model.tau = opts.tau;
  if (opts.time_varying) {
    for (int t = 1; t <= opts.T; ++t) {
      model.table.push_back(
          RandomLags(opts.d, std::min(opts.tau, t), opts.lag_norm, rng));
    }
  } else {
    model.lags = RandomLags(opts.d, opts.tau, opts.lag_norm, rng);
  }
  model.C = Gaussian(opts.m, opts.d, rng);
  const MatrixXd gq = Gaussian(opts.d, opts.d, rng);
  model.Q = gq * gq.transpose() / opts.d;
  const MatrixXd gr = Gaussian(opts.m, opts.m, rng);
  model.R = MatrixXd::Identity(opts.m, opts.m) + gr * gr.transpose() / opts.m;
  model.mu0 = Gaussian(opts.d, 1, rng);
  const MatrixXd gs = Gaussian(opts.d, opts.d, rng);
  model.Sigma0 = gs * gs.transpose() / opts.d;
  model.Validate();
  return model;
}

hmm::Hmm RandomHmm(const RandomHmmOptions& opts, std::mt19937_64& rng) {
  hmm::Hmm h;
  h.d = opts.d;
  h.m = opts.m;
  h.A.resize(opts.d, opts.d);
  h.C.resize(opts.d, opts.m + 1);
  for (int x = 0; x < opts.d; ++x) {
    h.A.row(x) = StochasticRow(opts.d, opts.floor, rng).transpose();
    h.C.row(x) = StochasticRow(opts.m + 1, opts.floor, rng).transpose();
  }
  h.mu = StochasticRow(opts.d, opts.floor, rng);
  // Exact unit row sums after the mixing arithmetic.
  for (int x = 0; x < opts.d; ++x) {
    h.A.row(x) /= h.A.row(x).sum();
    h.C.row(x) /= h.C.row(x).sum();
  }
  h.mu /= h.mu.sum();
  h.Validate();
  return h;
}

}  // namespace dualfilter
