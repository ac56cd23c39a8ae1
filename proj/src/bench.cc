#include "dualfilter/bench.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include <boost/math/distributions/students_t.hpp>

#include "dualfilter/errors.h"
#include "dualfilter/lgssm.h"
#include "dualfilter/random_models.h"
#include "dualfilter/rng.h"

namespace dualfilter::lgssm {
namespace {

template <typename F>
double TimePerCall(F&& call, double min_seconds) {
  using Clock = std::chrono::steady_clock;
  int calls = 0;
  const auto start = Clock::now();
  double elapsed = 0.0;
  do {
    call();
    ++calls;
    elapsed = std::chrono::duration<double>(Clock::now() - start).count();
  } while (elapsed < min_seconds);
  return elapsed / calls;
}

double Median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<BenchRow> BenchComplexity(const BenchConfig& config) {
  if (config.repeats < 1) throw ArgumentError("repeats must be positive");
  std::vector<BenchRow> rows;
  for (int d : config.dims) {
    for (int T : config.horizons) {
      std::mt19937_64 rng(DeriveSeed(config.seed, (std::uint64_t(d) << 32) | T));
      RandomLinearOptions opts;
      opts.d = d;
      opts.m = 1;
      opts.T = T;
      opts.tau = T;
      const LinearGaussianModel model = RandomLinearModel(opts, rng);
      const Eigen::VectorXd f = Eigen::VectorXd::Ones(d);
      const Eigen::MatrixXd u = Eigen::MatrixXd::Zero(model.m, T);
      const LinearTrajectory traj = Simulate(model, DeriveSeed(config.seed, T));
      const Eigen::MatrixXd z = traj.z.leftCols(T);

      std::vector<double> layer, solve, kalman;
      Eigen::MatrixXd y, eta;
      volatile double sink = 0.0;
      for (int r = 0; r < config.repeats; ++r) {
        layer.push_back(TimePerCall(
            [&] { sink = sink + DualLayer(model, u, f, 1.0, &y, &eta)(0, 0); },
            config.min_seconds));
        kalman.push_back(TimePerCall(
            [&] { sink = sink + KalmanAugmented(model, z, f).mean; },
            config.min_seconds));
        if (config.full_solve) {
          solve.push_back(TimePerCall(
              [&] { sink = sink + DualFilterSolve(model, f, Direct{}).u(0, 0); },
              config.min_seconds));
        }
      }
      const std::size_t layer_bytes = DualLayerBytes(model);
      // Kalman keeps the stacked mean and covariance of the window.
      const std::size_t n = static_cast<std::size_t>(d) * T;
      const std::size_t kalman_bytes = (n + n * n) * sizeof(double);
      rows.push_back({"dual_layer", d, T, Median(layer), layer_bytes});
      if (config.full_solve) {
        rows.push_back({"dual_solve", d, T, Median(solve), layer_bytes});
      }
      rows.push_back({"kalman_augmented", d, T, Median(kalman), kalman_bytes});
    }
  }
  return rows;
}

SlopeFit FitLogLogSlope(const std::vector<double>& x,
                        const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) {
    throw ArgumentError("slope fit needs at least two matching points");
  }
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] <= 0.0 || y[i] <= 0.0) {
      throw ArgumentError("log-log fit needs positive data");
    }
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (n > 2) {
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = ly[i] - fit.intercept - fit.slope * lx[i];
      sse += r * r;
    }
    fit.stderr_slope = std::sqrt(sse / (n - 2) / sxx);
    const boost::math::students_t dist(static_cast<double>(n - 2));
    const double q = boost::math::quantile(boost::math::complement(dist, 0.025));
    fit.ci_low = fit.slope - q * fit.stderr_slope;
    fit.ci_high = fit.slope + q * fit.stderr_slope;
  } else {
    fit.ci_low = fit.ci_high = fit.slope;
  }
  return fit;
}

SlopeFit SlopeInT(const std::vector<BenchRow>& rows, const std::string& method,
                  int d) {
  std::vector<double> x, y;
  for (const BenchRow& r : rows) {
    if (r.method == method && r.d == d) {
      x.push_back(r.T);
      y.push_back(r.seconds);
    }
  }
  return FitLogLogSlope(x, y);
}

}  // namespace dualfilter::lgssm
