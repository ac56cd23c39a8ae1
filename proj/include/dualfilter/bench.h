#ifndef DUALFILTER_BENCH_H_
#define DUALFILTER_BENCH_H_

// Runtime scaling of the linear dual filter against the augmented Kalman
// filter for order tau = T models.

#include <cstdint>
#include <string>
#include <vector>

namespace dualfilter::lgssm {

struct BenchConfig {
  std::vector<int> dims = {2};
  std::vector<int> horizons = {64, 128, 256, 512, 1024};
  int repeats = 5;
  std::uint64_t seed = 0;
  // Each timing repeats the call until at least this much time elapsed and
  // reports the per-call average.
  double min_seconds = 0.05;
  // Also time the full direct solve (sparse joint system).
  bool full_solve = false;
};

struct BenchRow {
  std::string method;  // dual_layer, dual_solve or kalman_augmented
  int d = 0;
  int T = 0;
  double seconds = 0.0;  // median over repeats
  std::size_t bytes = 0;  // resident data of the method's iterate
};

std::vector<BenchRow> BenchComplexity(const BenchConfig& config);

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
  double ci_low = 0.0;   // 95% interval, Student t
  double ci_high = 0.0;
};

// Least-squares fit of log y = a + b log x.
SlopeFit FitLogLogSlope(const std::vector<double>& x,
                        const std::vector<double>& y);

// Fit in T of `method` at dimension d.
SlopeFit SlopeInT(const std::vector<BenchRow>& rows, const std::string& method,
                  int d);

}  // namespace dualfilter::lgssm

#endif  // DUALFILTER_BENCH_H_
