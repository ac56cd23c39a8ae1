#ifndef DUALFILTER_HMM_H_
#define DUALFILTER_HMM_H_

// Discrete hidden Markov model with the offset emission convention
//
//   P(X_0 = x) = mu(x),  P(X_{t+1} = x' | X_t = x) = A(x, x'),
//   P(Z_{t+1} = z | X_t = x) = C(x, z),
//
// states 0..d-1 and observations 0..m. State indices are zero-based, so the
// state called "1" in a cycle diagram is index 0 here.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace dualfilter::hmm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

using Path = std::vector<int>;

struct Hmm {
  int d = 0;
  int m = 0;   // observations are 0..m
  MatrixXd A;  // d x d, row stochastic
  MatrixXd C;  // d x (m+1), row stochastic
  VectorXd mu;

  int alphabet() const { return m + 1; }
  // Throws ModelError unless all rows are nonnegative and sum to 1 within tol.
  void Validate(double tol = 1e-12) const;
};

// Long cycle of length d and short cycle of length q+1 sharing state d.
struct TwoCycleSpec {
  int d = 16;
  int q = 4;
};

// Transitions x -> x+1, state d -> 1 or d-q with probability 1/2 each; states
// 1 and d emit 1, all others emit 0; mu is a point mass at state d.
Hmm TwoCycle(const TwoCycleSpec& spec);

enum class PerturbTarget { kTransition, kEmission };

// Convex combination with the uniform distribution on the chosen matrix.
Hmm Perturb(const Hmm& hmm, double epsilon, PerturbTarget target);

struct HmmTrajectory {
  std::vector<int> x;  // X_0..X_T
  std::vector<int> z;  // Z_1..Z_{T+1}
};

HmmTrajectory SimulateHmm(const Hmm& hmm, int T, std::uint64_t seed);

// `count` independent observation paths Z_1..Z_T. Path k uses a seed derived
// from (seed, k), so prefixes of the returned set do not depend on `count`.
std::vector<Path> SamplePaths(const Hmm& hmm, int T, int count,
                              std::uint64_t seed);

struct FilterPath {
  MatrixXd pi;  // d x T, column t-1 is pi_t = P(X_t | Z_{1:t})
  double loglik = 0.0;
};

// Exact filter: correct pi_t with Z_{t+1}, then propagate through A.
// Throws ImpossiblePathError when an observation has zero probability.
FilterPath ForwardFilter(const Hmm& hmm, std::span<const int> z);

// P(Z_{t+1} = z | Z_{1:t}) = sum_x pi(x) C(x, z).
VectorXd NextToken(const Hmm& hmm, const VectorXd& pi);

// Maps Z_1..Z_T to an (m+1) x T matrix whose column t is the predicted
// distribution of Z_{t+1} given Z_{1:t}.
using SequencePredictor = std::function<MatrixXd(std::span<const int>)>;

SequencePredictor FilterPredictor(const Hmm& hmm);
SequencePredictor UniformPredictor(int m);
// Empirical token frequencies of `paths`, ignoring context.
SequencePredictor UnigramPredictor(const std::vector<Path>& paths, int m);

struct CrossEntropy {
  double nats_per_token = 0.0;  // +inf when a realized token had probability 0
  double tokens = 0.0;          // number (or probability mass) of tokens
  long long zero_probability_events = 0;
  bool infinite() const { return zero_probability_events > 0; }
};

// Average -log p(Z_{t+1} | Z_{1:t}) over the given paths.
CrossEntropy CrossEntropyMonteCarlo(const std::vector<Path>& paths,
                                    const SequencePredictor& predictor);

// Exact expectation under `truth` by enumerating all (m+1)^T paths.
// Throws TreeTooLargeError above 10^6 paths.
CrossEntropy CrossEntropyExact(const Hmm& truth, int T,
                               const SequencePredictor& predictor);

// Cross-entropy of the true filter, the minimum achievable loss.
double EntropyBenchmark(const Hmm& truth, const std::vector<Path>& paths);
double EntropyBenchmarkExact(const Hmm& truth, int T);

struct BaumWelchOptions {
  int d_hat = 1;
  int m = 1;
  int iterations = 200;
  int restarts = 5;
  std::uint64_t seed = 0;
  // Stop a restart early once the relative log-likelihood gain drops below.
  double rel_tol = 1e-10;
  // Dirichlet concentration of the random initial rows.
  double concentration = 1.0;
};

struct BaumWelchResult {
  Hmm model;
  double loglik = 0.0;
  int best_restart = 0;
  // Per restart, log-likelihood before each M-step.
  std::vector<std::vector<double>> traces;
};

// EM for the offset HMM on observation paths Z_1..Z_T. Rows are initialized
// from a symmetric Dirichlet; the best-likelihood restart is returned.
BaumWelchResult BaumWelch(const std::vector<Path>& paths,
                          const BaumWelchOptions& opts);

// Total log-likelihood of paths under hmm (-inf if any path is impossible).
double LogLikelihood(const Hmm& hmm, const std::vector<Path>& paths);

}  // namespace dualfilter::hmm

#endif  // DUALFILTER_HMM_H_
