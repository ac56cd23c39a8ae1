#include "dualfilter/hmm.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <string>

#include "dualfilter/errors.h"
#include "dualfilter/rng.h"

namespace dualfilter::hmm {
namespace {

constexpr long long kMaxEnumeratedPaths = 1000000;

void CheckStochastic(const MatrixXd& M, const char* name, double tol) {
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    if (M.row(i).minCoeff() < 0.0) {
      throw ModelError(std::string(name) + " has a negative entry in row " +
                       std::to_string(i));
    }
    if (std::abs(M.row(i).sum() - 1.0) > tol) {
      throw ModelError(std::string(name) + " row " + std::to_string(i) +
                       " does not sum to 1");
    }
  }
}

int Sample(const auto& probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double r = unif(rng);
  double acc = 0.0;
  const int n = static_cast<int>(probs.size());
  for (int i = 0; i < n; ++i) {
    acc += probs(i);
    if (r < acc) return i;
  }
  // Round-off: return the last state with positive mass.
  for (int i = n - 1; i >= 0; --i) {
    if (probs(i) > 0.0) return i;
  }
  return n - 1;
}

void CheckObservations(const Hmm& hmm, std::span<const int> z) {
  for (int v : z) {
    if (v < 0 || v > hmm.m) {
      throw ArgumentError("observation " + std::to_string(v) +
                          " outside {0.." + std::to_string(hmm.m) + "}");
    }
  }
}

long long CountPaths(int alphabet, int T) {
  long long n = 1;
  for (int t = 0; t < T; ++t) {
    n *= alphabet;
    if (n > kMaxEnumeratedPaths) {
      throw TreeTooLargeError("(m+1)^T exceeds the enumeration limit of 1e6");
    }
  }
  return n;
}

VectorXd DirichletRow(int n, double concentration, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  VectorXd v(n);
  do {
    for (int i = 0; i < n; ++i) v(i) = gamma(rng);
  } while (!(v.sum() > 0.0));
  return v / v.sum();
}

}  // namespace

void Hmm::Validate(double tol) const {
  if (d < 1 || m < 1) throw ModelError("need d >= 1 and m >= 1");
  if (A.rows() != d || A.cols() != d) throw ModelError("A must be d x d");
  if (C.rows() != d || C.cols() != m + 1) {
    throw ModelError("C must be d x (m+1)");
  }
  if (mu.size() != d) throw ModelError("mu must have length d");
  CheckStochastic(A, "A", tol);
  CheckStochastic(C, "C", tol);
  CheckStochastic(mu.transpose(), "mu", tol);
}

Hmm TwoCycle(const TwoCycleSpec& spec) {
  const int d = spec.d, q = spec.q;
  if (d < 4) throw ArgumentError("two-cycle HMM needs d >= 4");
  if (q < 1 || q >= d - 2) throw ArgumentError("two-cycle HMM needs 1<=q<d-2");
  Hmm h;
  h.d = d;
  h.m = 1;
  h.A = MatrixXd::Zero(d, d);
  for (int x = 0; x + 1 < d; ++x) h.A(x, x + 1) = 1.0;
  h.A(d - 1, 0) = 0.5;
  h.A(d - 1, d - q - 1) = 0.5;
  h.C = MatrixXd::Zero(d, 2);
  h.C.col(0).setOnes();
  h.C(0, 0) = 0.0;
  h.C(0, 1) = 1.0;
  h.C(d - 1, 0) = 0.0;
  h.C(d - 1, 1) = 1.0;
  h.mu = VectorXd::Zero(d);
  h.mu(d - 1) = 1.0;
  return h;
}

Hmm Perturb(const Hmm& hmm, double epsilon, PerturbTarget target) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw ArgumentError("perturbation level must lie in [0, 1]");
  }
  Hmm out = hmm;
  if (target == PerturbTarget::kTransition) {
    out.A = (1.0 - epsilon) * hmm.A.array() + epsilon / hmm.d;
  } else {
    out.C = (1.0 - epsilon) * hmm.C.array() + epsilon / (hmm.m + 1);
  }
  return out;
}

HmmTrajectory SimulateHmm(const Hmm& hmm, int T, std::uint64_t seed) {
  hmm.Validate(1e-9);
  if (T < 0) throw ArgumentError("horizon must be nonnegative");
  std::mt19937_64 rng(seed);
  HmmTrajectory traj;
  traj.x.resize(T + 1);
  traj.z.resize(T + 1);
  traj.x[0] = Sample(hmm.mu, rng);
  for (int t = 0; t <= T; ++t) {
    traj.z[t] = Sample(hmm.C.row(traj.x[t]), rng);
    if (t < T) traj.x[t + 1] = Sample(hmm.A.row(traj.x[t]), rng);
  }
  return traj;
}

std::vector<Path> SamplePaths(const Hmm& hmm, int T, int count,
                              std::uint64_t seed) {
  std::vector<Path> paths;
  paths.reserve(count);
  for (int k = 0; k < count; ++k) {
    HmmTrajectory traj = SimulateHmm(hmm, T, DeriveSeed(seed, k));
    paths.emplace_back(traj.z.begin(), traj.z.begin() + T);
  }
  return paths;
}

FilterPath ForwardFilter(const Hmm& hmm, std::span<const int> z) {
  CheckObservations(hmm, z);
  const int T = static_cast<int>(z.size());
  FilterPath out;
  out.pi.resize(hmm.d, T);
  VectorXd pi = hmm.mu;
  for (int t = 0; t < T; ++t) {
    VectorXd beta = pi.cwiseProduct(hmm.C.col(z[t]));
    double norm = beta.sum();
    if (!(norm > 0.0)) {
      throw ImpossiblePathError(
          t + 1, "observation " + std::to_string(t + 1) +
                     " has zero probability under the model");
    }
    out.loglik += std::log(norm);
    pi.noalias() = hmm.A.transpose() * (beta / norm);
    out.pi.col(t) = pi;
  }
  return out;
}

VectorXd NextToken(const Hmm& hmm, const VectorXd& pi) {
  return hmm.C.transpose() * pi;
}

SequencePredictor FilterPredictor(const Hmm& hmm) {
  return [hmm](std::span<const int> z) {
    const int T = static_cast<int>(z.size());
    MatrixXd out(hmm.m + 1, T);
    VectorXd pi = hmm.mu;
    for (int t = 0; t < T; ++t) {
      out.col(t) = NextToken(hmm, pi);
      VectorXd beta = pi.cwiseProduct(hmm.C.col(z[t]));
      double norm = beta.sum();
      // Impossible token: its loss is already infinite, keep predicting
      // from the uncorrected state.
      if (norm > 0.0) beta /= norm;
      else beta = pi;
      pi.noalias() = hmm.A.transpose() * beta;
    }
    return out;
  };
}

SequencePredictor UniformPredictor(int m) {
  return [m](std::span<const int> z) {
    return MatrixXd::Constant(m + 1, static_cast<Eigen::Index>(z.size()),
                              1.0 / (m + 1));
  };
}

SequencePredictor UnigramPredictor(const std::vector<Path>& paths, int m) {
  VectorXd freq = VectorXd::Zero(m + 1);
  for (const Path& p : paths) {
    for (int v : p) freq(v) += 1.0;
  }
  if (freq.sum() > 0.0) freq /= freq.sum();
  else freq.setConstant(1.0 / (m + 1));
  return [freq](std::span<const int> z) {
    return freq.replicate(1, static_cast<Eigen::Index>(z.size())).eval();
  };
}

CrossEntropy CrossEntropyMonteCarlo(const std::vector<Path>& paths,
                                    const SequencePredictor& predictor) {
  CrossEntropy ce;
  double total = 0.0;
  for (const Path& p : paths) {
    MatrixXd probs = predictor(p);
    for (std::size_t t = 0; t < p.size(); ++t) {
      double pr = probs(p[t], static_cast<Eigen::Index>(t));
      if (pr > 0.0) total -= std::log(pr);
      else ++ce.zero_probability_events;
      ce.tokens += 1.0;
    }
  }
  ce.nats_per_token = ce.infinite() ? std::numeric_limits<double>::infinity()
                                    : total / std::max(ce.tokens, 1.0);
  return ce;
}

CrossEntropy CrossEntropyExact(const Hmm& truth, int T,
                               const SequencePredictor& predictor) {
  truth.Validate(1e-9);
  const long long count = CountPaths(truth.alphabet(), T);
  CrossEntropy ce;
  double total = 0.0;
  Path z(T);
  for (long long code = 0; code < count; ++code) {
    long long rest = code;
    for (int t = T - 1; t >= 0; --t) {
      z[t] = static_cast<int>(rest % truth.alphabet());
      rest /= truth.alphabet();
    }
    // Path probability from the forward normalizers.
    double prob = 1.0;
    VectorXd pi = truth.mu;
    for (int t = 0; t < T && prob > 0.0; ++t) {
      VectorXd beta = pi.cwiseProduct(truth.C.col(z[t]));
      double norm = beta.sum();
      prob *= norm;
      if (norm > 0.0) pi = truth.A.transpose() * (beta / norm);
    }
    if (!(prob > 0.0)) continue;
    MatrixXd probs = predictor(z);
    for (int t = 0; t < T; ++t) {
      double pr = probs(z[t], t);
      if (pr > 0.0) total -= prob * std::log(pr);
      else ++ce.zero_probability_events;
    }
    ce.tokens += prob * T;
  }
  ce.nats_per_token = ce.infinite() ? std::numeric_limits<double>::infinity()
                                    : total / std::max(ce.tokens, 1e-300);
  return ce;
}

double EntropyBenchmark(const Hmm& truth, const std::vector<Path>& paths) {
  return CrossEntropyMonteCarlo(paths, FilterPredictor(truth)).nats_per_token;
}

double EntropyBenchmarkExact(const Hmm& truth, int T) {
  return CrossEntropyExact(truth, T, FilterPredictor(truth)).nats_per_token;
}

double LogLikelihood(const Hmm& hmm, const std::vector<Path>& paths) {
  double total = 0.0;
  for (const Path& p : paths) {
    try {
      total += ForwardFilter(hmm, p).loglik;
    } catch (const ImpossiblePathError&) {
      return -std::numeric_limits<double>::infinity();
    }
  }
  return total;
}

namespace {

struct Counts {
  VectorXd init;
  MatrixXd trans;
  MatrixXd emit;
  double loglik = 0.0;
};

// E-step for the offset model: hidden X_{k-1} emits Z_k, k = 1..T. Paths of
// equal length are processed together, one d x N block per time step.
Counts ExpectedCounts(const Hmm& h, const std::vector<Path>& paths) {
  const int d = h.d;
  Counts c;
  c.init = VectorXd::Zero(d);
  c.trans = MatrixXd::Zero(d, d);
  c.emit = MatrixXd::Zero(d, h.m + 1);
  std::map<std::size_t, std::vector<const Path*>> by_length;
  for (const Path& z : paths) {
    if (!z.empty()) by_length[z.size()].push_back(&z);
  }
  for (const auto& [length, group] : by_length) {
    const int T = static_cast<int>(length);
    const int N = static_cast<int>(group.size());
    auto emission = [&](int k) {
      MatrixXd E(d, N);
      for (int n = 0; n < N; ++n) E.col(n) = h.C.col((*group[n])[k]);
      return E;
    };
    std::vector<MatrixXd> alpha(T), beta(T);
    std::vector<Eigen::RowVectorXd> scale(T);
    for (int k = 0; k < T; ++k) {
      if (k == 0) {
        alpha[0] = emission(0).array().colwise() * h.mu.array();
      } else {
        alpha[k].noalias() = h.A.transpose() * alpha[k - 1];
        alpha[k].array() *= emission(k).array();
      }
      scale[k] = alpha[k].colwise().sum();
      for (int n = 0; n < N; ++n) {
        if (!(scale[k](n) > 0.0)) {
          throw ImpossiblePathError(k + 1, "training path has zero probability");
        }
      }
      alpha[k].array().rowwise() /= scale[k].array();
      c.loglik += scale[k].array().log().sum();
    }
    beta[T - 1] = MatrixXd::Ones(d, N);
    for (int k = T - 2; k >= 0; --k) {
      MatrixXd w = emission(k + 1).cwiseProduct(beta[k + 1]);
      w.array().rowwise() /= scale[k + 1].array();
      beta[k].noalias() = h.A * w;
      c.trans.noalias() += alpha[k] * w.transpose();
    }
    for (int k = 0; k < T; ++k) {
      const MatrixXd gamma = alpha[k].cwiseProduct(beta[k]);
      if (k == 0) c.init += gamma.rowwise().sum();
      for (int n = 0; n < N; ++n) c.emit.col((*group[n])[k]) += gamma.col(n);
    }
  }
  c.trans.array() *= h.A.array();
  return c;
}

void NormalizeRows(MatrixXd& counts, const MatrixXd& fallback) {
  for (Eigen::Index i = 0; i < counts.rows(); ++i) {
    double s = counts.row(i).sum();
    if (s > 0.0) counts.row(i) /= s;
    else counts.row(i) = fallback.row(i);
  }
}

}  // namespace

BaumWelchResult BaumWelch(const std::vector<Path>& paths,
                          const BaumWelchOptions& opts) {
  if (paths.empty()) throw ArgumentError("Baum-Welch needs at least one path");
  if (opts.d_hat < 1 || opts.m < 1) throw ArgumentError("need d_hat, m >= 1");
  if (!(opts.concentration > 0.0)) {
    throw ArgumentError("Dirichlet concentration must be positive");
  }
  if (opts.restarts < 1 || opts.iterations < 1) {
    throw ArgumentError("need at least one restart and one iteration");
  }
  long long tokens = 0;
  for (const Path& p : paths) {
    for (int v : p) {
      if (v < 0 || v > opts.m) throw ArgumentError("observation out of range");
    }
    tokens += static_cast<long long>(p.size());
  }
  if (tokens == 0) throw ArgumentError("Baum-Welch needs nonempty paths");

  BaumWelchResult best;
  best.loglik = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < opts.restarts; ++r) {
    std::mt19937_64 rng(DeriveSeed(opts.seed, r));
    Hmm h;
    h.d = opts.d_hat;
    h.m = opts.m;
    h.A.resize(h.d, h.d);
    h.C.resize(h.d, h.m + 1);
    const double a = opts.concentration;
    for (int x = 0; x < h.d; ++x) h.A.row(x) = DirichletRow(h.d, a, rng);
    for (int x = 0; x < h.d; ++x) h.C.row(x) = DirichletRow(h.m + 1, a, rng);
    h.mu = DirichletRow(h.d, a, rng);

    std::vector<double> trace;
    for (int it = 0; it < opts.iterations; ++it) {
      Counts c = ExpectedCounts(h, paths);
      trace.push_back(c.loglik);
      Hmm next = h;
      next.mu = c.init / c.init.sum();
      next.A = c.trans;
      NormalizeRows(next.A, h.A);
      next.C = c.emit;
      NormalizeRows(next.C, h.C);
      h = std::move(next);
      if (trace.size() >= 2) {
        double prev = trace[trace.size() - 2];
        double gain = c.loglik - prev;
        if (gain >= 0.0 && gain <= opts.rel_tol * std::abs(c.loglik)) break;
      }
    }
    double ll = LogLikelihood(h, paths);
    trace.push_back(ll);
    best.traces.push_back(trace);
    if (ll > best.loglik) {
      best.loglik = ll;
      best.model = h;
      best.best_restart = r;
    }
  }
  return best;
}

}  // namespace dualfilter::hmm
