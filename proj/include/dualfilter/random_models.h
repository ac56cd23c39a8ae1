#ifndef DUALFILTER_RANDOM_MODELS_H_
#define DUALFILTER_RANDOM_MODELS_H_

// Random model generators for property tests, acceptance checks and
// benchmarks. All draws come from the given engine, so a fixed seed gives a
// fixed model.

#include <random>

#include "dualfilter/hmm.h"
#include "dualfilter/lgssm.h"

namespace dualfilter {

struct RandomLinearOptions {
  int d = 2;
  int m = 1;
  int T = 4;
  int tau = 1;
  // Sum over lags of the spectral norms of A_s; below 1 keeps the state
  // bounded.
  double lag_norm = 0.9;
  bool time_varying = false;
};

// Gaussian lag matrices rescaled to the requested total norm; Q and Sigma0
// are G G^T for Gaussian G; R = I + G G^T / m.
lgssm::LinearGaussianModel RandomLinearModel(const RandomLinearOptions& opts,
                                             std::mt19937_64& rng);

struct RandomHmmOptions {
  int d = 3;
  int m = 1;
  // Weight of the uniform row in each mixture; positive gives full support.
  double floor = 0.0;
};

// Rows of A, C and mu drawn from Dirichlet(1), mixed with the uniform row as
// (1 - floor) row + floor * uniform.
hmm::Hmm RandomHmm(const RandomHmmOptions& opts, std::mt19937_64& rng);

}  // namespace dualfilter

#endif  // DUALFILTER_RANDOM_MODELS_H_
