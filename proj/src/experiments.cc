#include "dualfilter/experiments.h"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <random>
#include <thread>

#include "dualfilter/bench.h"
#include "dualfilter/errors.h"
#include "dualfilter/io.h"
#include "dualfilter/layers.h"
#include "dualfilter/lgssm.h"
#include "dualfilter/random_models.h"
#include "dualfilter/rng.h"

namespace dualfilter::xcli {
namespace {

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr const char* kVersion = "0.1.0";

// Seed streams derived from the master seed.
enum Stream : std::uint64_t {
  kPathStream = 0,
  kEvalStream = 1,
  kTrainStream = 2,
  kFitStream = 3,
  kModelStream = 4,
};

// Runs fn(0..n-1) on up to `threads` workers; results are written by index,
// so the outcome does not depend on scheduling.
template <typename Fn>
void ParallelFor(int n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min(threads, n); ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string EpsilonTag(double eps) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", eps);
  return buf;
}

class Output {
 public:
  Output(std::string dir, Format format) : dir_(std::move(dir)), format_(format) {
    fs::create_directories(dir_);
  }

  Format format() const { return format_; }

  void Write(const std::string& name, const std::string& content) {
    io::WriteFile((fs::path(dir_) / name).string(), content);
    files_.push_back(prefix_ + name);
  }

  Output Sub(const std::string& name) const {
    Output sub((fs::path(dir_) / name).string(), format_);
    sub.prefix_ = prefix_ + name + "/";
    return sub;
  }

  void Absorb(const Output& sub) {
    files_.insert(files_.end(), sub.files_.begin(), sub.files_.end());
  }

  const std::vector<std::string>& files() const { return files_; }

 private:
  std::string dir_;
  Format format_;
  std::string prefix_;
  std::vector<std::string> files_;
};

Json Merge(const std::string& experiment, const Json& config) {
  Json merged = Defaults(experiment);
  if (!config.is_null()) {
    if (!config.is_object()) throw ArgumentError("config must be a JSON object");
    for (auto it = config.begin(); it != config.end(); ++it) {
      if (!merged.contains(it.key())) {
        throw ArgumentError("unknown config key '" + it.key() + "' for " +
                            experiment);
      }
      merged[it.key()] = it.value();
    }
  }
  return merged;
}

template <typename T>
T Key(const Json& config, const char* key) {
  try {
    return config.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ArgumentError(std::string("config key '") + key + "': " + e.what());
  }
}

dual::LayerOptions LayerOptionsFrom(const Json& config) {
  dual::LayerOptions opts;
  opts.tol = Key<double>(config, "layer_tol");
  opts.max_layers = Key<int>(config, "max_layers");
  opts.damping = Key<double>(config, "damping");
  if (!(opts.damping > 0.0 && opts.damping <= 1.0)) {
    throw ArgumentError("damping must lie in (0, 1]");
  }
  return opts;
}

std::string SliceCsv(const MatrixXd& heatmap, int s,
                     const std::vector<bool>& events) {
  std::string out = "time_index,magnitude,event\n";
  for (int t = 1; t <= s; ++t) {
    out += std::to_string(t) + "," + io::FormatDouble(heatmap(s - 1, t - 1)) +
           "," + (events[t - 1] ? "1" : "0") + "\n";
  }
  return out;
}

std::string PathCsv(const hmm::HmmTrajectory& traj, int T) {
  // Z_t is emitted by X_{t-1}; states are reported 1-based.
  std::string out = "t,z,emitting_state\n";
  for (int t = 1; t <= T; ++t) {
    out += std::to_string(t) + "," + std::to_string(traj.z[t - 1]) + "," +
           std::to_string(traj.x[t - 1] + 1) + "\n";
  }
  return out;
}

// Core of the two-cycle and perturbation experiments for one model.
Json TwoCycleCore(const hmm::Hmm& model, const Json& config, Output& out) {
  const int T = Key<int>(config, "T");
  const std::uint64_t seed = Key<std::uint64_t>(config, "seed");
  const int eval_paths = Key<int>(config, "eval_paths");
  const int slice = std::min(Key<int>(config, "slice"), T);
  if (T < 1) throw ArgumentError("T must be positive");
  const dual::LayerOptions opts = LayerOptionsFrom(config);

  const hmm::HmmTrajectory traj =
      hmm::SimulateHmm(model, T, DeriveSeed(seed, kPathStream));
  const std::vector<int> z(traj.z.begin(), traj.z.begin() + T);

  const dual::PathIteration it = dual::IteratePath(model, z, T, opts);
  if (!it.report.converged) {
    throw ConvergenceError("path layer iteration did not converge",
                           it.report.residual, it.report.layers);
  }
  const hmm::FilterPath filter = hmm::ForwardFilter(model, z);
  const dual::WeightHeatmap heatmap = dual::PathWeights(model, it.rho, z);
  const std::vector<bool> events = dual::EventColumns(z, T);
  const dual::MaskStats mask = dual::EventMaskStats(heatmap, events);

  const std::vector<hmm::Path> eval =
      hmm::SamplePaths(model, T, eval_paths, DeriveSeed(seed, kEvalStream));
  const hmm::CrossEntropy ce_dual =
      hmm::CrossEntropyMonteCarlo(eval, dual::DualFilterPredictor(model, opts));
  const double ce_optimal = hmm::EntropyBenchmark(model, eval);

  out.Write("model.json", io::HmmToJson(model) + "\n");
  out.Write("path.csv", PathCsv(traj, T));
  out.Write("dual_filter.csv", io::SequenceToCsv(it.rho));
  out.Write("forward_filter.csv", io::SequenceToCsv(filter.pi));
  if (out.format() == Format::kJson) {
    out.Write("heatmap.json", io::MatrixToJson(heatmap.magnitude));
  } else {
    out.Write("heatmap.csv", io::HeatmapToCsv(heatmap.magnitude));
  }
  out.Write("slice.csv", SliceCsv(heatmap.magnitude, slice, events));
  const double eps = Key<double>(config, "epsilon");
  out.Write("losses.csv",
            io::LossesToCsv({{"dual_filter", model.d, eps, ce_dual.nats_per_token},
                             {"optimal", model.d, eps, ce_optimal}}));

  Json s;
  s["layers"] = it.report.layers;
  s["layer_residual"] = it.report.residual;
  s["clipped_mass"] = it.report.clipped_mass;
  s["filter_max_error"] = (it.rho - filter.pi).cwiseAbs().maxCoeff();
  s["heatmap_total_mass"] = mask.total_mass;
  s["heatmap_off_event_mass"] = mask.off_mask_mass;
  s["heatmap_off_event_fraction"] = mask.off_fraction();
  s["heatmap_max_off_event"] = mask.max_off_mask;
  s["slice"] = slice;
  s["loss_dual"] = ce_dual.nats_per_token;
  s["loss_dual_infinite"] = ce_dual.infinite();
  s["loss_optimal"] = ce_optimal;
  s["loss_relative_gap"] = (ce_dual.nats_per_token - ce_optimal) / ce_optimal;
  return s;
}

}  // namespace

Json Report::Manifest() const {
  Json m;
  m["experiment"] = experiment;
  m["config"] = config;
  m["summary"] = summary;
  m["files"] = files;
  m["version"] = kVersion;
  m["wall_seconds"] = wall_seconds;
  m["threads"] = ThreadCount();
  return m;
}

Json Defaults(const std::string& experiment) {
  Json layer = {{"layer_tol", 1e-8}, {"max_layers", 100}, {"damping", 1.0}};
  if (experiment == "two-cycle") {
    Json c = {{"d", 16},          {"q", 4},        {"T", 64},
              {"seed", 0},        {"slice", 54},   {"eval_paths", 200},
              {"epsilon", 0.0},   {"target", "transition"}};
    c.update(layer);
    return c;
  }
  if (experiment == "perturb") {
    Json c = {{"d", 16},
              {"q", 4},
              {"T", 64},
              {"seed", 0},
              {"slice", 54},
              {"eval_paths", 200},
              {"epsilons", {0.01, 0.1, 0.2}},
              {"targets", {"transition", "emission"}}};
    c.update(layer);
    return c;
  }
  if (experiment == "dhat-sweep") {
    Json c = {{"d", 16},
              {"q", 4},
              {"T", 64},
              {"seed", 0},
              {"d_hats", {8, 16, 32}},
              {"train_paths", 200},
              {"eval_paths", 200},
              {"iterations", 300},
              {"restarts", 20},
              {"concentration", 10.0},
              {"rel_tol", 1e-10}};
    c.update(layer);
    return c;
  }
  if (experiment == "bench") {
    return {{"dims", {2}},
            {"horizons", {64, 128, 256, 512, 1024}},
            {"repeats", 3},
            {"min_seconds", 0.05},
            {"full_solve", false},
            {"seed", 0}};
  }
  if (experiment == "lgssm-check") {
    return {{"instances", 100}, {"seed", 0}, {"max_d", 4}, {"max_m", 3},
            {"max_T", 12}};
  }
  throw ArgumentError("unknown experiment '" + experiment + "'");
}

int ThreadCount() {
  const char* env = std::getenv("DUALFILTER_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) {
    throw ArgumentError("DUALFILTER_THREADS must be a positive integer");
  }
  return static_cast<int>(n);
}

hmm::Hmm ModelFromConfig(const Json& config) {
  hmm::TwoCycleSpec spec;
  spec.d = Key<int>(config, "d");
  spec.q = Key<int>(config, "q");
  hmm::Hmm model = hmm::TwoCycle(spec);
  const double eps = config.contains("epsilon") ? Key<double>(config, "epsilon") : 0.0;
  if (eps != 0.0) {
    const std::string target = Key<std::string>(config, "target");
    hmm::PerturbTarget t;
    if (target == "transition") {
      t = hmm::PerturbTarget::kTransition;
    } else if (target == "emission") {
      t = hmm::PerturbTarget::kEmission;
    } else {
      throw ArgumentError("target must be 'transition' or 'emission'");
    }
    model = hmm::Perturb(model, eps, t);
  }
  return model;
}

bool IsMonotone(const std::vector<double>& trace, double tol) {
  for (std::size_t k = 1; k < trace.size(); ++k) {
    if (trace[k] < trace[k - 1] - tol * std::max(1.0, std::abs(trace[k - 1]))) {
      return false;
    }
  }
  return true;
}

Report RunTwoCycle(const Json& config, const std::string& out_dir,
                   Format format) {
  const auto start = std::chrono::steady_clock::now();
  Report r;
  r.experiment = "two-cycle";
  r.config = Merge(r.experiment, config);
  Output out(out_dir, format);
  const hmm::Hmm model = ModelFromConfig(r.config);
  r.summary = TwoCycleCore(model, r.config, out);
  const double d = Key<int>(r.config, "d");
  const double q = Key<int>(r.config, "q");
  r.summary["loss_asymptotic_rate"] = std::log(2.0) / (0.5 * d + 0.5 * (q + 1));
  r.files = out.files();
  r.wall_seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start).count();
  return r;
}

Report RunPerturbation(const Json& config, const std::string& out_dir,
                       Format format) {
  const auto start = std::chrono::steady_clock::now();
  Report r;
  r.experiment = "perturb";
  r.config = Merge(r.experiment, config);
  const auto epsilons = Key<std::vector<double>>(r.config, "epsilons");
  const auto targets = Key<std::vector<std::string>>(r.config, "targets");
  for (double eps : epsilons) {
    if (!(eps >= 0.0 && eps <= 1.0)) throw ArgumentError("epsilon outside [0,1]");
  }

  struct Point {
    std::string target;
    double eps;
  };
  std::vector<Point> points;
  for (const std::string& t : targets) {
    for (double eps : epsilons) points.push_back({t, eps});
  }
  Output out(out_dir, format);
  std::vector<Output> subs;
  for (const Point& p : points) {
    subs.push_back(out.Sub(p.target + "_eps" + EpsilonTag(p.eps)));
  }
  std::vector<Json> results(points.size());
  ParallelFor(static_cast<int>(points.size()), ThreadCount(), [&](int i) {
    Json point_config = Defaults("two-cycle");
    for (const char* k : {"d", "q", "T", "seed", "slice", "eval_paths",
                          "layer_tol", "max_layers", "damping"}) {
      point_config[k] = r.config[k];
    }
    point_config["epsilon"] = points[i].eps;
    point_config["target"] = points[i].target;
    results[i] = TwoCycleCore(ModelFromConfig(point_config), point_config,
                              subs[i]);
    results[i]["target"] = points[i].target;
    results[i]["epsilon"] = points[i].eps;
  });

  std::vector<io::LossRow> losses;
  std::string table =
      "target,epsilon,loss_dual,loss_optimal,off_event_fraction,layers\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    out.Absorb(subs[i]);
    const Json& s = results[i];
    const int d = Key<int>(r.config, "d");
    losses.push_back({"dual_filter:" + points[i].target, d, points[i].eps,
                      s["loss_dual"].get<double>()});
    losses.push_back({"optimal:" + points[i].target, d, points[i].eps,
                      s["loss_optimal"].get<double>()});
    table += points[i].target + "," + io::FormatDouble(points[i].eps) + "," +
             io::FormatDouble(s["loss_dual"].get<double>()) + "," +
             io::FormatDouble(s["loss_optimal"].get<double>()) + "," +
             io::FormatDouble(s["heatmap_off_event_fraction"].get<double>()) +
             "," + std::to_string(s["layers"].get<int>()) + "\n";
  }
  out.Write("losses.csv", io::LossesToCsv(losses));
  out.Write("perturbation.csv", table);
  r.summary["points"] = results;
  r.files = out.files();
  r.wall_seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start).count();
  return r;
}

Report RunDhatSweep(const Json& config, const std::string& out_dir,
                    Format format) {
  const auto start = std::chrono::steady_clock::now();
  Report r;
  r.experiment = "dhat-sweep";
  r.config = Merge(r.experiment, config);
  const Json& c = r.config;
  const int T = Key<int>(c, "T");
  const std::uint64_t seed = Key<std::uint64_t>(c, "seed");
  const auto d_hats = Key<std::vector<int>>(c, "d_hats");
  const dual::LayerOptions opts = LayerOptionsFrom(c);
  const hmm::Hmm truth = ModelFromConfig(c);

  const std::vector<hmm::Path> train = hmm::SamplePaths(
      truth, T, Key<int>(c, "train_paths"), DeriveSeed(seed, kTrainStream));
  const std::vector<hmm::Path> eval = hmm::SamplePaths(
      truth, T, Key<int>(c, "eval_paths"), DeriveSeed(seed, kEvalStream));
  const double optimal = hmm::EntropyBenchmark(truth, eval);

  struct Point {
    Json summary;
    hmm::BaumWelchResult fit;
    bool ok = false;
  };
  std::vector<Point> points(d_hats.size());
  ParallelFor(static_cast<int>(d_hats.size()), ThreadCount(), [&](int i) {
    Point& p = points[i];
    p.summary["d_hat"] = d_hats[i];
    try {
      hmm::BaumWelchOptions bw;
      bw.d_hat = d_hats[i];
      bw.m = truth.m;
      bw.iterations = Key<int>(c, "iterations");
      bw.restarts = Key<int>(c, "restarts");
      bw.concentration = Key<double>(c, "concentration");
      bw.rel_tol = Key<double>(c, "rel_tol");
      bw.seed = DeriveSeed(DeriveSeed(seed, kFitStream), d_hats[i]);
      p.fit = hmm::BaumWelch(train, bw);
      bool monotone = true;
      for (const auto& trace : p.fit.traces) monotone &= IsMonotone(trace);
      const hmm::CrossEntropy dual_ce = hmm::CrossEntropyMonteCarlo(
          eval, dual::DualFilterPredictor(p.fit.model, opts));
      const hmm::CrossEntropy filter_ce =
          hmm::CrossEntropyMonteCarlo(eval, hmm::FilterPredictor(p.fit.model));
      p.summary["loss_dual"] = dual_ce.nats_per_token;
      p.summary["loss_fitted_filter"] = filter_ce.nats_per_token;
      p.summary["zero_probability_events"] = dual_ce.zero_probability_events;
      p.summary["train_loglik"] = p.fit.loglik;
      p.summary["best_restart"] = p.fit.best_restart;
      p.summary["loglik_monotone"] = monotone;
      p.ok = true;
    } catch (const Error& e) {
      p.summary["error"] = {{"kind", e.kind()}, {"message", e.what()}};
    }
  });

  Output out(out_dir, format);
  std::string sweep = "d_hat,loss_dual,loss_fitted_filter,loss_optimal\n";
  std::string traces = "d_hat,restart,iteration,loglik\n";
  std::vector<io::LossRow> losses;
  Json rows = Json::array();
  for (std::size_t i = 0; i < d_hats.size(); ++i) {
    Point& p = points[i];
    p.summary["loss_optimal"] = optimal;
    rows.push_back(p.summary);
    if (!p.ok) continue;
    const double ld = p.summary["loss_dual"].get<double>();
    const double lf = p.summary["loss_fitted_filter"].get<double>();
    sweep += std::to_string(d_hats[i]) + "," + io::FormatDouble(ld) + "," +
             io::FormatDouble(lf) + "," + io::FormatDouble(optimal) + "\n";
    losses.push_back({"dual_filter", d_hats[i], 0.0, ld});
    losses.push_back({"fitted_filter", d_hats[i], 0.0, lf});
    losses.push_back({"optimal", d_hats[i], 0.0, optimal});
    for (std::size_t rs = 0; rs < p.fit.traces.size(); ++rs) {
      const auto& trace = p.fit.traces[rs];
      for (std::size_t k = 0; k < trace.size(); ++k) {
        traces += std::to_string(d_hats[i]) + "," + std::to_string(rs) + "," +
                  std::to_string(k) + "," + io::FormatDouble(trace[k]) + "\n";
      }
    }
    out.Write("fitted_dhat" + std::to_string(d_hats[i]) + ".json",
              io::HmmToJson(p.fit.model) + "\n");
  }
  out.Write("sweep.csv", sweep);
  out.Write("losses.csv", io::LossesToCsv(losses));
  out.Write("bw_traces.csv", traces);
  r.summary["points"] = rows;
  r.summary["loss_optimal"] = optimal;
  r.files = out.files();
  r.wall_seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start).count();
  return r;
}

Report RunLinearBench(const Json& config, const std::string& out_dir,
                      Format format) {
  const auto start = std::chrono::steady_clock::now();
  Report r;
  r.experiment = "bench";
  r.config = Merge(r.experiment, config);
  lgssm::BenchConfig bc;
  bc.dims = Key<std::vector<int>>(r.config, "dims");
  bc.horizons = Key<std::vector<int>>(r.config, "horizons");
  bc.repeats = Key<int>(r.config, "repeats");
  bc.min_seconds = Key<double>(r.config, "min_seconds");
  bc.full_solve = Key<bool>(r.config, "full_solve");
  bc.seed = Key<std::uint64_t>(r.config, "seed");
  const std::vector<lgssm::BenchRow> rows = lgssm::BenchComplexity(bc);

  Output out(out_dir, format);
  out.Write("bench.csv", io::BenchToCsv(rows));
  Json slopes = Json::array();
  std::vector<std::string> methods = {"dual_layer", "kalman_augmented"};
  if (bc.full_solve) methods.push_back("dual_solve");
  for (int d : bc.dims) {
    for (const std::string& m : methods) {
      if (bc.horizons.size() < 2) continue;
      const lgssm::SlopeFit fit = lgssm::SlopeInT(rows, m, d);
      slopes.push_back({{"method", m},
                        {"d", d},
                        {"slope_T", fit.slope},
                        {"ci95_low", fit.ci_low},
                        {"ci95_high", fit.ci_high}});
    }
  }
  // Memory slope in T of the dual layer iterate.
  for (int d : bc.dims) {
    std::vector<double> x, y;
    for (const auto& row : rows) {
      if (row.method == "dual_layer" && row.d == d) {
        x.push_back(row.T);
        y.push_back(static_cast<double>(row.bytes));
      }
    }
    if (x.size() >= 2) {
      r.summary["dual_memory_slope_T_d" + std::to_string(d)] =
          lgssm::FitLogLogSlope(x, y).slope;
    }
  }
  r.summary["slopes"] = slopes;
  r.files = out.files();
  r.wall_seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start).count();
  return r;
}

Report RunLgssmCheck(const Json& config, const std::string& out_dir,
                     Format format) {
  const auto start = std::chrono::steady_clock::now();
  Report r;
  r.experiment = "lgssm-check";
  r.config = Merge(r.experiment, config);
  const int instances = Key<int>(r.config, "instances");
  const std::uint64_t seed = Key<std::uint64_t>(r.config, "seed");
  const int max_d = Key<int>(r.config, "max_d");
  const int max_m = Key<int>(r.config, "max_m");
  const int max_T = Key<int>(r.config, "max_T");

  std::string csv =
      "instance,d,m,T,tau,duality_rel_err,mean_rel_err,variance_rel_err,"
      "fixed_point_vs_direct,fixed_point_damping\n";
  double worst_duality = 0.0, worst_mean = 0.0, worst_var = 0.0, worst_fp = 0.0;
  for (int k = 0; k < instances; ++k) {
    std::mt19937_64 rng(DeriveSeed(DeriveSeed(seed, kModelStream), k));
    RandomLinearOptions o;
    o.d = 1 + static_cast<int>(rng() % max_d);
    o.m = 1 + static_cast<int>(rng() % max_m);
    o.T = 1 + static_cast<int>(rng() % max_T);
    const int taus[3] = {1, std::min(2, o.T), o.T};
    o.tau = taus[k % 3];
    const lgssm::LinearGaussianModel model = RandomLinearModel(o, rng);
    std::normal_distribution<double> n(0.0, 1.0);
    VectorXd f(o.d);
    for (int i = 0; i < o.d; ++i) f(i) = n(rng);
    MatrixXd u(o.m, o.T);
    for (int j = 0; j < o.T; ++j) {
      for (int i = 0; i < o.m; ++i) u(i, j) = n(rng);
    }
    const double mse = lgssm::MseExact(model, u, f);
    const double duality = std::abs(2.0 * lgssm::DualCost(model, u, f) - mse) /
                           std::max(mse, 1e-300);

    const lgssm::DualSolution direct =
        lgssm::DualFilterSolve(model, f, lgssm::Direct{});
    // Tight tol: the update-size stop rule leaves an error of tol k / (1 - k).
    lgssm::FixedPoint fp;
    fp.tol = 1e-13;
    fp.max_iter = 100000;
    lgssm::DualSolution iterated;
    for (;;) {
      try {
        iterated = lgssm::DualFilterSolve(model, f, fp);
        break;
      } catch (const ConvergenceError&) {
        fp.damping *= 0.5;
        if (fp.damping < 1e-3) throw;
      }
    }
    const double fp_diff = (iterated.u - direct.u).cwiseAbs().maxCoeff();
    const lgssm::LinearTrajectory traj = lgssm::Simulate(model, rng());
    const MatrixXd z = traj.z.leftCols(o.T);
    const lgssm::GaussianPrediction dual_pred =
        lgssm::PredictLinear(model, direct, z);
    const lgssm::GaussianPrediction kalman = lgssm::KalmanAugmented(model, z, f);
    const double mean_err = std::abs(dual_pred.mean - kalman.mean) /
                            std::max(1.0, std::abs(kalman.mean));
    const double var_err = std::abs(dual_pred.variance - kalman.variance) /
                           std::max(1.0, std::abs(kalman.variance));
    worst_duality = std::max(worst_duality, duality);
    worst_mean = std::max(worst_mean, mean_err);
    worst_var = std::max(worst_var, var_err);
    worst_fp = std::max(worst_fp, fp_diff);
    csv += std::to_string(k) + "," + std::to_string(o.d) + "," +
           std::to_string(o.m) + "," + std::to_string(o.T) + "," +
           std::to_string(o.tau) + "," + io::FormatDouble(duality) + "," +
           io::FormatDouble(mean_err) + "," + io::FormatDouble(var_err) + "," +
           io::FormatDouble(fp_diff) + "," + io::FormatDouble(fp.damping) + "\n";
  }
  Output out(out_dir, format);
  out.Write("lgssm_check.csv", csv);
  r.summary = {{"max_duality_rel_err", worst_duality},
               {"max_mean_rel_err", worst_mean},
               {"max_variance_rel_err", worst_var},
               {"max_fixed_point_vs_direct", worst_fp}};
  r.files = out.files();
  r.wall_seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start).count();
  return r;
}

Report Run(const std::string& experiment, const Json& config,
           const std::string& out_dir, Format format) {
  Report r;
  if (experiment == "two-cycle") {
    r = RunTwoCycle(config, out_dir, format);
  } else if (experiment == "perturb") {
    r = RunPerturbation(config, out_dir, format);
  } else if (experiment == "dhat-sweep") {
    r = RunDhatSweep(config, out_dir, format);
  } else if (experiment == "bench") {
    r = RunLinearBench(config, out_dir, format);
  } else if (experiment == "lgssm-check") {
    r = RunLgssmCheck(config, out_dir, format);
  } else {
    throw ArgumentError("unknown experiment '" + experiment + "'");
  }
  io::WriteFile((fs::path(out_dir) / "manifest.json").string(),
                r.Manifest().dump(2) + "\n");
  return r;
}

}  // namespace dualfilter::xcli
