#ifndef DUALFILTER_EXPERIMENTS_H_
#define DUALFILTER_EXPERIMENTS_H_

// Experiment runners behind the command line tool. Each runner merges the
// user config over its defaults, writes data files into an output directory
// and returns a report whose manifest echoes the full config. Data files
// depend only on the config (including the seed), never on timing or thread
// count.

#include <cstdint>
#include <string>
#include <vector>

#include "dualfilter/hmm.h"
#include "json.hpp"

namespace dualfilter::xcli {

using Json = nlohmann::json;

enum class Format { kCsv, kJson };

struct Report {
  std::string experiment;
  Json config;   // merged config, sufficient to re-run
  Json summary;  // headline metrics
  std::vector<std::string> files;  // relative to the output directory
  double wall_seconds = 0.0;

  Json Manifest() const;
};

// Default config of an experiment: two-cycle, perturb, dhat-sweep, bench,
// lgssm-check.
Json Defaults(const std::string& experiment);

// Threads for sweep points, from DUALFILTER_THREADS (default 1).
int ThreadCount();

Report RunTwoCycle(const Json& config, const std::string& out_dir,
                   Format format = Format::kCsv);
Report RunPerturbation(const Json& config, const std::string& out_dir,
                       Format format = Format::kCsv);
Report RunDhatSweep(const Json& config, const std::string& out_dir,
                    Format format = Format::kCsv);
Report RunLinearBench(const Json& config, const std::string& out_dir,
                      Format format = Format::kCsv);
Report RunLgssmCheck(const Json& config, const std::string& out_dir,
                     Format format = Format::kCsv);

// Dispatch by subcommand name; writes manifest.json next to the data.
Report Run(const std::string& experiment, const Json& config,
           const std::string& out_dir, Format format);

// Two-cycle model of a config ({d, q, epsilon, target}).
hmm::Hmm ModelFromConfig(const Json& config);

// True when consecutive entries never decrease by more than
// tol * max(1, |value|).
bool IsMonotone(const std::vector<double>& trace, double tol = 1e-9);

}  // namespace dualfilter::xcli

#endif  // DUALFILTER_EXPERIMENTS_H_
