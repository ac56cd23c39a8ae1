// Command line front end for the experiment runners.
//
//   dualfilter two-cycle --config cfg.json --seed 3 --out runs/a --format csv
//
// On success prints the manifest to stdout and exits 0. On failure prints a
// single-line error JSON {"error": {...}} to stderr and exits 1 (2 for usage
// errors).

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dualfilter/errors.h"
#include "dualfilter/experiments.h"
#include "dualfilter/io.h"

namespace {

using dualfilter::xcli::Json;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string format = "csv";
};

void PrintError(const std::string& kind, const std::string& message,
                const Json& extra = Json::object()) {
  Json e = {{"kind", kind}, {"message", message}};
  e.update(extra);
  std::cerr << Json{{"error", e}}.dump() << "\n";
}

int RunExperiment(const std::string& name, const Options& opts) {
  try {
    Json config = Json::object();
    if (!opts.config_path.empty()) {
      try {
        config = Json::parse(dualfilter::io::ReadFile(opts.config_path));
      } catch (const Json::parse_error& e) {
        throw dualfilter::ArgumentError("config is not valid JSON: " +
                                        std::string(e.what()));
      }
    }
    if (opts.seed) {
      if (!dualfilter::xcli::Defaults(name).contains("seed")) {
        throw dualfilter::ArgumentError(name + " takes no seed");
      }
      config["seed"] = *opts.seed;
    }
    const auto format = opts.format == "json" ? dualfilter::xcli::Format::kJson
                                              : dualfilter::xcli::Format::kCsv;
    const auto report = dualfilter::xcli::Run(name, config, opts.out, format);
    std::cout << report.Manifest().dump(2) << "\n";
    return 0;
  } catch (const dualfilter::ConvergenceError& e) {
    PrintError(e.kind(), e.what(),
               {{"residual", e.residual()}, {"iterations", e.iterations()}});
  } catch (const dualfilter::ImpossiblePathError& e) {
    PrintError(e.kind(), e.what(), {{"step", e.step()}});
  } catch (const dualfilter::Error& e) {
    PrintError(e.kind(), e.what());
  } catch (const std::exception& e) {
    PrintError("internal_error", e.what());
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual filter experiments"};
  app.require_subcommand(1);
  Options opts;
  for (const char* name :
       {"two-cycle", "dhat-sweep", "perturb", "bench", "lgssm-check"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", opts.config_path, "JSON config file")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", opts.seed, "master seed (overrides config)");
    sub->add_option("--out", opts.out, "output directory");
    sub->add_option("--format", opts.format, "heatmap format")
        ->check(CLI::IsMember({"csv", "json"}));
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    PrintError("usage_error", e.what());
    return 2;
  }
  return RunExperiment(app.get_subcommands().front()->get_name(), opts);
}
