#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ectfusion/diagnostics.hpp"
#include "ectfusion/sampler.hpp"

namespace ectfusion::cli {

/// Command-line values that take precedence over the sampler config file.
struct SamplerOverrides {
  std::optional<int> chains, warmup, iters, thin, max_tree_depth, threads;
  std::optional<double> target_accept;
  std::optional<std::uint64_t> seed;

  void apply(SamplerConfig& cfg) const;
};

struct SimulateOptions {
  std::string truth_config;  // empty: built-in defaults
  std::uint64_t seed = 1;
  std::string out_dir;
};

struct FitOptions {
  std::string panel;
  std::string model_config;    // empty: defaults
  std::string sampler_config;  // empty: defaults
  std::string schema;          // empty: default column names
  std::string out_dir;
  std::optional<std::size_t> naive_pipeline;  // 1-based
  SamplerOverrides overrides;
  bool output_latents = false;
  bool progress = false;
};

struct SummarizeOptions {
  std::string draws;
  std::string out_dir;
  std::vector<std::string> filter;
  std::vector<std::string> pipelines;  // empty: taken from a sibling manifest when present
};

struct DiagnoseOptions {
  std::string draws;
  std::string out_dir;  // empty: report on stdout only
  ConvergenceThresholds thresholds;
  std::vector<std::string> filter;
};

struct NectSampleOptions {
  std::string params;
  std::size_t n = 10000;
  std::string pair = "1,2";
  std::uint64_t seed = 1;
  std::string out_dir;
};

struct CommandResult {
  int exit_code = 0;
  std::vector<std::filesystem::path> outputs;
  std::string report;
};

CommandResult cmd_simulate(const SimulateOptions& opt, const std::vector<std::string>& argv = {});
CommandResult cmd_fit(const FitOptions& opt, const std::vector<std::string>& argv = {});
CommandResult cmd_summarize(const SummarizeOptions& opt, const std::vector<std::string>& argv = {});
/// Exit code 0 when every threshold holds, otherwise the convergence code.
CommandResult cmd_diagnose(const DiagnoseOptions& opt, const std::vector<std::string>& argv = {});
CommandResult cmd_nect_sample(const NectSampleOptions& opt,
                              const std::vector<std::string>& argv = {});

/// Parses arguments, dispatches, and maps errors to exit codes.
int run(int argc, char** argv);

}  // namespace ectfusion::cli
