#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "ectfusion/ectfusion.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;

namespace ectfusion::cli {

void SamplerOverrides::apply(SamplerConfig& cfg) const {
  if (chains) cfg.n_chains = *chains;
  if (warmup) cfg.n_warmup = *warmup;
  if (iters) cfg.n_iterations = *iters;
  if (thin) cfg.thin = *thin;
  if (max_tree_depth) cfg.max_tree_depth = *max_tree_depth;
  if (threads) cfg.n_threads = *threads;
  if (target_accept) cfg.target_accept = *target_accept;
  if (seed) cfg.seed = *seed;
  cfg.validate();
}

namespace {

/// Files are written under temporary names and renamed into place only
/// when the whole command succeeded; a failed command leaves nothing behind.
class StagedOutputs {
 public:
  explicit StagedOutputs(fs::path dir) : dir_(std::move(dir)) {}
  StagedOutputs(const StagedOutputs&) = delete;
  StagedOutputs& operator=(const StagedOutputs&) = delete;

  ~StagedOutputs() {
    std::error_code ec;
    for (const auto& [final_path, tmp] : files_) fs::remove(tmp, ec);
    if (created_dir_ && !committed_) fs::remove(dir_, ec);
  }

  fs::path stage(const std::string& name) {
    if (dir_.empty()) throw ConfigError("an output directory is required (--out)");
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_);
      created_dir_ = true;
    }
    const fs::path final_path = dir_ / name;
    const fs::path tmp = dir_ / ("." + name + ".partial");
    files_.emplace_back(final_path, tmp);
    return tmp;
  }

  std::vector<fs::path> commit() {
    std::vector<fs::path> out;
    for (const auto& [final_path, tmp] : files_) {
      fs::rename(tmp, final_path);
      out.push_back(final_path);
    }
    files_.clear();
    committed_ = true;
    return out;
  }

  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::vector<std::pair<fs::path, fs::path>> files_;
  bool created_dir_ = false;
  bool committed_ = false;
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + p.string() + "'");
  return out;
}

void write_manifest(const fs::path& dir, RunManifest& manifest, const std::vector<fs::path>& outputs,
                    const std::vector<std::string>& argv) {
  for (const auto& a : argv) manifest.add_argument(a);
  for (const auto& p : outputs) manifest.add_output(p);
  const fs::path tmp = dir / ".manifest.json.partial";
  {
    auto out = open_out(tmp);
    out << manifest.to_json().dump(2) << '\n';
  }
  fs::rename(tmp, dir / "manifest.json");
}

KeyValueConfig load_kv_or_empty(const std::string& path) {
  return path.empty() ? KeyValueConfig{} : KeyValueConfig::from_file(path);
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

std::vector<std::string> split_list(const std::string& s) {
  KeyValueConfig kv;
  kv.set("v", s);
  return kv.get_list("v");
}

}  // namespace

CommandResult cmd_simulate(const SimulateOptions& opt, const std::vector<std::string>& argv) {
  RunManifest manifest("simulate");
  const KeyValueConfig kv = load_kv_or_empty(opt.truth_config);
  const TruthConfig truth = TruthConfig::from_kv(kv);
  const SyntheticData data = generate(truth, opt.seed);

  StagedOutputs staged(opt.out_dir);
  {
    auto out = open_out(staged.stage("panel.csv"));
    write_panel(out, data.panel);
  }
  {
    auto out = open_out(staged.stage("truth.csv"));
    write_truth_csv(out, data.panel, data.truth);
  }
  {
    auto out = open_out(staged.stage("truth_config.txt"));
    out << truth.to_kv().to_text();
  }
  const auto outputs = staged.commit();
  if (!opt.truth_config.empty()) manifest.add_input(opt.truth_config);
  manifest.set_seed(opt.seed);
  manifest.add_config("truth", truth.to_kv());
  manifest.set_result("rows", data.panel.n_rows());
  manifest.set_result("subjects", data.panel.n_subjects());
  manifest.set_result("pipelines", data.panel.pipeline_names());
  write_manifest(staged.dir(), manifest, outputs, argv);

  CommandResult r;
  r.outputs = outputs;
  r.report = "simulated " + std::to_string(data.panel.n_rows()) + " rows for " +
             std::to_string(data.panel.n_subjects()) + " subjects\n";
  return r;
}

CommandResult cmd_fit(const FitOptions& opt, const std::vector<std::string>& argv) {
  RunManifest manifest(opt.naive_pipeline ? "fit-naive" : "fit");
  const Schema schema = opt.schema.empty() ? Schema{} : Schema::from_file(opt.schema);
  const LoadResult loaded = load_panel(opt.panel, schema);
  const PipelinePanel& panel = loaded.panel;
  const ModelConfig model = ModelConfig::from_kv(load_kv_or_empty(opt.model_config));
  SamplerConfig sampler = SamplerConfig::from_kv(load_kv_or_empty(opt.sampler_config));
  opt.overrides.apply(sampler);
  if (opt.naive_pipeline && (*opt.naive_pipeline < 1 || *opt.naive_pipeline > panel.n_pipelines())) {
    throw ConfigError("--naive-pipeline must be in 1.." + std::to_string(panel.n_pipelines()));
  }
  if (opt.out_dir.empty()) throw ConfigError("an output directory is required (--out)");

  ProgressFn progress;
  if (opt.progress) {
    const int step = std::max(1, (sampler.n_warmup + sampler.n_iterations) / 10);
    progress = [step](int chain, int it, int total) {
      if (it % step == 0 || it == total) {
        std::cerr << "chain " << chain + 1 << ": " << it << "/" << total << '\n';
      }
    };
  }
  const DrawsMatrix draws =
      opt.naive_pipeline
          ? fit_naive_single_pipeline(panel, *opt.naive_pipeline, model, sampler, progress)
          : fit_fusion(panel, model, sampler, opt.output_latents, progress);

  const SummaryTable table = summarize(draws);
  double max_rhat = kUndefined;
  std::string max_name;
  for (const auto& row : table.rows) {
    if (!std::isnan(row.rhat) && (std::isnan(max_rhat) || row.rhat > max_rhat)) {
      max_rhat = row.rhat;
      max_name = row.name;
    }
  }

  StagedOutputs staged(opt.out_dir);
  {
    auto out = open_out(staged.stage("draws.csv"));
    write_draws_csv(out, draws);
  }
  const auto outputs = staged.commit();
  manifest.add_input(opt.panel);
  if (!opt.schema.empty()) manifest.add_input(opt.schema);
  if (!opt.model_config.empty()) manifest.add_input(opt.model_config);
  if (!opt.sampler_config.empty()) manifest.add_input(opt.sampler_config);
  manifest.set_seed(sampler.seed);
  manifest.add_config("model", model.to_kv());
  manifest.add_config("sampler", sampler.to_kv());
  manifest.set_result("pipelines", panel.pipeline_names());
  manifest.set_result("rows", panel.n_rows());
  manifest.set_result("subjects", panel.n_subjects());
  manifest.set_result("dropped_missing_outcome", loaded.dropped_missing_outcome);
  if (opt.naive_pipeline) {
    manifest.set_result("naive_pipeline", *opt.naive_pipeline);
    manifest.set_result("naive_pipeline_name", panel.pipeline_names()[*opt.naive_pipeline - 1]);
  }
  manifest.set_result("divergent_transitions", draws.divergent_count());
  manifest.set_result("max_rhat", std::isnan(max_rhat) ? nlohmann::json(nullptr)
                                                       : nlohmann::json(max_rhat));
  write_manifest(staged.dir(), manifest, outputs, argv);

  CommandResult r;
  r.outputs = outputs;
  std::ostringstream os;
  os << "draws: " << draws.n_draws() << " (" << sampler.n_chains << " chains), divergent: "
     << draws.divergent_count() << ", max R-hat: " << fmt(max_rhat)
     << (max_name.empty() ? "" : " (" + max_name + ")") << '\n';
  r.report = os.str();
  return r;
}

CommandResult cmd_summarize(const SummarizeOptions& opt, const std::vector<std::string>& argv) {
  RunManifest manifest("summarize");
  DrawsMatrix draws = read_draws_csv(opt.draws);
  derived_quantities(draws);
  std::vector<std::string> pipelines = opt.pipelines;
  if (pipelines.empty()) {
    const fs::path sibling = fs::path(opt.draws).parent_path() / "manifest.json";
    if (fs::exists(sibling)) {
      std::ifstream in(sibling);
      try {
        const auto j = nlohmann::json::parse(in);
        if (j.contains("results") && j["results"].contains("pipelines")) {
          pipelines = j["results"]["pipelines"].get<std::vector<std::string>>();
          manifest.add_input(sibling);
        }
      } catch (const nlohmann::json::exception&) {
        // an unreadable sibling manifest only costs the pipeline labels
      }
    }
  }
  const SummaryTable table = summarize(draws, opt.filter);
  StagedOutputs staged(opt.out_dir);
  {
    auto out = open_out(staged.stage("summary.csv"));
    write_summary_csv(out, table, pipelines);
  }
  const auto outputs = staged.commit();
  manifest.add_input(opt.draws);
  KeyValueConfig snapshot;
  std::string filter;
  for (std::size_t i = 0; i < opt.filter.size(); ++i) filter += (i ? "," : "") + opt.filter[i];
  snapshot.set("filter", filter);
  manifest.add_config("summarize", snapshot);
  manifest.set_result("quantities", table.rows.size());
  write_manifest(staged.dir(), manifest, outputs, argv);

  CommandResult r;
  r.outputs = outputs;
  r.report = "summarized " + std::to_string(table.rows.size()) + " quantities\n";
  return r;
}

CommandResult cmd_diagnose(const DiagnoseOptions& opt, const std::vector<std::string>& argv) {
  RunManifest manifest("diagnose");
  const DrawsMatrix draws = read_draws_csv(opt.draws);
  const ConvergenceReport rep = diagnose(draws, opt.thresholds, opt.filter);

  std::ostringstream os;
  os << "chains: " << draws.n_chains() << ", draws: " << draws.n_draws() << '\n';
  os << "max R-hat: " << fmt(rep.max_rhat) << " (" << rep.max_rhat_name << "), threshold < "
     << fmt(opt.thresholds.rhat_max) << '\n';
  os << "min bulk ESS: " << fmt(rep.min_ess) << " (" << rep.min_ess_name << "), threshold > "
     << fmt(opt.thresholds.ess_min) << '\n';
  os << "divergence rate: " << fmt(rep.divergence_rate) << ", threshold < "
     << fmt(opt.thresholds.divergence_rate_max) << '\n';
  for (const auto& n : rep.failing_rhat) os << "R-hat fail: " << n << '\n';
  for (const auto& n : rep.failing_ess) os << "ESS fail: " << n << '\n';
  for (const auto& n : rep.undefined) os << "undefined (constant or non-finite): " << n << '\n';
  os << (rep.passed ? "PASS" : "FAIL") << '\n';

  CommandResult r;
  r.exit_code = rep.passed ? 0 : static_cast<int>(ErrorClass::convergence);
  r.report = os.str();
  if (!opt.out_dir.empty()) {
    StagedOutputs staged(opt.out_dir);
    {
      auto out = open_out(staged.stage("diagnostics.txt"));
      out << r.report;
    }
    r.outputs = staged.commit();
    manifest.add_input(opt.draws);
    KeyValueConfig snapshot;
    snapshot.set("rhat_max", fmt(opt.thresholds.rhat_max));
    snapshot.set("ess_min", fmt(opt.thresholds.ess_min));
    snapshot.set("divergence_rate_max", fmt(opt.thresholds.divergence_rate_max));
    manifest.add_config("thresholds", snapshot);
    manifest.set_result("passed", rep.passed);
    write_manifest(staged.dir(), manifest, r.outputs, argv);
  }
  return r;
}

namespace {

/// Keys: pipelines (optional names), mu or phi (locations, default 0), tau,
/// nu, corr (row-major K*K, default identity).
NectParams read_nect_params(const KeyValueConfig& kv, std::vector<std::string>& names) {
  kv.require_all_used({"pipelines", "mu", "phi", "tau", "nu", "corr"});
  const auto tau = kv.get_doubles("tau");
  const auto nu = kv.get_doubles("nu");
  const auto k = static_cast<Eigen::Index>(tau.size());
  NectParams p;
  p.tau = Eigen::Map<const Eigen::VectorXd>(tau.data(), k);
  p.nu = Eigen::Map<const Eigen::VectorXd>(nu.data(), static_cast<Eigen::Index>(nu.size()));
  p.mu = Eigen::VectorXd::Zero(k);
  for (const char* key : {"mu", "phi"}) {
    if (kv.contains(key)) {
      const auto m = kv.get_doubles(key);
      p.mu = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    }
  }
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(k, k);
  if (kv.contains("corr")) {
    const auto v = kv.get_doubles("corr");
    if (static_cast<Eigen::Index>(v.size()) != k * k) {
      throw ConfigError("nect params: corr needs K*K values");
    }
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = 0; b < k; ++b) R(a, b) = v[static_cast<std::size_t>(a * k + b)];
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(R);
  if (llt.info() != Eigen::Success) throw DomainError("nect params: corr is not positive definite");
  p.L_R = llt.matrixL();
  p.validate();
  names.clear();
  if (kv.contains("pipelines")) names = kv.get_list("pipelines");
  if (names.empty()) {
    for (Eigen::Index i = 0; i < k; ++i) names.push_back("y" + std::to_string(i + 1));
  }
  if (static_cast<Eigen::Index>(names.size()) != k) {
    throw ConfigError("nect params: pipelines has the wrong length");
  }
  return p;
}

std::size_t resolve_pipeline(const std::string& token, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == token) return i;
  }
  std::size_t idx = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), idx);
  if (ec == std::errc() && ptr == token.data() + token.size() && idx >= 1 && idx <= names.size()) {
    return idx - 1;
  }
  throw ConfigError("unknown pipeline '" + token + "'");
}

}  // namespace

CommandResult cmd_nect_sample(const NectSampleOptions& opt, const std::vector<std::string>& argv) {
  RunManifest manifest("nect-sample");
  const KeyValueConfig kv = KeyValueConfig::from_file(opt.params);
  std::vector<std::string> names;
  const NectParams params = read_nect_params(kv, names);
  const auto pair = split_list(opt.pair);
  if (pair.size() != 2) throw ConfigError("--pair needs two pipelines, e.g. FSLong,ANTsSST");
  const std::size_t a = resolve_pipeline(pair[0], names);
  const std::size_t b = resolve_pipeline(pair[1], names);
  if (opt.n == 0) throw ConfigError("--n must be positive");

  std::seed_seq seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(opt.seed >> 32),
                    0x6e656374u};
  std::mt19937_64 rng(seq);
  StagedOutputs staged(opt.out_dir);
  {
    auto out = open_out(staged.stage("nect_samples.csv"));
    out << names[a] << ',' << names[b] << '\n';
    for (std::size_t i = 0; i < opt.n; ++i) {
      const NectDraw d = nect_sample(params, rng);
      out << detail::format_double(d.y[static_cast<Eigen::Index>(a)]) << ','
          << detail::format_double(d.y[static_cast<Eigen::Index>(b)]) << '\n';
    }
  }
  const auto outputs = staged.commit();
  manifest.add_input(opt.params);
  manifest.set_seed(opt.seed);
  KeyValueConfig snapshot;
  snapshot.set("n", std::to_string(opt.n));
  snapshot.set("pair", names[a] + "," + names[b]);
  manifest.add_config("nect_sample", snapshot);
  write_manifest(staged.dir(), manifest, outputs, argv);

  CommandResult r;
  r.outputs = outputs;
  r.report = "wrote " + std::to_string(opt.n) + " draws of (" + names[a] + ", " + names[b] + ")\n";
  return r;
}

int run(int argc, char** argv) {
  CLI::App app{"Bayesian fusion of pipeline eCT measurements"};
  app.require_subcommand(1);
  std::vector<std::string> args(argv, argv + argc);

  SimulateOptions sim;
  auto* c_sim = app.add_subcommand("simulate", "generate a synthetic panel from ground truth");
  c_sim->add_option("truth_config", sim.truth_config, "truth key=value file (default: built-in)");
  c_sim->add_option("--seed", sim.seed, "generator seed");
  c_sim->add_option("--out", sim.out_dir, "output directory")->required();

  FitOptions fit;
  std::size_t naive = 0;
  int chains = 0, warmup = -1, iters = 0, thin = 0, depth = 0, threads = -1;
  double target = 0.0;
  std::uint64_t seed = 0;
  auto* c_fit = app.add_subcommand("fit", "sample the posterior for a panel");
  c_fit->add_option("panel", fit.panel, "panel CSV")->required();
  c_fit->add_option("--model", fit.model_config, "model key=value file");
  c_fit->add_option("--sampler", fit.sampler_config, "sampler key=value file");
  c_fit->add_option("--schema", fit.schema, "column mapping key=value file");
  c_fit->add_option("--out", fit.out_dir, "output directory")->required();
  auto* o_naive = c_fit->add_option("--naive-pipeline", naive,
                                    "fit the clinical model on one pipeline (1-based)");
  auto* o_chains = c_fit->add_option("--chains", chains);
  auto* o_warmup = c_fit->add_option("--warmup", warmup);
  auto* o_iters = c_fit->add_option("--iters", iters);
  auto* o_thin = c_fit->add_option("--thin", thin);
  auto* o_depth = c_fit->add_option("--max-tree-depth", depth);
  auto* o_target = c_fit->add_option("--target-accept", target);
  auto* o_threads = c_fit->add_option("--threads", threads, "0 = hardware concurrency");
  auto* o_seed = c_fit->add_option("--seed", seed);
  c_fit->add_flag("--output-latents", fit.output_latents, "include mixing latents in draws");
  c_fit->add_flag("--progress", fit.progress, "report progress on stderr");

  SummarizeOptions sum;
  std::string sum_filter, sum_pipelines;
  auto* c_sum = app.add_subcommand("summarize", "posterior summary table");
  c_sum->add_option("draws", sum.draws, "draws CSV")->required();
  c_sum->add_option("--out", sum.out_dir, "output directory")->required();
  c_sum->add_option("--params", sum_filter, "comma list of quantities or blocks");
  c_sum->add_option("--pipelines", sum_pipelines, "comma list of pipeline names");

  DiagnoseOptions diag;
  std::string diag_filter;
  auto* c_diag = app.add_subcommand("diagnose", "convergence checks with pass/fail exit code");
  c_diag->add_option("draws", diag.draws, "draws CSV")->required();
  c_diag->add_option("--out", diag.out_dir, "output directory for the report");
  c_diag->add_option("--rhat-max", diag.thresholds.rhat_max);
  c_diag->add_option("--ess-min", diag.thresholds.ess_min);
  c_diag->add_option("--divergence-max", diag.thresholds.divergence_rate_max);
  c_diag->add_option("--params", diag_filter, "comma list of quantities or blocks");

  NectSampleOptions nect;
  auto* c_nect = app.add_subcommand("nect-sample", "bivariate NECT samples for plotting");
  c_nect->add_option("params", nect.params, "NECT parameter key=value file")->required();
  c_nect->add_option("--n", nect.n, "number of draws");
  c_nect->add_option("--pair", nect.pair, "two pipelines by name or 1-based index");
  c_nect->add_option("--seed", nect.seed);
  c_nect->add_option("--out", nect.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorClass::usage);
  }

  try {
    CommandResult r;
    if (*c_sim) {
      r = cmd_simulate(sim, args);
    } else if (*c_fit) {
      if (*o_naive) fit.naive_pipeline = naive;
      if (*o_chains) fit.overrides.chains = chains;
      if (*o_warmup) fit.overrides.warmup = warmup;
      if (*o_iters) fit.overrides.iters = iters;
      if (*o_thin) fit.overrides.thin = thin;
      if (*o_depth) fit.overrides.max_tree_depth = depth;
      if (*o_target) fit.overrides.target_accept = target;
      if (*o_threads) fit.overrides.threads = threads;
      if (*o_seed) fit.overrides.seed = seed;
      r = cmd_fit(fit, args);
    } else if (*c_sum) {
      if (!sum_filter.empty()) sum.filter = split_list(sum_filter);
      if (!sum_pipelines.empty()) sum.pipelines = split_list(sum_pipelines);
      r = cmd_summarize(sum, args);
    } else if (*c_diag) {
      if (!diag_filter.empty()) diag.filter = split_list(diag_filter);
      r = cmd_diagnose(diag, args);
    } else if (*c_nect) {
      r = cmd_nect_sample(nect, args);
    }
    std::cout << r.report;
    return r.exit_code;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorClass::usage);
  }
}

}  // namespace ectfusion::cli
