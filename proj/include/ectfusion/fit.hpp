#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ectfusion/dataio.hpp"
#include "ectfusion/draws.hpp"
#include "ectfusion/model.hpp"
#include "ectfusion/posterior.hpp"
#include "ectfusion/reparam.hpp"
#include "ectfusion/sampler.hpp"

namespace ectfusion {

/// Log posterior (with log-Jacobian) of the full model at unconstrained `u`.
inline double log_posterior(std::span<const double> u, const PipelinePanel& panel,
                            const ModelConfig& cfg) {
  return FusionPosterior(panel, cfg).log_density(u);
}

inline std::vector<double> grad_log_posterior(std::span<const double> u,
                                              const PipelinePanel& panel,
                                              const ModelConfig& cfg) {
  FusionPosterior post(panel, cfg);
  std::vector<double> g(post.dim());
  post.log_density_gradient(u, g);
  return g;
}

/// Posterior draws of the full measurement + clinical model.
inline DrawsMatrix fit_fusion(const PipelinePanel& panel, const ModelConfig& cfg,
                              const SamplerConfig& sampler, bool output_latents = false,
                              const ProgressFn& progress = {}) {
  FusionPosterior post(panel, cfg, output_latents);
  ShearedModel model(post, Shear::fusion(post.transform(), panel));
  return nuts_run(model, sampler, progress);
}

/// Clinical model alone with pipeline `k` (1-based) as a fixed covariate.
inline DrawsMatrix fit_naive_single_pipeline(const PipelinePanel& panel, std::size_t k,
                                             const ModelConfig& cfg,
                                             const SamplerConfig& sampler,
                                             const ProgressFn& progress = {}) {
  if (k < 1 || k > panel.n_pipelines()) {
    throw ConfigError("naive pipeline index must be in 1.." +
                      std::to_string(panel.n_pipelines()));
  }
  ClinicalPosterior post(panel, k - 1, cfg);
  ShearedModel model(post, Shear::clinical(post.transform(), panel, post.covariate()));
  return nuts_run(model, sampler, progress);
}

}  // namespace ectfusion
