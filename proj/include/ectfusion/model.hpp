#pragma once

#include <Eigen/Dense>

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ectfusion/error.hpp"
#include "ectfusion/kv_config.hpp"
#include "ectfusion/transforms.hpp"

namespace ectfusion {

/// Prior hypervalues for the fusion model. Defaults follow the generative
/// program the model was fitted with (tau ~ half-N(0, 1)).
struct ModelConfig {
  double phi_sd = 3.0;
  double tau_sd = 1.0;
  double nu_mean = 30.0;
  double lkj_eta = 2.0;
  double ct_mean = 7.0;
  double ct_sd = 2.0;
  double alpha0_mean = 15.0;
  double alpha0_sd = 15.0;
  double alpha1_mean = 0.0;
  double alpha1_sd = 5.0;
  double lambda_sd = 10.0;
  double beta_sd = 10.0;
  double sigma_sd = 1.0;
  /// When false the clinical outcome likelihood is dropped (measurement
  /// submodel only; the clinical parameters then see only their priors).
  bool include_outcome = true;

  void validate() const {
    for (double v : {phi_sd, tau_sd, nu_mean, lkj_eta, ct_sd, alpha0_sd, alpha1_sd,
                     lambda_sd, beta_sd, sigma_sd}) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw ConfigError("model config: scale-like hypervalues must be positive");
      }
    }
  }

  static ModelConfig from_kv(const KeyValueConfig& kv) {
    ModelConfig c;
    c.phi_sd = kv.get_double("phi_sd", c.phi_sd);
    c.tau_sd = kv.get_double("tau_sd", c.tau_sd);
    c.nu_mean = kv.get_double("nu_mean", c.nu_mean);
    c.lkj_eta = kv.get_double("lkj_eta", c.lkj_eta);
    c.ct_mean = kv.get_double("ct_mean", c.ct_mean);
    c.ct_sd = kv.get_double("ct_sd", c.ct_sd);
    c.alpha0_mean = kv.get_double("alpha0_mean", c.alpha0_mean);
    c.alpha0_sd = kv.get_double("alpha0_sd", c.alpha0_sd);
    c.alpha1_mean = kv.get_double("alpha1_mean", c.alpha1_mean);
    c.alpha1_sd = kv.get_double("alpha1_sd", c.alpha1_sd);
    c.lambda_sd = kv.get_double("lambda_sd", c.lambda_sd);
    c.beta_sd = kv.get_double("beta_sd", c.beta_sd);
    c.sigma_sd = kv.get_double("sigma_sd", c.sigma_sd);
    c.include_outcome = kv.get_bool("include_outcome", c.include_outcome);
    kv.require_all_used({"phi_sd", "tau_sd", "nu_mean", "lkj_eta", "ct_mean", "ct_sd",
                         "alpha0_mean", "alpha0_sd", "alpha1_mean", "alpha1_sd",
                         "lambda_sd", "beta_sd", "sigma_sd", "include_outcome"});
    c.validate();
    return c;
  }

  KeyValueConfig to_kv() const {
    KeyValueConfig kv;
    auto put = [&](const char* k, double v) { kv.set(k, detail_fmt(v)); };
    put("phi_sd", phi_sd);
    put("tau_sd", tau_sd);
    put("nu_mean", nu_mean);
    put("lkj_eta", lkj_eta);
    put("ct_mean", ct_mean);
    put("ct_sd", ct_sd);
    put("alpha0_mean", alpha0_mean);
    put("alpha0_sd", alpha0_sd);
    put("alpha1_mean", alpha1_mean);
    put("alpha1_sd", alpha1_sd);
    put("lambda_sd", lambda_sd);
    put("beta_sd", beta_sd);
    put("sigma_sd", sigma_sd);
    kv.set("include_outcome", include_outcome ? "true" : "false");
    return kv;
  }

 private:
  static std::string detail_fmt(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
  }
};

/// Regression coefficient order used throughout.
inline constexpr std::array<const char*, 7> kBetaNames = {
    "beta_mci", "beta_ad", "beta_age", "beta_male", "beta_ct", "beta_mci_t", "beta_ad_t"};
inline constexpr std::size_t kBetaCt = 4;
/// Design-matrix column feeding each non-ct coefficient.
inline constexpr std::array<int, 7> kBetaDesignColumn = {0, 1, 2, 3, -1, 4, 5};

/// Block layout of the full fusion model for a panel with N rows, I subjects
/// and K pipelines.
inline TransformSpec fusion_layout(std::size_t n_rows, std::size_t n_subjects,
                                   std::size_t k) {
  TransformSpec spec;
  spec.add("ct", Constraint::positive, n_rows)
      .add("z0", Constraint::identity, n_subjects)
      .add("z1", Constraint::identity, n_subjects)
      .add("alpha0", Constraint::identity, 1)
      .add("alpha1", Constraint::identity, 1)
      .add("lambda0", Constraint::positive, 1)
      .add("lambda1", Constraint::positive, 1)
      .add("beta", Constraint::identity, kBetaNames.size())
      .add("sigma", Constraint::positive, 1)
      .add("phi", Constraint::identity, k)
      .add("tau", Constraint::positive, k)
      .add("nu", Constraint::positive, k)
      .add("L_R", Constraint::corr_cholesky, k)
      .add("chisq", Constraint::positive, n_rows * k);
  return spec;
}

/// Clinical-only layout (observed eCT used as a fixed covariate).
inline TransformSpec clinical_layout(std::size_t n_subjects) {
  TransformSpec spec;
  spec.add("z0", Constraint::identity, n_subjects)
      .add("z1", Constraint::identity, n_subjects)
      .add("alpha0", Constraint::identity, 1)
      .add("alpha1", Constraint::identity, 1)
      .add("lambda0", Constraint::positive, 1)
      .add("lambda1", Constraint::positive, 1)
      .add("beta", Constraint::identity, kBetaNames.size())
      .add("sigma", Constraint::positive, 1);
  return spec;
}

struct ParameterCounts {
  std::size_t explicit_parameters = 0;
  std::size_t latent_mixing = 0;
};

/// Explicit parameters exclude the chi-square mixing latents, which are
/// counted separately.
inline ParameterCounts fusion_parameter_counts(const TransformSpec& spec) {
  ParameterCounts c;
  for (std::size_t b = 0; b < spec.blocks().size(); ++b) {
    const Block& blk = spec.blocks()[b];
    if (blk.name == "chisq") {
      c.latent_mixing += blk.unconstrained_size();
    } else {
      c.explicit_parameters += blk.unconstrained_size();
    }
  }
  return c;
}

/// Read-only structured view over a constrained fusion-model vector.
class ParamView {
 public:
  using RowMajorMap =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  ParamView(const TransformSpec& spec, std::span<const double> theta)
      : spec_(&spec), theta_(theta) {}

  std::span<const double> block(const std::string& name) const {
    const std::size_t b = spec_->index_of(name);
    return theta_.subspan(spec_->theta_offset(b), spec_->blocks()[b].constrained_size());
  }
  std::span<const double> ct() const { return block("ct"); }
  std::span<const double> z0() const { return block("z0"); }
  std::span<const double> z1() const { return block("z1"); }
  double alpha0() const { return block("alpha0")[0]; }
  double alpha1() const { return block("alpha1")[0]; }
  double lambda0() const { return block("lambda0")[0]; }
  double lambda1() const { return block("lambda1")[0]; }
  std::span<const double> beta() const { return block("beta"); }
  double sigma() const { return block("sigma")[0]; }
  std::span<const double> phi() const { return block("phi"); }
  std::span<const double> tau() const { return block("tau"); }
  std::span<const double> nu() const { return block("nu"); }
  RowMajorMap L_R() const {
    const std::size_t b = spec_->index_of("L_R");
    const auto k = static_cast<Eigen::Index>(spec_->blocks()[b].size);
    return RowMajorMap(theta_.data() + spec_->theta_offset(b), k, k);
  }
  /// N x K mixing latents, row-major.
  std::span<const double> chisq() const { return block("chisq"); }

 private:
  const TransformSpec* spec_;
  std::span<const double> theta_;
};

}  // namespace ectfusion
