#pragma once

#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ectfusion/dataio.hpp"
#include "ectfusion/distributions.hpp"
#include "ectfusion/model.hpp"
#include "ectfusion/transforms.hpp"

namespace ectfusion {

namespace detail {

/// Observed quantities of the clinical submodel.
struct OutcomeData {
  Eigen::MatrixXd x;  // N x 6 design
  Eigen::VectorXd mmse;
  Eigen::VectorXd years;
  std::vector<std::size_t> subject;
  std::size_t n_subjects = 0;

  explicit OutcomeData(const PipelinePanel& panel)
      : x(design_matrix(panel)),
        mmse(panel.outcome()),
        years(panel.years()),
        subject(panel.row_subjects()),
        n_subjects(panel.n_subjects()) {}
};

/// Constrained-vector offsets of the clinical blocks, shared by both models.
struct ClinicalOffsets {
  std::size_t z0, z1, alpha0, alpha1, lambda0, lambda1, beta, sigma;

  explicit ClinicalOffsets(const TransformSpec& s)
      : z0(s.theta_offset("z0")),
        z1(s.theta_offset("z1")),
        alpha0(s.theta_offset("alpha0")),
        alpha1(s.theta_offset("alpha1")),
        lambda0(s.theta_offset("lambda0")),
        lambda1(s.theta_offset("lambda1")),
        beta(s.theta_offset("beta")),
        sigma(s.theta_offset("sigma")) {}
};

inline double normal_prior(double x, double mean, double sd, double* g) {
  const double z = (x - mean) / sd;
  if (g) *g += -z / sd;
  return -kLogSqrtTwoPi - std::log(sd) - 0.5 * z * z;
}

inline double halfnormal_prior(double x, double sd, double* g) {
  return std::numbers::ln2 + normal_prior(x, 0.0, sd, g);
}

/// Priors of the clinical block plus (optionally) the outcome likelihood.
/// `ct` supplies the eCT covariate per row; `g_ct` receives its gradient
/// when non-null.
inline double clinical_terms(const OutcomeData& d, const ModelConfig& cfg,
                             const ClinicalOffsets& o, const double* theta,
                             const double* ct, double* g, double* g_ct,
                             bool include_outcome) {
  const std::size_t I = d.n_subjects;
  const double* z0 = theta + o.z0;
  const double* z1 = theta + o.z1;
  const double alpha0 = theta[o.alpha0];
  const double alpha1 = theta[o.alpha1];
  const double lambda0 = theta[o.lambda0];
  const double lambda1 = theta[o.lambda1];
  const double* beta = theta + o.beta;
  const double sigma = theta[o.sigma];
  auto gp = [&](std::size_t off) -> double* { return g ? g + off : nullptr; };

  double lp = 0.0;
  for (std::size_t i = 0; i < I; ++i) {
    lp += normal_prior(z0[i], 0.0, 1.0, gp(o.z0 + i));
    lp += normal_prior(z1[i], 0.0, 1.0, gp(o.z1 + i));
  }
  lp += normal_prior(alpha0, cfg.alpha0_mean, cfg.alpha0_sd, gp(o.alpha0));
  lp += normal_prior(alpha1, cfg.alpha1_mean, cfg.alpha1_sd, gp(o.alpha1));
  lp += halfnormal_prior(lambda0, cfg.lambda_sd, gp(o.lambda0));
  lp += halfnormal_prior(lambda1, cfg.lambda_sd, gp(o.lambda1));
  for (std::size_t b = 0; b < kBetaNames.size(); ++b) {
    lp += normal_prior(beta[b], 0.0, cfg.beta_sd, gp(o.beta + b));
  }
  lp += halfnormal_prior(sigma, cfg.sigma_sd, gp(o.sigma));
  if (!include_outcome) return lp;

  const double inv_var = 1.0 / (sigma * sigma);
  double sum_sq = 0.0;
  for (Eigen::Index n = 0; n < d.mmse.size(); ++n) {
    const std::size_t i = d.subject[n];
    const double t = d.years[n];
    double mu = alpha0 + lambda0 * z0[i] + (alpha1 + lambda1 * z1[i]) * t +
                beta[kBetaCt] * ct[n];
    for (std::size_t b = 0; b < kBetaNames.size(); ++b) {
      if (kBetaDesignColumn[b] >= 0) mu += beta[b] * d.x(n, kBetaDesignColumn[b]);
    }
    const double e = d.mmse[n] - mu;
    sum_sq += e * e;
    if (g) {
      const double s = e * inv_var;
      for (std::size_t b = 0; b < kBetaNames.size(); ++b) {
        if (kBetaDesignColumn[b] >= 0) g[o.beta + b] += s * d.x(n, kBetaDesignColumn[b]);
      }
      g[o.beta + kBetaCt] += s * ct[n];
      if (g_ct) g_ct[n] += s * beta[kBetaCt];
      g[o.alpha0] += s;
      g[o.lambda0] += s * z0[i];
      g[o.z0 + i] += s * lambda0;
      g[o.alpha1] += s * t;
      g[o.lambda1] += s * z1[i] * t;
      g[o.z1 + i] += s * lambda1 * t;
    }
  }
  const double n_obs = static_cast<double>(d.mmse.size());
  lp += -n_obs * (kLogSqrtTwoPi + std::log(sigma)) - 0.5 * sum_sq * inv_var;
  if (g) g[o.sigma] += -n_obs / sigma + sum_sq * inv_var / sigma;
  return lp;
}

inline std::vector<std::string> clinical_names(std::size_t n_subjects) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n_subjects; ++i) names.push_back("z0[" + std::to_string(i + 1) + "]");
  for (std::size_t i = 0; i < n_subjects; ++i) names.push_back("z1[" + std::to_string(i + 1) + "]");
  for (const char* n : {"alpha0", "alpha1", "lambda0", "lambda1"}) names.emplace_back(n);
  for (const char* n : kBetaNames) names.emplace_back(n);
  names.emplace_back("sigma");
  return names;
}

inline void write_clinical(const ClinicalOffsets& o, std::size_t n_subjects,
                           const double* theta, double*& out) {
  for (std::size_t i = 0; i < n_subjects; ++i) *out++ = theta[o.z0 + i];
  for (std::size_t i = 0; i < n_subjects; ++i) *out++ = theta[o.z1 + i];
  *out++ = theta[o.alpha0];
  *out++ = theta[o.alpha1];
  *out++ = theta[o.lambda0];
  *out++ = theta[o.lambda1];
  for (std::size_t b = 0; b < kBetaNames.size(); ++b) *out++ = theta[o.beta + b];
  *out++ = theta[o.sigma];
}

/// False when a constrained value left the support through overflow or
/// underflow of the transform.
inline bool in_support(const TransformSpec& spec, std::span<const double> theta) {
  for (std::size_t b = 0; b < spec.blocks().size(); ++b) {
    const Block& blk = spec.blocks()[b];
    const std::size_t off = spec.theta_offset(b);
    for (std::size_t j = 0; j < blk.constrained_size(); ++j) {
      const double v = theta[off + j];
      if (!std::isfinite(v) || (blk.kind == Constraint::positive && !(v > 0.0))) return false;
    }
  }
  return true;
}

}  // namespace detail

/// Joint log posterior of the measurement + clinical model over the
/// unconstrained parameter vector, with an exact hand-derived gradient.
class FusionPosterior {
 public:
  FusionPosterior(const PipelinePanel& panel, ModelConfig cfg, bool output_latents = false)
      : cfg_(cfg),
        n_(panel.n_rows()),
        i_(panel.n_subjects()),
        k_(panel.n_pipelines()),
        y_(panel.ect_matrix()),
        outcome_(panel),
        spec_(fusion_layout(n_, i_, k_)),
        clin_(spec_),
        off_ct_(spec_.theta_offset("ct")),
        off_phi_(spec_.theta_offset("phi")),
        off_tau_(spec_.theta_offset("tau")),
        off_nu_(spec_.theta_offset("nu")),
        off_L_(spec_.theta_offset("L_R")),
        off_chisq_(spec_.theta_offset("chisq")),
        output_latents_(output_latents) {
    cfg_.validate();
    if (n_ == 0) throw SchemaError("panel has no rows");
  }

  const TransformSpec& transform() const { return spec_; }
  const ModelConfig& config() const { return cfg_; }
  std::size_t dim() const { return spec_.unconstrained_dim(); }
  std::size_t n_rows() const { return n_; }
  std::size_t n_subjects() const { return i_; }
  std::size_t n_pipelines() const { return k_; }

  double log_density(std::span<const double> u, bool jacobian = true) const {
    return evaluate(u, {}, jacobian);
  }

  /// Writes d/du into `grad` and returns the log density. Non-finite values
  /// are reported as -infinity.
  double log_density_gradient(std::span<const double> u, std::span<double> grad,
                              bool jacobian = true) const {
    return evaluate(u, grad, jacobian);
  }

  /// Log density in constrained coordinates (no Jacobian). When `grad_theta`
  /// is non-empty it receives d/dtheta; for the correlation block this is the
  /// gradient with respect to every entry of the K x K factor.
  double log_density_constrained(std::span<const double> theta,
                                 std::span<double> grad_theta) const {
    const bool want_grad = !grad_theta.empty();
    double* g = want_grad ? grad_theta.data() : nullptr;
    if (g) std::fill(grad_theta.begin(), grad_theta.end(), 0.0);
    const double* th = theta.data();
    const double* ct = th + off_ct_;
    const double* phi = th + off_phi_;
    const double* tau = th + off_tau_;
    const double* nu = th + off_nu_;
    const double* L = th + off_L_;
    const double* chisq = th + off_chisq_;
    const std::size_t K = k_;

    double lp = 0.0;
    for (std::size_t n = 0; n < n_; ++n) {
      lp += detail::normal_prior(ct[n], cfg_.ct_mean, cfg_.ct_sd, g ? g + off_ct_ + n : nullptr);
    }
    for (std::size_t k = 0; k < K; ++k) {
      lp += detail::normal_prior(phi[k], 0.0, cfg_.phi_sd, g ? g + off_phi_ + k : nullptr);
      lp += detail::halfnormal_prior(tau[k], cfg_.tau_sd, g ? g + off_tau_ + k : nullptr);
      lp += -std::log(cfg_.nu_mean) - nu[k] / cfg_.nu_mean;
      if (g) g[off_nu_ + k] += -1.0 / cfg_.nu_mean;
    }
    // LKJ on the factor: (K - r + 2 eta - 2) log L_rr for 1-based r >= 2.
    for (std::size_t r = 1; r < K; ++r) {
      const double coef = static_cast<double>(K - r - 1) + 2.0 * cfg_.lkj_eta - 2.0;
      lp += coef * std::log(L[r * K + r]);
      if (g) g[off_L_ + r * K + r] += coef / L[r * K + r];
    }

    // chi-square mixing latents
    std::vector<double> half_nu_terms(K);
    std::vector<double> dnu_const(K);
    for (std::size_t k = 0; k < K; ++k) {
      const double h = 0.5 * nu[k];
      half_nu_terms[k] = -h * std::numbers::ln2 - std::lgamma(h);
      if (g) dnu_const[k] = -0.5 * std::numbers::ln2 - 0.5 * boost::math::digamma(h);
    }
    for (std::size_t n = 0; n < n_; ++n) {
      for (std::size_t k = 0; k < K; ++k) {
        const double x = chisq[n * K + k];
        const double lx = std::log(x);
        lp += (0.5 * nu[k] - 1.0) * lx - 0.5 * x + half_nu_terms[k];
        if (g) {
          g[off_chisq_ + n * K + k] += (0.5 * nu[k] - 1.0) / x - 0.5;
          g[off_nu_ + k] += 0.5 * lx + dnu_const[k];
        }
      }
    }

    // observation terms, conditionally normal given the mixing latents
    std::vector<double> s(K), r(K), w(K), v(K);
    double log_diag_L = 0.0;
    for (std::size_t k = 0; k < K; ++k) log_diag_L += std::log(L[k * K + k]);
    for (std::size_t n = 0; n < n_; ++n) {
      double log_s = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        const double x = chisq[n * K + k];
        s[k] = tau[k] * std::sqrt(nu[k] / x);
        log_s += std::log(s[k]);
        r[k] = (y_(n, k) - ct[n] - phi[k]) / s[k];
      }
      // L w = r
      for (std::size_t a = 0; a < K; ++a) {
        double acc = r[a];
        for (std::size_t b = 0; b < a; ++b) acc -= L[a * K + b] * w[b];
        w[a] = acc / L[a * K + a];
      }
      double wsq = 0.0;
      for (std::size_t a = 0; a < K; ++a) wsq += w[a] * w[a];
      lp += -static_cast<double>(K) * kLogSqrtTwoPi - log_s - log_diag_L - 0.5 * wsq;
      if (!g) continue;
      // L^T v = w
      for (std::size_t a = K; a-- > 0;) {
        double acc = w[a];
        for (std::size_t b = a + 1; b < K; ++b) acc -= L[b * K + a] * v[b];
        v[a] = acc / L[a * K + a];
      }
      for (std::size_t k = 0; k < K; ++k) {
        const double de = v[k] / s[k];  // d lp / d (y - ct - phi) with sign flipped
        g[off_ct_ + n] += de;
        g[off_phi_ + k] += de;
        const double g_log_s = -1.0 + v[k] * r[k];
        g[off_tau_ + k] += g_log_s / tau[k];
        g[off_nu_ + k] += 0.5 * g_log_s / nu[k];
        g[off_chisq_ + n * K + k] += -0.5 * g_log_s / chisq[n * K + k];
      }
      for (std::size_t a = 0; a < K; ++a) {
        for (std::size_t b = 0; b <= a; ++b) g[off_L_ + a * K + b] += v[a] * w[b];
      }
    }
    if (g) {
      for (std::size_t k = 0; k < K; ++k) {
        g[off_L_ + k * K + k] += -static_cast<double>(n_) / L[k * K + k];
      }
    }

    lp += detail::clinical_terms(outcome_, cfg_, clin_, th, ct, g, g ? g + off_ct_ : nullptr,
                                 cfg_.include_outcome);
    return lp;
  }

  /// Names of the per-draw output columns (constrained values).
  std::vector<std::string> output_names() const {
    std::vector<std::string> names;
    for (std::size_t n = 0; n < n_; ++n) names.push_back("ct[" + std::to_string(n + 1) + "]");
    for (auto& c : detail::clinical_names(i_)) names.push_back(std::move(c));
    for (const char* blk : {"phi", "tau", "nu"}) {
      for (std::size_t k = 0; k < k_; ++k) {
        names.push_back(std::string(blk) + "[" + std::to_string(k + 1) + "]");
      }
    }
    for (std::size_t a = 0; a < k_; ++a) {
      for (std::size_t b = 0; b <= a; ++b) {
        names.push_back("L_R[" + std::to_string(a + 1) + "," + std::to_string(b + 1) + "]");
      }
    }
    if (output_latents_) {
      for (std::size_t n = 0; n < n_; ++n) {
        for (std::size_t k = 0; k < k_; ++k) {
          names.push_back("chisq[" + std::to_string(n + 1) + "," + std::to_string(k + 1) + "]");
        }
      }
    }
    return names;
  }

  void write_output(std::span<const double> u, std::span<double> out) const {
    std::vector<double> theta(spec_.constrained_dim());
    spec_.constrain(u, theta);
    const double* th = theta.data();
    double* o = out.data();
    for (std::size_t n = 0; n < n_; ++n) *o++ = th[off_ct_ + n];
    detail::write_clinical(clin_, i_, th, o);
    for (std::size_t off : {off_phi_, off_tau_, off_nu_}) {
      for (std::size_t k = 0; k < k_; ++k) *o++ = th[off + k];
    }
    for (std::size_t a = 0; a < k_; ++a) {
      for (std::size_t b = 0; b <= a; ++b) *o++ = th[off_L_ + a * k_ + b];
    }
    if (output_latents_) {
      for (std::size_t j = 0; j < n_ * k_; ++j) *o++ = th[off_chisq_ + j];
    }
  }

 private:
  double evaluate(std::span<const double> u, std::span<double> grad, bool jacobian) const {
    if (u.size() != dim() || (!grad.empty() && grad.size() != dim())) {
      throw DomainError("log posterior: expected a vector of dimension " +
                        std::to_string(dim()));
    }
    std::vector<double> theta(spec_.constrained_dim());
    const double log_jac = spec_.constrain(u, theta);
    if (!detail::in_support(spec_, theta)) {
      std::fill(grad.begin(), grad.end(), 0.0);
      return -std::numeric_limits<double>::infinity();
    }
    double lp = 0.0;
    if (grad.empty()) {
      lp = log_density_constrained(theta, {});
    } else {
      std::vector<double> grad_theta(spec_.constrained_dim());
      lp = log_density_constrained(theta, grad_theta);
      spec_.backprop(u, theta, grad_theta, grad, jacobian);
    }
    if (jacobian) lp += log_jac;
    if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
    return lp;
  }

  ModelConfig cfg_;
  std::size_t n_, i_, k_;
  Eigen::MatrixXd y_;
  detail::OutcomeData outcome_;
  TransformSpec spec_;
  detail::ClinicalOffsets clin_;
  std::size_t off_ct_, off_phi_, off_tau_, off_nu_, off_L_, off_chisq_;
  bool output_latents_;
};

/// Clinical regression alone, with one pipeline's observed eCT plugged in as
/// a fixed covariate. Same priors as the clinical block of the full model.
class ClinicalPosterior {
 public:
  ClinicalPosterior(const PipelinePanel& panel, std::size_t pipeline, ModelConfig cfg)
      : cfg_(cfg),
        i_(panel.n_subjects()),
        outcome_(panel),
        spec_(clinical_layout(i_)),
        clin_(spec_) {
    cfg_.validate();
    if (pipeline >= panel.n_pipelines()) {
      throw ConfigError("naive pipeline index out of range");
    }
    ct_.resize(panel.n_rows());
    for (std::size_t n = 0; n < panel.n_rows(); ++n) ct_[n] = panel.row(n).ect[pipeline];
  }

  /// Uses an explicit covariate vector in place of a pipeline column.
  ClinicalPosterior(const PipelinePanel& panel, std::vector<double> covariate, ModelConfig cfg)
      : cfg_(cfg),
        i_(panel.n_subjects()),
        outcome_(panel),
        spec_(clinical_layout(i_)),
        clin_(spec_),
        ct_(std::move(covariate)) {
    cfg_.validate();
    if (ct_.size() != panel.n_rows()) throw ConfigError("covariate length mismatch");
  }

  const TransformSpec& transform() const { return spec_; }
  std::size_t dim() const { return spec_.unconstrained_dim(); }
  const std::vector<double>& covariate() const { return ct_; }

  double log_density(std::span<const double> u, bool jacobian = true) const {
    return evaluate(u, {}, jacobian);
  }
  double log_density_gradient(std::span<const double> u, std::span<double> grad,
                              bool jacobian = true) const {
    return evaluate(u, grad, jacobian);
  }

  std::vector<std::string> output_names() const { return detail::clinical_names(i_); }

  void write_output(std::span<const double> u, std::span<double> out) const {
    std::vector<double> theta(spec_.constrained_dim());
    spec_.constrain(u, theta);
    double* o = out.data();
    detail::write_clinical(clin_, i_, theta.data(), o);
  }

 private:
  double evaluate(std::span<const double> u, std::span<double> grad, bool jacobian) const {
    if (u.size() != dim() || (!grad.empty() && grad.size() != dim())) {
      throw DomainError("log posterior: expected a vector of dimension " +
                        std::to_string(dim()));
    }
    std::vector<double> theta(spec_.constrained_dim());
    const double log_jac = spec_.constrain(u, theta);
    std::vector<double> grad_theta(grad.empty() ? 0 : spec_.constrained_dim(), 0.0);
    double lp = detail::clinical_terms(outcome_, cfg_, clin_, theta.data(), ct_.data(),
                                       grad.empty() ? nullptr : grad_theta.data(), nullptr,
                                       true);
    if (!grad.empty()) spec_.backprop(u, theta, grad_theta, grad, jacobian);
    if (jacobian) lp += log_jac;
    if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
    return lp;
  }

  ModelConfig cfg_;
  std::size_t i_;
  detail::OutcomeData outcome_;
  TransformSpec spec_;
  detail::ClinicalOffsets clin_;
  std::vector<double> ct_;
};

}  // namespace ectfusion
