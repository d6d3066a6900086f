#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ectfusion/dataio.hpp"
#include "ectfusion/model.hpp"
#include "ectfusion/transforms.hpp"

namespace ectfusion {

/// Sampling coordinates w for the sampler, related to the model's
/// unconstrained vector u by a triangular map evaluated in this order:
///
///   log chisq_nk = log nu_k + s_k w_nk,            s_k = sqrt(2 / nu_k)
///   ct_n = c_n + h_n w_n                           (fusion model)
///   alpha0 = a0 - sum_b xbar_b beta_b - beta_ct * m(ct)
///   alpha1 = a1 - sum_b tbar_b beta_b              (time interactions)
///
/// where, with a_nk = q_nk / tau_k^2 and q = chisq / nu, P_n = sum_k a_nk,
/// h_n = P_n^{-1/2} and c_n = sum_k a_nk (y_nk - phi_k) / P_n is the
/// precision-weighted measurement of row n ignoring error correlation.
/// m(ct) is the mean latent eCT (the covariate mean for the clinical-only
/// model). Other blocks pass through. The log-Jacobian of the map is
/// returned by forward() and included by ShearedModel, so the target
/// density is unchanged.
///
/// The map removes the funnel between nu and its mixing latents, the
/// funnel between small pipeline scales and the latent eCT, the common
/// shift of eCT against the offsets, and the ridge between the intercept
/// and the uncentered covariates.
class Shear {
 public:
  struct Cache {
    Eigen::MatrixXd a;   // N x K
    Eigen::VectorXd p, c, h, ct;
    double m = 0.0;
  };

  static Shear fusion(const TransformSpec& spec, const PipelinePanel& panel) {
    Shear s = clinical_part(spec, panel);
    s.has_ct_ = true;
    s.n_ = panel.n_rows();
    s.k_ = panel.n_pipelines();
    s.y_ = panel.ect_matrix();
    s.ct_ = spec.u_offset("ct");
    s.phi_ = spec.u_offset("phi");
    s.tau_ = spec.u_offset("tau");
    s.nu_ = spec.u_offset("nu");
    s.chisq_ = spec.u_offset("chisq");
    s.dim_ = spec.unconstrained_dim();
    return s;
  }

  static Shear clinical(const TransformSpec& spec, const PipelinePanel& panel,
                        std::span<const double> covariate) {
    Shear s = clinical_part(spec, panel);
    double sum = 0.0;
    for (double v : covariate) sum += v;
    s.fixed_m_ = sum / static_cast<double>(covariate.size());
    s.dim_ = spec.unconstrained_dim();
    return s;
  }

  std::size_t dim() const { return dim_; }

  /// w -> u. Returns the log-Jacobian, or -infinity when the image leaves
  /// the support (non-positive eCT).
  double forward(std::span<const double> w, std::span<double> u, Cache& cache) const {
    std::copy(w.begin(), w.end(), u.begin());
    double log_jac = 0.0;
    cache.m = fixed_m_;
    if (has_ct_) {
      const auto N = static_cast<Eigen::Index>(n_);
      const auto K = static_cast<Eigen::Index>(k_);
      cache.a.resize(N, K);
      cache.p.resize(N);
      cache.c.resize(N);
      cache.h.resize(N);
      cache.ct.resize(N);
      for (std::size_t k = 0; k < k_; ++k) {
        const double log_nu = w[nu_ + k];
        const double s = latent_scale(log_nu);
        const double inv_tau2 = std::exp(-2.0 * w[tau_ + k]);
        for (std::size_t n = 0; n < n_; ++n) {
          const double wn = w[chisq_ + n * k_ + k];
          u[chisq_ + n * k_ + k] = log_nu + s * wn;
          cache.a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) =
              std::exp(s * wn) * inv_tau2;
        }
        log_jac += static_cast<double>(n_) * std::log(s);
      }
      double sum_ct = 0.0;
      for (Eigen::Index n = 0; n < N; ++n) {
        double p = 0.0, num = 0.0;
        for (Eigen::Index k = 0; k < K; ++k) {
          p += cache.a(n, k);
          num += cache.a(n, k) * (y_(n, k) - w[phi_ + static_cast<std::size_t>(k)]);
        }
        const double c = num / p;
        const double h = 1.0 / std::sqrt(p);
        const double ct = c + h * w[ct_ + static_cast<std::size_t>(n)];
        cache.p[n] = p;
        cache.c[n] = c;
        cache.h[n] = h;
        cache.ct[n] = ct;
        if (!(ct > 0.0) || !std::isfinite(ct)) return -std::numeric_limits<double>::infinity();
        u[ct_ + static_cast<std::size_t>(n)] = std::log(ct);
        log_jac += std::log(h) - std::log(ct);
        sum_ct += ct;
      }
      cache.m = sum_ct / static_cast<double>(n_);
    }
    u[alpha0_] = w[alpha0_] - intercept_shift(w, cache.m);
    u[alpha1_] = w[alpha1_] - slope_shift(w);
    return log_jac;
  }

  double to_model(std::span<const double> w, std::span<double> u) const {
    Cache cache;
    return forward(w, u, cache);
  }

  /// u -> w.
  void from_model(std::span<const double> u, std::span<double> w) const {
    std::copy(u.begin(), u.end(), w.begin());
    double m = fixed_m_;
    if (has_ct_) {
      double sum_ct = 0.0;
      for (std::size_t n = 0; n < n_; ++n) {
        double p = 0.0, num = 0.0;
        for (std::size_t k = 0; k < k_; ++k) {
          const double log_nu = u[nu_ + k];
          const double q = std::exp(u[chisq_ + n * k_ + k] - log_nu);
          const double a = q * std::exp(-2.0 * u[tau_ + k]);
          p += a;
          num += a * (y_(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) -
                      u[phi_ + k]);
        }
        const double ct = std::exp(u[ct_ + n]);
        w[ct_ + n] = (ct - num / p) * std::sqrt(p);
        sum_ct += ct;
      }
      m = sum_ct / static_cast<double>(n_);
      for (std::size_t k = 0; k < k_; ++k) {
        const double log_nu = u[nu_ + k];
        const double s = latent_scale(log_nu);
        for (std::size_t n = 0; n < n_; ++n) {
          w[chisq_ + n * k_ + k] = (u[chisq_ + n * k_ + k] - log_nu) / s;
        }
      }
    }
    w[alpha0_] = u[alpha0_] + intercept_shift(u, m);
    w[alpha1_] = u[alpha1_] + slope_shift(u);
  }

  /// Turns d/du (in `g`) into d/dw in place, including the gradient of the
  /// log-Jacobian returned by forward().
  void pullback(std::span<const double> w, const Cache& cache, std::span<double> g) const {
    const double g_a0 = g[alpha0_];
    const double g_a1 = g[alpha1_];
    for (std::size_t b = 0; b < kBetaNames.size(); ++b) {
      g[beta_ + b] -= xbar_[b] * g_a0 + tbar_[b] * g_a1;
    }
    g[beta_ + kBetaCt] -= cache.m * g_a0;
    if (!has_ct_) return;

    // log chisq depends on log nu directly as well as through s_k
    std::vector<double> g_nu_direct(k_, 0.0);
    for (std::size_t n = 0; n < n_; ++n) {
      for (std::size_t k = 0; k < k_; ++k) g_nu_direct[k] += g[chisq_ + n * k_ + k];
    }
    const double dm = -w[beta_ + kBetaCt] * g_a0 / static_cast<double>(n_);
    // gradient with respect to a_nk accumulated per pipeline as sum_n A_nk a_nk
    std::vector<double> ga_tau(k_, 0.0);
    for (std::size_t n = 0; n < n_; ++n) {
      const auto ni = static_cast<Eigen::Index>(n);
      const double ct = cache.ct[ni];
      // d/dct of the model density (via log ct), of -log ct, and of m(ct)
      const double G = (g[ct_ + n] - 1.0) / ct + dm;
      const double p = cache.p[ni];
      const double h = cache.h[ni];
      const double wn = w[ct_ + n];
      g[ct_ + n] = G * h;
      for (std::size_t k = 0; k < k_; ++k) {
        const auto ki = static_cast<Eigen::Index>(k);
        const double a = cache.a(ni, ki);
        g[phi_ + k] -= G * a / p;
        const double r = y_(ni, ki) - w[phi_ + k] - cache.c[ni];
        const double A = G * (r / p - 0.5 * wn * h / p) - 0.5 / p;
        const double Aa = A * a;
        g[chisq_ + n * k_ + k] += Aa;  // a depends on log q = s_k w_nk
        ga_tau[k] += Aa;
      }
    }
    for (std::size_t k = 0; k < k_; ++k) g[tau_ + k] -= 2.0 * ga_tau[k];
    for (std::size_t k = 0; k < k_; ++k) {
      const double s = latent_scale(w[nu_ + k]);
      double acc = g_nu_direct[k] - 0.5 * static_cast<double>(n_);
      for (std::size_t n = 0; n < n_; ++n) {
        double& gc = g[chisq_ + n * k_ + k];
        // gc holds d/d(log chisq) from the model plus d/d(log q) from a;
        // log chisq = log nu + s w and log q = s w.
        acc += gc * (-0.5 * s * w[chisq_ + n * k_ + k]);
        gc *= s;
      }
      g[nu_ + k] += acc;
    }
  }

 private:
  static Shear clinical_part(const TransformSpec& spec, const PipelinePanel& panel) {
    Shear s;
    s.alpha0_ = spec.u_offset("alpha0");
    s.alpha1_ = spec.u_offset("alpha1");
    s.beta_ = spec.u_offset("beta");
    const Eigen::MatrixXd x = design_matrix(panel);
    const Eigen::VectorXd t = panel.years();
    const double t2 = t.squaredNorm();
    s.xbar_.assign(kBetaNames.size(), 0.0);
    s.tbar_.assign(kBetaNames.size(), 0.0);
    for (std::size_t b = 0; b < kBetaNames.size(); ++b) {
      const int col = kBetaDesignColumn[b];
      if (col < 0) continue;
      if (col < 4) {
        s.xbar_[b] = x.col(col).mean();
      } else if (t2 > 0.0) {
        // interaction column = indicator * years; weight rows by years^2
        s.tbar_[b] = x.col(col).dot(t) / t2;
      }
    }
    return s;
  }

  static double latent_scale(double log_nu) {
    return std::sqrt(2.0) * std::exp(-0.5 * log_nu);
  }

  double intercept_shift(std::span<const double> v, double m) const {
    double s = v[beta_ + kBetaCt] * m;
    for (std::size_t b = 0; b < kBetaNames.size(); ++b) s += xbar_[b] * v[beta_ + b];
    return s;
  }

  double slope_shift(std::span<const double> v) const {
    double s = 0.0;
    for (std::size_t b = 0; b < kBetaNames.size(); ++b) s += tbar_[b] * v[beta_ + b];
    return s;
  }

  std::size_t dim_ = 0;
  std::size_t alpha0_ = 0, alpha1_ = 0, beta_ = 0;
  std::vector<double> xbar_, tbar_;
  bool has_ct_ = false;
  double fixed_m_ = 0.0;
  Eigen::MatrixXd y_;
  std::size_t n_ = 0, k_ = 0, ct_ = 0, phi_ = 0, tau_ = 0, nu_ = 0, chisq_ = 0;
};

/// Presents a posterior to the sampler in Shear coordinates. Output columns
/// are those of the wrapped posterior.
template <class P>
class ShearedModel {
 public:
  ShearedModel(const P& posterior, Shear shear) : post_(&posterior), shear_(std::move(shear)) {}

  std::size_t dim() const { return post_->dim(); }

  double log_density_gradient(std::span<const double> w, std::span<double> g) const {
    std::vector<double> u(w.size());
    Shear::Cache cache;
    const double log_jac = shear_.forward(w, u, cache);
    if (!std::isfinite(log_jac)) {
      std::fill(g.begin(), g.end(), 0.0);
      return -std::numeric_limits<double>::infinity();
    }
    const double lp = post_->log_density_gradient(u, g);
    if (!std::isfinite(lp)) return lp;
    shear_.pullback(w, cache, g);
    return lp + log_jac;
  }

  double log_density(std::span<const double> w) const {
    std::vector<double> u(w.size());
    const double log_jac = shear_.to_model(w, u);
    if (!std::isfinite(log_jac)) return -std::numeric_limits<double>::infinity();
    return post_->log_density(u) + log_jac;
  }

  std::vector<std::string> output_names() const { return post_->output_names(); }

  void write_output(std::span<const double> w, std::span<double> out) const {
    std::vector<double> u(w.size());
    shear_.to_model(w, u);
    post_->write_output(u, out);
  }

  const Shear& shear() const { return shear_; }

 private:
  const P* post_;
  Shear shear_;
};

}  // namespace ectfusion
