#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "ectfusion/error.hpp"

namespace ectfusion {

inline constexpr double kLogSqrtTwoPi = 0.91893853320467274178;

namespace detail {

inline void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw DomainError(std::string(what) + " must be finite");
  }
}

inline void require_positive(double x, const char* what) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError(std::string(what) + " must be positive and finite");
  }
}

}  // namespace detail

/// Log density of the location-scale Student t with `nu` degrees of freedom.
inline double t_logpdf(double x, double nu, double mu, double tau) {
  detail::require_finite(x, "x");
  detail::require_finite(mu, "mu");
  detail::require_positive(nu, "nu");
  detail::require_positive(tau, "tau");
  const double z = (x - mu) / tau;
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
         0.5 * std::log(nu * std::numbers::pi) - std::log(tau) -
         0.5 * (nu + 1.0) * std::log1p(z * z / nu);
}

/// Excess kurtosis 6/(nu - 4) of the t law; undefined for nu <= 4.
inline double excess_kurtosis(double nu) {
  if (!(nu > 4.0) || !std::isfinite(nu)) {
    throw DomainError("excess kurtosis requires nu > 4");
  }
  return 6.0 / (nu - 4.0);
}

inline double normal_logpdf(double x, double mu, double sd) {
  const double z = (x - mu) / sd;
  return -kLogSqrtTwoPi - std::log(sd) - 0.5 * z * z;
}

/// Half-normal on [0, inf) with scale `sd`; includes the log 2 constant.
inline double halfnormal_logpdf(double x, double sd) {
  detail::require_positive(sd, "half-normal scale");
  if (!(x >= 0.0) || !std::isfinite(x)) {
    throw DomainError("half-normal support is [0, inf)");
  }
  return std::numbers::ln2 + normal_logpdf(x, 0.0, sd);
}

/// Exponential parameterized by its MEAN (rate = 1/mean).
inline double exponential_logpdf(double x, double mean) {
  detail::require_positive(mean, "exponential mean");
  if (!(x >= 0.0) || !std::isfinite(x)) {
    throw DomainError("exponential support is [0, inf)");
  }
  return -std::log(mean) - x / mean;
}

/// Chi-square with real-valued degrees of freedom.
inline double chisq_logpdf(double x, double nu) {
  detail::require_positive(nu, "chi-square nu");
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError("chi-square support is (0, inf)");
  }
  const double half_nu = 0.5 * nu;
  return (half_nu - 1.0) * std::log(x) - 0.5 * x -
         half_nu * std::numbers::ln2 - std::lgamma(half_nu);
}

/// Checks the Cholesky-factor-of-correlation invariants: lower triangular,
/// positive diagonal, unit row norms.
inline void validate_corr_factor(const Eigen::MatrixXd& L, double tol = 1e-8) {
  if (L.rows() != L.cols() || L.rows() < 1) {
    throw DomainError("correlation factor must be square and non-empty");
  }
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    if (!(L(i, i) > 0.0)) {
      std::ostringstream msg;
      msg << "correlation factor diagonal entry " << i << " is not positive";
      throw DomainError(msg.str());
    }
    for (Eigen::Index j = i + 1; j < L.cols(); ++j) {
      if (L(i, j) != 0.0) {
        throw DomainError("correlation factor must be lower triangular");
      }
    }
    if (std::abs(L.row(i).squaredNorm() - 1.0) > tol) {
      std::ostringstream msg;
      msg << "correlation factor row " << i << " does not have unit norm";
      throw DomainError(msg.str());
    }
  }
}

/// Log density of N(mu, (D L)(D L)^T) with D = diag(scale_diag). One
/// triangular solve; the covariance is never formed.
inline double mvn_chol_logpdf(const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                              const Eigen::VectorXd& scale_diag,
                              const Eigen::MatrixXd& L) {
  const Eigen::Index k = y.size();
  if (mu.size() != k || scale_diag.size() != k || L.rows() != k ||
      L.cols() != k) {
    throw DomainError("mvn_chol_logpdf: dimension mismatch");
  }
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    detail::require_positive(scale_diag[i], "scale");
    log_det += std::log(scale_diag[i]) + std::log(L(i, i));
  }
  const Eigen::VectorXd r = (y - mu).cwiseQuotient(scale_diag);
  const Eigen::VectorXd w =
      L.triangularView<Eigen::Lower>().solve(r);
  return -static_cast<double>(k) * kLogSqrtTwoPi - log_det - 0.5 * w.squaredNorm();
}

/// Parameters of one K-dimensional non-elliptically-contoured t law.
struct NectParams {
  Eigen::VectorXd nu;
  Eigen::VectorXd mu;
  Eigen::VectorXd tau;
  Eigen::MatrixXd L_R;

  Eigen::Index dim() const { return mu.size(); }

  void validate() const {
    const Eigen::Index k = mu.size();
    if (k < 1 || nu.size() != k || tau.size() != k || L_R.rows() != k) {
      throw DomainError("NECT parameters have inconsistent dimensions");
    }
    for (Eigen::Index i = 0; i < k; ++i) {
      detail::require_positive(nu[i], "nu");
      detail::require_positive(tau[i], "tau");
      detail::require_finite(mu[i], "mu");
    }
    validate_corr_factor(L_R);
  }
};

/// Per-dimension mixing latents q_k = chi2(nu_k) / nu_k.
struct MixingLatents {
  Eigen::VectorXd q;
};

struct NectDraw {
  Eigen::VectorXd y;
  MixingLatents q;
};

/// y = mu + Q^{-1/2} (T L_R) z with independent chi-square mixing per
/// dimension. Each y_k is marginally t(nu_k, mu_k, tau_k).
template <class Rng>
NectDraw nect_sample(const NectParams& p, Rng& rng) {
  const Eigen::Index k = p.dim();
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(k);
  for (Eigen::Index i = 0; i < k; ++i) z[i] = normal(rng);
  Eigen::VectorXd q(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    std::chi_squared_distribution<double> chisq(p.nu[i]);
    q[i] = chisq(rng) / p.nu[i];
  }
  const Eigen::VectorXd correlated = p.L_R.triangularView<Eigen::Lower>() * z;
  Eigen::VectorXd y(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    y[i] = p.mu[i] + p.tau[i] * correlated[i] / std::sqrt(q[i]);
  }
  return {std::move(y), MixingLatents{std::move(q)}};
}

/// Log density of y given the mixing latents: a normal with per-dimension
/// scale tau_k / sqrt(q_k) and correlation factor L_R. The chi-square prior
/// on q is not included.
inline double nect_conditional_logpdf(const Eigen::VectorXd& y,
                                      const NectParams& p,
                                      const MixingLatents& q) {
  if (q.q.size() != p.dim()) {
    throw DomainError("mixing latents have wrong dimension");
  }
  Eigen::VectorXd scale(p.dim());
  for (Eigen::Index i = 0; i < p.dim(); ++i) {
    detail::require_positive(q.q[i], "mixing latent");
    scale[i] = p.tau[i] / std::sqrt(q.q[i]);
  }
  return mvn_chol_logpdf(y, p.mu, scale, p.L_R);
}

/// LKJ log density expressed on the Cholesky factor, including the
/// R -> L_R Jacobian. The eta-dependent normalizing constant is omitted.
inline double lkj_chol_logpdf(const Eigen::MatrixXd& L, double eta) {
  detail::require_positive(eta, "LKJ eta");
  validate_corr_factor(L);
  const Eigen::Index k = L.rows();
  double lp = 0.0;
  // 1-based row r contributes (K - r + 2 eta - 2) log L_rr for r >= 2.
  for (Eigen::Index i = 1; i < k; ++i) {
    const double coef = static_cast<double>(k - (i + 1)) + 2.0 * eta - 2.0;
    lp += coef * std::log(L(i, i));
  }
  return lp;
}

/// LKJ log density on the correlation matrix itself, (eta - 1) log det R,
/// evaluated through its factor. Unnormalized.
inline double lkj_corr_logpdf(const Eigen::MatrixXd& L, double eta) {
  detail::require_positive(eta, "LKJ eta");
  validate_corr_factor(L);
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) log_det += 2.0 * std::log(L(i, i));
  return (eta - 1.0) * log_det;
}

}  // namespace ectfusion
