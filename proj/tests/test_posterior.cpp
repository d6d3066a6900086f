#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ectfusion/ectfusion.hpp"

using namespace ectfusion;

namespace {

TruthConfig small_truth(std::size_t subjects, int visits, std::size_t k) {
  TruthConfig t;
  t.n_subjects = subjects;
  t.min_visits = t.max_visits = visits;
  t.pipelines.resize(k);
  t.phi.resize(k);
  t.tau.resize(k);
  t.nu.resize(k);
  t.R = t.R.topLeftCorner(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)).eval();
  return t;
}

PipelinePanel small_panel(std::uint64_t seed = 7) { return generate(small_truth(4, 3, 3), seed).panel; }

void set_block(const TransformSpec& spec, std::vector<double>& theta, const std::string& name,
               const std::vector<double>& v) {
  std::copy(v.begin(), v.end(), theta.begin() + static_cast<long>(spec.theta_offset(name)));
}

// A plausible constrained point: ct near the pipeline means, moderate scales.
std::vector<double> reasonable_theta(const FusionPosterior& post, const PipelinePanel& panel,
                                     std::mt19937_64& rng) {
  const auto& spec = post.transform();
  std::normal_distribution<double> normal;
  std::vector<double> theta(spec.constrained_dim());
  const std::size_t N = panel.n_rows(), I = panel.n_subjects(), K = panel.n_pipelines();
  std::vector<double> ct(N);
  for (std::size_t n = 0; n < N; ++n) {
    double s = 0.0;
    for (double v : panel.row(n).ect) s += v;
    ct[n] = s / static_cast<double>(K) + 0.1 * normal(rng);
  }
  set_block(spec, theta, "ct", ct);
  std::vector<double> z(I);
  for (auto& v : z) v = normal(rng);
  set_block(spec, theta, "z0", z);
  for (auto& v : z) v = normal(rng);
  set_block(spec, theta, "z1", z);
  set_block(spec, theta, "alpha0", {20.0 + normal(rng)});
  set_block(spec, theta, "alpha1", {0.3 * normal(rng)});
  set_block(spec, theta, "lambda0", {std::exp(0.3 * normal(rng))});
  set_block(spec, theta, "lambda1", {std::exp(0.3 * normal(rng))});
  std::vector<double> beta(7);
  for (auto& v : beta) v = 0.5 * normal(rng);
  set_block(spec, theta, "beta", beta);
  set_block(spec, theta, "sigma", {std::exp(0.3 * normal(rng))});
  std::vector<double> phi(K), tau(K), nu(K);
  for (std::size_t k = 0; k < K; ++k) {
    phi[k] = 0.3 * normal(rng);
    tau[k] = std::exp(-0.5 + 0.3 * normal(rng));
    nu[k] = std::exp(std::log(10.0) + 0.5 * normal(rng));
  }
  set_block(spec, theta, "phi", phi);
  set_block(spec, theta, "tau", tau);
  set_block(spec, theta, "nu", nu);
  TransformSpec corr;
  corr.add("L", Constraint::corr_cholesky, K);
  std::vector<double> uc(corr.unconstrained_dim());
  for (auto& v : uc) v = 0.5 * normal(rng);
  set_block(spec, theta, "L_R", corr.constrain(uc).theta);
  std::vector<double> q(N * K);
  for (auto& v : q) v = std::exp(0.4 * normal(rng));
  set_block(spec, theta, "chisq", q);
  return theta;
}

// |a - b| / max(1, |a|, |b|): relative with an absolute floor.
double rel_err(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

template <class F>
std::vector<double> central_diff(F f, std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Root of a function that is linear in ct, from two evaluations.
double linear_root(const std::function<double(double)>& f, double a, double b) {
  const double fa = f(a), fb = f(b);
  return a - fa * (b - a) / (fb - fa);
}

}  // namespace

TEST(Posterior, ParameterCountsAtFullScale) {
  const ParameterCounts c = fusion_parameter_counts(fusion_layout(2449, 663, 7));
  EXPECT_EQ(c.explicit_parameters, 3829u);
  EXPECT_EQ(c.latent_mixing, 17143u);
}

TEST(Posterior, FiniteAtInteriorPoint) {
  const PipelinePanel panel = small_panel();
  FusionPosterior post(panel, ModelConfig{});
  const auto& spec = post.transform();
  std::vector<double> theta(spec.constrained_dim());
  // ct = pipeline row means minus the mean offset (offsets all zero here).
  std::vector<double> ct;
  for (const auto& r : panel.rows()) ct.push_back((r.ect[0] + r.ect[1] + r.ect[2]) / 3.0);
  set_block(spec, theta, "ct", ct);
  set_block(spec, theta, "lambda0", {1.0});
  set_block(spec, theta, "lambda1", {1.0});
  set_block(spec, theta, "sigma", {1.0});
  set_block(spec, theta, "tau", {1.0, 1.0, 1.0});
  set_block(spec, theta, "nu", {10.0, 10.0, 10.0});
  set_block(spec, theta, "L_R", {1, 0, 0, 0, 1, 0, 0, 0, 1});
  set_block(spec, theta, "chisq", std::vector<double>(panel.n_rows() * 3, 1.0));
  EXPECT_TRUE(std::isfinite(log_posterior(spec.unconstrain(theta), panel, ModelConfig{})));
}

TEST(Posterior, GradientMatchesFiniteDifferences) {
  const PipelinePanel panel = small_panel();
  ASSERT_EQ(panel.n_rows(), 12u);
  ASSERT_EQ(panel.n_subjects(), 4u);
  ASSERT_EQ(panel.n_pipelines(), 3u);
  const ModelConfig cfg;
  FusionPosterior post(panel, cfg);
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const auto u = post.transform().unconstrain(reasonable_theta(post, panel, rng));
    const auto g = grad_log_posterior(u, panel, cfg);
    const auto fd = central_diff([&](const std::vector<double>& x) { return post.log_density(x); }, u);
    for (std::size_t i = 0; i < u.size(); ++i) {
      worst = std::max(worst, rel_err(g[i], fd[i]));
      EXPECT_LE(rel_err(g[i], fd[i]), 1e-4) << "point " << rep << " coordinate " << i;
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(Posterior, DeterministicEvaluation) {
  const PipelinePanel panel = small_panel();
  FusionPosterior post(panel, ModelConfig{});
  std::mt19937_64 rng(5);
  const auto u = post.transform().unconstrain(reasonable_theta(post, panel, rng));
  std::vector<double> g1(u.size()), g2(u.size());
  EXPECT_EQ(post.log_density_gradient(u, g1), post.log_density_gradient(u, g2));
  EXPECT_EQ(g1, g2);
}

TEST(Posterior, ConjugateNormalSingleRow) {
  // K = 1, one row, no outcome, q = 1: ct | y is normal with the
  // precision-weighted mean of the N(7, 2) prior and y - phi.
  std::vector<VisitRow> rows = {{"s", 0.0, 70.0, false, Dx::CN, 28.0, {6.4}}};
  const PipelinePanel panel = PipelinePanel::from_rows(rows, {"P"});
  ModelConfig cfg;
  cfg.include_outcome = false;
  FusionPosterior post(panel, cfg);
  const auto& spec = post.transform();
  const double phi = 0.3, tau = 0.5;
  auto dlogp_dct = [&](double ct) {
    std::vector<double> theta(spec.constrained_dim());
    set_block(spec, theta, "ct", {ct});
    set_block(spec, theta, "lambda0", {1.0});
    set_block(spec, theta, "lambda1", {1.0});
    set_block(spec, theta, "sigma", {1.0});
    set_block(spec, theta, "phi", {phi});
    set_block(spec, theta, "tau", {tau});
    set_block(spec, theta, "nu", {5.0});
    set_block(spec, theta, "L_R", {1.0});
    set_block(spec, theta, "chisq", {5.0});  // q = chisq / nu = 1
    const auto u = spec.unconstrain(theta);
    std::vector<double> g(u.size());
    post.log_density_gradient(u, g, false);
    return g[spec.u_offset("ct")] / ct;  // d/d log ct = ct d/d ct
  };
  const double mode = linear_root(dlogp_dct, 5.0, 7.0);
  const double expect = (7.0 / 4.0 + (6.4 - phi) / (tau * tau)) / (1.0 / 4.0 + 1.0 / (tau * tau));
  EXPECT_NEAR(mode, expect, 1e-8);
}

TEST(Posterior, SharedObservationPrecisionWeightedMode) {
  std::vector<VisitRow> rows = {{"s", 0.0, 70.0, false, Dx::CN, 28.0, {5.9, 5.9, 5.9}}};
  const PipelinePanel panel = PipelinePanel::from_rows(rows, {"A", "B", "C"});
  ModelConfig cfg;
  cfg.include_outcome = false;
  FusionPosterior post(panel, cfg);
  const auto& spec = post.transform();
  const std::vector<double> phi = {-0.4, 0.2, 0.9}, tau = {0.3, 0.8, 1.4};
  auto dlogp_dct = [&](double ct) {
    std::vector<double> theta(spec.constrained_dim());
    set_block(spec, theta, "ct", {ct});
    set_block(spec, theta, "lambda0", {1.0});
    set_block(spec, theta, "lambda1", {1.0});
    set_block(spec, theta, "sigma", {1.0});
    set_block(spec, theta, "phi", phi);
    set_block(spec, theta, "tau", tau);
    set_block(spec, theta, "nu", {5.0, 5.0, 5.0});
    set_block(spec, theta, "L_R", {1, 0, 0, 0, 1, 0, 0, 0, 1});
    set_block(spec, theta, "chisq", {5.0, 5.0, 5.0});
    const auto u = spec.unconstrain(theta);
    std::vector<double> g(u.size());
    post.log_density_gradient(u, g, false);
    return g[spec.u_offset("ct")] / ct;
  };
  double num = 7.0 / 4.0, den = 1.0 / 4.0;
  for (int k = 0; k < 3; ++k) {
    num += (5.9 - phi[static_cast<std::size_t>(k)]) / (tau[static_cast<std::size_t>(k)] * tau[static_cast<std::size_t>(k)]);
    den += 1.0 / (tau[static_cast<std::size_t>(k)] * tau[static_cast<std::size_t>(k)]);
  }
  EXPECT_NEAR(linear_root(dlogp_dct, 4.0, 8.0), num / den, 1e-8);
}

TEST(Posterior, PipelinePermutationInvariance) {
  // The LKJ term is a density on L_R; its Cholesky-parameterization Jacobian
  // and the transform Jacobian depend on pipeline order, so both are swapped
  // for the order-free density on R before comparing.
  const PipelinePanel panel = small_panel(11);
  const std::vector<std::size_t> perm = {2, 0, 1};
  std::vector<VisitRow> rows = panel.rows();
  for (auto& r : rows) r.ect = {r.ect[perm[0]], r.ect[perm[1]], r.ect[perm[2]]};
  const PipelinePanel permuted = PipelinePanel::from_rows(rows, {"c", "a", "b"});

  const ModelConfig cfg;
  FusionPosterior post(panel, cfg), post_p(permuted, cfg);
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 5; ++rep) {
    const auto theta = reasonable_theta(post, panel, rng);
    const auto& spec = post.transform();
    std::vector<double> theta_p = theta;
    auto permute_block = [&](const std::string& name) {
      const std::size_t o = spec.theta_offset(name);
      for (std::size_t k = 0; k < 3; ++k) theta_p[o + k] = theta[o + perm[k]];
    };
    for (const char* b : {"phi", "tau", "nu"}) permute_block(b);
    const std::size_t oq = spec.theta_offset("chisq");
    for (std::size_t n = 0; n < panel.n_rows(); ++n) {
      for (std::size_t k = 0; k < 3; ++k) theta_p[oq + n * 3 + k] = theta[oq + n * 3 + perm[k]];
    }
    const std::size_t oL = spec.theta_offset("L_R");
    Eigen::Matrix3d L;
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) L(a, b) = theta[oL + static_cast<std::size_t>(a * 3 + b)];
    }
    const Eigen::Matrix3d R = L * L.transpose();
    Eigen::Matrix3d Rp;
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) Rp(a, b) = R(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(a)]), static_cast<Eigen::Index>(perm[static_cast<std::size_t>(b)]));
    }
    const Eigen::Matrix3d Lp = Rp.llt().matrixL();
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) theta_p[oL + static_cast<std::size_t>(a * 3 + b)] = Lp(a, b);
    }
    const double lp = post.log_density_constrained(theta, {}) - lkj_chol_logpdf(L, cfg.lkj_eta) +
                      lkj_corr_logpdf(L, cfg.lkj_eta);
    const double lp_p = post_p.log_density_constrained(theta_p, {}) - lkj_chol_logpdf(Lp, cfg.lkj_eta) +
                        lkj_corr_logpdf(Lp, cfg.lkj_eta);
    EXPECT_NEAR(lp, lp_p, 1e-9 * std::abs(lp));
  }
}

TEST(Posterior, NonCenteredScoreAtZero) {
  const PipelinePanel panel = small_panel();
  FusionPosterior post(panel, ModelConfig{});
  const auto& spec = post.transform();
  std::mt19937_64 rng(3);
  auto theta = reasonable_theta(post, panel, rng);
  // lambda0 -> 0 removes every likelihood contribution to the z0 gradient.
  set_block(spec, theta, "lambda0", {1e-20});
  set_block(spec, theta, "z0", {0.0, 0.0, 0.7, -1.2});
  const auto u = spec.unconstrain(theta);
  std::vector<double> g(u.size());
  post.log_density_gradient(u, g);
  const std::size_t o = spec.u_offset("z0");
  EXPECT_NEAR(g[o], 0.0, 1e-12);
  EXPECT_NEAR(g[o + 1], 0.0, 1e-12);
  EXPECT_NEAR(g[o + 2], -0.7, 1e-12);
  EXPECT_NEAR(g[o + 3], 1.2, 1e-12);
}

TEST(Posterior, BetaMaleGradientByHand) {
  std::vector<VisitRow> rows = {{"m", 0.0, 72.0, true, Dx::MCI, 26.0, {5.5, 5.7}},
                                {"m", 1.5, 72.0, true, Dx::MCI, 24.5, {5.3, 5.6}}};
  const PipelinePanel panel = PipelinePanel::from_rows(rows, {"A", "B"});
  const ModelConfig cfg;
  FusionPosterior post(panel, cfg);
  const auto& spec = post.transform();
  std::vector<double> theta(spec.constrained_dim());
  const double ct0 = 5.6, ct1 = 5.4, a0 = 18.0, a1 = -0.2, l0 = 1.3, l1 = 0.8, z0 = 0.4, z1 = -0.6,
               sigma = 1.7;
  const std::vector<double> beta = {-1.0, -4.0, 0.02, 0.5, 0.9, -0.7, -2.0};
  set_block(spec, theta, "ct", {ct0, ct1});
  set_block(spec, theta, "z0", {z0});
  set_block(spec, theta, "z1", {z1});
  set_block(spec, theta, "alpha0", {a0});
  set_block(spec, theta, "alpha1", {a1});
  set_block(spec, theta, "lambda0", {l0});
  set_block(spec, theta, "lambda1", {l1});
  set_block(spec, theta, "beta", beta);
  set_block(spec, theta, "sigma", {sigma});
  set_block(spec, theta, "phi", {0.0, 0.1});
  set_block(spec, theta, "tau", {0.5, 0.5});
  set_block(spec, theta, "nu", {9.0, 9.0});
  set_block(spec, theta, "L_R", {1.0, 0.0, 0.3, std::sqrt(1.0 - 0.09)});
  set_block(spec, theta, "chisq", {1.0, 1.0, 1.0, 1.0});
  // mu = a0 + l0 z0 + b_mci + b_age * 72 + b_male + b_ct ct + (a1 + l1 z1 + b_mci_t) years
  const double base = a0 + l0 * z0 + beta[0] + beta[2] * 72.0 + beta[3];
  const double slope = a1 + l1 * z1 + beta[5];
  const double r0 = 26.0 - (base + beta[4] * ct0);
  const double r1 = 24.5 - (base + beta[4] * ct1 + slope * 1.5);
  const double expect = (r0 + r1) / (sigma * sigma) - beta[3] / (cfg.beta_sd * cfg.beta_sd);
  const auto u = spec.unconstrain(theta);
  std::vector<double> g(u.size());
  post.log_density_gradient(u, g);
  EXPECT_NEAR(g[spec.u_offset("beta") + 3], expect, 1e-10);
}

TEST(Posterior, TranslationEquivariance) {
  const PipelinePanel panel = small_panel(21);
  ModelConfig cfg;
  cfg.include_outcome = false;
  const double shift = 1.75;
  std::vector<VisitRow> rows = panel.rows();
  for (auto& r : rows) {
    for (auto& v : r.ect) v += shift;
  }
  const PipelinePanel shifted = PipelinePanel::from_rows(rows, panel.pipeline_names());
  ModelConfig cfg_s = cfg;
  cfg_s.ct_mean += shift;
  FusionPosterior post(panel, cfg), post_s(shifted, cfg_s);
  const auto& spec = post.transform();
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 5; ++rep) {
    const auto theta = reasonable_theta(post, panel, rng);
    auto theta_s = theta;
    const std::size_t oc = spec.theta_offset("ct");
    for (std::size_t n = 0; n < panel.n_rows(); ++n) theta_s[oc + n] += shift;
    std::vector<double> g(spec.constrained_dim()), g_s(spec.constrained_dim());
    post.log_density_constrained(theta, g);
    post_s.log_density_constrained(theta_s, g_s);
    for (const char* b : {"ct", "phi", "tau", "nu"}) {
      const std::size_t o = spec.theta_offset(b);
      const std::size_t len = std::string(b) == "ct" ? panel.n_rows() : 3;
      for (std::size_t i = 0; i < len; ++i) EXPECT_NEAR(g[o + i], g_s[o + i], 1e-9) << b << i;
    }
  }
}

TEST(Posterior, DimensionMismatchThrows) {
  const PipelinePanel panel = small_panel();
  EXPECT_THROW(log_posterior(std::vector<double>(3), panel, ModelConfig{}), DomainError);
}

TEST(Posterior, OutsideSupportIsNegativeInfinity) {
  const PipelinePanel panel = small_panel();
  FusionPosterior post(panel, ModelConfig{});
  std::vector<double> u(post.dim(), 0.0);
  u[post.transform().u_offset("nu")] = -800.0;  // nu underflows to 0
  std::vector<double> g(u.size(), 1.0);
  EXPECT_EQ(post.log_density_gradient(u, g), -std::numeric_limits<double>::infinity());
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(ClinicalPosterior, GradientMatchesFiniteDifferences) {
  const PipelinePanel panel = small_panel();
  ClinicalPosterior post(panel, 1, ModelConfig{});
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal(0.0, 0.7);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> u(post.dim());
    for (auto& v : u) v = normal(rng);
    u[post.transform().u_offset("alpha0")] += 20.0;
    std::vector<double> g(u.size());
    post.log_density_gradient(u, g);
    const auto fd = central_diff([&](const std::vector<double>& x) { return post.log_density(x); }, u);
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_LE(rel_err(g[i], fd[i]), 1e-4) << i;
  }
}

TEST(ClinicalPosterior, RejectsPipelineOutOfRange) {
  const PipelinePanel panel = small_panel();
  EXPECT_THROW(ClinicalPosterior(panel, 3, ModelConfig{}), ConfigError);
  EXPECT_THROW(fit_naive_single_pipeline(panel, 0, ModelConfig{}, SamplerConfig{}), ConfigError);
  EXPECT_THROW(fit_naive_single_pipeline(panel, 4, ModelConfig{}, SamplerConfig{}), ConfigError);
}

TEST(Reparam, RoundTripAndLogJacobian) {
  const PipelinePanel panel = generate(small_truth(2, 2, 2), 5).panel;
  FusionPosterior post(panel, ModelConfig{});
  const Shear shear = Shear::fusion(post.transform(), panel);
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 5; ++rep) {
    const auto u0 = post.transform().unconstrain(reasonable_theta(post, panel, rng));
    std::vector<double> w(u0.size()), u(u0.size());
    shear.from_model(u0, w);
    const double log_jac = shear.to_model(w, u);
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(u[i], u0[i], 1e-10);
    const std::size_t d = w.size();
    Eigen::MatrixXd J(d, d);
    for (std::size_t c = 0; c < d; ++c) {
      auto wp = w, wm = w;
      wp[c] += 1e-6;
      wm[c] -= 1e-6;
      std::vector<double> up(d), um(d);
      shear.to_model(wp, up);
      shear.to_model(wm, um);
      for (std::size_t r = 0; r < d; ++r) J(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = (up[r] - um[r]) / 2e-6;
    }
    EXPECT_NEAR(log_jac, std::log(std::abs(J.determinant())), 1e-5);
  }
}

TEST(Reparam, GradientMatchesFiniteDifferences) {
  const PipelinePanel panel = small_panel();
  FusionPosterior post(panel, ModelConfig{});
  ShearedModel model(post, Shear::fusion(post.transform(), panel));
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 10; ++rep) {
    const auto u0 = post.transform().unconstrain(reasonable_theta(post, panel, rng));
    std::vector<double> w(u0.size());
    model.shear().from_model(u0, w);
    std::vector<double> g(w.size());
    model.log_density_gradient(w, g);
    const auto fd = central_diff([&](const std::vector<double>& x) { return model.log_density(x); }, w);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_LE(rel_err(g[i], fd[i]), 1e-4) << rep << " " << i;
  }
}

TEST(Reparam, ClinicalGradientMatchesFiniteDifferences) {
  const PipelinePanel panel = small_panel();
  ClinicalPosterior post(panel, 0, ModelConfig{});
  ShearedModel model(post, Shear::clinical(post.transform(), panel, post.covariate()));
  std::mt19937_64 rng(14);
  std::normal_distribution<double> normal(0.0, 0.7);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> w(model.dim());
    for (auto& v : w) v = normal(rng);
    std::vector<double> g(w.size());
    model.log_density_gradient(w, g);
    const auto fd = central_diff([&](const std::vector<double>& x) { return model.log_density(x); }, w);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_LE(rel_err(g[i], fd[i]), 1e-4) << i;
  }
}

TEST(NaiveFit, NoiselessMeasurementAgreesWithFusion) {
  // tau = 0.02 is about 1% of the latent eCT spread; far smaller scales make
  // tau itself a funnel the sampler cannot cross in a short run.
  TruthConfig t = small_truth(40, 3, 3);
  t.tau = {0.02, 0.02, 0.02};
  t.phi = {0.0, 0.0, 0.0};
  t.ct_baseline_sd = 1.5;
  t.beta[kBetaCt] = 1.5;
  const PipelinePanel panel = generate(t, 17).panel;
  SamplerConfig s;
  s.n_chains = 2;
  s.n_warmup = 500;
  s.n_iterations = 500;
  s.seed = 3;
  s.target_accept = 0.9;
  const DrawsMatrix fused = fit_fusion(panel, ModelConfig{}, s);
  const DrawsMatrix naive = fit_naive_single_pipeline(panel, 1, ModelConfig{}, s);
  const SummaryRow f = summarize(fused, {"beta_ct"}).at("beta_ct");
  const SummaryRow n = summarize(naive, {"beta_ct"}).at("beta_ct");
  // Monte Carlo standard error of the difference of two means.
  const double mcse = std::sqrt(f.sd * f.sd / f.ess_bulk + n.sd * n.sd / n.ess_bulk);
  EXPECT_LT(std::abs(f.mean - n.mean), 4.0 * mcse + 0.05 * n.sd) << f.mean << " vs " << n.mean;
  EXPECT_NEAR(f.sd, n.sd, 0.2 * n.sd);
}

TEST(NaiveFit, ConstantCovariateLeavesBetaCtAtConditionalPrior) {
  // With eCT constant at c the likelihood sees alpha0 and beta_ct only through
  // s = alpha0 + c beta_ct. Under the N(15, 15) and N(0, 10) priors,
  // beta_ct | s is normal with slope 2 * 100 / (225 + 4 * 100) = 0.32 in s and
  // sd sqrt(100 - 0.32 * 2 * 100) = 6, whatever the data say about s.
  TruthConfig t = small_truth(20, 3, 2);
  const PipelinePanel base = generate(t, 23).panel;
  std::vector<VisitRow> rows = base.rows();
  for (auto& r : rows) r.ect = {2.0, 2.0};
  const PipelinePanel panel = PipelinePanel::from_rows(rows, base.pipeline_names());
  SamplerConfig s;
  s.n_chains = 2;
  s.n_warmup = 1000;
  s.n_iterations = 2000;
  s.seed = 5;
  const DrawsMatrix d = fit_naive_single_pipeline(panel, 1, ModelConfig{}, s);
  const Eigen::VectorXd b = d.column("beta_ct");
  const Eigen::VectorXd sum = d.column("alpha0") + 2.0 * b;
  const Eigen::VectorXd cb = b.array() - b.mean(), cs = sum.array() - sum.mean();
  const double slope = cb.dot(cs) / cs.squaredNorm();
  const Eigen::VectorXd resid = cb - slope * cs;
  EXPECT_NEAR(slope, 0.32, 0.05);
  EXPECT_NEAR(std::sqrt(resid.squaredNorm() / (resid.size() - 1)), 6.0, 0.9);
}
