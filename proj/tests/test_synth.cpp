#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <sstream>

#include "ectfusion/dataio.hpp"
#include "ectfusion/synth.hpp"

using namespace ectfusion;

namespace {

// Measurement errors y - ct - phi, N x K.
Eigen::MatrixXd errors(const SyntheticData& s, const TruthConfig& t) {
  const auto& p = s.panel;
  Eigen::MatrixXd e(static_cast<Eigen::Index>(p.n_rows()), static_cast<Eigen::Index>(p.n_pipelines()));
  for (std::size_t n = 0; n < p.n_rows(); ++n) {
    for (std::size_t k = 0; k < p.n_pipelines(); ++k) {
      e(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) =
          p.row(n).ect[k] - s.truth.ct[n] - t.phi[k];
    }
  }
  return e;
}

double corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd ca = a.array() - a.mean(), cb = b.array() - b.mean();
  return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
}

double sample_excess_kurtosis(const Eigen::VectorXd& x) {
  const Eigen::ArrayXd c = x.array() - x.mean();
  const double m2 = c.square().mean();
  return c.pow(4).mean() / (m2 * m2) - 3.0;
}

// E[q^{-1/2}] / sqrt(E[1/q]) for q = chi2_nu / nu: the factor by which
// independent mixing shrinks a correlation.
double mixing_shrink(double nu) {
  const double e_half = std::sqrt(nu / 2.0) * std::exp(std::lgamma((nu - 1.0) / 2.0) - std::lgamma(nu / 2.0));
  return e_half / std::sqrt(nu / (nu - 2.0));
}

}  // namespace

TEST(Generate, NoiselessLimitGivesOffsetLatent) {
  TruthConfig t;
  t.tau.assign(7, 1e-8);
  const SyntheticData s = generate(t, 1);
  ASSERT_EQ(s.panel.n_rows(), 240u);
  EXPECT_LT(errors(s, t).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Generate, ColumnMeansOffsetByPhi) {
  TruthConfig t;
  t.n_subjects = 200;
  const SyntheticData s = generate(t, 2);
  const Eigen::MatrixXd e = errors(s, t);
  const double n = static_cast<double>(e.rows());
  double mean_ct = 0.0;
  for (double c : s.truth.ct) mean_ct += c / n;
  for (Eigen::Index k = 0; k < e.cols(); ++k) {
    double col_mean = 0.0;
    for (std::size_t r = 0; r < s.panel.n_rows(); ++r) col_mean += s.panel.row(r).ect[static_cast<std::size_t>(k)] / n;
    const double sd = std::sqrt((e.col(k).array() - e.col(k).mean()).square().sum() / (n - 1.0));
    EXPECT_NEAR(col_mean - mean_ct, t.phi[static_cast<std::size_t>(k)], 3.0 * sd / std::sqrt(n))
        << t.pipelines[static_cast<std::size_t>(k)];
  }
}

TEST(Generate, DeterministicOutcomeWithoutNoise) {
  TruthConfig t;
  t.sigma = 0.0;
  t.beta = {0, 0, 0, 0, 0.75, 0, 0};
  t.n_subjects = 30;
  t.min_visits = 2;
  t.max_visits = 6;
  t.visit_jitter = 0.4;
  const SyntheticData s = generate(t, 3);
  for (std::size_t n = 0; n < s.panel.n_rows(); ++n) {
    const auto& r = s.panel.row(n);
    const std::size_t i = s.panel.subject_of(n);
    const double expect = s.truth.alpha0_subject[i] + 0.75 * s.truth.ct[n] + s.truth.alpha1_subject[i] * r.years;
    EXPECT_NEAR(*r.mmse, expect, 1e-12);
  }
}

TEST(Generate, NormalComponentCorrelationConvergesToR) {
  TruthConfig t;
  t.n_subjects = 2500;  // 10^4 rows
  const SyntheticData s = generate(t, 4);
  const Eigen::MatrixXd e = errors(s, t);
  ASSERT_EQ(e.rows(), 10000);
  const double n = static_cast<double>(e.rows());
  // Undo the mixing and scale to recover the N(0, R) component.
  Eigen::MatrixXd x = e;
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    x.col(k) = (e.col(k).array() * s.truth.q.col(k).array().sqrt() / t.tau[static_cast<std::size_t>(k)]).matrix();
  }
  for (Eigen::Index a = 1; a < 7; ++a) {
    for (Eigen::Index b = 0; b < a; ++b) {
      const double rho = t.R(a, b);
      EXPECT_NEAR(corr(x.col(a), x.col(b)), rho, 3.0 * (1.0 - rho * rho) / std::sqrt(n)) << a << "," << b;
    }
  }
}

TEST(Generate, RawErrorCorrelationMatchesMixingShrinkage) {
  // Independent mixing per pipeline shrinks corr(e_a, e_b) to
  // R_ab * c(nu_a) * c(nu_b).
  TruthConfig t;
  t.n_subjects = 25000;
  const SyntheticData s = generate(t, 5);
  const Eigen::MatrixXd e = errors(s, t);
  const double n = static_cast<double>(e.rows());
  for (auto [a, b] : {std::pair{3, 4}, std::pair{0, 1}, std::pair{2, 3}}) {
    const double expect = t.R(a, b) * mixing_shrink(t.nu[static_cast<std::size_t>(a)]) *
                          mixing_shrink(t.nu[static_cast<std::size_t>(b)]);
    EXPECT_NEAR(corr(e.col(a), e.col(b)), expect, 4.0 / std::sqrt(n)) << a << "," << b;
  }
}

TEST(Generate, KurtosisOrderFollowsNu) {
  TruthConfig t;
  t.n_subjects = 25000;
  const SyntheticData s = generate(t, 6);
  const Eigen::MatrixXd e = errors(s, t);
  // nu: FSLong 6.06 < FSCross 17.43 < ANTsNative 105.02.
  const double fslong = sample_excess_kurtosis(e.col(1));
  const double fscross = sample_excess_kurtosis(e.col(0));
  const double native = sample_excess_kurtosis(e.col(3));
  EXPECT_GT(fslong, fscross);
  EXPECT_GT(fscross, native);
}

TEST(Generate, PanelsPassValidation) {
  TruthConfig t;
  t.n_subjects = 40;
  t.min_visits = 1;
  t.max_visits = 5;
  t.visit_jitter = 0.3;
  t.round_mmse = true;
  const SyntheticData s = generate(t, 7);
  for (const auto& r : s.panel.rows()) {
    EXPECT_GE(*r.mmse, 0.0);
    EXPECT_LE(*r.mmse, 30.0);
    EXPECT_EQ(*r.mmse, std::round(*r.mmse));
  }
  std::stringstream buf;
  write_panel(buf, s.panel);
  const LoadResult back = read_panel(buf, Schema{});
  EXPECT_TRUE(back.panel == s.panel);
}

TEST(Generate, SeedDeterminism) {
  const TruthConfig t;
  EXPECT_TRUE(generate(t, 8).panel == generate(t, 8).panel);
  EXPECT_FALSE(generate(t, 8).panel == generate(t, 9).panel);
}

TEST(TruthConfig, KeyValueRoundTrip) {
  TruthConfig t;
  t.n_subjects = 17;
  t.phi[2] = 0.123456789;
  t.R(1, 0) = t.R(0, 1) = 0.3;
  t.round_mmse = true;
  const TruthConfig back = TruthConfig::from_kv(KeyValueConfig::from_string(t.to_kv().to_text()));
  EXPECT_EQ(back.n_subjects, 17u);
  EXPECT_EQ(back.phi, t.phi);
  EXPECT_EQ(back.tau, t.tau);
  EXPECT_EQ(back.nu, t.nu);
  EXPECT_EQ(back.beta, t.beta);
  EXPECT_EQ(back.pipelines, t.pipelines);
  EXPECT_TRUE(back.R.isApprox(t.R, 1e-15));
  EXPECT_TRUE(back.round_mmse);
  EXPECT_TRUE(generate(back, 10).panel == generate(t, 10).panel);
}

TEST(TruthConfig, RejectsInvalid) {
  TruthConfig t;
  t.tau[0] = 0.0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = TruthConfig{};
  t.R(0, 1) = t.R(1, 0) = 1.5;
  EXPECT_THROW(t.validate(), ConfigError);
  t = TruthConfig{};
  t.nu.pop_back();
  EXPECT_THROW(t.validate(), ConfigError);
}
