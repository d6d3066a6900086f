#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "ectfusion/model.hpp"
#include "ectfusion/transforms.hpp"

using namespace ectfusion;

namespace {

TransformSpec mixed_spec(std::size_t k) {
  TransformSpec spec;
  spec.add("a", Constraint::identity, 3)
      .add("s", Constraint::positive, 1)
      .add("v", Constraint::positive, 4)
      .add("L", Constraint::corr_cholesky, k);
  return spec;
}

std::vector<double> random_u(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  std::vector<double> u(n);
  for (auto& v : u) v = normal(rng);
  return u;
}

// Strictly lower entries of a row-major K x K factor.
std::vector<double> strict_lower(std::span<const double> L, std::size_t k) {
  std::vector<double> out;
  for (std::size_t i = 1; i < k; ++i) {
    for (std::size_t j = 0; j < i; ++j) out.push_back(L[i * k + j]);
  }
  return out;
}

// log |det| of the central-difference Jacobian of u -> f(u).
template <class F>
double numeric_log_det(F f, const std::vector<double>& u, double h = 1e-6) {
  const std::size_t n = u.size();
  Eigen::MatrixXd J(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    auto up = u, dn = u;
    up[c] += h;
    dn[c] -= h;
    const auto fp = f(up), fm = f(dn);
    for (std::size_t r = 0; r < n; ++r) J(r, c) = (fp[r] - fm[r]) / (2.0 * h);
  }
  return std::log(std::abs(J.determinant()));
}

}  // namespace

TEST(Transforms, PositiveAtZero) {
  TransformSpec spec;
  spec.add("s", Constraint::positive, 1);
  const auto c = spec.constrain(std::vector<double>{0.0});
  EXPECT_DOUBLE_EQ(c.theta[0], 1.0);
  EXPECT_DOUBLE_EQ(c.log_jac, 0.0);
  EXPECT_DOUBLE_EQ(spec.unconstrain(std::vector<double>{1.0})[0], 0.0);
}

TEST(Transforms, ZeroCorrelationBlockIsIdentity) {
  for (std::size_t k : {1u, 2u, 7u}) {
    TransformSpec spec;
    spec.add("L", Constraint::corr_cholesky, k);
    const auto c = spec.constrain(std::vector<double>(spec.unconstrained_dim(), 0.0));
    const Eigen::Map<const Eigen::Matrix<double, -1, -1, Eigen::RowMajor>> L(c.theta.data(), k, k);
    EXPECT_TRUE(L.isIdentity(0.0));
    std::vector<double> eye(k * k, 0.0);
    for (std::size_t i = 0; i < k; ++i) eye[i * k + i] = 1.0;
    for (double v : spec.unconstrain(eye)) EXPECT_EQ(v, 0.0);
  }
}

TEST(Transforms, DimensionBookkeeping) {
  const TransformSpec spec = mixed_spec(7);
  EXPECT_EQ(spec.unconstrained_dim(), 3u + 1u + 4u + 21u);
  EXPECT_EQ(spec.constrained_dim(), 3u + 1u + 4u + 49u);
  EXPECT_THROW(TransformSpec().add("x", Constraint::identity, 1).add("x", Constraint::positive, 1), ConfigError);
}

TEST(Transforms, RoundTripFromUnconstrained) {
  const TransformSpec spec = mixed_spec(7);
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    const auto u = random_u(spec.unconstrained_dim(), rng);
    const auto back = spec.unconstrain(spec.constrain(u).theta);
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(back[i], u[i], 1e-12);
  }
}

TEST(Transforms, RoundTripFromConstrained) {
  const TransformSpec spec = mixed_spec(7);
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 100; ++rep) {
    // A valid theta built independently: random SPD correlation, its LLT factor.
    std::normal_distribution<double> normal;
    Eigen::MatrixXd a(7, 7);
    for (int i = 0; i < 49; ++i) a.data()[i] = normal(rng);
    Eigen::MatrixXd s = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(7, 7);
    const Eigen::VectorXd d = s.diagonal().cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd L = Eigen::MatrixXd((d.asDiagonal() * s * d.asDiagonal()).llt().matrixL());
    std::vector<double> theta = {normal(rng), normal(rng), normal(rng), std::exp(normal(rng))};
    for (int i = 0; i < 4; ++i) theta.push_back(std::exp(normal(rng)));
    for (int i = 0; i < 7; ++i) {
      for (int j = 0; j < 7; ++j) theta.push_back(L(i, j));
    }
    const auto again = spec.constrain(spec.unconstrain(theta)).theta;
    for (std::size_t i = 0; i < theta.size(); ++i) EXPECT_NEAR(again[i], theta[i], 1e-12);
  }
}

TEST(Transforms, CorrelationFactorsAreValid) {
  TransformSpec spec;
  spec.add("L", Constraint::corr_cholesky, 7);
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    const auto t = spec.constrain(random_u(spec.unconstrained_dim(), rng, 2.0)).theta;
    for (std::size_t i = 0; i < 7; ++i) {
      double norm = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        norm += t[i * 7 + j] * t[i * 7 + j];
        if (j > i) {
          EXPECT_EQ(t[i * 7 + j], 0.0);
        }
      }
      EXPECT_NEAR(norm, 1.0, 1e-12);
      EXPECT_GT(t[i * 7 + i], 0.0);
    }
  }
}

TEST(Transforms, LogJacobianMatchesNumericDeterminant) {
  std::mt19937_64 rng(4);
  for (std::size_t k : {2u, 3u, 4u}) {
    TransformSpec spec;
    spec.add("L", Constraint::corr_cholesky, k);
    for (int rep = 0; rep < 10; ++rep) {
      const auto u = random_u(spec.unconstrained_dim(), rng);
      const double analytic = spec.constrain(u).log_jac;
      const double numeric = numeric_log_det(
          [&](const std::vector<double>& x) { return strict_lower(spec.constrain(x).theta, k); }, u);
      EXPECT_NEAR(analytic, numeric, 1e-5) << "K=" << k;
    }
  }
  TransformSpec pos;
  pos.add("v", Constraint::positive, 4);
  TransformSpec id;
  id.add("a", Constraint::identity, 3);
  for (int rep = 0; rep < 10; ++rep) {
    const auto u = random_u(4, rng);
    EXPECT_NEAR(pos.constrain(u).log_jac,
                numeric_log_det([&](const std::vector<double>& x) { return pos.constrain(x).theta; }, u), 1e-5);
    const auto a = random_u(3, rng);
    EXPECT_NEAR(id.constrain(a).log_jac,
                numeric_log_det([&](const std::vector<double>& x) { return id.constrain(x).theta; }, a), 1e-5);
  }
}

TEST(Transforms, BackpropMatchesFiniteDifferences) {
  const TransformSpec spec = mixed_spec(4);
  std::mt19937_64 rng(5);
  const auto w = random_u(spec.constrained_dim(), rng);
  // f(u) = w . theta(u) + log_jac(u)
  auto f = [&](const std::vector<double>& u) {
    const auto c = spec.constrain(u);
    double s = c.log_jac;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * c.theta[i];
    return s;
  };
  const auto u = random_u(spec.unconstrained_dim(), rng);
  const auto c = spec.constrain(u);
  std::vector<double> g(u.size());
  spec.backprop(u, c.theta, w, g);
  for (std::size_t i = 0; i < u.size(); ++i) {
    auto up = u, dn = u;
    up[i] += 1e-6;
    dn[i] -= 1e-6;
    EXPECT_NEAR(g[i], (f(up) - f(dn)) / 2e-6, 1e-6);
  }
}

TEST(Transforms, UnconstrainNamesViolatedBlock) {
  const TransformSpec spec = mixed_spec(2);
  std::vector<double> theta = {0, 0, 0, -1.0, 1, 1, 1, 1, 1, 0, 0, 1};
  try {
    spec.unconstrain(theta);
    FAIL() << "expected a domain error";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("'s'"), std::string::npos) << e.what();
  }
  theta[3] = 1.0;
  theta[10] = 0.5;  // row 2 of L no longer unit norm
  try {
    spec.unconstrain(theta);
    FAIL() << "expected a domain error";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("L"), std::string::npos) << e.what();
  }
}

TEST(Transforms, DimensionMismatchThrows) {
  const TransformSpec spec = mixed_spec(3);
  EXPECT_THROW(spec.constrain(std::vector<double>(spec.unconstrained_dim() + 1)), Error);
  EXPECT_THROW(spec.unconstrain(std::vector<double>(2)), Error);
}

TEST(Transforms, FusionLayoutSizes) {
  const TransformSpec spec = fusion_layout(12, 4, 3);
  EXPECT_EQ(spec.unconstrained_dim(), 12u + 8u + 4u + 7u + 1u + 9u + 3u + 36u);
  EXPECT_EQ(spec.blocks().back().name, "chisq");
}
