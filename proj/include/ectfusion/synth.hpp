#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "ectfusion/dataio.hpp"
#include "ectfusion/distributions.hpp"
#include "ectfusion/error.hpp"
#include "ectfusion/kv_config.hpp"
#include "ectfusion/model.hpp"

namespace ectfusion {

/// Ground truth for the forward simulation. Defaults are the posterior means
/// reported for the seven-pipeline ADNI fit.
struct TruthConfig {
  std::size_t n_subjects = 60;
  int min_visits = 4;
  int max_visits = 4;
  /// Visit j >= 1 happens at j * visit_interval + U(-visit_jitter, visit_jitter).
  double visit_interval = 1.0;
  double visit_jitter = 0.0;

  std::vector<std::string> pipelines = {"FSCross",   "FSLong",        "ANTsCross",
                                        "ANTsNative", "ANTsSST",      "ANTsXNetCross",
                                        "ANTsXNetLong"};
  std::vector<double> phi = {-1.02, -1.00, 0.92, 0.21, 0.23, -0.51, 0.24};
  std::vector<double> tau = {0.21, 0.24, 1.06, 1.23, 1.27, 0.97, 0.79};
  std::vector<double> nu = {17.43, 6.06, 15.66, 105.02, 54.78, 35.95, 13.01};
  /// Error correlation matrix (not its factor); factored at generation time.
  Eigen::MatrixXd R = default_correlation();

  double alpha0 = 22.29;
  double alpha1 = 0.01;
  double lambda0 = 1.61;
  double lambda1 = 1.53;
  /// Order as kBetaNames.
  std::vector<double> beta = {-1.72, -4.86, 0.01, 0.00, 0.75, -0.81, -2.35};
  double sigma = 1.48;

  double ct_baseline_mean = 7.0;
  double ct_baseline_sd = 0.8;
  double ct_slope_mean = -0.1;
  double ct_slope_sd = 0.05;

  /// Diagnosis marginals (CN, MCI, AD) follow the 197/324/142 cohort split.
  double p_mci = 324.0 / 663.0;
  double p_ad = 142.0 / 663.0;
  double p_male = 0.5;
  double age_mean = 75.0;
  double age_sd = 6.5;

  bool round_mmse = false;

  static Eigen::MatrixXd default_correlation() {
    Eigen::MatrixXd r = Eigen::MatrixXd::Identity(7, 7);
    auto set = [&](int a, int b, double v) { r(a, b) = r(b, a) = v; };
    set(0, 1, 0.47);
    set(2, 3, 0.79);
    set(2, 4, 0.76);
    set(3, 4, 0.95);
    set(0, 2, -0.32);
    set(1, 2, -0.24);
    return r;
  }

  std::size_t n_pipelines() const { return phi.size(); }

  /// Lower Cholesky factor of R; throws when R is not a valid correlation.
  Eigen::MatrixXd corr_factor() const {
    Eigen::LLT<Eigen::MatrixXd> llt(R);
    if (llt.info() != Eigen::Success) {
      throw ConfigError("truth config: correlation matrix is not positive definite");
    }
    Eigen::MatrixXd L = llt.matrixL();
    validate_corr_factor(L, 1e-8);
    return L;
  }

  void validate() const {
    const std::size_t k = phi.size();
    if (k == 0 || tau.size() != k || nu.size() != k || pipelines.size() != k ||
        R.rows() != static_cast<Eigen::Index>(k) || R.cols() != static_cast<Eigen::Index>(k)) {
      throw ConfigError("truth config: pipeline-indexed entries have inconsistent lengths");
    }
    if (beta.size() != kBetaNames.size()) throw ConfigError("truth config: beta needs 7 values");
    if (n_subjects == 0 || min_visits < 1 || max_visits < min_visits) {
      throw ConfigError("truth config: invalid subject or visit counts");
    }
    for (std::size_t i = 0; i < k; ++i) {
      if (!(tau[i] > 0.0) || !(nu[i] > 0.0)) {
        throw ConfigError("truth config: tau and nu must be positive");
      }
    }
    for (double v : {lambda0, lambda1, ct_baseline_sd, ct_slope_sd, age_sd}) {
      if (!(v >= 0.0)) throw ConfigError("truth config: scale entries must be non-negative");
    }
    if (!(sigma >= 0.0)) throw ConfigError("truth config: sigma must be non-negative");
    if (!(visit_interval > 0.0) || visit_jitter < 0.0 || visit_jitter >= visit_interval) {
      throw ConfigError("truth config: need 0 <= visit_jitter < visit_interval");
    }
    if (p_mci < 0 || p_ad < 0 || p_mci + p_ad > 1.0 || p_male < 0 || p_male > 1) {
      throw ConfigError("truth config: invalid marginal probabilities");
    }
    if (!((R - R.transpose()).cwiseAbs().maxCoeff() < 1e-12) ||
        !((R.diagonal().array() - 1.0).abs().maxCoeff() < 1e-12)) {
      throw ConfigError("truth config: R must be symmetric with unit diagonal");
    }
    corr_factor();
  }

  /// Keys: subjects, min_visits, max_visits, visit_interval, visit_jitter,
  /// pipelines, phi, tau, nu, corr (row-major K*K), alpha0, alpha1, lambda0,
  /// lambda1, beta (7 values), sigma, ct_baseline_mean, ct_baseline_sd,
  /// ct_slope_mean, ct_slope_sd, p_mci, p_ad, p_male, age_mean, age_sd,
  /// round_mmse.
  static TruthConfig from_kv(const KeyValueConfig& kv) {
    TruthConfig t;
    t.n_subjects = static_cast<std::size_t>(kv.get_int("subjects", static_cast<int>(t.n_subjects)));
    t.min_visits = kv.get_int("min_visits", t.min_visits);
    t.max_visits = kv.get_int("max_visits", t.max_visits);
    t.visit_interval = kv.get_double("visit_interval", t.visit_interval);
    t.visit_jitter = kv.get_double("visit_jitter", t.visit_jitter);
    if (kv.contains("pipelines")) t.pipelines = kv.get_list("pipelines");
    if (kv.contains("phi")) t.phi = kv.get_doubles("phi");
    if (kv.contains("tau")) t.tau = kv.get_doubles("tau");
    if (kv.contains("nu")) t.nu = kv.get_doubles("nu");
    if (kv.contains("corr")) {
      const auto v = kv.get_doubles("corr");
      const auto k = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(v.size()))));
      if (static_cast<std::size_t>(k * k) != v.size()) {
        throw ConfigError("truth config: corr needs K*K values");
      }
      t.R.resize(k, k);
      for (Eigen::Index a = 0; a < k; ++a) {
        for (Eigen::Index b = 0; b < k; ++b) t.R(a, b) = v[static_cast<std::size_t>(a * k + b)];
      }
    } else if (t.phi.size() != 7) {
      t.R = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(t.phi.size()),
                                      static_cast<Eigen::Index>(t.phi.size()));
    }
    if (!kv.contains("pipelines") && t.phi.size() != 7) {
      t.pipelines.clear();
      for (std::size_t k = 0; k < t.phi.size(); ++k) t.pipelines.push_back("P" + std::to_string(k + 1));
    }
    t.alpha0 = kv.get_double("alpha0", t.alpha0);
    t.alpha1 = kv.get_double("alpha1", t.alpha1);
    t.lambda0 = kv.get_double("lambda0", t.lambda0);
    t.lambda1 = kv.get_double("lambda1", t.lambda1);
    if (kv.contains("beta")) t.beta = kv.get_doubles("beta");
    t.sigma = kv.get_double("sigma", t.sigma);
    t.ct_baseline_mean = kv.get_double("ct_baseline_mean", t.ct_baseline_mean);
    t.ct_baseline_sd = kv.get_double("ct_baseline_sd", t.ct_baseline_sd);
    t.ct_slope_mean = kv.get_double("ct_slope_mean", t.ct_slope_mean);
    t.ct_slope_sd = kv.get_double("ct_slope_sd", t.ct_slope_sd);
    t.p_mci = kv.get_double("p_mci", t.p_mci);
    t.p_ad = kv.get_double("p_ad", t.p_ad);
    t.p_male = kv.get_double("p_male", t.p_male);
    t.age_mean = kv.get_double("age_mean", t.age_mean);
    t.age_sd = kv.get_double("age_sd", t.age_sd);
    t.round_mmse = kv.get_bool("round_mmse", t.round_mmse);
    kv.require_all_used({"subjects", "min_visits", "max_visits", "visit_interval", "visit_jitter",
                         "pipelines", "phi", "tau", "nu", "corr", "alpha0", "alpha1", "lambda0",
                         "lambda1", "beta", "sigma", "ct_baseline_mean", "ct_baseline_sd",
                         "ct_slope_mean", "ct_slope_sd", "p_mci", "p_ad", "p_male", "age_mean",
                         "age_sd", "round_mmse"});
    t.validate();
    return t;
  }

  KeyValueConfig to_kv() const {
    KeyValueConfig kv;
    auto num = [](double v) { return detail::format_double(v); };
    auto list = [&](const std::vector<double>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + num(v[i]);
      return s;
    };
    kv.set("subjects", std::to_string(n_subjects));
    kv.set("min_visits", std::to_string(min_visits));
    kv.set("max_visits", std::to_string(max_visits));
    kv.set("visit_interval", num(visit_interval));
    kv.set("visit_jitter", num(visit_jitter));
    std::string names;
    for (std::size_t i = 0; i < pipelines.size(); ++i) names += (i ? "," : "") + pipelines[i];
    kv.set("pipelines", names);
    kv.set("phi", list(phi));
    kv.set("tau", list(tau));
    kv.set("nu", list(nu));
    std::vector<double> corr(static_cast<std::size_t>(R.size()));
    for (Eigen::Index a = 0; a < R.rows(); ++a) {
      for (Eigen::Index b = 0; b < R.cols(); ++b) corr[static_cast<std::size_t>(a * R.cols() + b)] = R(a, b);
    }
    kv.set("corr", list(corr));
    kv.set("alpha0", num(alpha0));
    kv.set("alpha1", num(alpha1));
    kv.set("lambda0", num(lambda0));
    kv.set("lambda1", num(lambda1));
    kv.set("beta", list(beta));
    kv.set("sigma", num(sigma));
    kv.set("ct_baseline_mean", num(ct_baseline_mean));
    kv.set("ct_baseline_sd", num(ct_baseline_sd));
    kv.set("ct_slope_mean", num(ct_slope_mean));
    kv.set("ct_slope_sd", num(ct_slope_sd));
    kv.set("p_mci", num(p_mci));
    kv.set("p_ad", num(p_ad));
    kv.set("p_male", num(p_male));
    kv.set("age_mean", num(age_mean));
    kv.set("age_sd", num(age_sd));
    kv.set("round_mmse", round_mmse ? "true" : "false");
    return kv;
  }
};

/// Unobserved quantities behind a generated panel, in panel row order.
struct TruthRecord {
  std::vector<double> ct;
  Eigen::MatrixXd q;  // N x K mixing latents (chi-square / nu)
  std::vector<double> z0, z1;
  std::vector<double> alpha0_subject, alpha1_subject;
};

struct SyntheticData {
  PipelinePanel panel;
  TruthRecord truth;
};

/// Runs the generative model forward. Subject ids are S0001, S0002, ... so
/// that panel order matches generation order.
inline SyntheticData generate(const TruthConfig& truth, std::uint64_t seed) {
  truth.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    0x73796e74u};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const std::size_t K = truth.n_pipelines();
  NectParams np;
  np.nu = Eigen::Map<const Eigen::VectorXd>(truth.nu.data(), static_cast<Eigen::Index>(K));
  np.tau = Eigen::Map<const Eigen::VectorXd>(truth.tau.data(), static_cast<Eigen::Index>(K));
  np.L_R = truth.corr_factor();
  const Eigen::VectorXd phi =
      Eigen::Map<const Eigen::VectorXd>(truth.phi.data(), static_cast<Eigen::Index>(K));
  const auto& b = truth.beta;

  std::vector<VisitRow> rows;
  std::vector<double> ct_all;
  std::vector<Eigen::VectorXd> q_all;
  TruthRecord rec;
  const int width = std::max<int>(4, static_cast<int>(std::to_string(truth.n_subjects).size()));
  for (std::size_t i = 0; i < truth.n_subjects; ++i) {
    std::string id = std::to_string(i + 1);
    id = "S" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    const double u = unif(rng);
    const Dx dx = u < truth.p_ad ? Dx::AD : (u < truth.p_ad + truth.p_mci ? Dx::MCI : Dx::CN);
    const int male = unif(rng) < truth.p_male ? 1 : 0;
    const double age = truth.age_mean + truth.age_sd * normal(rng);
    const int n_visits = truth.min_visits == truth.max_visits
                             ? truth.min_visits
                             : std::uniform_int_distribution<int>(truth.min_visits,
                                                                  truth.max_visits)(rng);
    const double ct0 = truth.ct_baseline_mean + truth.ct_baseline_sd * normal(rng);
    const double slope = truth.ct_slope_mean + truth.ct_slope_sd * normal(rng);
    const double z0 = normal(rng);
    const double z1 = normal(rng);
    const double a0 = truth.alpha0 + truth.lambda0 * z0;
    const double a1 = truth.alpha1 + truth.lambda1 * z1;
    rec.z0.push_back(z0);
    rec.z1.push_back(z1);
    rec.alpha0_subject.push_back(a0);
    rec.alpha1_subject.push_back(a1);
    const double mci = dx == Dx::MCI ? 1.0 : 0.0;
    const double ad = dx == Dx::AD ? 1.0 : 0.0;
    for (int j = 0; j < n_visits; ++j) {
      double years = 0.0;
      if (j > 0) {
        years = j * truth.visit_interval;
        if (truth.visit_jitter > 0.0) years += truth.visit_jitter * (2.0 * unif(rng) - 1.0);
      }
      const double ct = std::max(ct0 + slope * years, 1e-3);
      np.mu = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(K), ct) + phi;
      const NectDraw draw = nect_sample(np, rng);
      double mmse = b[0] * mci + b[1] * ad + b[2] * age + b[3] * male + b[kBetaCt] * ct + a0 +
                    (a1 + b[5] * mci + b[6] * ad) * years;
      mmse += truth.sigma * normal(rng);
      if (truth.round_mmse) mmse = std::clamp(std::round(mmse), 0.0, 30.0);
      VisitRow row;
      row.subject_id = id;
      row.years = years;
      row.age = age;
      row.male = male;
      row.dx = dx;
      row.mmse = mmse;
      row.ect.assign(draw.y.data(), draw.y.data() + draw.y.size());
      rows.push_back(std::move(row));
      ct_all.push_back(ct);
      q_all.push_back(draw.q.q);
    }
  }
  rec.ct = ct_all;
  rec.q.resize(static_cast<Eigen::Index>(q_all.size()), static_cast<Eigen::Index>(K));
  for (std::size_t n = 0; n < q_all.size(); ++n) rec.q.row(static_cast<Eigen::Index>(n)) = q_all[n].transpose();
  PipelinePanel panel = PipelinePanel::from_rows(std::move(rows), truth.pipelines);
  return {std::move(panel), std::move(rec)};
}

/// Row-level truth table parallel to the panel file.
inline void write_truth_csv(std::ostream& out, const PipelinePanel& panel,
                            const TruthRecord& rec) {
  out << "subject_id,years,ct,alpha0_subject,alpha1_subject";
  for (const auto& p : panel.pipeline_names()) out << ",q_" << p;
  out << '\n';
  for (std::size_t n = 0; n < panel.n_rows(); ++n) {
    const auto& r = panel.row(n);
    const std::size_t i = panel.subject_of(n);
    out << r.subject_id << ',' << detail::format_double(r.years) << ','
        << detail::format_double(rec.ct[n]) << ',' << detail::format_double(rec.alpha0_subject[i])
        << ',' << detail::format_double(rec.alpha1_subject[i]);
    for (Eigen::Index k = 0; k < rec.q.cols(); ++k) {
      out << ',' << detail::format_double(rec.q(static_cast<Eigen::Index>(n), k));
    }
    out << '\n';
  }
}

}  // namespace ectfusion
