#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ectfusion/dataio.hpp"
#include "ectfusion/distributions.hpp"
#include "ectfusion/draws.hpp"
#include "ectfusion/model.hpp"

namespace ectfusion {

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

/// Linear-interpolation quantile of an ascending sample.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return kUndefined;
  double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  // p = k / (S - 1) should land on rank k despite rounding in the product.
  if (const double r = std::round(h); std::abs(h - r) < 1e-9) h = r;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

namespace diag_detail {

inline bool is_degenerate(const Eigen::MatrixXd& x) {
  if (x.size() == 0 || !x.allFinite()) return true;
  return x.maxCoeff() == x.minCoeff();
}

/// Halves every chain; with odd lengths the middle draw is dropped.
inline Eigen::MatrixXd split_chains(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows();
  const Eigen::Index half = n / 2;
  Eigen::MatrixXd out(half, 2 * x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    out.col(2 * c) = x.col(c).head(half);
    out.col(2 * c + 1) = x.col(c).tail(half);
  }
  return out;
}

/// Rank-normalization: average ranks mapped through the normal quantile
/// function with the (r - 3/8) / (S + 1/4) offset.
inline Eigen::MatrixXd z_scale(const Eigen::MatrixXd& x) {
  const Eigen::Index s = x.size();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(s));
  std::iota(idx.begin(), idx.end(), 0);
  const double* data = x.data();
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return data[a] < data[b]; });
  Eigen::MatrixXd z(x.rows(), x.cols());
  boost::math::normal_distribution<double> normal;
  double* zd = z.data();
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && data[idx[j + 1]] == data[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    const double p = (avg_rank - 0.375) / (static_cast<double>(s) + 0.25);
    const double q = boost::math::quantile(normal, p);
    for (std::size_t t = i; t <= j; ++t) zd[idx[t]] = q;
    i = j + 1;
  }
  return z;
}

inline double median(const Eigen::MatrixXd& x) {
  std::vector<double> v(x.data(), x.data() + x.size());
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

}  // namespace diag_detail

/// Classic potential scale reduction over the columns (chains) of `x`.
inline double rhat_basic(const Eigen::MatrixXd& x) {
  if (diag_detail::is_degenerate(x) || x.rows() < 2) return kUndefined;
  const double n = static_cast<double>(x.rows());
  const Eigen::Index m = x.cols();
  Eigen::VectorXd means = x.colwise().mean();
  Eigen::VectorXd vars(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    vars[c] = (x.col(c).array() - means[c]).square().sum() / (n - 1.0);
  }
  const double var_within = vars.mean();
  double var_between = 0.0;
  if (m > 1) {
    var_between = n * (means.array() - means.mean()).square().sum() / static_cast<double>(m - 1);
  }
  return std::sqrt((var_between / var_within + n - 1.0) / n);
}

/// ESS of the columns (chains) of `x` using Geyer's initial monotone
/// sequence on the combined autocorrelation estimate.
inline double ess_basic(const Eigen::MatrixXd& x) {
  if (diag_detail::is_degenerate(x) || x.rows() < 4) return kUndefined;
  const Eigen::Index n = x.rows();
  const Eigen::Index m = x.cols();
  const double nd = static_cast<double>(n);
  Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  Eigen::VectorXd means = x.colwise().mean();

  auto acov_mean = [&](Eigen::Index lag) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < m; ++c) {
      acc += centered.col(c).head(n - lag).dot(centered.col(c).tail(n - lag)) / nd;
    }
    return acc / static_cast<double>(m);
  };

  const double mean_var = acov_mean(0) * nd / (nd - 1.0);
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (m > 1) {
    var_plus += (means.array() - means.mean()).square().sum() / static_cast<double>(m - 1);
  }
  std::vector<double> rho(static_cast<std::size_t>(n), 0.0);
  Eigen::Index t = 0;
  double rho_even = 1.0;
  rho[0] = rho_even;
  double rho_odd = 1.0 - (mean_var - acov_mean(1)) / var_plus;
  rho[1] = rho_odd;
  while (t < n - 5 && !std::isnan(rho_even + rho_odd) && rho_even + rho_odd > 0) {
    t += 2;
    rho_even = 1.0 - (mean_var - acov_mean(t)) / var_plus;
    rho_odd = 1.0 - (mean_var - acov_mean(t + 1)) / var_plus;
    if (rho_even + rho_odd >= 0) {
      rho[static_cast<std::size_t>(t)] = rho_even;
      rho[static_cast<std::size_t>(t + 1)] = rho_odd;
    }
  }
  const Eigen::Index max_t = t;
  if (rho_even > 0) rho[static_cast<std::size_t>(max_t)] = rho_even;
  // initial monotone sequence
  t = 0;
  while (t <= max_t - 4) {
    t += 2;
    const auto ut = static_cast<std::size_t>(t);
    if (rho[ut] + rho[ut + 1] > rho[ut - 2] + rho[ut - 1]) {
      rho[ut] = 0.5 * (rho[ut - 2] + rho[ut - 1]);
      rho[ut + 1] = rho[ut];
    }
  }
  const double total = nd * static_cast<double>(m);
  double tau_hat = -1.0;
  for (Eigen::Index i = 0; i < max_t; ++i) tau_hat += 2.0 * rho[static_cast<std::size_t>(i)];
  tau_hat += rho[static_cast<std::size_t>(max_t)];
  tau_hat = std::max(tau_hat, 1.0 / std::log10(total));
  return total / tau_hat;
}

/// Rank-normalized split R-hat: the larger of the bulk and folded values.
inline double rhat_rank(const Eigen::MatrixXd& x) {
  if (diag_detail::is_degenerate(x)) return kUndefined;
  const Eigen::MatrixXd split = diag_detail::split_chains(x);
  const double bulk = rhat_basic(diag_detail::z_scale(split));
  const double med = diag_detail::median(x);
  const Eigen::MatrixXd folded = (split.array() - med).abs().matrix();
  const double tail = rhat_basic(diag_detail::z_scale(folded));
  if (std::isnan(bulk)) return tail;
  if (std::isnan(tail)) return bulk;
  return std::max(bulk, tail);
}

/// Reported R-hat: the rank-normalized value, or the classic split value if
/// larger. Ranks cap the statistic near 2 however far apart the chains sit.
inline double rhat(const Eigen::MatrixXd& x) {
  const double ranked = rhat_rank(x);
  if (std::isnan(ranked)) return ranked;
  return std::max(ranked, rhat_basic(diag_detail::split_chains(x)));
}

/// Bulk ESS on rank-normalized split chains.
inline double ess_bulk(const Eigen::MatrixXd& x) {
  if (diag_detail::is_degenerate(x)) return kUndefined;
  return ess_basic(diag_detail::z_scale(diag_detail::split_chains(x)));
}

struct SummaryRow {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double ess_bulk = kUndefined;
  double rhat = kUndefined;
};

struct SummaryTable {
  std::vector<SummaryRow> rows;

  const SummaryRow& at(const std::string& name) const {
    for (const auto& r : rows) {
      if (r.name == name) return r;
    }
    throw DomainError("no summary row for '" + name + "'");
  }
};

/// Block part of a quantity name: `phi[3]` -> `phi`.
inline std::string block_of(const std::string& name) {
  const auto b = name.find('[');
  return b == std::string::npos ? name : name.substr(0, b);
}

/// True when `filter` is empty or names the quantity, its block, or, for the
/// regression coefficients `beta_*`, the group `beta`.
inline bool selected(const std::string& name, const std::vector<std::string>& filter) {
  if (filter.empty()) return true;
  const auto has = [&](const std::string& s) {
    return std::find(filter.begin(), filter.end(), s) != filter.end();
  };
  return has(name) || has(block_of(name)) || (name.rfind("beta_", 0) == 0 && has("beta"));
}

/// Summarizes every quantity, or those selected by `filter` when it is
/// non-empty.
inline SummaryTable summarize(const DrawsMatrix& draws, const std::vector<std::string>& filter = {}) {
  if (draws.n_draws() < 4) throw DomainError("summarize needs at least 4 draws");
  SummaryTable table;
  for (std::size_t j = 0; j < draws.names().size(); ++j) {
    const std::string& name = draws.names()[j];
    if (!selected(name, filter)) continue;
    SummaryRow row;
    row.name = name;
    const Eigen::VectorXd col = draws.values().col(static_cast<Eigen::Index>(j));
    std::vector<double> finite;
    finite.reserve(static_cast<std::size_t>(col.size()));
    for (double v : col) {
      if (std::isfinite(v)) finite.push_back(v);
    }
    if (finite.size() != static_cast<std::size_t>(col.size()) || finite.size() < 2) {
      row.mean = row.sd = row.ci_low = row.ci_high = kUndefined;
      table.rows.push_back(row);
      continue;
    }
    const double n = static_cast<double>(finite.size());
    row.mean = std::accumulate(finite.begin(), finite.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : finite) ss += (v - row.mean) * (v - row.mean);
    row.sd = std::sqrt(ss / (n - 1.0));
    std::sort(finite.begin(), finite.end());
    row.ci_low = quantile_sorted(finite, 0.025);
    row.ci_high = quantile_sorted(finite, 0.975);
    const Eigen::MatrixXd chains = draws.by_chain(j);
    row.ess_bulk = ess_bulk(chains);
    row.rhat = rhat(chains);
    table.rows.push_back(row);
  }
  return table;
}

namespace diag_detail {

inline std::string fmt(double v) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace diag_detail

/// Table layout: parameter, element, mean, CI low, CI high, then sd, ESS and
/// R-hat. Undefined entries are written as NA. Pipeline-indexed blocks use
/// `pipeline_names` for the element when provided.
inline void write_summary_csv(std::ostream& out, const SummaryTable& table,
                              const std::vector<std::string>& pipeline_names = {}) {
  out << "parameter,element,mean,ci_low,ci_high,sd,ess_bulk,rhat\n";
  for (const auto& r : table.rows) {
    std::string param = block_of(r.name);
    std::string element;
    if (const auto b = r.name.find('['); b != std::string::npos) {
      element = r.name.substr(b + 1, r.name.size() - b - 2);
    } else if (param.rfind("beta_", 0) == 0) {
      element = param.substr(5);
      param = "beta";
    }
    const bool per_pipeline = param == "phi" || param == "tau" || param == "nu" ||
                              param == "log_excess_kurtosis";
    if (per_pipeline && !pipeline_names.empty()) {
      const auto k = static_cast<std::size_t>(std::stoul(element));
      if (k >= 1 && k <= pipeline_names.size()) element = pipeline_names[k - 1];
    }
    if (element.find(',') != std::string::npos) element = "\"" + element + "\"";
    out << param << ',' << element << ',' << diag_detail::fmt(r.mean) << ','
        << diag_detail::fmt(r.ci_low) << ',' << diag_detail::fmt(r.ci_high) << ','
        << diag_detail::fmt(r.sd) << ',' << diag_detail::fmt(r.ess_bulk) << ','
        << diag_detail::fmt(r.rhat) << '\n';
  }
}

/// Appends error correlations rho[a,b] (a > b), log excess kurtosis per
/// pipeline (NA where nu <= 4), and natural-scale random effects per
/// subject. Skips groups whose source columns are absent.
inline void derived_quantities(DrawsMatrix& draws, std::size_t n_pipelines,
                               std::size_t n_subjects) {
  const Eigen::Index s = draws.n_draws();
  const std::size_t K = n_pipelines;
  if (draws.contains("L_R[1,1]")) {
    for (std::size_t a = 1; a < K; ++a) {
      for (std::size_t b = 0; b < a; ++b) {
        Eigen::VectorXd rho = Eigen::VectorXd::Zero(s);
        for (std::size_t c = 0; c <= b; ++c) {
          const auto la = draws.column("L_R[" + std::to_string(a + 1) + "," + std::to_string(c + 1) + "]");
          const auto lb = draws.column("L_R[" + std::to_string(b + 1) + "," + std::to_string(c + 1) + "]");
          rho += la.cwiseProduct(lb);
        }
        draws.add_column("rho[" + std::to_string(a + 1) + "," + std::to_string(b + 1) + "]", rho);
      }
    }
  }
  if (draws.contains("nu[1]")) {
    for (std::size_t k = 0; k < K; ++k) {
      const Eigen::VectorXd nu = draws.column("nu[" + std::to_string(k + 1) + "]");
      Eigen::VectorXd lk(s);
      for (Eigen::Index r = 0; r < s; ++r) {
        lk[r] = nu[r] > 4.0 ? std::log(excess_kurtosis(nu[r])) : kUndefined;
      }
      draws.add_column("log_excess_kurtosis[" + std::to_string(k + 1) + "]", lk);
    }
  }
  if (draws.contains("alpha0") && draws.contains("z0[1]")) {
    const Eigen::VectorXd a0 = draws.column("alpha0");
    const Eigen::VectorXd a1 = draws.column("alpha1");
    const Eigen::VectorXd l0 = draws.column("lambda0");
    const Eigen::VectorXd l1 = draws.column("lambda1");
    for (std::size_t i = 0; i < n_subjects; ++i) {
      const std::string idx = std::to_string(i + 1);
      draws.add_column("alpha0_subject[" + idx + "]",
                       a0 + l0.cwiseProduct(draws.column("z0[" + idx + "]")));
    }
    for (std::size_t i = 0; i < n_subjects; ++i) {
      const std::string idx = std::to_string(i + 1);
      draws.add_column("alpha1_subject[" + idx + "]",
                       a1 + l1.cwiseProduct(draws.column("z1[" + idx + "]")));
    }
  }
}

inline void derived_quantities(DrawsMatrix& draws, const PipelinePanel& panel) {
  derived_quantities(draws, panel.n_pipelines(), panel.n_subjects());
}

/// Infers the pipeline and subject counts from the `nu[k]`, `L_R[k,k]` and
/// `z0[i]` columns of a draws file.
inline void derived_quantities(DrawsMatrix& draws) {
  std::size_t k = 0;
  while (draws.contains("nu[" + std::to_string(k + 1) + "]")) ++k;
  std::size_t k_corr = 0;
  while (draws.contains("L_R[" + std::to_string(k_corr + 1) + "," + std::to_string(k_corr + 1) + "]")) {
    ++k_corr;
  }
  k = std::max(k, k_corr);
  std::size_t i = 0;
  while (draws.contains("z0[" + std::to_string(i + 1) + "]")) ++i;
  derived_quantities(draws, k, i);
}

struct ConvergenceThresholds {
  double rhat_max = 1.01;
  double ess_min = 500.0;
  double divergence_rate_max = 0.01;
};

struct ConvergenceReport {
  double max_rhat = kUndefined;
  std::string max_rhat_name;
  double min_ess = kUndefined;
  std::string min_ess_name;
  double divergence_rate = 0.0;
  std::vector<std::string> failing_rhat;
  std::vector<std::string> failing_ess;
  std::vector<std::string> undefined;
  bool passed = false;
};

inline ConvergenceReport diagnose(const DrawsMatrix& draws, const ConvergenceThresholds& th,
                                  const std::vector<std::string>& filter = {}) {
  ConvergenceReport rep;
  const SummaryTable table = summarize(draws, filter);
  for (const auto& r : table.rows) {
    if (std::isnan(r.rhat) || std::isnan(r.ess_bulk)) {
      rep.undefined.push_back(r.name);
      continue;
    }
    if (std::isnan(rep.max_rhat) || r.rhat > rep.max_rhat) {
      rep.max_rhat = r.rhat;
      rep.max_rhat_name = r.name;
    }
    if (std::isnan(rep.min_ess) || r.ess_bulk < rep.min_ess) {
      rep.min_ess = r.ess_bulk;
      rep.min_ess_name = r.name;
    }
    if (!(r.rhat < th.rhat_max)) rep.failing_rhat.push_back(r.name);
    if (!(r.ess_bulk > th.ess_min)) rep.failing_ess.push_back(r.name);
  }
  rep.divergence_rate = draws.n_draws() > 0
                            ? static_cast<double>(draws.divergent_count()) /
                                  static_cast<double>(draws.n_draws())
                            : 0.0;
  rep.passed = rep.failing_rhat.empty() && rep.failing_ess.empty() &&
               rep.divergence_rate < th.divergence_rate_max;
  return rep;
}

}  // namespace ectfusion
