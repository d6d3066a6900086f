#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ectfusion/error.hpp"

namespace ectfusion {

struct DrawStats {
  int tree_depth = 0;
  bool divergent = false;
  bool max_depth_hit = false;
  double step_size = 0.0;
  double energy = 0.0;
  double accept_stat = 0.0;
  int n_leapfrog = 0;
};

/// Retained posterior draws: S rows (all chains, chain-major) by P named
/// quantities, plus per-draw sampler statistics.
class DrawsMatrix {
 public:
  DrawsMatrix() = default;

  DrawsMatrix(std::vector<std::string> names, Eigen::MatrixXd values, std::vector<int> chain_id,
              std::vector<int> iteration, std::vector<DrawStats> stats)
      : names_(std::move(names)),
        values_(std::move(values)),
        chain_id_(std::move(chain_id)),
        iteration_(std::move(iteration)),
        stats_(std::move(stats)) {
    const auto s = static_cast<std::size_t>(values_.rows());
    if (static_cast<std::size_t>(values_.cols()) != names_.size() || chain_id_.size() != s ||
        iteration_.size() != s || stats_.size() != s) {
      throw DomainError("draws matrix: inconsistent dimensions");
    }
    for (std::size_t j = 0; j < names_.size(); ++j) {
      if (!index_.emplace(names_[j], j).second) {
        throw DomainError("draws matrix: duplicate quantity name '" + names_[j] + "'");
      }
    }
    for (std::size_t r = 1; r < s; ++r) {
      if (chain_id_[r] < chain_id_[r - 1]) {
        throw DomainError("draws matrix: rows must be grouped by chain");
      }
    }
  }

  const std::vector<std::string>& names() const { return names_; }
  const Eigen::MatrixXd& values() const { return values_; }
  const std::vector<int>& chain_ids() const { return chain_id_; }
  const std::vector<int>& iterations() const { return iteration_; }
  const std::vector<DrawStats>& stats() const { return stats_; }
  Eigen::Index n_draws() const { return values_.rows(); }
  Eigen::Index n_quantities() const { return values_.cols(); }

  int n_chains() const {
    std::set<int> ids(chain_id_.begin(), chain_id_.end());
    return static_cast<int>(ids.size());
  }

  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DomainError("no quantity named '" + name + "'");
    return it->second;
  }
  Eigen::VectorXd column(const std::string& name) const {
    return values_.col(static_cast<Eigen::Index>(index_of(name)));
  }

  /// One column split by chain: rows are draws, columns are chains. Chains
  /// must have equal retained lengths.
  Eigen::MatrixXd by_chain(std::size_t j) const {
    std::vector<int> ids;
    std::vector<Eigen::Index> counts;
    for (std::size_t r = 0; r < chain_id_.size(); ++r) {
      if (ids.empty() || ids.back() != chain_id_[r]) {
        ids.push_back(chain_id_[r]);
        counts.push_back(0);
      }
      ++counts.back();
    }
    if (counts.empty()) return {};
    for (auto c : counts) {
      if (c != counts.front()) throw DomainError("chains have unequal numbers of draws");
    }
    const Eigen::Index per = counts.front();
    Eigen::MatrixXd out(per, static_cast<Eigen::Index>(counts.size()));
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      out.col(c) = values_.col(static_cast<Eigen::Index>(j)).segment(c * per, per);
    }
    return out;
  }

  void add_column(const std::string& name, const Eigen::VectorXd& v) {
    if (v.size() != values_.rows()) throw DomainError("column length mismatch for " + name);
    if (!index_.emplace(name, names_.size()).second) {
      throw DomainError("draws matrix: duplicate quantity name '" + name + "'");
    }
    names_.push_back(name);
    values_.conservativeResize(Eigen::NoChange, values_.cols() + 1);
    values_.col(values_.cols() - 1) = v;
  }

  std::size_t divergent_count() const {
    std::size_t n = 0;
    for (const auto& s : stats_) n += s.divergent ? 1 : 0;
    return n;
  }

 private:
  std::vector<std::string> names_;
  Eigen::MatrixXd values_;
  std::vector<int> chain_id_;
  std::vector<int> iteration_;
  std::vector<DrawStats> stats_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace draws_detail {

inline const std::vector<std::string>& stat_columns() {
  static const std::vector<std::string> cols = {
      "chain",    "iteration", "divergent",   "tree_depth", "energy",
      "stepsize", "accept_stat", "n_leapfrog", "max_depth_hit"};
  return cols;
}

inline std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

/// Quantity names such as `L_R[2,1]` hold commas and are quoted in the header.
inline std::string quote(const std::string& name) {
  return name.find(',') == std::string::npos ? name : "\"" + name + "\"";
}

inline std::vector<std::string> split(const std::string& l) {
  std::vector<std::string> f(1);
  bool quoted = false;
  for (char c : l) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      f.emplace_back();
    } else if (c != '\r') {
      f.back() += c;
    }
  }
  return f;
}

inline double parse(const std::string& s, std::size_t line) {
  if (s == "NA" || s == "NaN" || s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw SchemaError("draws file line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace draws_detail

/// Columnar draws file: leading sampler columns (chain, iteration, divergent,
/// tree_depth, energy, stepsize, accept_stat, n_leapfrog, max_depth_hit) then
/// one column per quantity. Undefined values are written as NA.
inline void write_draws_csv(std::ostream& out, const DrawsMatrix& d) {
  const auto& sc = draws_detail::stat_columns();
  for (std::size_t i = 0; i < sc.size(); ++i) out << (i ? "," : "") << sc[i];
  for (const auto& n : d.names()) out << ',' << draws_detail::quote(n);
  out << '\n';
  for (Eigen::Index r = 0; r < d.n_draws(); ++r) {
    const DrawStats& s = d.stats()[static_cast<std::size_t>(r)];
    out << d.chain_ids()[static_cast<std::size_t>(r)] << ','
        << d.iterations()[static_cast<std::size_t>(r)] << ',' << (s.divergent ? 1 : 0) << ','
        << s.tree_depth << ',' << draws_detail::fmt(s.energy) << ','
        << draws_detail::fmt(s.step_size) << ',' << draws_detail::fmt(s.accept_stat) << ','
        << s.n_leapfrog << ',' << (s.max_depth_hit ? 1 : 0);
    for (Eigen::Index j = 0; j < d.n_quantities(); ++j) {
      out << ',' << draws_detail::fmt(d.values()(r, j));
    }
    out << '\n';
  }
}

inline void write_draws_csv(const std::string& path, const DrawsMatrix& d) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write draws file '" + path + "'");
  write_draws_csv(out, d);
}

inline DrawsMatrix read_draws_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("draws file is empty");
  const auto split = draws_detail::split;
  const auto header = split(line);
  const auto& sc = draws_detail::stat_columns();
  if (header.size() < sc.size() ||
      !std::equal(sc.begin(), sc.end(), header.begin())) {
    throw SchemaError("draws file header must start with the sampler columns");
  }
  std::vector<std::string> names(header.begin() + static_cast<long>(sc.size()), header.end());
  std::vector<std::vector<double>> rows;
  std::vector<int> chain, iteration;
  std::vector<DrawStats> stats;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size()) {
      throw SchemaError("draws file line " + std::to_string(line_no) + ": wrong field count");
    }
    chain.push_back(static_cast<int>(draws_detail::parse(f[0], line_no)));
    iteration.push_back(static_cast<int>(draws_detail::parse(f[1], line_no)));
    DrawStats s;
    s.divergent = draws_detail::parse(f[2], line_no) != 0.0;
    s.tree_depth = static_cast<int>(draws_detail::parse(f[3], line_no));
    s.energy = draws_detail::parse(f[4], line_no);
    s.step_size = draws_detail::parse(f[5], line_no);
    s.accept_stat = draws_detail::parse(f[6], line_no);
    s.n_leapfrog = static_cast<int>(draws_detail::parse(f[7], line_no));
    s.max_depth_hit = draws_detail::parse(f[8], line_no) != 0.0;
    stats.push_back(s);
    std::vector<double> row;
    row.reserve(names.size());
    for (std::size_t j = sc.size(); j < f.size(); ++j) row.push_back(draws_detail::parse(f[j], line_no));
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()),
                         static_cast<Eigen::Index>(names.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t j = 0; j < names.size(); ++j) {
      values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = rows[r][j];
    }
  }
  return DrawsMatrix(std::move(names), std::move(values), std::move(chain), std::move(iteration),
                     std::move(stats));
}

inline DrawsMatrix read_draws_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open draws file '" + path + "'");
  return read_draws_csv(in);
}

}  // namespace ectfusion
