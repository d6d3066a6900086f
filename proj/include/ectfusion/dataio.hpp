#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ectfusion/error.hpp"
#include "ectfusion/kv_config.hpp"

namespace ectfusion {

enum class Dx { CN, MCI, AD };

inline std::string to_string(Dx dx) {
  switch (dx) {
    case Dx::CN: return "CN";
    case Dx::MCI: return "MCI";
    case Dx::AD: return "AD";
  }
  return "?";
}

/// Case-insensitive; anything other than CN/MCI/AD is rejected.
inline std::optional<Dx> parse_dx(std::string_view s) {
  std::string up(s);
  std::transform(up.begin(), up.end(), up.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (up == "CN") return Dx::CN;
  if (up == "MCI") return Dx::MCI;
  if (up == "AD") return Dx::AD;
  return std::nullopt;
}

struct VisitRow {
  std::string subject_id;
  double years = 0.0;
  double age = 0.0;
  bool male = false;
  Dx dx = Dx::CN;
  std::optional<double> mmse;
  std::vector<double> ect;
};

/// Fully observed longitudinal panel: N visits x K pipeline measurements.
/// Rows are sorted by (subject_id, years); subjects are indexed 0..I-1 in
/// that order.
class PipelinePanel {
 public:
  PipelinePanel() = default;

  /// Validates, sorts, and indexes. Rows must all carry an outcome.
  static PipelinePanel from_rows(std::vector<VisitRow> rows,
                                 std::vector<std::string> pipeline_names) {
    PipelinePanel p;
    p.pipeline_names_ = std::move(pipeline_names);
    const std::size_t k = p.pipeline_names_.size();
    if (k < 1) throw SchemaError("panel needs at least one pipeline column");
    for (const auto& r : rows) {
      if (!r.mmse) throw SchemaError("panel rows must all have an outcome");
      if (r.ect.size() != k) {
        throw SchemaError("subject " + r.subject_id + ": expected " +
                          std::to_string(k) + " pipeline values");
      }
    }
    std::stable_sort(rows.begin(), rows.end(), [](const VisitRow& a, const VisitRow& b) {
      if (a.subject_id != b.subject_id) return a.subject_id < b.subject_id;
      return a.years < b.years;
    });
    p.rows_ = std::move(rows);
    p.row_subject_.reserve(p.rows_.size());
    for (std::size_t n = 0; n < p.rows_.size(); ++n) {
      const VisitRow& r = p.rows_[n];
      auto [it, inserted] = p.subject_index_.emplace(r.subject_id, p.subject_ids_.size());
      if (inserted) {
        p.subject_ids_.push_back(r.subject_id);
        p.first_row_.push_back(n);
        if (r.years != 0.0) {
          throw SchemaError("subject " + r.subject_id +
                            ": first visit must have years = 0");
        }
      } else {
        const VisitRow& first = p.rows_[p.first_row_[it->second]];
        if (first.age != r.age || first.male != r.male || first.dx != r.dx) {
          throw SchemaError("subject " + r.subject_id +
                            ": age, sex and diagnosis must be constant across visits");
        }
      }
      p.row_subject_.push_back(it->second);
    }
    return p;
  }

  std::size_t n_rows() const { return rows_.size(); }
  std::size_t n_subjects() const { return subject_ids_.size(); }
  std::size_t n_pipelines() const { return pipeline_names_.size(); }

  const std::vector<VisitRow>& rows() const { return rows_; }
  const VisitRow& row(std::size_t n) const { return rows_[n]; }
  const std::vector<std::string>& pipeline_names() const { return pipeline_names_; }
  const std::vector<std::string>& subject_ids() const { return subject_ids_; }
  /// 0-based subject index of row n.
  std::size_t subject_of(std::size_t n) const { return row_subject_[n]; }
  const std::vector<std::size_t>& row_subjects() const { return row_subject_; }
  std::size_t subject_index(const std::string& id) const {
    auto it = subject_index_.find(id);
    if (it == subject_index_.end()) throw SchemaError("unknown subject " + id);
    return it->second;
  }

  /// N x K matrix of pipeline measurements.
  Eigen::MatrixXd ect_matrix() const {
    Eigen::MatrixXd y(n_rows(), n_pipelines());
    for (std::size_t n = 0; n < n_rows(); ++n) {
      for (std::size_t k = 0; k < n_pipelines(); ++k) y(n, k) = rows_[n].ect[k];
    }
    return y;
  }

  Eigen::VectorXd outcome() const {
    Eigen::VectorXd v(n_rows());
    for (std::size_t n = 0; n < n_rows(); ++n) v[n] = *rows_[n].mmse;
    return v;
  }

  Eigen::VectorXd years() const {
    Eigen::VectorXd v(n_rows());
    for (std::size_t n = 0; n < n_rows(); ++n) v[n] = rows_[n].years;
    return v;
  }

  bool operator==(const PipelinePanel& o) const {
    if (pipeline_names_ != o.pipeline_names_ || rows_.size() != o.rows_.size()) return false;
    for (std::size_t n = 0; n < rows_.size(); ++n) {
      const VisitRow& a = rows_[n];
      const VisitRow& b = o.rows_[n];
      if (a.subject_id != b.subject_id || a.years != b.years || a.age != b.age ||
          a.male != b.male || a.dx != b.dx || a.mmse != b.mmse || a.ect != b.ect) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<VisitRow> rows_;
  std::vector<std::string> pipeline_names_;
  std::vector<std::string> subject_ids_;
  std::map<std::string, std::size_t> subject_index_;
  std::vector<std::size_t> first_row_;
  std::vector<std::size_t> row_subject_;
};

/// Column mapping for panel files. Empty `pipelines` means every column not
/// claimed by a covariate, in header order.
struct Schema {
  std::string subject_id = "subject_id";
  std::string years = "years";
  std::string age = "age";
  std::string male = "male";
  std::string dx = "dx";
  std::string mmse = "mmse";
  std::vector<std::string> pipelines;
  char delimiter = ',';

  /// Reads a key=value mapping file. Keys: subject_id, years, age, male, dx,
  /// mmse, pipelines (comma list), delimiter (single character or "tab").
  static Schema from_file(const std::string& path) {
    const KeyValueConfig kv = KeyValueConfig::from_file(path);
    Schema s;
    s.subject_id = kv.get_string("subject_id", s.subject_id);
    s.years = kv.get_string("years", s.years);
    s.age = kv.get_string("age", s.age);
    s.male = kv.get_string("male", s.male);
    s.dx = kv.get_string("dx", s.dx);
    s.mmse = kv.get_string("mmse", s.mmse);
    if (kv.contains("pipelines")) s.pipelines = kv.get_list("pipelines");
    if (kv.contains("delimiter")) {
      const std::string d = kv.get_string("delimiter");
      if (d == "tab" || d == "\\t") {
        s.delimiter = '\t';
      } else if (d.size() == 1) {
        s.delimiter = d[0];
      } else {
        throw ConfigError("schema delimiter must be a single character");
      }
    }
    kv.require_all_used({"subject_id", "years", "age", "male", "dx", "mmse",
                         "pipelines", "delimiter"});
    return s;
  }
};

struct LoadResult {
  PipelinePanel panel;
  std::size_t dropped_missing_outcome = 0;
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') {
    out = out.substr(1, out.size() - 2);
  }
  return out;
}

inline std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string::npos) {
      out.push_back(trim(std::string_view(line).substr(start)));
      break;
    }
    out.push_back(trim(std::string_view(line).substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (b != e && *b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) return std::nullopt;
  return v;
}

inline bool is_missing(const std::string& s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == ".";
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Parses a panel from a stream; `source` names it in error messages.
inline LoadResult read_panel(std::istream& in, const Schema& schema,
                             const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(source + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = detail::split_fields(line, schema.delimiter);

  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw SchemaError(source + ": missing required column '" + name + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_id = column(schema.subject_id);
  const std::size_t c_years = column(schema.years);
  const std::size_t c_age = column(schema.age);
  const std::size_t c_male = column(schema.male);
  const std::size_t c_dx = column(schema.dx);
  const std::size_t c_mmse = column(schema.mmse);

  std::vector<std::string> names = schema.pipelines;
  std::vector<std::size_t> c_pipe;
  if (names.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == c_id || c == c_years || c == c_age || c == c_male || c == c_dx ||
          c == c_mmse) {
        continue;
      }
      names.push_back(header[c]);
      c_pipe.push_back(c);
    }
  } else {
    for (const auto& n : names) c_pipe.push_back(column(n));
  }
  if (names.empty()) throw SchemaError(source + ": no pipeline columns");

  std::vector<VisitRow> rows;
  std::size_t dropped = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_fields(line, schema.delimiter);
    auto where = [&](const std::string& what) {
      return source + ":" + std::to_string(line_no) + ": " + what;
    };
    if (f.size() != header.size()) {
      throw SchemaError(where("expected " + std::to_string(header.size()) +
                              " fields, got " + std::to_string(f.size())));
    }
    auto number = [&](std::size_t c) {
      auto v = detail::parse_double(f[c]);
      if (!v || !std::isfinite(*v)) {
        throw SchemaError(where("column '" + header[c] + "' is not a finite number: '" +
                                f[c] + "'"));
      }
      return *v;
    };

    VisitRow r;
    r.subject_id = f[c_id];
    if (r.subject_id.empty()) throw SchemaError(where("empty subject id"));
    r.years = number(c_years);
    if (r.years < 0.0) throw SchemaError(where("years must be >= 0"));
    r.age = number(c_age);
    if (!(r.age > 0.0)) throw SchemaError(where("age must be positive"));
    const double male = number(c_male);
    if (male != 0.0 && male != 1.0) throw SchemaError(where("male must be 0 or 1"));
    r.male = male == 1.0;
    auto dx = parse_dx(f[c_dx]);
    if (!dx) throw SchemaError(where("dx must be CN, MCI or AD, got '" + f[c_dx] + "'"));
    r.dx = *dx;
    r.ect.reserve(c_pipe.size());
    for (std::size_t c : c_pipe) {
      if (detail::is_missing(f[c])) {
        throw SchemaError(where("missing pipeline value in column '" + header[c] + "'"));
      }
      const double v = number(c);
      if (!(v > 0.0)) {
        throw SchemaError(where("pipeline value in column '" + header[c] +
                                "' must be positive"));
      }
      r.ect.push_back(v);
    }
    if (detail::is_missing(f[c_mmse])) {
      ++dropped;
      continue;
    }
    r.mmse = number(c_mmse);
    rows.push_back(std::move(r));
  }
  return {PipelinePanel::from_rows(std::move(rows), std::move(names)), dropped};
}

inline LoadResult load_panel(const std::string& path, const Schema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open panel file '" + path + "'");
  return read_panel(in, schema, path);
}

inline void write_panel(std::ostream& out, const PipelinePanel& panel,
                        char delimiter = ',') {
  out << "subject_id" << delimiter << "years" << delimiter << "age" << delimiter
      << "male" << delimiter << "dx" << delimiter << "mmse";
  for (const auto& n : panel.pipeline_names()) out << delimiter << n;
  out << '\n';
  for (const auto& r : panel.rows()) {
    out << r.subject_id << delimiter << detail::format_double(r.years) << delimiter
        << detail::format_double(r.age) << delimiter << (r.male ? 1 : 0) << delimiter
        << to_string(r.dx) << delimiter
        << (r.mmse ? detail::format_double(*r.mmse) : std::string("NA"));
    for (double v : r.ect) out << delimiter << detail::format_double(v);
    out << '\n';
  }
}

inline void write_panel(const std::string& path, const PipelinePanel& panel,
                        char delimiter = ',') {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write panel file '" + path + "'");
  write_panel(out, panel, delimiter);
}

/// Fixed-effects design: MCI, AD, initial age, male, MCI x years, AD x years.
/// CN is the reference category.
inline Eigen::MatrixXd design_matrix(const PipelinePanel& panel) {
  Eigen::MatrixXd x(panel.n_rows(), 6);
  for (std::size_t n = 0; n < panel.n_rows(); ++n) {
    const VisitRow& r = panel.row(n);
    const double mci = r.dx == Dx::MCI ? 1.0 : 0.0;
    const double ad = r.dx == Dx::AD ? 1.0 : 0.0;
    x(n, 0) = mci;
    x(n, 1) = ad;
    x(n, 2) = r.age;
    x(n, 3) = r.male ? 1.0 : 0.0;
    x(n, 4) = mci * r.years;
    x(n, 5) = ad * r.years;
  }
  return x;
}

}  // namespace ectfusion
