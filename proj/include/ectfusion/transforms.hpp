#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ectfusion/error.hpp"

namespace ectfusion {

enum class Constraint {
  identity,
  positive,       // exp map, scalar or vector depending on size
  corr_cholesky,  // K x K Cholesky factor of a correlation matrix
};

/// One named block of the parameter vector. For `corr_cholesky`, `size` is K;
/// the constrained value is the full K x K factor stored row-major.
struct Block {
  std::string name;
  Constraint kind = Constraint::identity;
  std::size_t size = 0;

  std::size_t unconstrained_size() const {
    return kind == Constraint::corr_cholesky ? size * (size - 1) / 2 : size;
  }
  std::size_t constrained_size() const {
    return kind == Constraint::corr_cholesky ? size * size : size;
  }
};

/// Row-wise spherical construction of a correlation Cholesky factor.
/// Unconstrained entries go through tanh to partial correlations; each row is
/// completed to unit norm with a positive diagonal. Returns the log Jacobian
/// of the map from `u` to the strictly lower entries of `L`.
inline double corr_cholesky_constrain(std::span<const double> u, std::size_t k,
                                      std::span<double> L) {
  double log_jac = 0.0;
  std::fill(L.begin(), L.end(), 0.0);
  L[0] = 1.0;
  std::size_t idx = 0;
  for (std::size_t i = 1; i < k; ++i) {
    double sum_sq = 0.0;
    for (std::size_t j = 0; j < i; ++j, ++idx) {
      const double z = std::tanh(u[idx]);
      // d tanh / du = 1 - z^2
      log_jac += std::log1p(-z * z);
      if (j == 0) {
        L[i * k] = z;
      } else {
        log_jac += 0.5 * std::log1p(-sum_sq);
        L[i * k + j] = z * std::sqrt(1.0 - sum_sq);
      }
      sum_sq += L[i * k + j] * L[i * k + j];
    }
    L[i * k + i] = std::sqrt(std::max(0.0, 1.0 - sum_sq));
  }
  return log_jac;
}

inline void corr_cholesky_unconstrain(std::span<const double> L, std::size_t k,
                                      std::span<double> u,
                                      const std::string& block_name = "corr") {
  std::size_t idx = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!(L[i * k + i] > 0.0)) {
      throw DomainError("block '" + block_name +
                        "': correlation factor diagonal must be positive");
    }
    double row_norm = 0.0;
    for (std::size_t j = 0; j <= i; ++j) row_norm += L[i * k + j] * L[i * k + j];
    if (std::abs(row_norm - 1.0) > 1e-8) {
      throw DomainError("block '" + block_name +
                        "': correlation factor rows must have unit norm");
    }
    double sum_sq = 0.0;
    for (std::size_t j = 0; j < i; ++j, ++idx) {
      const double x = L[i * k + j];
      const double z = j == 0 ? x : x / std::sqrt(1.0 - sum_sq);
      if (!(std::abs(z) < 1.0)) {
        throw DomainError("block '" + block_name +
                          "': partial correlation outside (-1, 1)");
      }
      u[idx] = std::atanh(z);
      sum_sq += x * x;
    }
  }
}

/// Reverse-mode pass through corr_cholesky_constrain. Adds d(target)/du to
/// `grad_u`, given the gradient with respect to every entry of L (row-major).
inline void corr_cholesky_backprop(std::span<const double> u, std::size_t k,
                                   std::span<const double> L,
                                   std::span<const double> grad_L,
                                   std::span<double> grad_u, bool jacobian) {
  std::vector<double> sum_before(k);
  std::vector<double> adj_x(k);
  std::size_t row_start = 0;
  for (std::size_t i = 1; i < k; ++i) {
    // forward: sum of squares accumulated before column j
    double s = 0.0;
    for (std::size_t j = 0; j < i; ++j) {
      sum_before[j] = s;
      s += L[i * k + j] * L[i * k + j];
    }
    for (std::size_t j = 0; j < i; ++j) adj_x[j] = grad_L[i * k + j];
    // diagonal: x_ii = sqrt(1 - s)
    double adj_c = L[i * k + i] > 0.0 ? -0.5 * grad_L[i * k + i] / L[i * k + i] : 0.0;
    for (std::size_t jj = i; jj-- > 0;) {
      const std::size_t idx = row_start + jj;
      const double z = std::tanh(u[idx]);
      const double x = L[i * k + jj];
      // c_{j+1} = c_j + x_j^2
      adj_x[jj] += 2.0 * x * adj_c;
      double adj_z = 0.0;
      if (jj == 0) {
        adj_z = adj_x[jj];
      } else {
        const double one_minus = 1.0 - sum_before[jj];
        const double root = std::sqrt(one_minus);
        adj_z = adj_x[jj] * root;
        adj_c += adj_x[jj] * z * (-0.5 / root);
        if (jacobian) adj_c += -0.5 / one_minus;
      }
      grad_u[idx] += adj_z * (1.0 - z * z);
      if (jacobian) grad_u[idx] += -2.0 * z;
    }
    row_start += i;
  }
}

/// Ordered list of named blocks mapping an unconstrained real vector onto the
/// constrained parameter values.
class TransformSpec {
 public:
  TransformSpec& add(std::string name, Constraint kind, std::size_t size) {
    if (index_.contains(name)) {
      throw ConfigError("duplicate block name '" + name + "'");
    }
    if (kind == Constraint::corr_cholesky && size < 1) {
      throw ConfigError("correlation block '" + name + "' needs K >= 1");
    }
    index_.emplace(name, blocks_.size());
    u_offsets_.push_back(u_dim_);
    theta_offsets_.push_back(theta_dim_);
    blocks_.push_back(Block{std::move(name), kind, size});
    u_dim_ += blocks_.back().unconstrained_size();
    theta_dim_ += blocks_.back().constrained_size();
    return *this;
  }

  const std::vector<Block>& blocks() const { return blocks_; }
  std::size_t unconstrained_dim() const { return u_dim_; }
  std::size_t constrained_dim() const { return theta_dim_; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown block '" + name + "'");
    return it->second;
  }
  std::size_t u_offset(std::size_t b) const { return u_offsets_[b]; }
  std::size_t theta_offset(std::size_t b) const { return theta_offsets_[b]; }
  std::size_t u_offset(const std::string& name) const { return u_offsets_[index_of(name)]; }
  std::size_t theta_offset(const std::string& name) const {
    return theta_offsets_[index_of(name)];
  }

  /// Writes constrained values into `theta` and returns the total log
  /// Jacobian.
  double constrain(std::span<const double> u, std::span<double> theta) const {
    check_dims(u.size(), theta.size());
    double log_jac = 0.0;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const Block& blk = blocks_[b];
      const double* ub = u.data() + u_offsets_[b];
      double* tb = theta.data() + theta_offsets_[b];
      switch (blk.kind) {
        case Constraint::identity:
          std::copy(ub, ub + blk.size, tb);
          break;
        case Constraint::positive:
          for (std::size_t i = 0; i < blk.size; ++i) {
            tb[i] = std::exp(ub[i]);
            log_jac += ub[i];
          }
          break;
        case Constraint::corr_cholesky:
          log_jac += corr_cholesky_constrain({ub, blk.unconstrained_size()},
                                             blk.size, {tb, blk.constrained_size()});
          break;
      }
    }
    return log_jac;
  }

  struct Constrained {
    std::vector<double> theta;
    double log_jac = 0.0;
  };

  Constrained constrain(std::span<const double> u) const {
    Constrained out;
    out.theta.resize(theta_dim_);
    out.log_jac = constrain(u, out.theta);
    return out;
  }

  std::vector<double> unconstrain(std::span<const double> theta) const {
    if (theta.size() != theta_dim_) {
      std::ostringstream msg;
      msg << "unconstrain: expected " << theta_dim_ << " constrained values, got "
          << theta.size();
      throw DomainError(msg.str());
    }
    std::vector<double> u(u_dim_);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const Block& blk = blocks_[b];
      const double* tb = theta.data() + theta_offsets_[b];
      double* ub = u.data() + u_offsets_[b];
      switch (blk.kind) {
        case Constraint::identity:
          std::copy(tb, tb + blk.size, ub);
          break;
        case Constraint::positive:
          for (std::size_t i = 0; i < blk.size; ++i) {
            if (!(tb[i] > 0.0) || !std::isfinite(tb[i])) {
              throw DomainError("block '" + blk.name + "': value must be positive");
            }
            ub[i] = std::log(tb[i]);
          }
          break;
        case Constraint::corr_cholesky:
          corr_cholesky_unconstrain({tb, blk.constrained_size()}, blk.size,
                                    {ub, blk.unconstrained_size()}, blk.name);
          break;
      }
    }
    return u;
  }

  /// grad_u = J^T grad_theta (+ gradient of the log Jacobian if requested).
  /// `grad_u` is overwritten.
  void backprop(std::span<const double> u, std::span<const double> theta,
                std::span<const double> grad_theta, std::span<double> grad_u,
                bool jacobian = true) const {
    check_dims(u.size(), theta.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const Block& blk = blocks_[b];
      const std::size_t uo = u_offsets_[b];
      const std::size_t to = theta_offsets_[b];
      switch (blk.kind) {
        case Constraint::identity:
          for (std::size_t i = 0; i < blk.size; ++i) grad_u[uo + i] = grad_theta[to + i];
          break;
        case Constraint::positive:
          for (std::size_t i = 0; i < blk.size; ++i) {
            grad_u[uo + i] = grad_theta[to + i] * theta[to + i] + (jacobian ? 1.0 : 0.0);
          }
          break;
        case Constraint::corr_cholesky: {
          const std::size_t nu = blk.unconstrained_size();
          std::fill_n(grad_u.begin() + uo, nu, 0.0);
          corr_cholesky_backprop(u.subspan(uo, nu), blk.size,
                                 theta.subspan(to, blk.constrained_size()),
                                 grad_theta.subspan(to, blk.constrained_size()),
                                 grad_u.subspan(uo, nu), jacobian);
          break;
        }
      }
    }
  }

 private:
  void check_dims(std::size_t u_size, std::size_t theta_size) const {
    if (u_size != u_dim_ || theta_size != theta_dim_) {
      std::ostringstream msg;
      msg << "transform dimension mismatch: expected (" << u_dim_ << ", "
          << theta_dim_ << "), got (" << u_size << ", " << theta_size << ")";
      throw DomainError(msg.str());
    }
  }

  std::vector<Block> blocks_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::size_t> u_offsets_;
  std::vector<std::size_t> theta_offsets_;
  std::size_t u_dim_ = 0;
  std::size_t theta_dim_ = 0;
};

}  // namespace ectfusion
