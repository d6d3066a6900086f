#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "ectfusion/draws.hpp"
#include "ectfusion/error.hpp"
#include "ectfusion/kv_config.hpp"

namespace ectfusion {

struct SamplerConfig {
  int n_chains = 4;
  int n_warmup = 1000;
  int n_iterations = 1000;
  int thin = 1;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 1;
  double init_radius = 2.0;
  /// Worker threads for running chains; 0 means one per hardware thread.
  int n_threads = 1;

  void validate() const {
    if (n_chains < 1) throw ConfigError("sampler: chains must be >= 1");
    if (n_warmup < 0) throw ConfigError("sampler: warmup must be >= 0");
    if (n_iterations < 1) throw ConfigError("sampler: iterations must be >= 1");
    if (thin < 1) throw ConfigError("sampler: thin must be >= 1");
    if (!(target_accept > 0.0 && target_accept < 1.0)) {
      throw ConfigError("sampler: target_accept must lie in (0, 1)");
    }
    if (max_tree_depth < 1) throw ConfigError("sampler: max_tree_depth must be >= 1");
    if (!(init_radius > 0.0)) throw ConfigError("sampler: init_radius must be positive");
    if (n_threads < 0) throw ConfigError("sampler: threads must be >= 0");
  }

  /// Retained draws per chain.
  int draws_per_chain() const { return n_iterations / thin; }

  static SamplerConfig from_kv(const KeyValueConfig& kv) {
    SamplerConfig c;
    c.n_chains = static_cast<int>(kv.get_int("chains", c.n_chains));
    c.n_warmup = static_cast<int>(kv.get_int("warmup", c.n_warmup));
    c.n_iterations = static_cast<int>(kv.get_int("iters", c.n_iterations));
    c.thin = static_cast<int>(kv.get_int("thin", c.thin));
    c.target_accept = kv.get_double("target_accept", c.target_accept);
    c.max_tree_depth = static_cast<int>(kv.get_int("max_tree_depth", c.max_tree_depth));
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
    c.init_radius = kv.get_double("init_radius", c.init_radius);
    c.n_threads = static_cast<int>(kv.get_int("threads", c.n_threads));
    kv.require_all_used({"chains", "warmup", "iters", "thin", "target_accept",
                         "max_tree_depth", "seed", "init_radius", "threads"});
    c.validate();
    return c;
  }

  KeyValueConfig to_kv() const {
    KeyValueConfig kv;
    kv.set("chains", std::to_string(n_chains));
    kv.set("warmup", std::to_string(n_warmup));
    kv.set("iters", std::to_string(n_iterations));
    kv.set("thin", std::to_string(thin));
    kv.set("target_accept", std::to_string(target_accept));
    kv.set("max_tree_depth", std::to_string(max_tree_depth));
    kv.set("seed", std::to_string(seed));
    kv.set("init_radius", std::to_string(init_radius));
    kv.set("threads", std::to_string(n_threads));
    return kv;
  }
};

/// Anything the sampler can run: a differentiable log density over R^dim
/// plus a map from the unconstrained state to named output columns.
template <class M>
concept LogDensityModel = requires(const M& m, std::span<const double> u,
                                   std::span<double> g) {
  { m.dim() } -> std::convertible_to<std::size_t>;
  { m.log_density_gradient(u, g) } -> std::convertible_to<double>;
  { m.output_names() } -> std::convertible_to<std::vector<std::string>>;
  m.write_output(u, g);
};

/// Wraps a bare callable `double(span<const double>, span<double>)`; output
/// columns are the coordinates themselves.
template <class F>
class FunctionModel {
 public:
  FunctionModel(F f, std::size_t dim) : f_(std::move(f)), dim_(dim) {}
  std::size_t dim() const { return dim_; }
  double log_density_gradient(std::span<const double> u, std::span<double> g) const {
    return f_(u, g);
  }
  std::vector<std::string> output_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < dim_; ++i) names.push_back("x[" + std::to_string(i + 1) + "]");
    return names;
  }
  void write_output(std::span<const double> u, std::span<double> out) const {
    std::copy(u.begin(), u.end(), out.begin());
  }

 private:
  F f_;
  std::size_t dim_;
};

/// Position, momentum and cached gradient of one point in phase space.
struct PhasePoint {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  Eigen::VectorXd grad;
  double log_density = 0.0;
};

namespace detail {

template <class M>
double eval_target(const M& model, const Eigen::VectorXd& q, Eigen::VectorXd& grad) {
  const double lp = model.log_density_gradient(
      std::span<const double>(q.data(), static_cast<std::size_t>(q.size())),
      std::span<double>(grad.data(), static_cast<std::size_t>(grad.size())));
  if (!std::isfinite(lp) || !grad.allFinite()) return -std::numeric_limits<double>::infinity();
  return lp;
}

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace detail

/// H = -log density + 1/2 p' M^{-1} p for a diagonal inverse metric.
inline double hamiltonian(const PhasePoint& z, const Eigen::VectorXd& inv_metric) {
  return -z.log_density + 0.5 * (z.p.array().square() * inv_metric.array()).sum();
}

/// One velocity-Verlet step of size `step` (negative steps integrate
/// backwards). Leaves a non-finite log density in `z` on failure; the caller
/// treats that as a divergence.
template <class M>
void leapfrog(PhasePoint& z, double step, const Eigen::VectorXd& inv_metric, const M& model) {
  z.p += 0.5 * step * z.grad;
  z.q += step * inv_metric.cwiseProduct(z.p);
  z.log_density = detail::eval_target(model, z.q, z.grad);
  z.p += 0.5 * step * z.grad;
}

/// Dual-averaging step-size adaptation.
class StepsizeAdapter {
 public:
  void set_mu(double mu) { mu_ = mu; }
  void set_delta(double delta) { delta_ = delta; }
  void restart() {
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }
  void learn(double& epsilon, double accept_stat) {
    ++counter_;
    accept_stat = std::min(1.0, accept_stat);
    const double eta = 1.0 / (counter_ + t0_);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(static_cast<double>(counter_)) / gamma_;
    const double x_eta = std::pow(static_cast<double>(counter_), -kappa_);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    epsilon = std::exp(x);
  }
  void complete(double& epsilon) const { epsilon = std::exp(x_bar_); }

 private:
  double mu_ = 0.0;
  double delta_ = 0.8;
  double gamma_ = 0.05;
  double kappa_ = 0.75;
  double t0_ = 10.0;
  double counter_ = 0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
};

/// Three-stage warmup: a fast step-size-only interval (15%), doubling slow
/// windows that estimate the diagonal metric, and a final fast interval
/// (10%).
class WindowedVarianceAdapter {
 public:
  explicit WindowedVarianceAdapter(int n_warmup, std::size_t dim) : n_warmup_(n_warmup) {
    init_buffer_ = static_cast<int>(0.15 * n_warmup);
    term_buffer_ = static_cast<int>(0.1 * n_warmup);
    base_window_ = std::min(25, n_warmup - init_buffer_ - term_buffer_);
    enabled_ = n_warmup >= 20 && base_window_ > 0;
    mean_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    m2_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
  }

  bool enabled() const { return enabled_; }
  int init_buffer() const { return init_buffer_; }
  int term_buffer() const { return term_buffer_; }

  /// Feeds one warmup draw; returns true when `inv_metric` was updated.
  bool learn(Eigen::VectorXd& inv_metric, const Eigen::VectorXd& q) {
    if (!enabled_) {
      ++counter_;
      return false;
    }
    if (in_window()) add_sample(q);
    if (end_of_window()) {
      compute_next_window();
      const double n = static_cast<double>(n_samples_);
      Eigen::VectorXd var = m2_ / std::max(1.0, n - 1.0);
      inv_metric = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
      n_samples_ = 0;
      mean_.setZero();
      m2_.setZero();
      ++counter_;
      return true;
    }
    ++counter_;
    return false;
  }

 private:
  bool in_window() const {
    return counter_ >= init_buffer_ && counter_ < n_warmup_ - term_buffer_ &&
           counter_ != n_warmup_;
  }
  bool end_of_window() const { return counter_ == next_window_ && counter_ != n_warmup_; }

  void compute_next_window() {
    const int last = n_warmup_ - term_buffer_ - 1;
    if (next_window_ == last) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != last) {
      const int boundary = next_window_ + 2 * window_size_;
      if (boundary >= n_warmup_ - term_buffer_) next_window_ = last;
    }
  }

  void add_sample(const Eigen::VectorXd& q) {
    ++n_samples_;
    const Eigen::VectorXd delta = q - mean_;
    mean_ += delta / static_cast<double>(n_samples_);
    m2_ += delta.cwiseProduct(q - mean_);
  }

  int n_warmup_;
  int init_buffer_ = 0;
  int term_buffer_ = 0;
  int base_window_ = 0;
  bool enabled_ = false;
  int counter_ = 0;
  int window_size_ = 0;
  int next_window_ = 0;
  long n_samples_ = 0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
};

/// Per-chain random stream keyed on (seed, chain index); independent of
/// thread scheduling.
inline std::mt19937_64 chain_rng(std::uint64_t seed, int chain) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(chain), 0x6e757473u};
  return std::mt19937_64(seq);
}

struct TransitionInfo {
  int tree_depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
  double accept_stat = 0.0;
  double energy = 0.0;
};

/// Multinomial NUTS with the generalized no-U-turn criterion, diagonal
/// metric.
template <class M>
class NutsChain {
 public:
  NutsChain(const M& model, std::mt19937_64 rng, int max_depth)
      : model_(model), rng_(std::move(rng)), max_depth_(max_depth) {
    const auto d = static_cast<Eigen::Index>(model.dim());
    inv_metric_ = Eigen::VectorXd::Ones(d);
  }

  /// Uniform(-radius, radius) initialization, up to 100 attempts.
  void initialize(double radius) {
    const auto d = static_cast<Eigen::Index>(model_.dim());
    std::uniform_real_distribution<double> unif(-radius, radius);
    z_.q.resize(d);
    z_.p = Eigen::VectorXd::Zero(d);
    z_.grad.resize(d);
    for (int attempt = 0; attempt < 100; ++attempt) {
      for (Eigen::Index i = 0; i < d; ++i) z_.q[i] = unif(rng_);
      z_.log_density = detail::eval_target(model_, z_.q, z_.grad);
      if (std::isfinite(z_.log_density)) return;
    }
    throw InitError("no finite log density found in 100 random initializations");
  }

  void set_position(const Eigen::VectorXd& q) {
    z_.q = q;
    z_.p = Eigen::VectorXd::Zero(q.size());
    z_.grad.resize(q.size());
    z_.log_density = detail::eval_target(model_, z_.q, z_.grad);
    if (!std::isfinite(z_.log_density)) throw InitError("initial point has no finite density");
  }

  const PhasePoint& state() const { return z_; }
  double step_size() const { return epsilon_; }
  void set_step_size(double e) { epsilon_ = e; }
  Eigen::VectorXd& inv_metric() { return inv_metric_; }
  const Eigen::VectorXd& inv_metric() const { return inv_metric_; }

  /// Doubles or halves the step size until the one-step acceptance crosses
  /// 0.8.
  void init_stepsize() {
    const PhasePoint start = z_;
    const double log_target = std::log(0.8);
    auto trial = [&]() {
      z_ = start;
      sample_momentum();
      const double h0 = hamiltonian(z_, inv_metric_);
      leapfrog(z_, epsilon_, inv_metric_, model_);
      double h = hamiltonian(z_, inv_metric_);
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      return h0 - h;
    };
    const double delta0 = trial();
    const int direction = delta0 > log_target ? 1 : -1;
    while (true) {
      const double delta = trial();
      if (direction == 1 && !(delta > log_target)) break;
      if (direction == -1 && !(delta < log_target)) break;
      epsilon_ = direction == 1 ? 2.0 * epsilon_ : 0.5 * epsilon_;
      if (epsilon_ > 1e7) {
        z_ = start;
        throw AdaptationError("step size diverged during initialization (improper target?)");
      }
      if (epsilon_ == 0.0) {
        z_ = start;
        throw AdaptationError("step size collapsed to zero during initialization");
      }
    }
    z_ = start;
  }

  TransitionInfo transition() {
    sample_momentum();
    const double h0 = hamiltonian(z_, inv_metric_);

    PhasePoint z_fwd = z_;
    PhasePoint z_bck = z_;
    PhasePoint z_sample = z_;
    PhasePoint z_propose = z_;

    Eigen::VectorXd p_fwd_fwd = z_.p;
    Eigen::VectorXd p_sharp_fwd_fwd = inv_metric_.cwiseProduct(z_.p);
    Eigen::VectorXd p_fwd_bck = z_.p;
    Eigen::VectorXd p_sharp_fwd_bck = p_sharp_fwd_fwd;
    Eigen::VectorXd p_bck_fwd = z_.p;
    Eigen::VectorXd p_sharp_bck_fwd = p_sharp_fwd_fwd;
    Eigen::VectorXd p_bck_bck = z_.p;
    Eigen::VectorXd p_sharp_bck_bck = p_sharp_fwd_fwd;
    Eigen::VectorXd rho = z_.p;

    double log_sum_weight = 0.0;
    int depth = 0;
    n_leapfrog_ = 0;
    sum_metro_prob_ = 0.0;
    divergent_ = false;
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    while (depth < max_depth_) {
      Eigen::VectorXd rho_fwd = Eigen::VectorXd::Zero(rho.size());
      Eigen::VectorXd rho_bck = Eigen::VectorXd::Zero(rho.size());
      bool valid_subtree = false;
      double log_sum_weight_subtree = -std::numeric_limits<double>::infinity();

      if (unif(rng_) > 0.5) {
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        PhasePoint& z = z_fwd;
        valid_subtree = build_tree(z, depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd,
                                   rho_fwd, p_fwd_bck, p_fwd_fwd, h0, 1.0,
                                   log_sum_weight_subtree);
      } else {
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        PhasePoint& z = z_bck;
        valid_subtree = build_tree(z, depth, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck,
                                   rho_bck, p_bck_fwd, p_bck_bck, h0, -1.0,
                                   log_sum_weight_subtree);
      }
      if (!valid_subtree) break;
      ++depth;

      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (unif(rng_) < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = detail::log_sum_exp(log_sum_weight, log_sum_weight_subtree);

      rho = rho_bck + rho_fwd;
      bool persist = criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      Eigen::VectorXd rho_extended = rho_bck + p_fwd_bck;
      persist = persist && criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_extended);
      rho_extended = rho_fwd + p_bck_fwd;
      persist = persist && criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_extended);
      if (!persist) break;
    }

    TransitionInfo info;
    info.tree_depth = depth;
    info.n_leapfrog = n_leapfrog_;
    info.divergent = divergent_;
    info.accept_stat = n_leapfrog_ > 0 ? sum_metro_prob_ / n_leapfrog_ : 0.0;
    z_ = z_sample;
    info.energy = hamiltonian(z_, inv_metric_);
    return info;
  }

 private:
  void sample_momentum() {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < z_.p.size(); ++i) {
      z_.p[i] = normal(rng_) / std::sqrt(inv_metric_[i]);
    }
  }

  static bool criterion(const Eigen::VectorXd& p_sharp_minus,
                        const Eigen::VectorXd& p_sharp_plus, const Eigen::VectorXd& rho) {
    return p_sharp_plus.dot(rho) > 0 && p_sharp_minus.dot(rho) > 0;
  }

  bool build_tree(PhasePoint& z, int depth, PhasePoint& z_propose,
                  Eigen::VectorXd& p_sharp_beg, Eigen::VectorXd& p_sharp_end,
                  Eigen::VectorXd& rho, Eigen::VectorXd& p_beg, Eigen::VectorXd& p_end,
                  double h0, double sign, double& log_sum_weight) {
    if (depth == 0) {
      leapfrog(z, sign * epsilon_, inv_metric_, model_);
      ++n_leapfrog_;
      double h = hamiltonian(z, inv_metric_);
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      if (h - h0 > kMaxDeltaH) divergent_ = true;
      log_sum_weight = detail::log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_prob_ += h0 - h > 0 ? 1.0 : std::exp(h0 - h);
      z_propose = z;
      p_sharp_beg = inv_metric_.cwiseProduct(z.p);
      p_sharp_end = p_sharp_beg;
      rho += z.p;
      p_beg = z.p;
      p_end = p_beg;
      return !divergent_;
    }

    const auto d = rho.size();
    Eigen::VectorXd p_sharp_init_end(d), p_init_end(d);
    Eigen::VectorXd rho_init = Eigen::VectorXd::Zero(d);
    double log_sum_weight_init = -std::numeric_limits<double>::infinity();
    if (!build_tree(z, depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg,
                    p_init_end, h0, sign, log_sum_weight_init)) {
      return false;
    }

    PhasePoint z_propose_final = z;
    Eigen::VectorXd p_sharp_final_beg(d), p_final_beg(d);
    Eigen::VectorXd rho_final = Eigen::VectorXd::Zero(d);
    double log_sum_weight_final = -std::numeric_limits<double>::infinity();
    if (!build_tree(z, depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final,
                    p_final_beg, p_end, h0, sign, log_sum_weight_final)) {
      return false;
    }

    const double log_sum_weight_subtree =
        detail::log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = detail::log_sum_exp(log_sum_weight, log_sum_weight_subtree);

    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = z_propose_final;
    } else {
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      if (unif(rng_) < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
        z_propose = z_propose_final;
      }
    }

    const Eigen::VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    Eigen::VectorXd rho_extended = rho_init + p_final_beg;
    persist = persist && criterion(p_sharp_beg, p_sharp_final_beg, rho_extended);
    rho_extended = rho_final + p_init_end;
    persist = persist && criterion(p_sharp_init_end, p_sharp_end, rho_extended);
    return persist;
  }

  static constexpr double kMaxDeltaH = 1000.0;

  const M& model_;
  std::mt19937_64 rng_;
  int max_depth_;
  PhasePoint z_;
  Eigen::VectorXd inv_metric_;
  double epsilon_ = 1.0;
  int n_leapfrog_ = 0;
  double sum_metro_prob_ = 0.0;
  bool divergent_ = false;
};

/// Progress callback: (chain, iteration including warmup, total iterations).
/// Invoked from worker threads; ordering across chains is unspecified.
using ProgressFn = std::function<void(int, int, int)>;

/// Warmup summary for one chain.
struct ChainAdaptation {
  double step_size = 0.0;
  Eigen::VectorXd inv_metric;
  int warmup_divergences = 0;
};

namespace detail {

struct ChainOutput {
  Eigen::MatrixXd draws;  // retained x P
  std::vector<int> iteration;
  std::vector<DrawStats> stats;
  ChainAdaptation adaptation;
};

template <class M>
ChainOutput run_chain(const M& model, const SamplerConfig& cfg, int chain,
                      std::size_t n_outputs, const ProgressFn& progress) {
  NutsChain<M> nuts(model, chain_rng(cfg.seed, chain), cfg.max_tree_depth);
  nuts.initialize(cfg.init_radius);
  nuts.init_stepsize();

  StepsizeAdapter stepsize;
  stepsize.set_delta(cfg.target_accept);
  stepsize.set_mu(std::log(10.0 * nuts.step_size()));
  stepsize.restart();
  WindowedVarianceAdapter metric(cfg.n_warmup, model.dim());

  const int total = cfg.n_warmup + cfg.n_iterations;
  ChainOutput out;
  out.draws.resize(cfg.draws_per_chain(), static_cast<Eigen::Index>(n_outputs));
  int warmup_divergences = 0;

  for (int it = 0; it < cfg.n_warmup; ++it) {
    TransitionInfo info = nuts.transition();
    if (info.divergent) ++warmup_divergences;
    double eps = nuts.step_size();
    stepsize.learn(eps, info.accept_stat);
    nuts.set_step_size(eps);
    if (metric.learn(nuts.inv_metric(), nuts.state().q)) {
      nuts.init_stepsize();
      stepsize.set_mu(std::log(10.0 * nuts.step_size()));
      stepsize.restart();
    }
    if (progress) progress(chain, it + 1, total);
  }
  if (cfg.n_warmup > 0) {
    if (warmup_divergences == cfg.n_warmup) {
      throw AdaptationError("chain " + std::to_string(chain + 1) +
                            ": every warmup iteration diverged");
    }
    double eps = nuts.step_size();
    stepsize.complete(eps);
    if (!(eps > 0.0) || !std::isfinite(eps)) {
      throw AdaptationError("chain " + std::to_string(chain + 1) +
                            ": adapted step size is not positive");
    }
    nuts.set_step_size(eps);
  }

  std::vector<double> row(n_outputs);
  Eigen::Index kept = 0;
  for (int it = 0; it < cfg.n_iterations; ++it) {
    TransitionInfo info = nuts.transition();
    if ((it + 1) % cfg.thin == 0) {
      const Eigen::VectorXd& q = nuts.state().q;
      model.write_output(std::span<const double>(q.data(), static_cast<std::size_t>(q.size())),
                         std::span<double>(row));
      for (std::size_t j = 0; j < n_outputs; ++j) out.draws(kept, static_cast<Eigen::Index>(j)) = row[j];
      out.iteration.push_back(it + 1);
      out.stats.push_back(DrawStats{info.tree_depth, info.divergent,
                                    info.tree_depth >= cfg.max_tree_depth, nuts.step_size(),
                                    info.energy, info.accept_stat, info.n_leapfrog});
      ++kept;
    }
    if (progress) progress(chain, cfg.n_warmup + it + 1, total);
  }
  out.adaptation.step_size = nuts.step_size();
  out.adaptation.inv_metric = nuts.inv_metric();
  out.adaptation.warmup_divergences = warmup_divergences;
  return out;
}

}  // namespace detail

/// Runs `cfg.n_chains` independent NUTS chains with warmup adaptation and
/// returns the retained post-warmup draws in output (constrained) space.
template <LogDensityModel M>
DrawsMatrix nuts_run(const M& model, const SamplerConfig& cfg, const ProgressFn& progress = {},
                     std::vector<ChainAdaptation>* adaptation = nullptr) {
  cfg.validate();
  const std::vector<std::string> names = model.output_names();
  const std::size_t n_out = names.size();
  std::vector<detail::ChainOutput> chains(static_cast<std::size_t>(cfg.n_chains));
  std::vector<std::exception_ptr> errors(chains.size());

  int n_threads = cfg.n_threads == 0 ? static_cast<int>(std::thread::hardware_concurrency())
                                     : cfg.n_threads;
  n_threads = std::clamp(n_threads, 1, cfg.n_chains);

  auto run_one = [&](int c) {
    try {
      chains[static_cast<std::size_t>(c)] = detail::run_chain(model, cfg, c, n_out, progress);
    } catch (...) {
      errors[static_cast<std::size_t>(c)] = std::current_exception();
    }
  };
  if (n_threads == 1) {
    for (int c = 0; c < cfg.n_chains; ++c) run_one(c);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    for (int t = 0; t < n_threads; ++t) {
      workers.emplace_back([&] {
        for (int c = next++; c < cfg.n_chains; c = next++) run_one(c);
      });
    }
    for (auto& w : workers) w.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  Eigen::MatrixXd values(static_cast<Eigen::Index>(cfg.n_chains) * cfg.draws_per_chain(),
                         static_cast<Eigen::Index>(n_out));
  std::vector<int> chain_id;
  std::vector<int> iteration;
  std::vector<DrawStats> stats;
  Eigen::Index row = 0;
  for (int c = 0; c < cfg.n_chains; ++c) {
    auto& ch = chains[static_cast<std::size_t>(c)];
    values.middleRows(row, ch.draws.rows()) = ch.draws;
    row += ch.draws.rows();
    chain_id.insert(chain_id.end(), ch.iteration.size(), c + 1);
    iteration.insert(iteration.end(), ch.iteration.begin(), ch.iteration.end());
    stats.insert(stats.end(), ch.stats.begin(), ch.stats.end());
  }
  DrawsMatrix result(names, std::move(values), std::move(chain_id), std::move(iteration),
                     std::move(stats));
  if (adaptation) {
    adaptation->clear();
    for (const auto& ch : chains) adaptation->push_back(ch.adaptation);
  }
  return result;
}

/// Convenience overload for a bare log-density-with-gradient callable.
template <class F>
  requires std::invocable<const F&, std::span<const double>, std::span<double>>
DrawsMatrix nuts_run(F target, std::size_t dim, const SamplerConfig& cfg) {
  FunctionModel<F> model(std::move(target), dim);
  return nuts_run(model, cfg);
}

}  // namespace ectfusion
