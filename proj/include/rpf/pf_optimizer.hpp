#pragma once

// Proportional-fair contention windows.
//
// Maximising sum_i log S_i over attempt probabilities is equivalent to giving
// every station the same total airtime 1/N. The system T_i(tau) = 1/N is
// solved with Newton's method in log-x coordinates, where it is the
// stationarity condition of the strictly convex function
//   phi(x~) = N log X(e^{x~}) - sum_i x~_i.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rpf/analytic_model.hpp"
#include "rpf/errors.hpp"
#include "rpf/phy_profile.hpp"

namespace rpf {

inline constexpr int kMaxEcw = 15;

struct SolverConfig {
  double tolerance = 1e-10;  // on max_i |T_i - 1/N|
  int max_iterations = 200;
  double damping = 1.0;  // initial Newton step length
  std::uint64_t seed = 1;
  int restarts = 2;  // extra random starts used to confirm uniqueness

  void validate() const {
    if (!(tolerance > 0.0)) throw ValidationError("must be positive", "tolerance");
    if (max_iterations < 1)
      throw ValidationError("must be at least 1", "max_iterations");
    if (!(damping > 0.0 && damping <= 1.0))
      throw ValidationError("must be in (0,1]", "damping");
    if (restarts < 0) throw ValidationError("must be non-negative", "restarts");
  }
};

struct Allocation {
  AttemptVector tau;
  std::vector<double> w_exact;
  std::vector<int> ecw;  // log2 of the rounded contention window
  double residual = 0.0;
  double utility_at_solution = 0.0;
  // Largest component-wise relative difference in tau between the primary
  // solve and the random restarts.
  double restart_spread = 0.0;
  int iterations = 0;
};

// W = (2 - tau) / tau, the fixed window that yields attempt probability tau.
inline double tau_to_cw(double tau) {
  if (!(tau > 0.0 && tau <= 1.0))
    throw InfeasibleError("attempt probability must be in (0,1]", "tau");
  return (2.0 - tau) / tau;
}

inline double cw_to_tau(double w) {
  if (!(w >= 1.0)) throw InfeasibleError("contention window must be >= 1", "w");
  return 2.0 / (w + 1.0);
}

struct NonsaturatedCw {
  double w = 1.0;
  bool floored = false;  // formula gave W < 1 and was raised to 1
};

// W = (2q - tau) / tau for a station that has a frame ready with
// probability q when it wins the channel.
inline NonsaturatedCw nonsaturated_tau_to_cw(double tau, double q) {
  if (!(q > 0.0 && q <= 1.0))
    throw ValidationError("arrival probability must be in (0,1]", "q");
  if (!(tau > 0.0) || !(tau < 2.0 * q))
    throw InfeasibleError("requires 0 < tau < 2q", "tau");
  NonsaturatedCw r;
  r.w = (2.0 * q - tau) / tau;
  if (r.w < 1.0) {
    r.w = 1.0;
    r.floored = true;
  }
  return r;
}

struct RoundedCw {
  int ecw = 0;
  int cw = 1;  // realized window, 2^ecw
};

// Nearest power of two in the log domain; exact halves round up.
inline RoundedCw round_to_pow2(double w) {
  double e = w > 1.0 ? std::floor(std::log2(w) + 0.5) : 0.0;
  e = std::clamp(e, 0.0, static_cast<double>(kMaxEcw));
  RoundedCw r;
  r.ecw = static_cast<int>(e);
  r.cw = 1 << r.ecw;
  return r;
}

inline double ecw_to_tau(int ecw) {
  return cw_to_tau(static_cast<double>(1 << std::clamp(ecw, 0, kMaxEcw)));
}

namespace detail {

struct NewtonResult {
  std::vector<double> log_x;
  double residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

inline double equal_airtime_merit(const SlotModel& m,
                                  const std::vector<double>& log_x) {
  double s = 0.0;
  for (double v : log_x) s += v;
  return static_cast<double>(m.size()) * log_big_x(m, log_x) - s;
}

inline NewtonResult newton_equal_airtime(const SlotModel& m,
                                         std::vector<double> log_x,
                                         const SolverConfig& cfg) {
  const std::size_t n = m.size();
  const double target = 1.0 / static_cast<double>(n);
  constexpr double kLo = -60.0, kHi = 50.0;

  auto exp_all = [](const std::vector<double>& v) {
    std::vector<double> out(v.size());
    std::transform(v.begin(), v.end(), out.begin(),
                   [](double a) { return std::exp(a); });
    return out;
  };
  auto residual_of = [&](const std::vector<double>& lx, Eigen::VectorXd& f) {
    const auto t = airtime_x_form(m, exp_all(lx));
    f.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) f(static_cast<Eigen::Index>(i)) = t[i] - target;
  };

  NewtonResult best;
  Eigen::VectorXd f;
  residual_of(log_x, f);
  for (int it = 0; it <= cfg.max_iterations; ++it) {
    const double res = f.cwiseAbs().maxCoeff();
    if (res < best.residual) {
      best.residual = res;
      best.log_x = log_x;
      best.iterations = it;
    }
    if (res <= cfg.tolerance) {
      best.converged = true;
      return best;
    }
    if (it == cfg.max_iterations) break;

    // J is the Hessian of log X in log-x, so J + mu I is positive definite
    // and the step is a descent direction for the convex merit.
    const Eigen::MatrixXd jac = airtime_jacobian_log_x(m, exp_all(log_x));
    const Eigen::MatrixXd reg =
        jac + res * Eigen::MatrixXd::Identity(jac.rows(), jac.cols());
    Eigen::VectorXd step = reg.ldlt().solve(-f);
    if (!step.allFinite() || step.dot(f) >= 0.0) step = reg.fullPivLu().solve(-f);
    if (!step.allFinite() || step.dot(f) >= 0.0) step = -f;
    constexpr double kMaxStep = 4.0;
    const double big = step.cwiseAbs().maxCoeff();
    if (big > kMaxStep) step *= kMaxStep / big;

    const double merit0 = equal_airtime_merit(m, log_x);
    const double slope = static_cast<double>(n) * f.dot(step);
    double alpha = cfg.damping;
    bool accepted = false;
    std::vector<double> trial(n);
    Eigen::VectorXd f_trial;
    for (int halving = 0; halving < 60; ++halving, alpha *= 0.5) {
      for (std::size_t i = 0; i < n; ++i)
        trial[i] = std::clamp(log_x[i] + alpha * step(static_cast<Eigen::Index>(i)),
                              kLo, kHi);
      residual_of(trial, f_trial);
      if (!f_trial.allFinite()) continue;
      const double merit = equal_airtime_merit(m, trial);
      // Near the solution the merit change drops below rounding; fall back
      // to residual decrease there.
      if (merit <= merit0 + 1e-4 * alpha * slope ||
          (res < 1e-6 && f_trial.cwiseAbs().maxCoeff() < res)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    log_x = trial;
    f = f_trial;
  }
  return best;
}

inline std::vector<double> tau_from_log_x(const std::vector<double>& log_x) {
  std::vector<double> tau(log_x.size());
  for (std::size_t i = 0; i < log_x.size(); ++i)
    tau[i] = 1.0 / (1.0 + std::exp(-log_x[i]));
  return tau;
}

}  // namespace detail

// Equal-airtime attempt probabilities for stations with the given success
// durations. Fills tau, w_exact, ecw, residual, restart_spread, iterations;
// utility is left to callers that know payloads and link errors.
inline Allocation solve_equal_airtime(const SlotModel& m, const SolverConfig& cfg) {
  cfg.validate();
  const std::size_t n = m.size();
  Allocation a;
  if (n == 1) {
    a.tau.tau = {1.0};
    a.w_exact = {1.0};
    a.ecw = {0};
    return a;
  }

  const double tau0 = std::min(0.5, 2.0 / (static_cast<double>(n) + 1.0));
  std::vector<double> start(n, std::log(tau0 / (1.0 - tau0)));
  auto primary = detail::newton_equal_airtime(m, start, cfg);
  if (!primary.converged)
    throw SolverError("equal-airtime solve did not converge (residual " +
                          std::to_string(primary.residual) + ")",
                      primary.residual, detail::tau_from_log_x(primary.log_x));

  a.tau.tau = detail::tau_from_log_x(primary.log_x);
  a.residual = primary.residual;
  a.iterations = primary.iterations;

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> coord(-6.0, 1.0);
  for (int r = 0; r < cfg.restarts; ++r) {
    for (auto& v : start) v = coord(rng);
    auto other = detail::newton_equal_airtime(m, start, cfg);
    if (!other.converged)
      throw SolverError("equal-airtime restart did not converge", other.residual,
                        detail::tau_from_log_x(other.log_x));
    const auto tau_r = detail::tau_from_log_x(other.log_x);
    for (std::size_t i = 0; i < n; ++i)
      a.restart_spread = std::max(
          a.restart_spread, std::abs(tau_r[i] - a.tau.tau[i]) / a.tau.tau[i]);
  }

  for (double t : a.tau.tau) {
    const double w = tau_to_cw(t);
    a.w_exact.push_back(w);
    a.ecw.push_back(round_to_pow2(w).ecw);
  }
  return a;
}

inline Allocation solve_equal_airtime(std::span<const StationSpec> specs,
                                      const PhyProfile& profile,
                                      const SolverConfig& cfg = {}) {
  const auto m = SlotModel::from_specs(specs, profile);
  auto a = solve_equal_airtime(m, cfg);
  a.utility_at_solution =
      utility(throughput(m, a.tau.tau, detail::link_errors(specs),
                         detail::payloads(specs)))
          .value;
  return a;
}

// Attempt probability of a saturated station running binary exponential
// backoff (windows W, 2W, ..., 2^m W, no retry limit) that sees conditional
// failure probability p on every attempt.
inline double backoff_attempt_prob(double p, double cw_min, int max_stage) {
  double sum = 0.0, pk = 1.0, scale = 1.0;
  for (int k = 0; k < max_stage; ++k) {
    sum += pk * (scale * cw_min + 1.0);
    pk *= p;
    scale *= 2.0;
  }
  return 2.0 / ((1.0 - p) * sum + pk * (scale * cw_min + 1.0));
}

// Standard-DCF attempt probabilities: the fixed point between per-station
// backoff behaviour and the conditional failure probability
// p_f,i = 1 - (1 - p_n,i) prod_{j != i} (1 - tau_j).
inline AttemptVector dcf_attempt_prob(double cw_min, int max_stage,
                                      std::span<const StationSpec> specs,
                                      const PhyProfile& profile) {
  if (!(cw_min >= 1.0)) throw ValidationError("must be >= 1", "cw_min");
  if (max_stage < 0) throw ValidationError("must be >= 0", "max_stage");
  validate_stations(specs, profile);
  const std::size_t n = specs.size();
  if (n == 0) throw ValidationError("at least one station required");

  std::vector<double> tau(n, backoff_attempt_prob(0.0, cw_min, max_stage));
  std::vector<double> next(n);
  double res = std::numeric_limits<double>::infinity();
  constexpr int kMaxIter = 100000;
  for (int it = 0; it < kMaxIter; ++it) {
    res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double pf =
          1.0 - (1.0 - specs[i].link_error) * (1.0 - collision_prob(i, tau));
      next[i] = backoff_attempt_prob(pf, cw_min, max_stage);
      res = std::max(res, std::abs(next[i] - tau[i]));
    }
    if (res <= 1e-12) return AttemptVector{next};
    for (std::size_t i = 0; i < n; ++i) tau[i] = 0.5 * (tau[i] + next[i]);
  }
  if (res <= 1e-10) return AttemptVector{tau};
  throw SolverError("DCF fixed point did not converge", res, tau);
}

struct AllocationEvaluation {
  ModelEvaluation exact;
  ModelEvaluation rounded;
  std::vector<double> rounded_tau;
  double utility_gap = 0.0;  // U(exact) - U(rounded), signed
};

inline AllocationEvaluation evaluate_allocation(const Allocation& alloc,
                                                std::span<const StationSpec> specs,
                                                const PhyProfile& profile) {
  if (alloc.tau.size() != specs.size() || alloc.ecw.size() != specs.size())
    throw ValidationError("allocation does not match station list");
  AllocationEvaluation e;
  e.exact = evaluate(alloc.tau.tau, specs, profile);
  for (std::size_t i = 0; i < specs.size(); ++i)
    e.rounded_tau.push_back(ecw_to_tau(alloc.ecw[i]));
  e.rounded = evaluate(e.rounded_tau, specs, profile);
  e.utility_gap = e.exact.utility.value - e.rounded.utility.value;
  return e;
}

}  // namespace rpf
