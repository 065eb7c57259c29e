#pragma once

// Closed-form slot-event probabilities, throughput and airtime of saturated
// multi-rate 802.11 stations contending with per-slot attempt probabilities.
//
// Public functions take and return vectors in caller order. Expressions that
// depend on the "highest index" of a failed transmission are evaluated on the
// stations sorted by ascending success duration; that permutation is carried
// by SlotModel and applied internally.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "rpf/errors.hpp"
#include "rpf/phy_profile.hpp"

namespace rpf {

// Upper bound applied to tau when converting to x = tau/(1-tau) with more
// than one station.
inline constexpr double kMaxTau = 1.0 - 1e-9;

struct AttemptVector {
  std::vector<double> tau;

  static AttemptVector from_x(std::span<const double> x) {
    AttemptVector a;
    a.tau.reserve(x.size());
    for (double v : x)
      a.tau.push_back(std::isinf(v) ? 1.0 : v / (1.0 + v));
    return a;
  }

  std::size_t size() const { return tau.size(); }

  void validate() const {
    for (double t : tau)
      if (!(t >= 0.0 && t <= 1.0))
        throw ValidationError("attempt probability must be in [0,1]", "tau");
  }

  // x_i = tau_i / (1 - tau_i); +inf only for a lone station with tau = 1.
  std::vector<double> x() const {
    std::vector<double> out;
    out.reserve(tau.size());
    for (double t : tau) {
      if (tau.size() == 1 && t >= 1.0) {
        out.push_back(std::numeric_limits<double>::infinity());
        continue;
      }
      const double c = std::min(t, kMaxTau);
      out.push_back(c / (1.0 - c));
    }
    return out;
  }
};

// Durations and the duration-ascending order of a set of stations.
struct SlotModel {
  double empty_slot_us = 9.0;
  std::vector<double> success_us;  // T_s,i, caller order
  std::vector<double> failure_us;  // T_u,i, caller order
  std::vector<std::size_t> order;  // position -> caller index

  std::size_t size() const { return success_us.size(); }

  static SlotModel from_specs(std::span<const StationSpec> specs,
                              const PhyProfile& profile) {
    validate_stations(specs, profile);
    SlotModel m;
    m.empty_slot_us = profile.empty_slot_us;
    auto t = station_timings(specs, profile);
    m.success_us = std::move(t.success_us);
    m.failure_us = std::move(t.failure_us);
    m.order = order_stations(specs, profile);
    return m;
  }

  // Orders by success duration, ties by caller index.
  static SlotModel from_durations(double empty_slot_us,
                                  std::vector<double> success_us,
                                  std::vector<double> failure_us = {}) {
    if (success_us.empty())
      throw ValidationError("at least one station required");
    SlotModel m;
    m.empty_slot_us = empty_slot_us;
    if (failure_us.empty()) failure_us = success_us;
    if (failure_us.size() != success_us.size())
      throw ValidationError("duration vectors differ in length");
    m.success_us = std::move(success_us);
    m.failure_us = std::move(failure_us);
    m.order.resize(m.success_us.size());
    std::iota(m.order.begin(), m.order.end(), std::size_t{0});
    std::stable_sort(m.order.begin(), m.order.end(),
                     [&](std::size_t a, std::size_t b) {
                       return m.success_us[a] < m.success_us[b];
                     });
    return m;
  }
};

struct SlotDistribution {
  double p_empty = 0.0;
  double p_success = 0.0;
  double p_failure = 0.0;
  double t_success_us = 0.0;  // mean duration of a success slot
  double t_failure_us = 0.0;  // mean duration of a failure slot
  double t_slot_us = 0.0;     // mean slot duration
};

struct PerStationMetrics {
  double p_success = 0.0;          // p_s,i
  double p_highest_failure = 0.0;  // p_u,i
  double p_collision = 0.0;        // p_i
  double p_failure_cond = 0.0;     // p_f,i
  double throughput_mbps = 0.0;    // S_i
  double airtime = 0.0;            // T_i
};

// p_i: probability that at least one other station transmits.
inline double collision_prob(std::size_t i, std::span<const double> tau) {
  double idle_others = 1.0;
  for (std::size_t j = 0; j < tau.size(); ++j)
    if (j != i) idle_others *= 1.0 - tau[j];
  return 1.0 - idle_others;
}

// p_s,i = tau_i (1 - p_n,i) prod_{j != i} (1 - tau_j)
inline double success_prob(std::size_t i, std::span<const double> tau,
                           std::span<const double> link_error) {
  return tau[i] * (1.0 - link_error[i]) * (1.0 - collision_prob(i, tau));
}

// p_u,i for stations already sorted by ascending success duration: a noise
// loss of a lone transmission of i, or a collision whose longest frame is
// i's. Throws if `success_us` is not sorted.
inline double highest_index_failure_prob(std::size_t i,
                                         std::span<const double> tau,
                                         std::span<const double> link_error,
                                         std::span<const double> success_us) {
  if (!std::is_sorted(success_us.begin(), success_us.end()))
    throw ContractViolation(
        "highest_index_failure_prob requires stations ordered by duration");
  double below = 1.0, above = 1.0;
  for (std::size_t j = 0; j < i; ++j) below *= 1.0 - tau[j];
  for (std::size_t j = i + 1; j < tau.size(); ++j) above *= 1.0 - tau[j];
  return tau[i] * link_error[i] * below * above +
         tau[i] * (1.0 - below) * above;
}

namespace detail {

struct OrderedProducts {
  std::vector<double> below;  // prod_{m<k} (1 - tau_m), by position
  std::vector<double> above;  // prod_{m>k} (1 - tau_m), by position
  double all_idle = 1.0;
};

inline OrderedProducts ordered_products(const SlotModel& m,
                                        std::span<const double> tau) {
  const std::size_t n = m.size();
  OrderedProducts p;
  p.below.assign(n, 1.0);
  p.above.assign(n, 1.0);
  for (std::size_t k = 1; k < n; ++k)
    p.below[k] = p.below[k - 1] * (1.0 - tau[m.order[k - 1]]);
  for (std::size_t k = n - 1; k-- > 0;)
    p.above[k] = p.above[k + 1] * (1.0 - tau[m.order[k + 1]]);
  p.all_idle = p.below[n - 1] * (1.0 - tau[m.order[n - 1]]);
  return p;
}

inline void check_sizes(const SlotModel& m, std::span<const double> tau) {
  if (tau.size() != m.size())
    throw ValidationError("attempt vector size does not match station count",
                          "tau");
  for (double t : tau)
    if (!(t >= 0.0 && t <= 1.0))
      throw ValidationError("attempt probability must be in [0,1]", "tau");
}

}  // namespace detail

// Per-slot event probabilities. Fills p_s,i and p_u,i (caller order) when
// the output spans are non-empty.
inline SlotDistribution slot_distribution(const SlotModel& m,
                                          std::span<const double> tau,
                                          std::span<const double> link_error,
                                          std::span<double> p_success_out = {},
                                          std::span<double> p_failure_out = {}) {
  detail::check_sizes(m, tau);
  const auto prod = detail::ordered_products(m, tau);
  SlotDistribution d;
  d.p_empty = prod.all_idle;
  double ts_weighted = 0.0, tu_weighted = 0.0, pu_sum = 0.0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    const std::size_t i = m.order[k];
    const double others_idle = prod.below[k] * prod.above[k];
    const double ps = tau[i] * (1.0 - link_error[i]) * others_idle;
    const double pu = tau[i] * link_error[i] * others_idle +
                      tau[i] * (1.0 - prod.below[k]) * prod.above[k];
    d.p_success += ps;
    pu_sum += pu;
    ts_weighted += ps * m.success_us[i];
    tu_weighted += pu * m.failure_us[i];
    if (!p_success_out.empty()) p_success_out[i] = ps;
    if (!p_failure_out.empty()) p_failure_out[i] = pu;
  }
  d.p_failure = 1.0 - d.p_empty - d.p_success;
  d.t_success_us = d.p_success > 0.0 ? ts_weighted / d.p_success : 0.0;
  d.t_failure_us = pu_sum > 0.0 ? tu_weighted / pu_sum : 0.0;
  d.t_slot_us = d.p_empty * m.empty_slot_us + ts_weighted + tu_weighted;
  return d;
}

// Mean slot duration with failures charged at T_s of the longest frame, the
// form the airtime expressions use.
inline double slot_time_success_form(const SlotModel& m,
                                     std::span<const double> tau) {
  detail::check_sizes(m, tau);
  const auto prod = detail::ordered_products(m, tau);
  double t = m.empty_slot_us * prod.all_idle;
  for (std::size_t k = 0; k < m.size(); ++k) {
    const std::size_t i = m.order[k];
    t += m.success_us[i] * tau[i] * prod.above[k];
  }
  return t;
}

// T_i: share of channel time during which station i is on the air, whether
// its frame succeeds, is lost to noise or collides. Collisions are charged
// the duration of the longest frame involved. Uses T_s,i for every outcome,
// so the result never depends on link error probabilities.
inline std::vector<double> airtime(const SlotModel& m,
                                   std::span<const double> tau) {
  detail::check_sizes(m, tau);
  const std::size_t n = m.size();
  const auto prod = detail::ordered_products(m, tau);
  double t_slot = m.empty_slot_us * prod.all_idle;
  std::vector<double> longer(n, 0.0);  // sum_{j>k} tau_j T_s,j prod_{l>j}(1-tau_l)
  double acc = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    longer[k] = acc;
    const std::size_t i = m.order[k];
    acc += tau[i] * prod.above[k] * m.success_us[i];
  }
  t_slot += acc;
  std::vector<double> out(n, 0.0);
  if (t_slot <= 0.0) return out;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = m.order[k];
    out[i] = tau[i] * (prod.above[k] * m.success_us[i] + longer[k]) / t_slot;
  }
  return out;
}

inline std::vector<double> airtime(std::span<const double> tau,
                                   std::span<const StationSpec> specs,
                                   const PhyProfile& profile) {
  return airtime(SlotModel::from_specs(specs, profile), tau);
}

// X(x) = T_e + sum_j T_s,j x_j prod_{k<j} (1 + x_k), in position order.
inline double big_x(const SlotModel& m, std::span<const double> x) {
  double total = m.empty_slot_us;
  double prefix = 1.0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    const std::size_t i = m.order[k];
    total += m.success_us[i] * x[i] * prefix;
    prefix *= 1.0 + x[i];
  }
  return total;
}

// Partial derivatives dX/dx_i in caller order.
inline std::vector<double> big_x_gradient(const SlotModel& m,
                                          std::span<const double> x) {
  const std::size_t n = m.size();
  std::vector<double> prefix(n, 1.0);
  for (std::size_t k = 1; k < n; ++k)
    prefix[k] = prefix[k - 1] * (1.0 + x[m.order[k - 1]]);
  std::vector<double> grad(n, 0.0);
  double tail = 0.0;  // sum_{j>k} T_s,j x_j prod_{l<j} (1+x_l)
  for (std::size_t k = n; k-- > 0;) {
    const std::size_t i = m.order[k];
    grad[i] = m.success_us[i] * prefix[k] + tail / (1.0 + x[i]);
    tail += m.success_us[i] * x[i] * prefix[k];
  }
  return grad;
}

// Airtime in the transformed variables: T_i = x_i (dX/dx_i) / X.
inline std::vector<double> airtime_x_form(const SlotModel& m,
                                          std::span<const double> x) {
  const std::size_t n = m.size();
  if (n == 1 && std::isinf(x[0])) return {1.0};
  const double big = big_x(m, x);
  const auto grad = big_x_gradient(m, x);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * grad[i] / big;
  return out;
}

inline double log_big_x(const SlotModel& m, std::span<const double> log_x) {
  std::vector<double> x(log_x.size());
  std::transform(log_x.begin(), log_x.end(), x.begin(),
                 [](double v) { return std::exp(v); });
  return std::log(big_x(m, x));
}

// d T_i / d(log x_k), caller order. This is the Hessian of log X(e^{x~}),
// hence symmetric: for positions a < b the entry is T_b tau_a - T_a T_b and
// the diagonal is T_a (1 - T_a).
inline Eigen::MatrixXd airtime_jacobian_log_x(const SlotModel& m,
                                              std::span<const double> x) {
  const std::size_t n = m.size();
  const auto t = airtime_x_form(m, x);
  Eigen::MatrixXd jac(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    const std::size_t i = m.order[a];
    jac(i, i) = t[i] * (1.0 - t[i]);
    const double tau_i = x[i] / (1.0 + x[i]);
    for (std::size_t b = a + 1; b < n; ++b) {
      const std::size_t j = m.order[b];
      const double v = t[j] * tau_i - t[i] * t[j];
      jac(i, j) = v;
      jac(j, i) = v;
    }
  }
  return jac;
}

// S_i = p_s,i L_i / T_slot in Mb/s (bits per microsecond).
inline std::vector<double> throughput(const SlotModel& m,
                                      std::span<const double> tau,
                                      std::span<const double> link_error,
                                      std::span<const double> payload_bits) {
  std::vector<double> ps(m.size(), 0.0);
  const auto d = slot_distribution(m, tau, link_error, ps, {});
  std::vector<double> out(m.size(), 0.0);
  if (d.t_slot_us <= 0.0) return out;
  for (std::size_t i = 0; i < m.size(); ++i)
    out[i] = ps[i] * payload_bits[i] / d.t_slot_us;
  return out;
}

// S_i = (1 - p_n,i) x_i L_i / X. Agrees with `throughput` when the profile
// charges failures at T_s.
inline std::vector<double> throughput_x_form(const SlotModel& m,
                                             std::span<const double> x,
                                             std::span<const double> link_error,
                                             std::span<const double> payload_bits) {
  const std::size_t n = m.size();
  if (n == 1 && std::isinf(x[0]))
    return {(1.0 - link_error[0]) * payload_bits[0] / m.success_us[0]};
  const double big = big_x(m, x);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = (1.0 - link_error[i]) * x[i] * payload_bits[i] / big;
  return out;
}

namespace detail {
inline std::vector<double> link_errors(std::span<const StationSpec> specs) {
  std::vector<double> v;
  for (const auto& s : specs) v.push_back(s.link_error);
  return v;
}
inline std::vector<double> payloads(std::span<const StationSpec> specs) {
  std::vector<double> v;
  for (const auto& s : specs) v.push_back(s.payload_bits);
  return v;
}
}  // namespace detail

inline std::vector<double> throughput(std::span<const double> tau,
                                      std::span<const StationSpec> specs,
                                      const PhyProfile& profile) {
  const auto m = SlotModel::from_specs(specs, profile);
  return throughput(m, tau, detail::link_errors(specs), detail::payloads(specs));
}

struct UtilityValue {
  double value = 0.0;
  bool finite = true;  // false when some throughput is zero (value = -inf)
};

// Sum of natural logs of throughputs in Mb/s.
inline UtilityValue utility(std::span<const double> throughputs_mbps) {
  UtilityValue u;
  for (double s : throughputs_mbps) {
    if (!(s > 0.0)) {
      u.value = -std::numeric_limits<double>::infinity();
      u.finite = false;
      return u;
    }
    u.value += std::log(s);
  }
  return u;
}

inline double jain_index(std::span<const double> throughputs) {
  if (throughputs.empty()) throw ValidationError("empty throughput vector");
  double sum = 0.0, sum_sq = 0.0;
  for (double s : throughputs) {
    sum += s;
    sum_sq += s * s;
  }
  if (sum_sq == 0.0) return 1.0;
  return sum * sum / (static_cast<double>(throughputs.size()) * sum_sq);
}

struct SolverView {
  double big_x_us = 0.0;
  std::vector<double> z;  // 1 - p_n,i
  UtilityValue utility;
};

struct ModelEvaluation {
  SlotDistribution slot;
  std::vector<PerStationMetrics> stations;  // caller order
  UtilityValue utility;
  double jain = 1.0;
};

inline ModelEvaluation evaluate(const SlotModel& m, std::span<const double> tau,
                                std::span<const double> link_error,
                                std::span<const double> payload_bits) {
  const std::size_t n = m.size();
  std::vector<double> ps(n), pu(n);
  ModelEvaluation e;
  e.slot = slot_distribution(m, tau, link_error, ps, pu);
  const auto air = airtime(m, tau);
  std::vector<double> s(n);
  e.stations.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& st = e.stations[i];
    st.p_success = ps[i];
    st.p_highest_failure = pu[i];
    st.p_collision = collision_prob(i, tau);
    st.p_failure_cond = 1.0 - (1.0 - link_error[i]) * (1.0 - st.p_collision);
    st.throughput_mbps =
        e.slot.t_slot_us > 0.0 ? ps[i] * payload_bits[i] / e.slot.t_slot_us : 0.0;
    st.airtime = air[i];
    s[i] = st.throughput_mbps;
  }
  e.utility = utility(s);
  e.jain = jain_index(s);
  return e;
}

inline ModelEvaluation evaluate(std::span<const double> tau,
                                std::span<const StationSpec> specs,
                                const PhyProfile& profile) {
  const auto m = SlotModel::from_specs(specs, profile);
  return evaluate(m, tau, detail::link_errors(specs), detail::payloads(specs));
}

inline SolverView solver_view(std::span<const double> tau,
                              std::span<const StationSpec> specs,
                              const PhyProfile& profile) {
  const auto m = SlotModel::from_specs(specs, profile);
  AttemptVector a{std::vector<double>(tau.begin(), tau.end())};
  SolverView v;
  v.big_x_us = big_x(m, a.x());
  for (const auto& s : specs) v.z.push_back(1.0 - s.link_error);
  v.utility = utility(throughput(m, tau, detail::link_errors(specs),
                                 detail::payloads(specs)));
  return v;
}

struct ConvexityReport {
  std::size_t segments = 0;
  double worst_log_x_violation = -std::numeric_limits<double>::infinity();
  double worst_neg_utility_violation = -std::numeric_limits<double>::infinity();
};

// Midpoint convexity of log X(e^{x~}) and of -U(x~) along random segments in
// log-x space. A violation is f(mid) - (f(a) + f(b)) / 2; convexity means it
// never exceeds rounding noise.
template <class Rng>
ConvexityReport convexity_probe(std::span<const StationSpec> specs,
                                const PhyProfile& profile, Rng& rng,
                                std::size_t segments = 10000,
                                double log_x_lo = -8.0, double log_x_hi = 3.0) {
  const auto m = SlotModel::from_specs(specs, profile);
  const auto pn = detail::link_errors(specs);
  const auto len = detail::payloads(specs);
  const std::size_t n = m.size();
  std::uniform_real_distribution<double> coord(log_x_lo, log_x_hi);

  auto neg_utility = [&](const std::vector<double>& lx) {
    std::vector<double> tau(n);
    for (std::size_t i = 0; i < n; ++i) tau[i] = 1.0 / (1.0 + std::exp(-lx[i]));
    return -utility(throughput(m, tau, pn, len)).value;
  };

  ConvexityReport r;
  r.segments = segments;
  std::vector<double> a(n), b(n), mid(n);
  for (std::size_t s = 0; s < segments; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = coord(rng);
      b[i] = coord(rng);
      mid[i] = 0.5 * (a[i] + b[i]);
    }
    const double vx = log_big_x(m, mid) -
                      0.5 * (log_big_x(m, a) + log_big_x(m, b));
    const double vu = neg_utility(mid) - 0.5 * (neg_utility(a) + neg_utility(b));
    r.worst_log_x_violation = std::max(r.worst_log_x_violation, vx);
    r.worst_neg_utility_violation = std::max(r.worst_neg_utility_violation, vu);
  }
  return r;
}

}  // namespace rpf
