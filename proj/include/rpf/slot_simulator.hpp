#pragma once

// Slot-level Monte Carlo model of saturated multi-rate DCF.
//
// Time advances in virtual slots: an idle slot of T_e, or one transmission
// period (success or failure). Backoff counters move once per virtual slot,
// busy or idle. Two contention modes:
//   * p-persistent: every station transmits in each slot with a fixed
//     probability; this is exactly the process the analytic model describes.
//   * backoff: counters drawn uniformly from [0, CW-1], windows doubling on
//     failure up to the station's maximum stage and reset on success.
//
// Collisions and noise losses last T_u of the longest frame involved. With
// capture enabled the strongest frame of a collision survives when it beats
// the runner-up by the configured margin.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rpf/errors.hpp"
#include "rpf/phy_profile.hpp"

namespace rpf {

enum class SimMode { kPPersistent, kBackoff };

struct CaptureConfig {
  double power_threshold_db = 10.0;
};

struct SimConfig {
  std::uint64_t n_slots = 10'000'000;
  std::uint64_t seed = 1;
  SimMode mode = SimMode::kPPersistent;
  std::optional<CaptureConfig> capture;
  std::uint64_t warmup_slots = 0;
  // One CSV record per virtual slot when set.
  std::ostream* trace = nullptr;

  void validate() const {
    if (!(n_slots > warmup_slots))
      throw ValidationError("n_slots must exceed warmup_slots", "n_slots");
  }
};

struct StationCounters {
  std::uint64_t attempts = 0;
  std::uint64_t successes = 0;  // includes captured frames
  std::uint64_t captures = 0;
  std::uint64_t noise_failures = 0;
  std::uint64_t collisions = 0;
  double success_time_us = 0.0;  // slot time of this station's successes
  double failure_time_us = 0.0;  // slot time of its failed attempts
  double delivered_frame_time_us = 0.0;  // sum of T_s,i over delivered frames
  double delivered_bits = 0.0;
};

struct SimResult {
  std::vector<StationCounters> stations;
  std::uint64_t slots = 0;
  std::uint64_t empty_slots = 0;
  std::uint64_t success_slots = 0;
  std::uint64_t failure_slots = 0;
  double elapsed_us = 0.0;

  double throughput_mbps(std::size_t i) const {
    return elapsed_us > 0.0 ? stations[i].delivered_bits / elapsed_us : 0.0;
  }
  double airtime(std::size_t i) const {
    return elapsed_us > 0.0
               ? (stations[i].success_time_us + stations[i].failure_time_us) /
                     elapsed_us
               : 0.0;
  }
  double tau(std::size_t i) const {
    return slots > 0 ? static_cast<double>(stations[i].attempts) /
                           static_cast<double>(slots)
                     : 0.0;
  }
  double p_empty() const { return fraction(empty_slots); }
  double p_success() const { return fraction(success_slots); }
  double p_failure() const { return fraction(failure_slots); }

 private:
  double fraction(std::uint64_t c) const {
    return slots > 0 ? static_cast<double>(c) / static_cast<double>(slots) : 0.0;
  }
};

// Index of the frame that survives a collision, if any. `attempt_set` holds
// station indices into `tx_powers_dbm`.
inline std::optional<std::size_t> resolve_capture(
    std::span<const std::size_t> attempt_set,
    std::span<const double> tx_powers_dbm, double threshold_db) {
  if (attempt_set.size() < 2)
    throw ContractViolation("capture needs at least two simultaneous frames");
  std::size_t best = attempt_set[0];
  double best_p = -std::numeric_limits<double>::infinity();
  double second_p = -std::numeric_limits<double>::infinity();
  for (std::size_t i : attempt_set) {
    const double p = tx_powers_dbm[i];
    if (p > best_p) {
      second_p = best_p;
      best_p = p;
      best = i;
    } else if (p > second_p) {
      second_p = p;
    }
  }
  if (best_p - second_p >= threshold_db) return best;
  return std::nullopt;
}

enum class SlotOutcome { kIdle, kSuccess, kNoiseFailure, kCollision, kCapture };

inline const char* to_string(SlotOutcome o) {
  switch (o) {
    case SlotOutcome::kIdle: return "idle";
    case SlotOutcome::kSuccess: return "success";
    case SlotOutcome::kNoiseFailure: return "noise";
    case SlotOutcome::kCollision: return "collision";
    case SlotOutcome::kCapture: return "capture";
  }
  return "?";
}

struct BackoffParams {
  double cw_min = 16.0;
  int max_stage = 6;
};

class SlotSimulator {
 public:
  SlotSimulator(std::vector<StationSpec> specs, PhyProfile profile, SimMode mode,
                std::uint64_t seed, std::optional<CaptureConfig> capture = {})
      : profile_(std::move(profile)), mode_(mode), capture_(capture), rng_(seed) {
    profile_.validate();
    validate_stations(specs, profile_);
    stations_.resize(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) stations_[i].spec = std::move(specs[i]);
    refresh_timings();
    for (auto& s : stations_) s.counter = draw_counter(s);
    reset_tally();
  }

  std::size_t size() const { return stations_.size(); }
  const StationSpec& spec(std::size_t i) const { return stations_[i].spec; }
  const PhyProfile& profile() const { return profile_; }
  bool active(std::size_t i) const { return stations_[i].active; }

  void set_attempt_probs(std::span<const double> tau) {
    if (tau.size() != stations_.size())
      throw ValidationError("attempt vector size mismatch", "tau");
    for (std::size_t i = 0; i < tau.size(); ++i) {
      if (!(tau[i] >= 0.0 && tau[i] <= 1.0))
        throw ValidationError("attempt probability must be in [0,1]", "tau");
      stations_[i].tau = tau[i];
    }
  }

  // New parameters take effect from the next counter draw; the current
  // counter keeps running.
  void set_backoff(std::size_t i, BackoffParams p) {
    if (!(p.cw_min >= 1.0) || p.max_stage < 0)
      throw ValidationError("invalid backoff parameters", "backoff");
    auto& s = stations_[i];
    s.backoff = p;
    s.stage = std::min(s.stage, p.max_stage);
  }

  void set_spec(std::size_t i, StationSpec spec) {
    spec.validate(profile_);
    stations_[i].spec = std::move(spec);
    refresh_timings();
  }

  void set_active(std::size_t i, bool on) {
    auto& s = stations_[i];
    if (on && !s.active) {
      s.stage = 0;
      s.counter = draw_counter(s);
    }
    s.active = on;
  }

  // Drops accumulated statistics; contention state is kept.
  void reset_tally() {
    tally_ = SimResult{};
    tally_.stations.assign(stations_.size(), StationCounters{});
  }
  const SimResult& tally() const { return tally_; }
  SimResult take_tally() {
    SimResult out = std::move(tally_);
    reset_tally();
    return out;
  }

  double now_us() const { return now_us_; }
  std::uint64_t slot_index() const { return slot_index_; }

  void set_trace(std::ostream* trace) {
    trace_ = trace;
    if (trace_) *trace_ << "slot_index,outcome,station,duration_us\n";
  }

  SlotOutcome step() {
    attempters_.clear();
    for (std::size_t i = 0; i < stations_.size(); ++i) {
      auto& s = stations_[i];
      if (!s.active) continue;
      const bool tx = mode_ == SimMode::kPPersistent ? bernoulli(s.tau)
                                                     : s.counter == 0;
      if (tx) attempters_.push_back(i);
    }

    SlotOutcome outcome;
    double duration;
    std::optional<std::size_t> delivered, noise_lost;
    std::size_t reported = 0;
    if (attempters_.empty()) {
      outcome = SlotOutcome::kIdle;
      duration = profile_.empty_slot_us;
    } else if (attempters_.size() == 1) {
      const std::size_t i = attempters_[0];
      reported = i;
      if (bernoulli(stations_[i].spec.link_error)) {
        outcome = SlotOutcome::kNoiseFailure;
        duration = stations_[i].failure_us;
        noise_lost = i;
      } else {
        outcome = SlotOutcome::kSuccess;
        duration = stations_[i].success_us;
        delivered = i;
      }
    } else {
      reported = *std::max_element(
          attempters_.begin(), attempters_.end(), [&](std::size_t a, std::size_t b) {
            return stations_[a].rank < stations_[b].rank;
          });
      duration = stations_[reported].failure_us;
      outcome = SlotOutcome::kCollision;
      if (capture_) {
        powers_.resize(stations_.size());
        for (std::size_t i = 0; i < stations_.size(); ++i)
          powers_[i] = stations_[i].spec.tx_power_dbm.value_or(0.0);
        if (auto w = resolve_capture(attempters_, powers_,
                                     capture_->power_threshold_db)) {
          reported = *w;
          if (bernoulli(stations_[*w].spec.link_error)) {
            noise_lost = w;
          } else {
            delivered = w;
            outcome = SlotOutcome::kCapture;
          }
        }
      }
    }

    account(outcome, duration, delivered, noise_lost);
    if (mode_ == SimMode::kBackoff) advance_backoff(delivered);
    if (trace_) {
      *trace_ << slot_index_ << ',' << to_string(outcome) << ','
              << (outcome == SlotOutcome::kIdle ? std::string{}
                                                : stations_[reported].spec.label)
              << ',' << format_duration(duration) << '\n';
    }
    now_us_ += duration;
    ++slot_index_;
    return outcome;
  }

  void run_slots(std::uint64_t n) {
    for (std::uint64_t k = 0; k < n; ++k) step();
  }

  // Runs whole slots until virtual time reaches `t_us`.
  void run_until(double t_us) {
    while (now_us_ < t_us) step();
  }

 private:
  struct Station {
    StationSpec spec;
    bool active = true;
    double tau = 0.0;
    BackoffParams backoff;
    int stage = 0;
    std::uint64_t counter = 0;
    double success_us = 0.0;
    double failure_us = 0.0;
    std::size_t rank = 0;
  };

  void refresh_timings() {
    std::vector<StationSpec> specs;
    specs.reserve(stations_.size());
    for (auto& s : stations_) {
      s.success_us = tx_duration_success(profile_, s.spec);
      s.failure_us = effective_failure_duration(profile_, s.spec);
      specs.push_back(s.spec);
    }
    if (specs.empty()) return;
    const auto order = order_stations(specs, profile_);
    for (std::size_t k = 0; k < order.size(); ++k) stations_[order[k]].rank = k;
  }

  bool bernoulli(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return static_cast<double>(rng_() >> 11) * 0x1.0p-53 < p;
  }

  std::uint64_t uniform_below(std::uint64_t n) {
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r;
    do r = rng_();
    while (r >= limit);
    return r % n;
  }

  // A fractional window W draws from floor(W) or floor(W)+1 slots so that
  // the mean counter is (W - 1) / 2, keeping tau = 2 / (W + 1).
  std::uint64_t draw_counter(const Station& s) {
    double cw = s.backoff.cw_min;
    for (int k = 0; k < s.stage; ++k) cw *= 2.0;
    const double lo = std::floor(cw);
    auto window = static_cast<std::uint64_t>(lo);
    if (cw > lo && bernoulli(cw - lo)) ++window;
    return uniform_below(std::max<std::uint64_t>(window, 1));
  }

  void account(SlotOutcome outcome, double duration,
               std::optional<std::size_t> delivered,
               std::optional<std::size_t> noise_lost) {
    ++tally_.slots;
    tally_.elapsed_us += duration;
    if (outcome == SlotOutcome::kIdle) {
      ++tally_.empty_slots;
      return;
    }
    delivered ? ++tally_.success_slots : ++tally_.failure_slots;
    for (std::size_t i : attempters_) {
      auto& c = tally_.stations[i];
      ++c.attempts;
      if (delivered == i) {
        ++c.successes;
        if (outcome == SlotOutcome::kCapture) ++c.captures;
        c.success_time_us += duration;
        c.delivered_frame_time_us += stations_[i].success_us;
        c.delivered_bits += stations_[i].spec.payload_bits;
        continue;
      }
      noise_lost == i ? ++c.noise_failures : ++c.collisions;
      c.failure_time_us += duration;
    }
  }

  void advance_backoff(std::optional<std::size_t> delivered) {
    std::size_t next_tx = 0;
    for (std::size_t i = 0; i < stations_.size(); ++i) {
      auto& s = stations_[i];
      if (!s.active) continue;
      const bool attempted =
          next_tx < attempters_.size() && attempters_[next_tx] == i;
      if (attempted) {
        ++next_tx;
        if (delivered && *delivered == i)
          s.stage = 0;
        else
          s.stage = std::min(s.stage + 1, s.backoff.max_stage);
        s.counter = draw_counter(s);
      } else {
        --s.counter;
      }
    }
  }

  std::vector<Station> stations_;
  PhyProfile profile_;
  SimMode mode_;
  std::optional<CaptureConfig> capture_;
  std::mt19937_64 rng_;
  SimResult tally_;
  std::vector<std::size_t> attempters_;
  std::vector<double> powers_;
  std::ostream* trace_ = nullptr;

  static std::string format_duration(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  }
  double now_us_ = 0.0;
  std::uint64_t slot_index_ = 0;
};

namespace detail {
inline SimResult run_simulation(SlotSimulator& sim, const SimConfig& cfg) {
  sim.run_slots(cfg.warmup_slots);
  sim.reset_tally();
  sim.set_trace(cfg.trace);
  sim.run_slots(cfg.n_slots - cfg.warmup_slots);
  return sim.take_tally();
}
}  // namespace detail

inline SimResult run_p_persistent(std::span<const double> tau,
                                  std::span<const StationSpec> specs,
                                  const PhyProfile& profile, const SimConfig& cfg) {
  cfg.validate();
  SlotSimulator sim({specs.begin(), specs.end()}, profile, SimMode::kPPersistent,
                    cfg.seed, cfg.capture);
  sim.set_attempt_probs(tau);
  return detail::run_simulation(sim, cfg);
}

// Per-station backoff parameters; a fixed window W is {W, 0}.
inline SimResult run_backoff(std::span<const BackoffParams> params,
                             std::span<const StationSpec> specs,
                             const PhyProfile& profile, const SimConfig& cfg) {
  cfg.validate();
  if (params.size() != specs.size())
    throw ValidationError("one backoff parameter set per station required",
                          "backoff");
  SlotSimulator sim({specs.begin(), specs.end()}, profile, SimMode::kBackoff,
                    cfg.seed, cfg.capture);
  for (std::size_t i = 0; i < params.size(); ++i) sim.set_backoff(i, params[i]);
  // Re-draw initial counters under the requested windows.
  for (std::size_t i = 0; i < params.size(); ++i) {
    sim.set_active(i, false);
    sim.set_active(i, true);
  }
  return detail::run_simulation(sim, cfg);
}

// Fixed windows 2^ecw with no doubling.
inline SimResult run_backoff_ecw(std::span<const int> ecw,
                                 std::span<const StationSpec> specs,
                                 const PhyProfile& profile, const SimConfig& cfg) {
  std::vector<BackoffParams> p;
  for (int e : ecw) p.push_back({static_cast<double>(1 << e), 0});
  return run_backoff(p, specs, profile, cfg);
}

}  // namespace rpf
