#pragma once

// Access-point control loop. Once per beacon interval the AP looks at the
// frames it received correctly, estimates each station's success duration,
// re-solves the equal-airtime problem and hands every active station its own
// contention window (ECWmin = ECWmax, i.e. no backoff doubling).
//
// Assignments are plain records here; nothing is encoded on the wire.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rpf/analytic_model.hpp"
#include "rpf/errors.hpp"
#include "rpf/pf_optimizer.hpp"
#include "rpf/phy_profile.hpp"
#include "rpf/slot_simulator.hpp"

namespace rpf {

struct ControllerConfig {
  double beacon_interval_us = 102'400.0;  // 100 TU
  double ewma_alpha = 0.5;                // weight of the newest window
  int departure_windows = 3;
  SolverConfig solver{};
  BackoffParams dcf_default{16.0, 6};

  void validate() const {
    if (!(beacon_interval_us > 0.0))
      throw ValidationError("must be positive", "beacon_interval_us");
    if (!(ewma_alpha > 0.0 && ewma_alpha <= 1.0))
      throw ValidationError("must be in (0,1]", "ewma_alpha");
    if (departure_windows < 1)
      throw ValidationError("must be at least 1", "departure_windows");
    solver.validate();
  }
};

struct StationObservation {
  std::string label;
  std::uint64_t success_count = 0;     // this window
  double success_airtime_sum_us = 0.0;  // this window
  double mean_ts_us = 0.0;              // smoothed over windows
};

struct BeaconEntry {
  std::string label;
  int ecw_min = 0;
  int ecw_max = 0;
  double w_exact = 1.0;  // unrounded solver output behind ecw_min
};

struct BeaconAssignment {
  std::uint64_t epoch = 0;
  std::vector<BeaconEntry> entries;  // sorted by label
  bool retained = false;             // solver failed, previous values kept
  std::string warning;

  const BeaconEntry* find(const std::string& label) const {
    for (const auto& e : entries)
      if (e.label == label) return &e;
    return nullptr;
  }
};

class AdaptiveController {
 public:
  explicit AdaptiveController(PhyProfile profile, ControllerConfig cfg = {})
      : profile_(std::move(profile)), cfg_(cfg) {
    profile_.validate();
    cfg_.validate();
  }

  const ControllerConfig& config() const { return cfg_; }

  // Folds one window of per-station success statistics into the tracked
  // state and returns observations for the active set, sorted by label.
  // `labels[i]` names the station behind `window.stations[i]`.
  std::vector<StationObservation> observe_window(const SimResult& window,
                                                 std::span<const std::string> labels) {
    if (labels.size() != window.stations.size())
      throw ValidationError("one label per simulated station required", "labels");
    std::map<std::string, StationObservation> seen;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto& c = window.stations[i];
      auto& o = seen[labels[i]];
      o.label = labels[i];
      o.success_count += c.successes;
      o.success_airtime_sum_us += c.delivered_frame_time_us;
    }

    for (auto& [label, obs] : seen) {
      if (obs.success_count == 0) continue;
      const double mean =
          obs.success_airtime_sum_us / static_cast<double>(obs.success_count);
      auto [it, inserted] = tracks_.try_emplace(label);
      auto& t = it->second;
      t.mean_ts_us = inserted ? mean
                              : cfg_.ewma_alpha * mean +
                                    (1.0 - cfg_.ewma_alpha) * t.mean_ts_us;
      t.idle_windows = 0;
    }
    for (auto it = tracks_.begin(); it != tracks_.end();) {
      auto s = seen.find(it->first);
      if (s == seen.end() || s->second.success_count == 0) {
        if (++it->second.idle_windows >= cfg_.departure_windows) {
          it = tracks_.erase(it);
          continue;
        }
      }
      ++it;
    }

    std::vector<StationObservation> out;
    for (const auto& [label, t] : tracks_) {
      StationObservation o;
      o.label = label;
      if (auto s = seen.find(label); s != seen.end()) {
        o.success_count = s->second.success_count;
        o.success_airtime_sum_us = s->second.success_airtime_sum_us;
      }
      o.mean_ts_us = t.mean_ts_us;
      out.push_back(std::move(o));
    }
    return out;
  }

  // Solves the equal-airtime problem on measured durations and rounds the
  // result. On solver failure the previous assignment is re-issued for the
  // stations it covers and the event is recorded in `warning`.
  BeaconAssignment control_step(std::span<const StationObservation> observations) {
    BeaconAssignment a;
    a.epoch = epoch_++;
    if (observations.empty()) {
      last_ = a;
      return a;
    }
    std::vector<StationObservation> obs(observations.begin(), observations.end());
    std::sort(obs.begin(), obs.end(),
              [](const auto& x, const auto& y) { return x.label < y.label; });
    std::vector<double> ts;
    for (const auto& o : obs) {
      if (!(o.mean_ts_us > 0.0))
        throw ValidationError("observation without a positive mean duration",
                              "observations." + o.label);
      ts.push_back(o.mean_ts_us);
    }
    try {
      const auto m = SlotModel::from_durations(profile_.empty_slot_us, ts);
      const auto alloc = solve_equal_airtime(m, cfg_.solver);
      for (std::size_t i = 0; i < obs.size(); ++i) {
        const int e = alloc.ecw[i];
        a.entries.push_back({obs[i].label, e, e, alloc.w_exact[i]});
      }
    } catch (const SolverError& err) {
      a.retained = true;
      a.warning = err.what();
      for (const auto& o : obs)
        if (const auto* prev = last_.find(o.label)) a.entries.push_back(*prev);
    }
    last_ = a;
    return a;
  }

  const BeaconAssignment& last_assignment() const { return last_; }

 private:
  struct Track {
    double mean_ts_us = 0.0;
    int idle_windows = 0;
  };

  PhyProfile profile_;
  ControllerConfig cfg_;
  std::map<std::string, Track> tracks_;
  BeaconAssignment last_;
  std::uint64_t epoch_ = 0;
};

// ---------------------------------------------------------------------------
// Scripted closed-loop runs

enum class EventAction { kJoin, kLeave, kRate, kPower, kLinkError, kPayload };

inline std::optional<EventAction> parse_event_action(const std::string& s) {
  if (s == "join") return EventAction::kJoin;
  if (s == "leave") return EventAction::kLeave;
  if (s == "rate") return EventAction::kRate;
  if (s == "power") return EventAction::kPower;
  if (s == "link_error") return EventAction::kLinkError;
  if (s == "payload") return EventAction::kPayload;
  return std::nullopt;
}

struct ScenarioEvent {
  double at_seconds = 0.0;
  std::string station;
  EventAction action = EventAction::kRate;
  double value = 0.0;  // Mb/s, dBm, probability or bits depending on action
};

enum class Scheme { kRpf, kDcf };

struct ClosedLoopScript {
  // A station whose first event is `join` starts inactive.
  std::vector<StationSpec> stations;
  std::vector<ScenarioEvent> events;
  double duration_s = 10.0;
  Scheme scheme = Scheme::kRpf;
  std::optional<CaptureConfig> capture;
  std::uint64_t seed = 1;
};

struct TraceRow {
  double time_s = 0.0;
  std::string station;
  double rate_mbps = 0.0;
  int ecw = 0;
  double throughput_mbps = 0.0;
  double airtime_frac = 0.0;
};

// State of one beacon interval: what ran on the channel and what the AP
// decided at its end.
struct IntervalRecord {
  double end_s = 0.0;
  std::vector<StationSpec> specs;  // as configured at the end of the interval
  std::vector<bool> active;
  SimResult window;
  BeaconAssignment assignment;  // issued at end_s (RPF only)
};

struct ClosedLoopTrace {
  std::vector<TraceRow> rows;
  std::vector<IntervalRecord> intervals;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::size_t station_index(const std::vector<StationSpec>& specs,
                                 const std::string& label) {
  for (std::size_t i = 0; i < specs.size(); ++i)
    if (specs[i].label == label) return i;
  return specs.size();
}

inline void apply_event(StationSpec& s, const ScenarioEvent& ev) {
  switch (ev.action) {
    case EventAction::kRate: s.rate_mbps = ev.value; break;
    case EventAction::kPower: s.tx_power_dbm = ev.value; break;
    case EventAction::kLinkError: s.link_error = ev.value; break;
    case EventAction::kPayload: s.payload_bits = ev.value; break;
    case EventAction::kJoin:
    case EventAction::kLeave: break;
  }
}

}  // namespace detail

// Checks the script before anything runs; returns events in time order.
inline std::vector<ScenarioEvent> validate_script(const ClosedLoopScript& script,
                                                  const PhyProfile& profile) {
  if (script.stations.empty())
    throw ValidationError("at least one station required", "stations");
  if (!(script.duration_s > 0.0))
    throw ValidationError("must be positive", "duration_s");
  validate_stations(script.stations, profile);
  for (std::size_t i = 0; i < script.stations.size(); ++i)
    for (std::size_t j = i + 1; j < script.stations.size(); ++j)
      if (script.stations[i].label == script.stations[j].label)
        throw ValidationError("duplicate station label '" +
                                  script.stations[i].label + "'",
                              "stations[" + std::to_string(j) + "].label");

  auto events = script.events;
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
    return a.at_seconds < b.at_seconds;
  });
  auto specs = script.stations;
  for (std::size_t k = 0; k < events.size(); ++k) {
    const auto& ev = events[k];
    const std::string field = "events[" + std::to_string(k) + "]";
    if (!(ev.at_seconds >= 0.0) || !std::isfinite(ev.at_seconds))
      throw ValidationError("event time must be non-negative", field + ".at_seconds");
    const auto idx = detail::station_index(specs, ev.station);
    if (idx == specs.size())
      throw ValidationError("unknown station '" + ev.station + "'", field + ".station");
    detail::apply_event(specs[idx], ev);
    try {
      specs[idx].validate(profile);
    } catch (const ValidationError& e) {
      throw ValidationError(e.message(), e.nested_field(field));
    }
  }
  return events;
}

inline ClosedLoopTrace run_closed_loop(const ClosedLoopScript& script,
                                       const PhyProfile& profile,
                                       const ControllerConfig& cfg = {}) {
  profile.validate();
  cfg.validate();
  const auto events = validate_script(script, profile);
  const std::size_t n = script.stations.size();

  std::vector<std::string> labels;
  for (const auto& s : script.stations) labels.push_back(s.label);

  SlotSimulator sim(script.stations, profile, SimMode::kBackoff, script.seed,
                    script.capture);
  std::vector<int> applied_ecw(n);
  const int dcf_ecw = static_cast<int>(std::lround(std::log2(cfg.dcf_default.cw_min)));
  for (std::size_t i = 0; i < n; ++i) {
    sim.set_backoff(i, cfg.dcf_default);
    applied_ecw[i] = dcf_ecw;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& ev : events) {
      if (ev.station != labels[i]) continue;
      if (ev.action == EventAction::kJoin) sim.set_active(i, false);
      break;
    }
  }

  AdaptiveController controller(profile, cfg);
  ClosedLoopTrace trace;
  const double end_us = script.duration_s * 1e6;
  std::size_t next_event = 0;
  for (std::uint64_t k = 1;; ++k) {
    const double t_end = std::min(static_cast<double>(k) * cfg.beacon_interval_us, end_us);
    while (next_event < events.size() &&
           events[next_event].at_seconds * 1e6 <= t_end) {
      const auto& ev = events[next_event++];
      sim.run_until(ev.at_seconds * 1e6);
      const auto idx = detail::station_index(script.stations, ev.station);
      if (ev.action == EventAction::kJoin) {
        sim.set_backoff(idx, cfg.dcf_default);
        applied_ecw[idx] = dcf_ecw;
        sim.set_active(idx, true);
      } else if (ev.action == EventAction::kLeave) {
        sim.set_active(idx, false);
      } else {
        auto spec = sim.spec(idx);
        detail::apply_event(spec, ev);
        sim.set_spec(idx, spec);
      }
    }
    sim.run_until(t_end);
    IntervalRecord rec;
    rec.end_s = t_end / 1e6;
    rec.window = sim.take_tally();
    for (std::size_t i = 0; i < n; ++i) {
      rec.specs.push_back(sim.spec(i));
      rec.active.push_back(sim.active(i));
    }

    for (std::size_t i = 0; i < n; ++i) {
      if (!sim.active(i)) continue;
      trace.rows.push_back({rec.end_s, labels[i], sim.spec(i).rate_mbps,
                            applied_ecw[i], rec.window.throughput_mbps(i),
                            rec.window.airtime(i)});
    }

    if (script.scheme == Scheme::kRpf) {
      const auto obs = controller.observe_window(rec.window, labels);
      rec.assignment = controller.control_step(obs);
      if (rec.assignment.retained)
        trace.warnings.push_back("t=" + std::to_string(rec.end_s) +
                                 "s: " + rec.assignment.warning);
      for (const auto& e : rec.assignment.entries) {
        const auto idx = detail::station_index(script.stations, e.label);
        if (idx == n || !sim.active(idx)) continue;
        sim.set_backoff(idx, {static_cast<double>(1 << e.ecw_min), 0});
        applied_ecw[idx] = e.ecw_min;
      }
    }
    trace.intervals.push_back(std::move(rec));
    if (t_end >= end_us) break;
  }
  return trace;
}

}  // namespace rpf
