#pragma once

// Scenario and profile documents (JSON). Keys carry their units
// (payload_bytes, rate_mbps, sifs_us, ...). Unknown keys are rejected so a
// typo never silently falls back to a default.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rpf/adaptive_controller.hpp"
#include "rpf/errors.hpp"
#include "rpf/pf_optimizer.hpp"
#include "rpf/phy_profile.hpp"
#include "rpf/slot_simulator.hpp"

namespace rpf {

struct SimulationSettings {
  std::uint64_t slots = 10'000'000;
  std::uint64_t warmup_slots = 0;
  SimMode mode = SimMode::kPPersistent;
  Scheme scheme = Scheme::kRpf;  // where attempt probabilities / windows come from
  std::optional<CaptureConfig> capture;
};

struct SweepSettings {
  double payload_from_bytes = 100.0;
  double payload_to_bytes = 1400.0;
  double payload_step_bytes = 100.0;

  std::vector<double> payloads_bytes() const {
    std::vector<double> out;
    for (double l = payload_from_bytes; l <= payload_to_bytes + 1e-9;
         l += payload_step_bytes)
      out.push_back(l);
    return out;
  }
};

struct ClosedLoopSettings {
  double duration_s = 10.0;
  Scheme scheme = Scheme::kRpf;
  ControllerConfig controller{};
  std::vector<ScenarioEvent> events;
};

struct Scenario {
  PhyProfile profile = ieee80211a_profile();
  std::vector<StationSpec> stations;
  BackoffParams baseline{16.0, 6};
  SolverConfig solver{};
  std::uint64_t seed = 1;
  SimulationSettings simulation;
  SweepSettings sweep;
  ClosedLoopSettings closed_loop;

  void validate() const {
    nested("profile", [&] { profile.validate(); });
    if (stations.empty()) throw ValidationError("at least one station required", "stations");
    validate_stations(stations, profile);
    if (!(baseline.cw_min >= 1.0)) throw ValidationError("must be >= 1", "baseline.cw_min");
    if (baseline.max_stage < 0) throw ValidationError("must be >= 0", "baseline.max_stage");
    nested("solver", [&] { solver.validate(); });
    if (!(simulation.slots > simulation.warmup_slots))
      throw ValidationError("slots must exceed warmup_slots", "simulation.slots");
    if (!(sweep.payload_step_bytes > 0.0) ||
        !(sweep.payload_from_bytes > 0.0) ||
        sweep.payload_to_bytes < sweep.payload_from_bytes)
      throw ValidationError("invalid payload range", "sweep");
    nested("closed_loop", [&] { closed_loop.controller.validate(); });
  }

  template <class F>
  static void nested(const std::string& prefix, F&& check) {
    try {
      check();
    } catch (const ValidationError& e) {
      throw ValidationError(e.message(), e.nested_field(prefix));
    }
  }

  ClosedLoopScript closed_loop_script() const {
    ClosedLoopScript s;
    s.stations = stations;
    s.events = closed_loop.events;
    s.duration_s = closed_loop.duration_s;
    s.scheme = closed_loop.scheme;
    s.capture = simulation.capture;
    s.seed = seed;
    return s;
  }
};

namespace detail {

using nlohmann::json;

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("expected an object", path_or_root());
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <class T>
  void opt(const std::string& key, T& out) {
    if (!has(key)) return;
    out = as<T>(j_.at(key), field(key));
  }

  template <class T>
  T req(const std::string& key) {
    if (!has(key)) throw ValidationError("required field missing", field(key));
    return as<T>(j_.at(key), field(key));
  }

  const json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ValidationError("unknown field", field(it.key()));
  }

  template <class T>
  static T as(const json& v, const std::string& where) {
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ValidationError("expected a number", where);
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer() && !v.is_number_unsigned())
          throw ValidationError("expected an integer", where);
        if constexpr (std::is_unsigned_v<T>)
          if (v.is_number_integer() && v.get<std::int64_t>() < 0)
            throw ValidationError("expected a non-negative integer", where);
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ValidationError("expected true/false", where);
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ValidationError("expected a string", where);
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ValidationError(e.what(), where);
    }
  }

 private:
  std::string path_or_root() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Scheme parse_scheme(const std::string& s, const std::string& where) {
  if (s == "rpf") return Scheme::kRpf;
  if (s == "dcf") return Scheme::kDcf;
  throw ValidationError("expected \"rpf\" or \"dcf\"", where);
}

inline SimMode parse_mode(const std::string& s, const std::string& where) {
  if (s == "p_persistent" || s == "p-persistent") return SimMode::kPPersistent;
  if (s == "backoff") return SimMode::kBackoff;
  throw ValidationError("expected \"p_persistent\" or \"backoff\"", where);
}

inline std::vector<double> read_rates(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) throw ValidationError("expected a non-empty array", where);
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(Reader::as<double>(v[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

inline void apply_profile_fields(Reader& r, PhyProfile& p) {
  r.opt("empty_slot_us", p.empty_slot_us);
  r.opt("sifs_us", p.sifs_us);
  r.opt("difs_us", p.difs_us);
  r.opt("plcp_overhead_us", p.plcp_overhead_us);
  r.opt("mac_overhead_bits", p.mac_overhead_bits);
  r.opt("ack_payload_bits", p.ack_payload_bits);
  r.opt("approximate_tu_as_ts", p.approximate_tu_as_ts);
  if (r.has("basic_rates_mbps"))
    p.basic_rates_mbps = read_rates(r.at("basic_rates_mbps"), r.field("basic_rates_mbps"));
  if (r.has("supported_rates_mbps"))
    p.supported_rates_mbps =
        read_rates(r.at("supported_rates_mbps"), r.field("supported_rates_mbps"));
  if (r.has("ack_rate")) {
    const auto rule = Reader::as<std::string>(r.at("ack_rate"), r.field("ack_rate"));
    if (rule == "highest_basic")
      p.ack_rate_rule = AckRateRule::kHighestBasicAtMostData;
    else if (rule == "min_rate")
      p.ack_rate_rule = AckRateRule::kMinRate;
    else
      throw ValidationError("expected \"highest_basic\" or \"min_rate\"", r.field("ack_rate"));
  }
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file", path.string());
  try {
    return json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ValidationError(e.what(), path.string());
  }
}

}  // namespace detail

// Applies a profile override document on top of `base`.
inline PhyProfile profile_from_json(const nlohmann::json& j,
                                    PhyProfile base = ieee80211a_profile(),
                                    const std::string& path = "profile") {
  detail::Reader r(j, path);
  if (r.has("preset")) {
    const auto preset = detail::Reader::as<std::string>(r.at("preset"), r.field("preset"));
    if (preset != "802.11a") throw ValidationError("unknown preset", r.field("preset"));
    base = ieee80211a_profile();
  }
  detail::apply_profile_fields(r, base);
  r.finish();
  Scenario::nested(path, [&] { base.validate(); });
  return base;
}

inline PhyProfile load_profile_file(const std::filesystem::path& path) {
  return profile_from_json(detail::read_json_file(path), ieee80211a_profile(),
                           path.string());
}

inline StationSpec station_from_json(const nlohmann::json& j, const std::string& path) {
  detail::Reader r(j, path);
  StationSpec s;
  s.label = r.req<std::string>("label");
  s.payload_bits = 8.0 * r.req<double>("payload_bytes");
  s.rate_mbps = r.req<double>("rate_mbps");
  r.opt("link_error", s.link_error);
  r.opt("arrival_prob", s.arrival_prob);
  if (r.has("tx_power_dbm"))
    s.tx_power_dbm = detail::Reader::as<double>(r.at("tx_power_dbm"), r.field("tx_power_dbm"));
  r.finish();
  return s;
}

// `base_dir` resolves a relative "profile_file".
inline Scenario scenario_from_json(const nlohmann::json& j,
                                   const std::filesystem::path& base_dir = {}) {
  Scenario sc;
  detail::Reader r(j, "");
  if (r.has("profile_file")) {
    auto p = std::filesystem::path(
        detail::Reader::as<std::string>(r.at("profile_file"), "profile_file"));
    if (p.is_relative()) p = base_dir / p;
    sc.profile = load_profile_file(p);
  }
  if (r.has("profile")) sc.profile = profile_from_json(r.at("profile"), sc.profile, "profile");

  if (!r.has("stations") || !r.at("stations").is_array())
    throw ValidationError("expected an array of stations", "stations");
  const auto& st = r.at("stations");
  for (std::size_t i = 0; i < st.size(); ++i)
    sc.stations.push_back(station_from_json(st[i], "stations[" + std::to_string(i) + "]"));

  r.opt("seed", sc.seed);

  if (r.has("baseline")) {
    detail::Reader b(r.at("baseline"), "baseline");
    b.opt("cw_min", sc.baseline.cw_min);
    b.opt("max_stage", sc.baseline.max_stage);
    b.finish();
  }
  if (r.has("solver")) {
    detail::Reader b(r.at("solver"), "solver");
    b.opt("tolerance", sc.solver.tolerance);
    b.opt("max_iterations", sc.solver.max_iterations);
    b.opt("damping", sc.solver.damping);
    b.opt("restarts", sc.solver.restarts);
    b.finish();
  }
  if (r.has("simulation")) {
    detail::Reader b(r.at("simulation"), "simulation");
    b.opt("slots", sc.simulation.slots);
    b.opt("warmup_slots", sc.simulation.warmup_slots);
    if (b.has("mode"))
      sc.simulation.mode = detail::parse_mode(
          detail::Reader::as<std::string>(b.at("mode"), b.field("mode")), b.field("mode"));
    if (b.has("scheme"))
      sc.simulation.scheme = detail::parse_scheme(
          detail::Reader::as<std::string>(b.at("scheme"), b.field("scheme")),
          b.field("scheme"));
    if (b.has("capture_threshold_db"))
      sc.simulation.capture = CaptureConfig{detail::Reader::as<double>(
          b.at("capture_threshold_db"), b.field("capture_threshold_db"))};
    b.finish();
  }
  if (r.has("sweep")) {
    detail::Reader b(r.at("sweep"), "sweep");
    b.opt("payload_from_bytes", sc.sweep.payload_from_bytes);
    b.opt("payload_to_bytes", sc.sweep.payload_to_bytes);
    b.opt("payload_step_bytes", sc.sweep.payload_step_bytes);
    b.finish();
  }
  if (r.has("closed_loop")) {
    detail::Reader b(r.at("closed_loop"), "closed_loop");
    auto& cl = sc.closed_loop;
    b.opt("duration_s", cl.duration_s);
    if (b.has("scheme"))
      cl.scheme = detail::parse_scheme(
          detail::Reader::as<std::string>(b.at("scheme"), b.field("scheme")),
          b.field("scheme"));
    b.opt("beacon_interval_us", cl.controller.beacon_interval_us);
    b.opt("ewma_alpha", cl.controller.ewma_alpha);
    b.opt("departure_windows", cl.controller.departure_windows);
    if (b.has("events")) {
      const auto& evs = b.at("events");
      if (!evs.is_array()) throw ValidationError("expected an array", "closed_loop.events");
      for (std::size_t k = 0; k < evs.size(); ++k) {
        detail::Reader e(evs[k], "closed_loop.events[" + std::to_string(k) + "]");
        ScenarioEvent ev;
        ev.at_seconds = e.req<double>("at_seconds");
        ev.station = e.req<std::string>("station");
        const auto action = e.req<std::string>("action");
        const auto parsed = parse_event_action(action);
        if (!parsed) throw ValidationError("unknown action '" + action + "'", e.field("action"));
        ev.action = *parsed;
        if (ev.action != EventAction::kJoin && ev.action != EventAction::kLeave)
          ev.value = e.req<double>("value");
        else if (e.has("value"))
          e.req<double>("value");
        if (ev.action == EventAction::kPayload) ev.value *= 8.0;  // bytes -> bits
        e.finish();
        cl.events.push_back(ev);
      }
    }
    b.finish();
  }
  r.finish();
  sc.closed_loop.controller.dcf_default = sc.baseline;
  sc.closed_loop.controller.solver = sc.solver;
  sc.validate();
  return sc;
}

inline Scenario load_scenario_file(const std::filesystem::path& path) {
  return scenario_from_json(detail::read_json_file(path), path.parent_path());
}

}  // namespace rpf
