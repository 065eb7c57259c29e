#pragma once

// PHY/MAC timing constants and per-station frame durations.
//
// All durations are in microseconds, sizes in bits and rates in Mb/s, so
// bits / (Mb/s) yields microseconds directly.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rpf/errors.hpp"

namespace rpf {

// Which rate carries the ACK that follows a data frame. EIFS always uses the
// lowest basic rate regardless of this setting.
enum class AckRateRule {
  kHighestBasicAtMostData,  // standard control-response rate selection
  kMinRate,                 // always the lowest basic rate
};

struct PhyProfile {
  double empty_slot_us = 9.0;
  double sifs_us = 16.0;
  double difs_us = 34.0;
  double plcp_overhead_us = 20.0;
  double mac_overhead_bits = 224.0;  // 24-byte header + 4-byte FCS
  double ack_payload_bits = 112.0;   // 14-byte ACK
  std::vector<double> basic_rates_mbps{6.0, 12.0, 24.0};
  std::vector<double> supported_rates_mbps{6.0,  9.0,  12.0, 18.0,
                                           24.0, 36.0, 48.0, 54.0};
  AckRateRule ack_rate_rule = AckRateRule::kHighestBasicAtMostData;
  // Use T_s,i in place of T_u,i everywhere downstream. The ACK is short
  // compared to the PLCP preamble so the two differ by a few microseconds.
  bool approximate_tu_as_ts = true;

  double min_rate_mbps() const {
    return *std::min_element(basic_rates_mbps.begin(), basic_rates_mbps.end());
  }

  bool supports(double rate_mbps) const {
    return std::any_of(supported_rates_mbps.begin(), supported_rates_mbps.end(),
                       [&](double r) { return std::abs(r - rate_mbps) < 1e-9; });
  }

  void validate() const {
    auto positive = [](double v, const char* field) {
      if (!(v > 0.0) || !std::isfinite(v))
        throw ValidationError("must be a positive finite duration", field);
    };
    positive(empty_slot_us, "empty_slot_us");
    positive(sifs_us, "sifs_us");
    positive(difs_us, "difs_us");
    positive(plcp_overhead_us, "plcp_overhead_us");
    if (!(difs_us > sifs_us))
      throw ValidationError("DIFS must exceed SIFS", "difs_us");
    if (mac_overhead_bits < 0.0)
      throw ValidationError("must be non-negative", "mac_overhead_bits");
    if (ack_payload_bits < 0.0)
      throw ValidationError("must be non-negative", "ack_payload_bits");
    if (basic_rates_mbps.empty())
      throw ValidationError("at least one basic rate required",
                            "basic_rates_mbps");
    for (double r : supported_rates_mbps)
      if (!(r > 0.0))
        throw ValidationError("rates must be positive", "supported_rates_mbps");
    for (double r : basic_rates_mbps) {
      if (!(r > 0.0))
        throw ValidationError("rates must be positive", "basic_rates_mbps");
      if (!supports(r))
        throw ValidationError("basic rate not in supported set",
                              "basic_rates_mbps");
    }
  }
};

inline PhyProfile ieee80211a_profile() { return PhyProfile{}; }

struct StationSpec {
  std::string label;
  double payload_bits = 8000.0;
  double rate_mbps = 54.0;
  double link_error = 0.0;    // p_n, frame loss due to noise/interference
  double arrival_prob = 1.0;  // q, 1 means saturated
  std::optional<double> tx_power_dbm;

  void validate(const PhyProfile& profile) const {
    if (!(payload_bits > 0.0) || !std::isfinite(payload_bits))
      throw ValidationError("payload must be positive", "payload_bits");
    if (!profile.supports(rate_mbps))
      throw InvalidRateError("rate " + std::to_string(rate_mbps) +
                                 " Mb/s is not supported by the profile",
                             "rate_mbps");
    if (!(link_error >= 0.0 && link_error < 1.0))
      throw ValidationError("link error probability must be in [0,1)",
                            "link_error");
    if (!(arrival_prob > 0.0 && arrival_prob <= 1.0))
      throw ValidationError("arrival probability must be in (0,1]",
                            "arrival_prob");
  }
};

inline void validate_stations(std::span<const StationSpec> specs,
                              const PhyProfile& profile) {
  for (std::size_t i = 0; i < specs.size(); ++i) {
    try {
      specs[i].validate(profile);
    } catch (const InvalidRateError& e) {
      throw InvalidRateError(e.message(),
                             e.nested_field("stations[" + std::to_string(i) + "]"));
    } catch (const ValidationError& e) {
      throw ValidationError(e.message(),
                            e.nested_field("stations[" + std::to_string(i) + "]"));
    }
  }
}

// ACK airtime following a data frame sent at `data_rate_mbps`.
inline double ack_duration(const PhyProfile& profile, double data_rate_mbps) {
  if (!profile.supports(data_rate_mbps))
    throw InvalidRateError("rate " + std::to_string(data_rate_mbps) +
                           " Mb/s is not supported by the profile");
  double ack_rate = profile.min_rate_mbps();
  if (profile.ack_rate_rule == AckRateRule::kHighestBasicAtMostData) {
    for (double r : profile.basic_rates_mbps)
      if (r <= data_rate_mbps + 1e-9 && r > ack_rate) ack_rate = r;
  }
  return profile.plcp_overhead_us + profile.ack_payload_bits / ack_rate;
}

inline double eifs(const PhyProfile& profile) {
  return profile.sifs_us + profile.difs_us +
         ack_duration(profile, profile.min_rate_mbps());
}

inline double frame_airtime(const PhyProfile& profile, const StationSpec& s) {
  return profile.plcp_overhead_us +
         (profile.mac_overhead_bits + s.payload_bits) / s.rate_mbps;
}

// T_s,i: data frame, SIFS, ACK and DIFS.
inline double tx_duration_success(const PhyProfile& profile,
                                  const StationSpec& s) {
  return frame_airtime(profile, s) + profile.sifs_us +
         ack_duration(profile, s.rate_mbps) + profile.difs_us;
}

// Exact T_u,i: data frame followed by EIFS.
inline double tx_duration_failure(const PhyProfile& profile,
                                  const StationSpec& s) {
  return frame_airtime(profile, s) + eifs(profile);
}

// T_u,i as consumed by the model and the simulator, honouring
// `approximate_tu_as_ts`.
inline double effective_failure_duration(const PhyProfile& profile,
                                         const StationSpec& s) {
  return profile.approximate_tu_as_ts ? tx_duration_success(profile, s)
                                      : tx_duration_failure(profile, s);
}

// Indices sorted by ascending T_s,i, ties broken by label then input
// position. Every indexed expression in the model assumes this order.
inline std::vector<std::size_t> order_stations(std::span<const StationSpec> specs,
                                               const PhyProfile& profile) {
  if (specs.empty()) throw ValidationError("at least one station required");
  std::vector<double> ts(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i)
    ts[i] = tx_duration_success(profile, specs[i]);
  std::vector<std::size_t> perm(specs.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    if (ts[a] != ts[b]) return ts[a] < ts[b];
    return specs[a].label < specs[b].label;
  });
  return perm;
}

// Per-station durations in caller order.
struct StationTimings {
  std::vector<double> success_us;  // T_s,i
  std::vector<double> failure_us;  // T_u,i (effective)
};

inline StationTimings station_timings(std::span<const StationSpec> specs,
                                      const PhyProfile& profile) {
  StationTimings t;
  t.success_us.reserve(specs.size());
  t.failure_us.reserve(specs.size());
  for (const auto& s : specs) {
    t.success_us.push_back(tx_duration_success(profile, s));
    t.failure_us.push_back(effective_failure_duration(profile, s));
  }
  return t;
}

}  // namespace rpf
