#pragma once

// Experiment commands behind the CLI. Each returns a Table; writers emit it
// as CSV (header + one record per row) or JSON Lines (one object per row).

#include <charconv>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <system_error>
#include <variant>
#include <vector>

#include <json.hpp>

#include "rpf/adaptive_controller.hpp"
#include "rpf/analytic_model.hpp"
#include "rpf/errors.hpp"
#include "rpf/pf_optimizer.hpp"
#include "rpf/scenario.hpp"
#include "rpf/slot_simulator.hpp"

namespace rpf {

using Cell = std::variant<std::string, double, std::int64_t>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    if (row.size() != columns.size())
      throw ContractViolation("row width does not match header");
    rows.push_back(std::move(row));
  }
  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw ContractViolation("no column '" + name + "'");
  }
};

enum class OutputFormat { kCsv, kJsonl };

namespace detail {

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string cell_text(const Cell& c) {
  if (const auto* s = std::get_if<std::string>(&c)) return *s;
  if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
  return std::to_string(std::get<std::int64_t>(c));
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline std::vector<std::string> split_csv_record(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        out.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.emplace_back();
    } else {
      out.back() += ch;
    }
  }
  return out;
}

inline Cell parse_cell(const std::string& s) {
  if (s.empty()) return s;
  std::int64_t i = 0;
  auto ri = std::from_chars(s.data(), s.data() + s.size(), i);
  if (ri.ec == std::errc{} && ri.ptr == s.data() + s.size()) return i;
  double d = 0.0;
  auto rd = std::from_chars(s.data(), s.data() + s.size(), d);
  if (rd.ec == std::errc{} && rd.ptr == s.data() + s.size()) return d;
  return s;
}

}  // namespace detail

inline void write_csv(std::ostream& os, const Table& t) {
  for (std::size_t i = 0; i < t.columns.size(); ++i)
    os << (i ? "," : "") << detail::csv_quote(t.columns[i]);
  os << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i)
      os << (i ? "," : "") << detail::csv_quote(detail::cell_text(row[i]));
    os << '\n';
  }
}

inline void write_jsonl(std::ostream& os, const Table& t) {
  for (const auto& row : t.rows) {
    nlohmann::ordered_json j;
    for (std::size_t i = 0; i < row.size(); ++i)
      std::visit([&](const auto& v) { j[t.columns[i]] = v; }, row[i]);
    os << j.dump() << '\n';
  }
}

inline void write_table(std::ostream& os, const Table& t, OutputFormat f) {
  if (f == OutputFormat::kCsv)
    write_csv(os, t);
  else
    write_jsonl(os, t);
}

// Cells come back typed: integers, then doubles, else strings.
inline Table read_csv(std::istream& is) {
  Table t;
  std::string line;
  if (!std::getline(is, line)) throw ValidationError("empty CSV input");
  t.columns = detail::split_csv_record(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto fields = detail::split_csv_record(line);
    if (fields.size() != t.columns.size())
      throw ValidationError("record width does not match header", "csv");
    std::vector<Cell> row;
    for (const auto& f : fields) row.push_back(detail::parse_cell(f));
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline double cell_number(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&c)) return static_cast<double>(*i);
  throw ContractViolation("cell is not numeric");
}

namespace detail {

inline SolverConfig seeded_solver(const Scenario& sc) {
  auto cfg = sc.solver;
  cfg.seed = sc.seed;
  return cfg;
}

inline AttemptVector dcf_tau(const Scenario& sc) {
  return dcf_attempt_prob(sc.baseline.cw_min, sc.baseline.max_stage, sc.stations,
                          sc.profile);
}

inline std::int64_t as_i64(std::uint64_t v) { return static_cast<std::int64_t>(v); }

}  // namespace detail

// Model throughput and airtime per station under the DCF baseline and the
// equal-airtime optimum.
inline Table cmd_model(const Scenario& sc) {
  sc.validate();
  Table t;
  t.columns = {"station", "rate_mbps", "scheme", "throughput_mbps", "airtime_frac",
               "utility_total"};
  const auto dcf = evaluate(detail::dcf_tau(sc).tau, sc.stations, sc.profile);
  const auto alloc = solve_equal_airtime(sc.stations, sc.profile, detail::seeded_solver(sc));
  const auto rpf = evaluate(alloc.tau.tau, sc.stations, sc.profile);
  for (const auto& [name, ev] : {std::pair{"dcf", &dcf}, std::pair{"rpf", &rpf}}) {
    for (std::size_t i = 0; i < sc.stations.size(); ++i)
      t.add({sc.stations[i].label, sc.stations[i].rate_mbps, std::string(name),
             ev->stations[i].throughput_mbps, ev->stations[i].airtime,
             ev->utility.value});
  }
  return t;
}

// Allocation report: exact and rounded windows per station, plus solver
// diagnostics and the utility gain over DCF repeated on each row.
inline Table cmd_optimize(const Scenario& sc) {
  sc.validate();
  Table t;
  t.columns = {"station",        "rate_mbps",       "payload_bytes",  "tau",
               "w_exact",        "ecw",             "cw",             "airtime_exact",
               "airtime_rounded", "throughput_mbps", "residual",       "iterations",
               "restart_spread", "utility_rpf",     "utility_rounded", "utility_dcf",
               "utility_gain"};
  const auto alloc = solve_equal_airtime(sc.stations, sc.profile, detail::seeded_solver(sc));
  const auto ev = evaluate_allocation(alloc, sc.stations, sc.profile);
  const auto dcf = evaluate(detail::dcf_tau(sc).tau, sc.stations, sc.profile);
  for (std::size_t i = 0; i < sc.stations.size(); ++i) {
    const auto& s = sc.stations[i];
    t.add({s.label, s.rate_mbps, s.payload_bits / 8.0, alloc.tau.tau[i],
           alloc.w_exact[i], std::int64_t{alloc.ecw[i]},
           std::int64_t{1} << alloc.ecw[i], ev.exact.stations[i].airtime,
           ev.rounded.stations[i].airtime, ev.exact.stations[i].throughput_mbps,
           alloc.residual, std::int64_t{alloc.iterations}, alloc.restart_spread,
           ev.exact.utility.value, ev.rounded.utility.value, dcf.utility.value,
           ev.exact.utility.value - dcf.utility.value});
  }
  return t;
}

// Monte Carlo run. The scheme picks the access parameters: in p-persistent
// mode the RPF or DCF-fixed-point tau; in backoff mode fixed windows 2^ECW
// (RPF) or binary exponential backoff (DCF). Model columns evaluate the
// analytic model at the attempt probabilities the run was meant to realize.
inline Table cmd_simulate(const Scenario& sc) {
  sc.validate();
  const auto& sim = sc.simulation;
  SimConfig cfg;
  cfg.n_slots = sim.slots;
  cfg.warmup_slots = sim.warmup_slots;
  cfg.seed = sc.seed;
  cfg.mode = sim.mode;
  cfg.capture = sim.capture;

  std::vector<double> model_tau;
  SimResult r;
  if (sim.scheme == Scheme::kDcf) {
    model_tau = detail::dcf_tau(sc).tau;
    if (sim.mode == SimMode::kPPersistent) {
      r = run_p_persistent(model_tau, sc.stations, sc.profile, cfg);
    } else {
      std::vector<BackoffParams> p(sc.stations.size(), sc.baseline);
      r = run_backoff(p, sc.stations, sc.profile, cfg);
    }
  } else {
    const auto alloc =
        solve_equal_airtime(sc.stations, sc.profile, detail::seeded_solver(sc));
    if (sim.mode == SimMode::kPPersistent) {
      model_tau = alloc.tau.tau;
      r = run_p_persistent(model_tau, sc.stations, sc.profile, cfg);
    } else {
      for (int e : alloc.ecw) model_tau.push_back(ecw_to_tau(e));
      r = run_backoff_ecw(alloc.ecw, sc.stations, sc.profile, cfg);
    }
  }
  const auto model = evaluate(model_tau, sc.stations, sc.profile);

  Table t;
  t.columns = {"station",          "rate_mbps",       "attempts",      "successes",
               "captures",         "collisions",      "noise_failures", "tau_empirical",
               "throughput_mbps",  "airtime_frac",    "tau_model",     "throughput_model_mbps",
               "airtime_model",    "slots",           "p_empty",       "p_success",
               "p_failure",        "elapsed_us"};
  for (std::size_t i = 0; i < sc.stations.size(); ++i) {
    const auto& c = r.stations[i];
    t.add({sc.stations[i].label, sc.stations[i].rate_mbps, detail::as_i64(c.attempts),
           detail::as_i64(c.successes), detail::as_i64(c.captures),
           detail::as_i64(c.collisions), detail::as_i64(c.noise_failures), r.tau(i),
           r.throughput_mbps(i), r.airtime(i), model_tau[i],
           model.stations[i].throughput_mbps, model.stations[i].airtime,
           detail::as_i64(r.slots), r.p_empty(), r.p_success(), r.p_failure(),
           r.elapsed_us});
  }
  return t;
}

inline Table closed_loop_table(const ClosedLoopTrace& trace) {
  Table t;
  t.columns = {"time_s", "station", "rate_mbps", "ecw", "throughput_mbps", "airtime_frac"};
  for (const auto& row : trace.rows)
    t.add({row.time_s, row.station, row.rate_mbps, std::int64_t{row.ecw},
           row.throughput_mbps, row.airtime_frac});
  return t;
}

inline ClosedLoopTrace closed_loop_trace(const Scenario& sc) {
  sc.validate();
  return run_closed_loop(sc.closed_loop_script(), sc.profile, sc.closed_loop.controller);
}

inline Table cmd_closed_loop(const Scenario& sc) {
  return closed_loop_table(closed_loop_trace(sc));
}

// Utility of both schemes versus payload length (same payload for every
// station), with per-station throughputs in wide form.
inline Table cmd_sweep_payload(const Scenario& sc) {
  sc.validate();
  Table t;
  t.columns = {"payload_bytes", "utility_rpf", "utility_dcf", "utility_gap"};
  for (const auto& s : sc.stations) t.columns.push_back("throughput_rpf_" + s.label);
  for (const auto& s : sc.stations) t.columns.push_back("throughput_dcf_" + s.label);

  for (double bytes : sc.sweep.payloads_bytes()) {
    Scenario point = sc;
    for (auto& s : point.stations) s.payload_bits = 8.0 * bytes;
    const auto model = cmd_model(point);
    const std::size_t n = sc.stations.size();
    const auto u_col = model.column("utility_total");
    const auto s_col = model.column("throughput_mbps");
    const double u_dcf = cell_number(model.rows[0][u_col]);
    const double u_rpf = cell_number(model.rows[n][u_col]);
    std::vector<Cell> row{bytes, u_rpf, u_dcf, u_rpf - u_dcf};
    for (std::size_t i = 0; i < n; ++i) row.push_back(model.rows[n + i][s_col]);
    for (std::size_t i = 0; i < n; ++i) row.push_back(model.rows[i][s_col]);
    t.add(std::move(row));
  }
  return t;
}

}  // namespace rpf
