#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <json.hpp>

#include "rpf/experiments.hpp"
#include "rpf/scenario.hpp"
#include "test_support.hpp"

using namespace rpf;
using nlohmann::json;

namespace {

const std::filesystem::path kScenarios = RPF_SCENARIO_DIR;

Scenario load(const std::string& name) { return load_scenario_file(kScenarios / name); }

json minimal() {
  return json::parse(R"({"stations":[{"label":"A","payload_bytes":1000,"rate_mbps":54}]})");
}

std::string error_field(const json& j) {
  try {
    scenario_from_json(j);
  } catch (const ValidationError& e) {
    return e.field();
  }
  return "<no error>";
}

std::vector<double> column(const Table& t, const std::string& name, const std::string& scheme = {}) {
  std::vector<double> out;
  const auto c = t.column(name);
  for (const auto& row : t.rows) {
    if (!scheme.empty() && std::get<std::string>(row[t.column("scheme")]) != scheme) continue;
    out.push_back(cell_number(row[c]));
  }
  return out;
}

}  // namespace

TEST(ScenarioFile, FixturesLoad) {
  for (const auto& entry : std::filesystem::directory_iterator(kScenarios)) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_scenario_file(entry.path())) << entry.path();
  }
}

TEST(ScenarioFile, UnitsAndDefaults) {
  const auto sc = load("rate_toggle.json");
  ASSERT_EQ(sc.stations.size(), 2u);
  EXPECT_EQ(sc.stations[0].payload_bits, 8000.0);
  EXPECT_EQ(sc.closed_loop.controller.beacon_interval_us, 102400.0);
  EXPECT_EQ(sc.closed_loop.events.size(), 9u);
  EXPECT_EQ(sc.closed_loop.events[0].action, EventAction::kRate);
  EXPECT_EQ(sc.baseline.cw_min, 16.0);
  EXPECT_EQ(sc.seed, 11u);
}

TEST(ScenarioFile, PayloadEventIsInBytes) {
  auto j = minimal();
  j["closed_loop"] = json::parse(
      R"({"events":[{"at_seconds":1,"station":"A","action":"payload","value":500}]})");
  EXPECT_EQ(scenario_from_json(j).closed_loop.events[0].value, 4000.0);
}

TEST(ScenarioFile, ExtendedRates) {
  const auto sc = load("two_station_780.json");
  EXPECT_EQ(sc.stations[0].rate_mbps, 780.0);
  EXPECT_TRUE(sc.profile.supports(780.0));
}

TEST(ScenarioFile, ProfileFileIsResolvedRelatively) {
  const auto dir = std::filesystem::temp_directory_path() / "rpf_profile_test";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "prof.json") << R"({"sifs_us": 10, "difs_us": 28, "empty_slot_us": 20})";
  auto j = minimal();
  j["profile_file"] = "prof.json";
  j["profile"] = json::parse(R"({"empty_slot_us": 9})");
  std::ofstream(dir / "sc.json") << j.dump();
  const auto sc = load_scenario_file(dir / "sc.json");
  EXPECT_EQ(sc.profile.sifs_us, 10.0);
  EXPECT_EQ(sc.profile.difs_us, 28.0);
  EXPECT_EQ(sc.profile.empty_slot_us, 9.0);
  std::filesystem::remove_all(dir);
}

TEST(ScenarioFile, ErrorsCarryFieldPaths) {
  auto j = minimal();
  j["stations"][0]["rate_mbps"] = 7;
  EXPECT_EQ(error_field(j), "stations[0].rate_mbps");

  j = minimal();
  j["stations"][0]["colour"] = "red";
  EXPECT_EQ(error_field(j), "stations[0].colour");

  j = minimal();
  j["stations"][0].erase("label");
  EXPECT_EQ(error_field(j), "stations[0].label");

  j = minimal();
  j["simulaton"] = json::object();
  EXPECT_EQ(error_field(j), "simulaton");

  j = minimal();
  j["profile"] = json::parse(R"({"difs_us": 10})");
  EXPECT_EQ(error_field(j), "profile.difs_us");

  j = minimal();
  j["simulation"] = json::parse(R"({"mode": "csma"})");
  EXPECT_EQ(error_field(j), "simulation.mode");

  j = minimal();
  j["stations"][0]["payload_bytes"] = "big";
  EXPECT_EQ(error_field(j), "stations[0].payload_bytes");

  j = minimal();
  j["closed_loop"] = json::parse(R"({"ewma_alpha": 0})");
  EXPECT_EQ(error_field(j), "closed_loop.ewma_alpha");

  j = minimal();
  j["closed_loop"] = json::parse(
      R"({"events":[{"at_seconds":1,"station":"A","action":"teleport","value":1}]})");
  EXPECT_EQ(error_field(j), "closed_loop.events[0].action");

  j = minimal();
  j["stations"] = json::array();
  EXPECT_EQ(error_field(j), "stations");

  j = minimal();
  j["simulation"] = json::parse(R"({"slots": -5})");
  EXPECT_EQ(error_field(j), "simulation.slots");
}

TEST(Csv, RoundTrip) {
  Table t;
  t.columns = {"name", "x", "n"};
  t.add({std::string("a,\"b\""), 0.1 + 0.2, std::int64_t{42}});
  t.add({std::string("plain"), 1e-300, std::int64_t{-7}});
  t.add({std::string("third"), 2.5, std::int64_t{0}});
  std::stringstream ss;
  write_csv(ss, t);
  const auto back = read_csv(ss);
  EXPECT_EQ(back.columns, t.columns);
  ASSERT_EQ(back.rows.size(), 3u);
  EXPECT_EQ(std::get<std::string>(back.rows[0][0]), "a,\"b\"");
  EXPECT_EQ(std::get<double>(back.rows[0][1]), 0.1 + 0.2);
  EXPECT_EQ(std::get<double>(back.rows[1][1]), 1e-300);
  EXPECT_EQ(std::get<std::int64_t>(back.rows[1][2]), -7);
}

TEST(Csv, ModelOutputRoundTrips) {
  const auto t = cmd_model(load("ladder8.json"));
  std::stringstream ss;
  write_csv(ss, t);
  const auto back = read_csv(ss);
  ASSERT_EQ(back.rows.size(), t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t c = 1; c < t.columns.size(); ++c)
      if (!std::holds_alternative<std::string>(t.rows[r][c])) {
        EXPECT_EQ(cell_number(back.rows[r][c]), cell_number(t.rows[r][c]));
      }
}

TEST(Jsonl, OneObjectPerRow) {
  const auto t = cmd_model(load("two_station_54.json"));
  std::stringstream ss;
  write_jsonl(ss, t);
  std::string line;
  std::size_t n = 0;
  while (std::getline(ss, line)) {
    const auto j = json::parse(line);
    EXPECT_EQ(j.size(), t.columns.size());
    EXPECT_TRUE(j["throughput_mbps"].is_number());
    ++n;
  }
  EXPECT_EQ(n, t.rows.size());
}

TEST(CmdModel, TwoStationRateScan) {
  double prev_ratio = 0.0;
  for (const char* f : {"two_station_54.json", "two_station_135.json", "two_station_780.json"}) {
    const auto t = cmd_model(load(f));
    EXPECT_EQ(t.columns, (std::vector<std::string>{"station", "rate_mbps", "scheme",
                                                   "throughput_mbps", "airtime_frac",
                                                   "utility_total"}));
    const auto air = column(t, "airtime_frac", "rpf");
    EXPECT_NEAR(air[0], 0.5, 1e-9);
    EXPECT_NEAR(air[1], 0.5, 1e-9);
    const auto s = column(t, "throughput_mbps", "rpf");
    EXPECT_GT(s[0] / s[1], prev_ratio);
    prev_ratio = s[0] / s[1];
  }
}

TEST(CmdModel, SingleStation) {
  const auto t = cmd_model(load("single_station.json"));
  const auto air = column(t, "airtime_frac", "rpf");
  ASSERT_EQ(air.size(), 1u);
  EXPECT_EQ(air[0], 1.0);
  EXPECT_EQ(column(t, "airtime_frac", "dcf").size(), 1u);
}

TEST(CmdModel, LadderDcfThroughputsWithinOnePercent) {
  const auto s = column(cmd_model(load("ladder8.json")), "throughput_mbps", "dcf");
  const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
  EXPECT_LE((*hi - *lo) / *hi, 0.01);
}

TEST(CmdModel, RpfUtilityNeverBelowDcf) {
  std::mt19937_64 rng(71);
  for (int k = 0; k < 25; ++k) {
    Scenario sc;
    sc.stations = test::random_scenario(rng).specs;
    const auto t = cmd_model(sc);
    EXPECT_GE(column(t, "utility_total", "rpf")[0], column(t, "utility_total", "dcf")[0] - 1e-12);
  }
}

TEST(CmdOptimize, ReportsAllocation) {
  const auto t = cmd_optimize(load("ladder8.json"));
  ASSERT_EQ(t.rows.size(), 8u);
  for (double r : column(t, "residual")) EXPECT_LE(r, 1e-10);
  for (double a : column(t, "airtime_exact")) EXPECT_NEAR(a, 0.125, 1e-10);
  for (double g : column(t, "utility_gain")) EXPECT_GT(g, 0.0);
  const auto ecw = column(t, "ecw");
  const auto cw = column(t, "cw");
  for (std::size_t i = 0; i < ecw.size(); ++i) EXPECT_EQ(cw[i], std::exp2(ecw[i]));
}

TEST(CmdSimulate, DeterministicAndAgreesWithModel) {
  auto sc = load("lossy_mixed.json");
  sc.simulation.slots = 2'000'000;
  const auto a = cmd_simulate(sc);
  const auto b = cmd_simulate(sc);
  std::stringstream sa, sb;
  write_csv(sa, a);
  write_csv(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
  const auto sim = column(a, "airtime_frac");
  const auto model = column(a, "airtime_model");
  for (std::size_t i = 0; i < sim.size(); ++i) EXPECT_NEAR(sim[i], model[i], 0.01);
  sc.seed += 1;
  std::stringstream sc_out;
  write_csv(sc_out, cmd_simulate(sc));
  EXPECT_NE(sc_out.str(), sa.str());
}

TEST(CmdSimulate, BackoffModeBothSchemes) {
  auto sc = load("ladder8.json");
  sc.simulation.slots = 300'000;
  sc.simulation.mode = SimMode::kBackoff;
  for (auto scheme : {Scheme::kRpf, Scheme::kDcf}) {
    sc.simulation.scheme = scheme;
    const auto t = cmd_simulate(sc);
    EXPECT_EQ(t.rows.size(), 8u);
    for (double s : column(t, "throughput_mbps")) EXPECT_GT(s, 0.0);
  }
}

TEST(CmdClosedLoop, TraceColumns) {
  auto sc = load("rate_toggle.json");
  sc.closed_loop.duration_s = 1.0;
  const auto t = cmd_closed_loop(sc);
  EXPECT_EQ(t.columns, (std::vector<std::string>{"time_s", "station", "rate_mbps", "ecw",
                                                 "throughput_mbps", "airtime_frac"}));
  EXPECT_EQ(t.rows.size(), 2u * 10u);
}

TEST(CmdSweepPayload, LadderGapPositiveAndNonDecreasing) {
  const auto t = cmd_sweep_payload(load("ladder8.json"));
  const auto gap = column(t, "utility_gap");
  ASSERT_EQ(gap.size(), 14u);
  for (std::size_t i = 0; i < gap.size(); ++i) {
    EXPECT_GT(gap[i], 0.0);
    if (i) {
      EXPECT_GE(gap[i], gap[i - 1]);
    }
  }
  EXPECT_EQ(column(t, "payload_bytes").front(), 100.0);
  EXPECT_EQ(column(t, "payload_bytes").back(), 1400.0);
}

// A lone DCF station still idles through its backoff, so the gap is the
// idle overhead log(1 + (1 - tau) T_e / (tau T_s)) rather than zero.
TEST(CmdSweepPayload, SingleStationGapIsBackoffIdleTime) {
  const auto sc = load("single_station.json");
  const auto t = cmd_sweep_payload(sc);
  const double tau = 2.0 / 17.0;
  const auto payload = column(t, "payload_bytes");
  const auto gap = column(t, "utility_gap");
  for (std::size_t i = 0; i < gap.size(); ++i) {
    auto s = sc.stations[0];
    s.payload_bits = 8.0 * payload[i];
    const double ts = tx_duration_success(sc.profile, s);
    EXPECT_NEAR(gap[i], std::log1p((1 - tau) * sc.profile.empty_slot_us / (tau * ts)), 1e-9);
  }
}

// Identical stations: the equal-airtime point is the symmetric attempt rate
// that maximizes total throughput, found here by golden-section search on the
// symmetric closed form. The gap is what DCF's attempt rate leaves behind.
TEST(CmdSweepPayload, EqualStationsGapIsAttemptRateLoss) {
  Scenario sc;
  sc.stations = std::vector<StationSpec>(8, test::ladder8()[4]);
  for (std::size_t i = 0; i < 8; ++i) sc.stations[i].label = "S" + std::to_string(i);
  const auto t = cmd_sweep_payload(sc);
  const auto payload = column(t, "payload_bytes");
  const auto gap = column(t, "utility_gap");
  const double n = 8.0;
  for (std::size_t r = 0; r < payload.size(); ++r) {
    auto spec = sc.stations[0];
    spec.payload_bits = 8.0 * payload[r];
    const double ts = tx_duration_success(sc.profile, spec);
    const double te = sc.profile.empty_slot_us;
    auto total = [&](double tau) {
      const double idle = std::pow(1.0 - tau, n);
      const double succ = n * tau * std::pow(1.0 - tau, n - 1.0);
      return succ * spec.payload_bits / (idle * te + (1.0 - idle) * ts);
    };
    double lo = 1e-6, hi = 0.999;
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int k = 0; k < 200; ++k) {
      const double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
      if (total(a) < total(b))
        lo = a;
      else
        hi = b;
    }
    const double best = total(0.5 * (lo + hi));
    double dcf_total = 0.0, rpf_total = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      rpf_total += column(t, "throughput_rpf_S" + std::to_string(i))[r];
      dcf_total += column(t, "throughput_dcf_S" + std::to_string(i))[r];
    }
    EXPECT_NEAR(rpf_total, best, 1e-9 * best);
    EXPECT_NEAR(gap[r], n * std::log(best / dcf_total), 1e-9);
    EXPECT_GT(gap[r], 0.0);
  }
}

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RPF_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST(Cli, ExitCodes) {
  const auto dir = std::filesystem::temp_directory_path() / "rpf_cli_test";
  std::filesystem::create_directories(dir);
  const auto out = (dir / "out.csv").string();
  const auto sc = (kScenarios / "two_station_54.json").string();
  EXPECT_EQ(run_cli("model --scenario " + sc + " --out " + out), 0);
  std::ifstream f(out);
  std::string header;
  std::getline(f, header);
  EXPECT_EQ(header, "station,rate_mbps,scheme,throughput_mbps,airtime_frac,utility_total");

  EXPECT_EQ(run_cli("simulate --scenario " + sc + " --slots 10000 --seed 3 --format jsonl"), 0);
  EXPECT_EQ(run_cli("sweep-payload --scenario " + sc), 0);
  EXPECT_EQ(run_cli("model --scenario " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(run_cli("model --scenario " + sc + " --format xml"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);

  std::ofstream(dir / "bad.json") << R"({"stations":[{"label":"A","payload_bytes":1000,"rate_mbps":7}]})";
  EXPECT_EQ(run_cli("model --scenario " + (dir / "bad.json").string()), 2);

  std::ofstream(dir / "hard.json")
      << R"({"solver":{"max_iterations":1,"tolerance":1e-300},"stations":[
             {"label":"A","payload_bytes":1000,"rate_mbps":54},
             {"label":"B","payload_bytes":1000,"rate_mbps":6}]})";
  EXPECT_EQ(run_cli("optimize --scenario " + (dir / "hard.json").string()), 3);
  std::filesystem::remove_all(dir);
}
