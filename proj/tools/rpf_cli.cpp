// rpf: model, optimize, simulate and closed-loop runs from a scenario file.
//
// Exit codes: 0 success, 2 invalid input, 3 solver did not converge.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rpf/rpf.hpp"

namespace {

struct Options {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> slots;
  std::string out;
  std::string format = "csv";
};

void add_common(CLI::App* cmd, Options& o, bool with_slots) {
  cmd->add_option("--scenario", o.scenario, "scenario file (JSON)")->required();
  cmd->add_option("--seed", o.seed, "override the scenario seed");
  if (with_slots) cmd->add_option("--slots", o.slots, "override simulation slots");
  cmd->add_option("--out", o.out, "output file (default stdout)");
  cmd->add_option("--format", o.format, "csv or jsonl")
      ->check(CLI::IsMember({"csv", "jsonl"}));
}

int run(const std::string& command, const Options& o) {
  auto sc = rpf::load_scenario_file(o.scenario);
  if (o.seed) sc.seed = *o.seed;
  if (o.slots) sc.simulation.slots = *o.slots;

  rpf::Table table;
  if (command == "model")
    table = rpf::cmd_model(sc);
  else if (command == "optimize")
    table = rpf::cmd_optimize(sc);
  else if (command == "simulate")
    table = rpf::cmd_simulate(sc);
  else if (command == "closed-loop") {
    const auto trace = rpf::closed_loop_trace(sc);
    for (const auto& w : trace.warnings) std::cerr << "warning: " << w << '\n';
    table = rpf::closed_loop_table(trace);
  } else
    table = rpf::cmd_sweep_payload(sc);

  const auto fmt = o.format == "jsonl" ? rpf::OutputFormat::kJsonl : rpf::OutputFormat::kCsv;
  if (o.out.empty()) {
    rpf::write_table(std::cout, table, fmt);
  } else {
    std::ofstream f(o.out);
    if (!f) throw rpf::ValidationError("cannot open for writing", o.out);
    rpf::write_table(f, table, fmt);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Airtime-fair contention window tuning: model, optimizer, simulator"};
  app.require_subcommand(1);
  Options opts;
  const std::pair<const char*, const char*> commands[] = {
      {"model", "per-station throughput/airtime under DCF and RPF"},
      {"optimize", "equal-airtime attempt probabilities and contention windows"},
      {"simulate", "slot-level Monte Carlo run"},
      {"closed-loop", "AP controller emulation over beacon intervals"},
      {"sweep-payload", "utility of both schemes versus payload length"},
  };
  std::string chosen;
  for (const auto& [name, help] : commands) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, opts, std::string(name) == "simulate");
    cmd->callback([&chosen, n = std::string(name)] { chosen = n; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    return run(chosen, opts);
  } catch (const rpf::SolverError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const rpf::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
