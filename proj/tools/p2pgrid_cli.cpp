// p2pgrid command-line driver.
//
//   p2pgrid_cli run --config data/scenario1.ini [--out DIR] [--policies base,causal] [--trace]
//   p2pgrid_cli verify [--instances 20] [--seed 7]
//   p2pgrid_cli dump-sensitivity --network data/ieee33.net [--out table.csv]

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "p2pgrid/coordination.hpp"
#include "p2pgrid/errors.hpp"
#include "p2pgrid/instances.hpp"
#include "p2pgrid/scenario.hpp"
#include "p2pgrid/sensitivity.hpp"
#include "p2pgrid/text_table.hpp"

using namespace p2pgrid;

namespace {

int cmd_run(const std::string& config_path, const std::string& out, const std::string& policies,
            std::optional<std::uint64_t> seed, std::optional<bool> trace) {
  ScenarioConfig config = load_scenario_config(config_path);
  if (!out.empty()) config.output_dir = out;
  if (!policies.empty()) {
    config.policies.clear();
    for (const auto& name : split_fields(policies)) config.policies.push_back(parse_policy(name));
  }
  if (seed) config.seed = *seed;
  if (trace) config.trace = *trace;

  const ScenarioResult result = run_scenarios(config);
  write_outputs(result);
  std::cout << render_table(result, TableKind::Summary);
  bool all_converged = true;
  for (const auto& run : result.runs) {
    if (!run.converged) {
      all_converged = false;
      std::cerr << to_string(run.policy) << ": not converged" << (run.error.empty() ? "" : " (" + run.error + ")")
                << "\n";
    }
  }
  std::cout << "outputs written to " << config.output_dir << "\n";
  return all_converged ? 0 : 2;
}

int cmd_verify(int instances, std::uint64_t seed, double loss_cost) {
  CostSchedule sched;
  sched.loss = loss_cost;
  NegotiationConfig cfg;
  cfg.universal_cost = UniversalCostModel::Linearized;
  cfg.record_history = false;
  FeederOptions feeder;
  feeder.max_nodes = 12;
  TextTable table({"instance", "nodes", "peers", "universal_gap", "causal_gap", "causal_residual", "status"});
  int failures = 0;
  for (int i = 0; i < instances; ++i) {
    const MarketInstance inst = random_market(seed + static_cast<std::uint64_t>(i), feeder);
    const NegotiationResult uni = run_negotiation(inst.net, inst.peers, sched, Policy::Universal, cfg);
    const NegotiationResult cau = run_negotiation(inst.net, inst.peers, sched, Policy::Causal, cfg);
    PropositionInputs in;
    in.peers = &inst.peers;
    in.unit_rates = cau.unit_rates.total();
    in.universal = &uni;
    in.causal = &cau;
    in.optimum = social_optimum(inst.peers, in.unit_rates);
    const PropositionReport rep = verify_propositions(in);
    if (!rep.ok()) ++failures;
    table.add_row({std::to_string(i), std::to_string(inst.net.num_nodes()), std::to_string(inst.peers.size()),
                   format_number(rep.universal_gap), format_number(rep.causal_gap),
                   format_number(rep.causal_max_first_order_residual), rep.ok() ? "ok" : rep.violations.front()});
  }
  const MarketInstance first = random_market(seed, feeder);
  const double gap = colocation_gap(first.peers, sched, cfg);
  std::cout << table.str() << "colocation gap " << format_number(gap) << "\n"
            << failures << " of " << instances << " instances violated a check\n";
  return failures == 0 && std::abs(gap) <= 1e-3 ? 0 : 1;
}

int cmd_dump(const std::string& network_path, const std::string& out) {
  const RadialNetwork<double> net = load_network(network_path);
  const GridState<double> state = solve_power_flow(net, net.base_injection());
  const std::string csv = sensitivity_table_csv(build_sensitivity_table(net, state));
  if (out.empty()) {
    std::cout << csv;
  } else {
    write_text_file(out, csv);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Peer-to-peer energy trading with network cost allocation on radial feeders"};
  app.require_subcommand(1);

  std::string config_path, out_dir, policies;
  std::optional<std::uint64_t> seed;
  std::optional<bool> trace;
  auto* run = app.add_subcommand("run", "Run the policy matrix of a scenario config");
  run->add_option("-c,--config", config_path, "Scenario config (INI)")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--out", out_dir, "Output directory (overrides the config)");
  run->add_option("-p,--policies", policies, "Comma-separated subset of base,universal,causal");
  run->add_option("-s,--seed", seed, "Random seed recorded in the manifest");
  run->add_flag("--trace,!--no-trace", trace, "Write per-iteration traces");

  int instances = 20;
  std::uint64_t verify_seed = 1;
  double loss_cost = 100;
  auto* verify = app.add_subcommand("verify", "Check equilibrium properties on random instances");
  verify->add_option("-n,--instances", instances, "Number of random instances")->check(CLI::PositiveNumber);
  verify->add_option("-s,--seed", verify_seed, "Seed of the first instance");
  verify->add_option("--loss-cost", loss_cost, "Loss cost rate, $/MWh");

  std::string network_path, dump_out;
  auto* dump = app.add_subcommand("dump-sensitivity", "Write the sensitivity table at the no-trade state");
  dump->add_option("-n,--network", network_path, "Network file")->required()->check(CLI::ExistingFile);
  dump->add_option("-o,--out", dump_out, "Output file (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config_path, out_dir, policies, seed, trace);
    if (*verify) return cmd_verify(instances, verify_seed, loss_cost);
    if (*dump) return cmd_dump(network_path, dump_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
