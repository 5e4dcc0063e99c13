#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "p2pgrid/coordination.hpp"
#include "p2pgrid/market.hpp"
#include "p2pgrid/network.hpp"

namespace p2pgrid {

struct ScenarioConfig {
  std::string network_path;
  std::string peers_path;
  CostSchedule costs;
  /// Dead-band overrides applied to every node.
  std::optional<double> v_min;
  std::optional<double> v_max;
  NegotiationConfig negotiation;
  std::vector<Policy> policies;
  /// 1: loss cost only, network constraints ignored. 2: all network costs.
  int scenario_id{2};
  std::string output_dir;
  std::uint64_t seed{0};
  bool trace{false};
  /// Raw config text, hashed into the manifest.
  std::string source_text;
};

/// INI-style config:
///
///   [scenario]  id, network, peers, output, seed, policies, trace
///   [costs]     loss, voltage, congestion          ($/MWh)
///   [bands]     v_min, v_max                       (p.u.)
///   [negotiation] epsilon, eta, tol_p, tol_lambda, max_iter, initial_price,
///               ledger_mode (unit_rate|accumulated), relinearize,
///               universal_cost (exact|linearized), flow_model (branch|node_voltage)
///
/// Relative paths resolve against `base_dir`.
ScenarioConfig parse_scenario_config(const std::string& text, const std::string& source,
                                     const std::string& base_dir = ".");
ScenarioConfig load_scenario_config(const std::string& path);

/// Throws ConfigError on an empty policy list or missing input files.
void validate(const ScenarioConfig& config);

struct PolicyRun {
  Policy policy{Policy::Base};
  bool converged{false};
  /// Set when the run aborted; the numeric fields are then NaN.
  std::string error;
  std::optional<NegotiationResult> result;
  std::vector<IterationRecord> history;

  double total_volume{0};
  double welfare{0};
  double loss_mwh{0};
  double avg_voltage_margin{0};
  double avg_line_loading_margin{0};
  Index violated_nodes{0};
  Index violated_lines{0};
  NetworkCost network_cost;
};

struct ScenarioResult {
  ScenarioConfig config;
  RadialNetwork<double> net;
  PeerSet peers;
  GridState<double> initial_grid;
  std::vector<PolicyRun> runs;
  std::optional<PropositionReport> propositions;
  std::string config_hash;

  const PolicyRun* find(Policy policy) const;
};

/// Mean over nodes of min(|v| - v_min, v_max - |v|), p.u.
double average_voltage_margin(const RadialNetwork<double>& net, const GridState<double>& state);
/// Mean over lines with a finite limit of (1 - |s| / s_max) * 100.
double average_line_loading_margin(const RadialNetwork<double>& net, const GridState<double>& state);

/// Runs every configured policy (in parallel) and the proposition checks.
ScenarioResult run_scenarios(const ScenarioConfig& config);

enum class TableKind { Summary, Volumes, UnitCosts, NodeVoltages, LineLoading, Propositions };

std::string table_file_name(TableKind kind);
std::string render_table(const ScenarioResult& result, TableKind kind);
/// Writes one table into `dir`; returns the file path.
std::string export_table(const ScenarioResult& result, TableKind kind, const std::string& dir);

/// All tables, per-policy traces (when enabled) and manifest.json into the
/// configured output directory. Returns the written paths.
std::vector<std::string> write_outputs(const ScenarioResult& result);

/// FNV-1a 64-bit, hex.
std::string content_hash(const std::string& text);

}  // namespace p2pgrid
