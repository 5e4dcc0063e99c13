#include "p2pgrid/scenario.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <future>
#include <limits>
#include <sstream>

#include <Eigen/Core>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "p2pgrid/errors.hpp"
#include "p2pgrid/text_table.hpp"

namespace p2pgrid {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

bool parse_bool(const std::string& raw, const std::string& key) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

template <typename T>
T get_number(const pt::ptree& tree, const std::string& key, T fallback) {
  const auto raw = tree.get_optional<std::string>(key);
  if (!raw) return fallback;
  std::istringstream in(trim(*raw));
  in.imbue(std::locale::classic());
  T value{};
  if (!(in >> value) || !(in >> std::ws).eof()) throw ConfigError(key + ": '" + *raw + "' is not a number");
  return value;
}

std::string resolve(const std::string& base_dir, const std::string& path) {
  if (path.empty()) return path;
  const fs::path p(path);
  return p.is_absolute() ? path : (fs::path(base_dir) / p).lexically_normal().string();
}

std::vector<Policy> parse_policy_list(const std::string& raw) {
  std::vector<Policy> out;
  for (const auto& name : split_fields(raw)) {
    const Policy p = parse_policy(name);
    for (Policy q : out) {
      if (q == p) throw ConfigError("policy '" + name + "' listed twice");
    }
    out.push_back(p);
  }
  return out;
}

RadialNetwork<double> with_bands(const RadialNetwork<double>& net, std::optional<double> v_min,
                                 std::optional<double> v_max) {
  if (!v_min && !v_max) return net;
  auto nodes = net.nodes();
  for (auto& n : nodes) {
    if (v_min) n.v_min = *v_min;
    if (v_max) n.v_max = *v_max;
  }
  return RadialNetwork<double>(std::move(nodes), net.lines(), net.base());
}

PolicyRun failed_run(Policy policy, const std::string& error, std::vector<IterationRecord> history) {
  PolicyRun run;
  run.policy = policy;
  run.error = error;
  run.history = std::move(history);
  run.total_volume = run.welfare = run.loss_mwh = kNaN;
  run.avg_voltage_margin = run.avg_line_loading_margin = kNaN;
  run.network_cost = {kNaN, kNaN, kNaN};
  return run;
}

PolicyRun run_policy(const RadialNetwork<double>& net, const PeerSet& peers, const ScenarioConfig& config,
                     Policy policy) {
  NegotiationConfig neg = config.negotiation;
  neg.record_history = true;
  NegotiationResult result;
  try {
    result = run_negotiation(net, peers, config.costs, policy, neg);
  } catch (const NegotiationDivergence& e) {
    return failed_run(policy, e.what(), e.history());
  } catch (const Error& e) {
    throw Error("scenario " + std::to_string(config.scenario_id) + ", " + to_string(policy) + " policy: " + e.what());
  }
  PolicyRun run;
  run.policy = policy;
  run.converged = result.converged;
  const double base = net.base().power_mva;
  const VectorXd& p = result.volumes();
  run.total_volume = peers.supply(p);
  run.network_cost = exact_network_cost(net, result.initial_grid, result.grid, result.activation, config.costs);
  run.welfare = market_surplus(peers, p) - run.network_cost.total();
  run.loss_mwh = result.grid.loss * base;
  run.avg_voltage_margin = average_voltage_margin(net, result.grid);
  run.avg_line_loading_margin = average_line_loading_margin(net, result.grid);
  run.violated_nodes = result.activation.violated_nodes();
  run.violated_lines = result.activation.violated_lines();
  run.history = std::move(result.state.history);
  result.state.history.clear();
  run.result = std::move(result);
  return run;
}

std::string policy_list(const ScenarioResult& r) {
  std::string out;
  for (const auto& run : r.runs) out += (out.empty() ? "" : ",") + to_string(run.policy);
  return out;
}

const char* role_name(const PeerSet& peers, Index k) { return peers.role(k) == PeerRole::Seller ? "sell" : "buy"; }

std::string trace_csv(const PeerSet& peers, const PolicyRun& run) {
  std::vector<std::string> header{"tau", "total_volume_mwh", "mean_price", "welfare_usd", "loss_mwh", "violations"};
  for (Index k = 0; k < peers.size(); ++k) header.push_back("p_" + peers.id(k));
  TextTable t(std::move(header));
  for (const auto& rec : run.history) {
    std::vector<std::string> row{std::to_string(rec.tau), format_number(peers.supply(rec.volumes)),
                                 format_number(rec.prices.mean()), format_number(rec.welfare),
                                 format_number(rec.loss_mwh), std::to_string(rec.violations)};
    for (Index k = 0; k < peers.size(); ++k) row.push_back(format_number(rec.volumes(k)));
    t.add_row(std::move(row));
  }
  return t.str();
}

}  // namespace

ScenarioConfig parse_scenario_config(const std::string& text, const std::string& source, const std::string& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(source, static_cast<int>(e.line()), e.message());
  }
  ScenarioConfig c;
  c.source_text = text;
  c.scenario_id = get_number<int>(tree, "scenario.id", 2);
  if (c.scenario_id != 1 && c.scenario_id != 2) throw ConfigError(source + ": scenario.id must be 1 or 2");
  c.network_path = resolve(base_dir, trim(tree.get<std::string>("scenario.network", "")));
  c.peers_path = resolve(base_dir, trim(tree.get<std::string>("scenario.peers", "")));
  c.output_dir = resolve(base_dir, trim(tree.get<std::string>("scenario.output", "out")));
  c.seed = get_number<std::uint64_t>(tree, "scenario.seed", 0);
  c.policies = parse_policy_list(tree.get<std::string>("scenario.policies", ""));
  if (auto t = tree.get_optional<std::string>("scenario.trace")) c.trace = parse_bool(*t, "scenario.trace");

  c.costs.loss = get_number<double>(tree, "costs.loss", 0.0);
  c.costs.voltage = get_number<double>(tree, "costs.voltage", 0.0);
  c.costs.congestion = get_number<double>(tree, "costs.congestion", 0.0);
  if (c.costs.loss < 0 || c.costs.voltage < 0 || c.costs.congestion < 0) {
    throw ConfigError(source + ": cost rates must be non-negative");
  }
  if (c.scenario_id == 1) c.costs.voltage = c.costs.congestion = 0;

  if (tree.get_optional<std::string>("bands.v_min")) c.v_min = get_number<double>(tree, "bands.v_min", 0.0);
  if (tree.get_optional<std::string>("bands.v_max")) c.v_max = get_number<double>(tree, "bands.v_max", 0.0);
  if (c.v_min && c.v_max && !(*c.v_min < *c.v_max)) throw ConfigError(source + ": bands.v_min must be below v_max");

  NegotiationConfig& n = c.negotiation;
  n.epsilon = get_number<double>(tree, "negotiation.epsilon", n.epsilon);
  n.eta = get_number<double>(tree, "negotiation.eta", n.eta);
  n.tol_p = get_number<double>(tree, "negotiation.tol_p", n.tol_p);
  n.tol_lambda = get_number<double>(tree, "negotiation.tol_lambda", n.tol_lambda);
  n.max_iter = get_number<int>(tree, "negotiation.max_iter", n.max_iter);
  if (tree.get_optional<std::string>("negotiation.initial_price")) {
    n.initial_price = get_number<double>(tree, "negotiation.initial_price", 0.0);
  }
  const std::string ledger = trim(tree.get<std::string>("negotiation.ledger_mode", "unit_rate"));
  if (ledger == "unit_rate") {
    n.ledger_mode = LedgerMode::UnitRate;
  } else if (ledger == "accumulated") {
    n.ledger_mode = LedgerMode::Accumulated;
  } else {
    throw ConfigError(source + ": ledger_mode must be unit_rate or accumulated");
  }
  if (auto r = tree.get_optional<std::string>("negotiation.relinearize")) {
    n.relinearize = parse_bool(*r, "negotiation.relinearize");
  }
  const std::string universal = trim(tree.get<std::string>("negotiation.universal_cost", "exact"));
  if (universal == "exact") {
    n.universal_cost = UniversalCostModel::Exact;
  } else if (universal == "linearized") {
    n.universal_cost = UniversalCostModel::Linearized;
  } else {
    throw ConfigError(source + ": universal_cost must be exact or linearized");
  }
  const std::string flow = trim(tree.get<std::string>("negotiation.flow_model", "branch"));
  if (flow == "branch") {
    n.power_flow.flow_model = FlowModel::BranchFlow;
  } else if (flow == "node_voltage") {
    n.power_flow.flow_model = FlowModel::NodeVoltageForm;
  } else {
    throw ConfigError(source + ": flow_model must be branch or node_voltage");
  }
  if (!(n.epsilon > 0) || !(n.eta > 0 && n.eta <= 1) || n.max_iter < 1 || !(n.tol_p > 0) || !(n.tol_lambda > 0)) {
    throw ConfigError(source + ": negotiation parameters out of range");
  }
  return c;
}

ScenarioConfig load_scenario_config(const std::string& path) {
  const std::string dir = fs::path(path).parent_path().string();
  return parse_scenario_config(read_text_file(path), path, dir.empty() ? "." : dir);
}

void validate(const ScenarioConfig& config) {
  if (config.policies.empty()) throw ConfigError("scenario has no policies to run");
  for (const auto* path : {&config.network_path, &config.peers_path}) {
    if (path->empty()) throw ConfigError("scenario needs both a network and a peer file");
    if (!fs::is_regular_file(*path)) throw ConfigError("input file not found: " + *path);
  }
}

const PolicyRun* ScenarioResult::find(Policy policy) const {
  for (const auto& r : runs) {
    if (r.policy == policy) return &r;
  }
  return nullptr;
}

double average_voltage_margin(const RadialNetwork<double>& net, const GridState<double>& state) {
  double sum = 0;
  for (Index n = 0; n < net.num_nodes(); ++n) {
    const double mag = std::abs(state.voltages(n));
    sum += std::min(mag - net.node(n).v_min, net.node(n).v_max - mag);
  }
  return sum / static_cast<double>(net.num_nodes());
}

double average_line_loading_margin(const RadialNetwork<double>& net, const GridState<double>& state) {
  double sum = 0;
  int count = 0;
  for (Index l = 0; l < net.num_lines(); ++l) {
    const double limit = net.line(l).s_max;
    if (!std::isfinite(limit)) continue;
    sum += (1 - std::abs(state.line_flows(l)) / limit) * 100;
    ++count;
  }
  return count == 0 ? kNaN : sum / count;
}

ScenarioResult run_scenarios(const ScenarioConfig& config) {
  validate(config);
  RadialNetwork<double> net = with_bands(load_network(config.network_path), config.v_min, config.v_max);
  PeerSet peers = load_peers(config.peers_path);
  peers.check_placement(net.num_nodes());

  ScenarioResult out{config, net, peers, solve_power_flow(net, net.base_injection(), config.negotiation.power_flow),
                     {}, std::nullopt, content_hash(config.source_text + '\x1f' + read_text_file(config.network_path) +
                                                    '\x1f' + read_text_file(config.peers_path))};

  std::vector<std::future<PolicyRun>> jobs;
  for (Policy policy : config.policies) {
    jobs.push_back(std::async(std::launch::async, [&, policy] { return run_policy(net, peers, config, policy); }));
  }
  for (auto& job : jobs) out.runs.push_back(job.get());

  const PolicyRun* uni = out.find(Policy::Universal);
  const PolicyRun* cau = out.find(Policy::Causal);
  if (uni && cau && uni->result && cau->result) {
    PropositionInputs in;
    in.peers = &out.peers;
    in.unit_rates = cau->result->unit_rates.total();
    in.universal = &*uni->result;
    in.causal = &*cau->result;
    in.optimum = social_optimum(out.peers, in.unit_rates);
    try {
      in.colocation_gap = colocation_gap(out.peers, config.costs, config.negotiation);
    } catch (const Error&) {
      in.colocation_gap = kNaN;
    }
    out.propositions = verify_propositions(in);
  }
  return out;
}

std::string table_file_name(TableKind kind) {
  switch (kind) {
    case TableKind::Summary:
      return "summary.csv";
    case TableKind::Volumes:
      return "peer_volumes.csv";
    case TableKind::UnitCosts:
      return "peer_unit_costs.csv";
    case TableKind::NodeVoltages:
      return "node_voltages.csv";
    case TableKind::LineLoading:
      return "line_loading.csv";
    case TableKind::Propositions:
      return "propositions.csv";
  }
  return "table.csv";
}

std::string render_table(const ScenarioResult& r, TableKind kind) {
  const PeerSet& peers = r.peers;
  const double base = r.net.base().power_mva;
  switch (kind) {
    case TableKind::Summary: {
      TextTable t({"policy", "converged", "iterations", "total_volume_mwh", "social_welfare_usd", "system_loss_mwh",
                   "avg_voltage_margin_pu", "avg_line_loading_margin_pct", "violated_nodes", "violated_lines"});
      for (const auto& run : r.runs) {
        const int iterations = run.result ? run.result->state.tau : static_cast<int>(run.history.size());
        t.add_row({to_string(run.policy), run.converged ? "yes" : (run.error.empty() ? "no" : "diverged"),
                   std::to_string(iterations), format_number(run.total_volume), format_number(run.welfare),
                   format_number(run.loss_mwh), format_number(run.avg_voltage_margin),
                   format_number(run.avg_line_loading_margin), std::to_string(run.violated_nodes),
                   std::to_string(run.violated_lines)});
      }
      return t.str();
    }
    case TableKind::Volumes: {
      const PolicyRun* base_run = r.find(Policy::Base);
      std::vector<std::string> header{"peer_id", "role", "node"};
      for (const auto& run : r.runs) header.push_back("volume_" + to_string(run.policy));
      if (base_run) {
        for (const auto& run : r.runs) {
          if (run.policy != Policy::Base) header.push_back("diff_" + to_string(run.policy));
        }
      }
      TextTable t(std::move(header));
      for (Index k = 0; k < peers.size(); ++k) {
        std::vector<std::string> row{peers.id(k), role_name(peers, k), std::to_string(peers.node(k))};
        auto volume = [k](const PolicyRun& run) { return run.result ? run.result->volumes()(k) : kNaN; };
        for (const auto& run : r.runs) row.push_back(format_number(volume(run)));
        if (base_run) {
          for (const auto& run : r.runs) {
            if (run.policy != Policy::Base) row.push_back(format_number(volume(run) - volume(*base_run)));
          }
        }
        t.add_row(std::move(row));
      }
      return t.str();
    }
    case TableKind::UnitCosts: {
      std::vector<std::string> header{"peer_id", "role", "node"};
      for (const auto& run : r.runs) {
        for (const char* part : {"voltage", "congestion", "loss", "total"}) {
          header.push_back(std::string(part) + "_" + to_string(run.policy));
        }
      }
      TextTable t(std::move(header));
      for (Index k = 0; k < peers.size(); ++k) {
        std::vector<std::string> row{peers.id(k), role_name(peers, k), std::to_string(peers.node(k))};
        for (const auto& run : r.runs) {
          if (!run.result) {
            row.insert(row.end(), 4, format_number(kNaN));
            continue;
          }
          const UnitRates& u = run.result->unit_rates;
          row.push_back(format_number(u.voltage(k)));
          row.push_back(format_number(u.congestion(k)));
          row.push_back(format_number(u.loss(k)));
          row.push_back(format_number(u.voltage(k) + u.congestion(k) + u.loss(k)));
        }
        t.add_row(std::move(row));
      }
      return t.str();
    }
    case TableKind::NodeVoltages: {
      std::vector<std::string> header{"node", "v_min", "v_max", "v_no_trade"};
      for (const auto& run : r.runs) header.push_back("v_" + to_string(run.policy));
      TextTable t(std::move(header));
      for (Index n = 0; n < r.net.num_nodes(); ++n) {
        std::vector<std::string> row{std::to_string(n), format_number(r.net.node(n).v_min),
                                     format_number(r.net.node(n).v_max),
                                     format_number(std::abs(r.initial_grid.voltages(n)))};
        for (const auto& run : r.runs) {
          row.push_back(format_number(run.result ? std::abs(run.result->grid.voltages(n)) : kNaN));
        }
        t.add_row(std::move(row));
      }
      return t.str();
    }
    case TableKind::LineLoading: {
      std::vector<std::string> header{"line", "from", "to", "s_max_mva", "loading_no_trade_pct"};
      for (const auto& run : r.runs) header.push_back("loading_" + to_string(run.policy) + "_pct");
      TextTable t(std::move(header));
      for (Index l = 0; l < r.net.num_lines(); ++l) {
        const auto& line = r.net.line(l);
        auto loading = [&](const GridState<double>& g) { return std::abs(g.line_flows(l)) / line.s_max * 100; };
        std::vector<std::string> row{std::to_string(l), std::to_string(line.from), std::to_string(line.to),
                                     format_number(line.s_max * base), format_number(loading(r.initial_grid))};
        for (const auto& run : r.runs) row.push_back(format_number(run.result ? loading(run.result->grid) : kNaN));
        t.add_row(std::move(row));
      }
      return t.str();
    }
    case TableKind::Propositions: {
      TextTable t({"quantity", "value"});
      if (!r.propositions) {
        t.add_row({"status", "skipped (needs converged universal and causal runs)"});
        return t.str();
      }
      const PropositionReport& p = *r.propositions;
      t.add_row({"welfare_optimum_usd", format_number(p.welfare_optimum)});
      t.add_row({"welfare_universal_usd", format_number(p.welfare_universal)});
      t.add_row({"welfare_causal_usd", format_number(p.welfare_causal)});
      t.add_row({"universal_gap_rel", format_number(p.universal_gap)});
      t.add_row({"universal_bounded", p.universal_bounded ? "yes" : "no"});
      t.add_row({"universal_avg_marginal_residual", format_number(p.universal_average_marginal_residual)});
      t.add_row({"causal_gap_rel", format_number(p.causal_gap)});
      t.add_row({"causal_max_first_order_residual", format_number(p.causal_max_first_order_residual)});
      t.add_row({"colocation_gap_rel", format_number(p.colocation_gap)});
      t.add_row({"status", p.ok() ? "ok" : "violated"});
      for (const auto& v : p.violations) t.add_row({"violation", v});
      return t.str();
    }
  }
  return {};
}

std::string export_table(const ScenarioResult& result, TableKind kind, const std::string& dir) {
  const std::string path = (fs::path(dir) / table_file_name(kind)).string();
  write_text_file(path, render_table(result, kind));
  return path;
}

std::vector<std::string> write_outputs(const ScenarioResult& result) {
  const std::string& dir = result.config.output_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir, "cannot create output directory: " + ec.message());

  std::vector<std::string> files;
  for (TableKind kind : {TableKind::Summary, TableKind::Volumes, TableKind::UnitCosts, TableKind::NodeVoltages,
                         TableKind::LineLoading, TableKind::Propositions}) {
    files.push_back(export_table(result, kind, dir));
  }
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  for (const auto& run : result.runs) {
    const bool write_trace = result.config.trace || !run.error.empty();
    std::string trace_name;
    if (write_trace) {
      trace_name = "trace_" + to_string(run.policy) + ".csv";
      const std::string path = (fs::path(dir) / trace_name).string();
      write_text_file(path, trace_csv(result.peers, run));
      files.push_back(path);
    }
    nlohmann::ordered_json entry;
    entry["policy"] = to_string(run.policy);
    entry["converged"] = run.converged;
    entry["iterations"] = run.result ? run.result->state.tau : static_cast<int>(run.history.size());
    entry["step_halvings"] = run.result ? run.result->step_halvings : -1;
    entry["final_epsilon"] = run.result ? run.result->state.epsilon : kNaN;
    entry["error"] = run.error;
    entry["trace"] = trace_name;
    runs.push_back(std::move(entry));
  }

  nlohmann::ordered_json manifest;
  manifest["tool"] = "p2pgrid";
  manifest["version"] = kVersion;
  manifest["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION);
  manifest["scenario"] = result.config.scenario_id;
  manifest["config_hash"] = result.config_hash;
  manifest["seed"] = result.config.seed;
  manifest["policies"] = policy_list(result);
  manifest["runs"] = std::move(runs);
  manifest["propositions_ok"] = result.propositions ? nlohmann::ordered_json(result.propositions->ok()) : nullptr;
  nlohmann::ordered_json names = nlohmann::ordered_json::array();
  for (const auto& f : files) names.push_back(fs::path(f).filename().string());
  manifest["files"] = std::move(names);
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  write_text_file(manifest_path, manifest.dump(2) + "\n");
  files.push_back(manifest_path);
  return files;
}

std::string content_hash(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace p2pgrid
