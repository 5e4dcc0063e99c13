#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "p2pgrid/market.hpp"
#include "p2pgrid/network.hpp"
#include "p2pgrid/powerflow.hpp"
#include "p2pgrid/sensitivity.hpp"

namespace p2pgrid {

enum class Policy { Base, Universal, Causal };

std::string to_string(Policy policy);
Policy parse_policy(const std::string& name);

/// How the voltage/congestion ledgers evolve between rounds.
enum class LedgerMode {
  /// Unit rates ($/MWh) raised by damped ascent while a violation persists;
  /// loss charged at the current linearized rate.
  UnitRate,
  /// Dollar ledgers accumulated round after round, projected at zero.
  Accumulated,
};

/// Which total network cost the universal policy spreads over the volume.
enum class UniversalCostModel { Exact, Linearized };

struct NegotiationConfig {
  double epsilon{0.05};
  double eta{0.5};
  double tol_p{1e-5};
  double tol_lambda{1e-5};
  int max_iter{5000};
  /// Starting price for every seller; defaults to the midpoint between the
  /// mean seller marginal cost and the mean buyer marginal utility at zero.
  std::optional<double> initial_price;
  LedgerMode ledger_mode{LedgerMode::UnitRate};
  /// Recompute the causal factors at every round's operating point instead of P^0.
  bool relinearize{false};
  UniversalCostModel universal_cost{UniversalCostModel::Exact};
  PowerFlowOptions power_flow{};
  int oscillation_window{50};
  double oscillation_threshold{1e-6};
  int max_step_halvings{3};
  bool record_history{true};
};

/// Per-peer VC, FC, LC. Unit rates in $/MWh under LedgerMode::UnitRate,
/// dollars under LedgerMode::Accumulated.
struct Ledgers {
  VectorXd voltage;
  VectorXd congestion;
  VectorXd loss;

  static Ledgers zeros(Index n) { return {VectorXd::Zero(n), VectorXd::Zero(n), VectorXd::Zero(n)}; }
};

struct IterationRecord {
  int tau{0};
  VectorXd volumes;
  VectorXd prices;
  Ledgers ledgers;
  double welfare{0};
  double loss_mwh{0};
  Index violations{0};
};

struct NegotiationState {
  int tau{0};
  TradeState trade;
  Ledgers ledgers;
  double epsilon{0.05};
  double eta{0.5};
  std::vector<IterationRecord> history;
};

struct NegotiationResult {
  Policy policy{Policy::Base};
  NegotiationState state;
  bool converged{false};
  int step_halvings{0};
  /// Operating point at the final volumes, and at P^0.
  GridState<double> grid;
  GridState<double> initial_grid;
  Activation<double> activation;
  /// Effective $/MWh charged to each peer in the last round, by cause.
  UnitRates unit_rates;
  /// Causal factors the run linearized around (P^0 unless relinearized).
  CausalFactors<double> factors;

  const VectorXd& volumes() const { return state.trade.net; }
};

/// Raised when the oscillation guard gives up; carries the trace so far.
class NegotiationDivergence : public Error {
 public:
  NegotiationDivergence(const std::string& what, std::vector<IterationRecord> history)
      : Error(what), history_(std::move(history)) {}
  const std::vector<IterationRecord>& history() const { return history_; }

 private:
  std::vector<IterationRecord> history_;
};

/// argmax_p lambda p - c(p) - rate p over [p_min, p_max].
double best_response(const SellingPeer& peer, double price, double unit_rate);
/// argmax_p h(p) - (lambda + rate) p over [p_min, p_max].
double best_response(const BuyingPeer& peer, double price, double unit_rate);

/// lambda_i <- [lambda_i + epsilon (demand attributed to i - seller volume)]^+.
VectorXd price_update(const VectorXd& prices, const VectorXd& attributed_demand, const VectorXd& seller_volumes,
                      double epsilon);

/// One causal ledger step after the round's volumes and activation are known.
Ledgers ledger_update(const Ledgers& ledgers, const PeerSet& peers, const VectorXd& volumes,
                      const CausalFactors<double>& factors, const Activation<double>& act, const CostSchedule& sched,
                      double eta, LedgerMode mode);

/// Per-peer $/MWh each peer sees in its best response.
VectorXd effective_unit_rates(const Ledgers& ledgers, const VectorXd& volumes, LedgerMode mode);

double default_initial_price(const PeerSet& peers);

NegotiationResult run_negotiation(const RadialNetwork<double>& net, const PeerSet& peers, const CostSchedule& sched,
                                  Policy policy, const NegotiationConfig& config = {});

/// Social welfare with linear per-peer network rates:
/// sum_j h_j(p_j) - sum_i c_i(p_i) - sum_k rate_k p_k.
double linearized_welfare(const PeerSet& peers, const VectorXd& volumes, const VectorXd& unit_rates);

struct SocialOptimum {
  VectorXd volumes;
  double welfare{0};
  /// Shadow price of the supply = demand constraint, $/MWh.
  double clearing_price{0};
  double projected_gradient_norm{0};
  int iterations{0};
};

struct OptimumOptions {
  double tolerance{1e-9};
  int max_iterations{2'000'000};
};

/// Maximizes linearized_welfare subject to supply = demand and the volume
/// bounds, by projected gradient ascent.
SocialOptimum social_optimum(const PeerSet& peers, const VectorXd& unit_rates, const OptimumOptions& options = {});

/// Same, with rates built from causal factors at P^0 and the activation there.
SocialOptimum social_optimum(const RadialNetwork<double>& net, const PeerSet& peers, const CostSchedule& sched,
                             const CausalFactors<double>& factors, const OptimumOptions& options = {});

/// |d(welfare)/dp_k - allocated marginal cost| for every peer strictly inside
/// its bounds at the run's final prices; NaN for peers at a bound.
VectorXd first_order_residuals(const PeerSet& peers, const NegotiationResult& run);

struct PropositionReport {
  double welfare_universal{0};
  double welfare_causal{0};
  double welfare_optimum{0};
  /// (W_opt - W_u) / |W_opt|.
  double universal_gap{0};
  /// |W_c - W_opt| / |W_opt|.
  double causal_gap{0};
  bool universal_bounded{false};
  /// max_k |r_k - C(P*u) / sum_t p_t|: marginal vs average network cost at the
  /// universal equilibrium, zero only in the co-location case.
  double universal_average_marginal_residual{0};
  double causal_max_first_order_residual{0};
  /// Gap on the co-location instance (NaN when not evaluated).
  double colocation_gap{0};
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

struct PropositionInputs {
  const PeerSet* peers{nullptr};
  /// Linear rates the welfare is measured with (the causal rates at P^0).
  VectorXd unit_rates;
  const NegotiationResult* universal{nullptr};
  const NegotiationResult* causal{nullptr};
  SocialOptimum optimum;
  double colocation_gap{std::numeric_limits<double>::quiet_NaN()};
  double causal_tolerance{5e-3};
  double colocation_tolerance{1e-3};
  double residual_tolerance{1e-4};
};

PropositionReport verify_propositions(const PropositionInputs& inputs);

/// Runs the universal policy with linearized costs and the social optimum on a
/// three-node feeder with every seller on one node and every buyer on the
/// other; returns (W_opt - W_u) / |W_opt|.
double colocation_gap(const PeerSet& peers, const CostSchedule& sched, const NegotiationConfig& config);

}  // namespace p2pgrid
