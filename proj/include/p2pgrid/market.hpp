#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "p2pgrid/network.hpp"
#include "p2pgrid/powerflow.hpp"
#include "p2pgrid/sensitivity.hpp"

namespace p2pgrid {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class PeerRole { Seller, Buyer };

/// c(p) = alpha p^2 + beta p + gamma, p in MWh, cost in $.
struct SellingPeer {
  std::string id;
  Index node{1};
  double alpha{1};
  double beta{0};
  double gamma{0};
  double p_min{0};
  double p_max{1};
};

/// h(p) = beta p - alpha p^2 up to the knee beta / (2 alpha), flat at
/// beta^2 / (4 alpha) beyond it.
struct BuyingPeer {
  std::string id;
  Index node{1};
  double alpha{1};
  double beta{1};
  double p_min{0};
  double p_max{1};
};

double seller_cost(const SellingPeer& peer, double p);
double seller_marginal_cost(const SellingPeer& peer, double p);
double buyer_utility(const BuyingPeer& peer, double p);
double buyer_marginal_utility(const BuyingPeer& peer, double p);
inline double buyer_knee(const BuyingPeer& peer) { return peer.beta / (2 * peer.alpha); }

/// All peers of one market. Global peer index k runs over sellers first, then
/// buyers. Selling volume is a positive injection at the peer's node, buying
/// volume a negative one.
class PeerSet {
 public:
  PeerSet() = default;
  PeerSet(std::vector<SellingPeer> sellers, std::vector<BuyingPeer> buyers);

  Index size() const { return num_sellers() + num_buyers(); }
  Index num_sellers() const { return static_cast<Index>(sellers_.size()); }
  Index num_buyers() const { return static_cast<Index>(buyers_.size()); }
  const std::vector<SellingPeer>& sellers() const { return sellers_; }
  const std::vector<BuyingPeer>& buyers() const { return buyers_; }
  const SellingPeer& seller(Index i) const { return sellers_.at(static_cast<std::size_t>(i)); }
  const BuyingPeer& buyer(Index j) const { return buyers_.at(static_cast<std::size_t>(j)); }

  PeerRole role(Index k) const { return k < num_sellers() ? PeerRole::Seller : PeerRole::Buyer; }
  const std::string& id(Index k) const;
  Index node(Index k) const;
  double p_min(Index k) const;
  double p_max(Index k) const;
  /// +1 for sellers, -1 for buyers.
  double injection_sign(Index k) const { return role(k) == PeerRole::Seller ? 1.0 : -1.0; }

  /// Throws TopologyError when a peer sits on the slack bus or outside the network.
  void check_placement(Index num_nodes) const;

  /// Total selling volume of a peer-volume vector.
  double supply(const VectorXd& volumes) const { return volumes.head(num_sellers()).sum(); }
  double demand(const VectorXd& volumes) const { return volumes.tail(num_buyers()).sum(); }

 private:
  std::vector<SellingPeer> sellers_;
  std::vector<BuyingPeer> buyers_;
};

/// Peer roster: id, role (sell|buy), node, alpha, beta, gamma, p_min, p_max.
PeerSet load_peers(const std::string& path);
PeerSet parse_peers(const std::string& text, const std::string& source = "<peers>");

/// Bilateral trades, per-peer volumes and seller prices.
struct TradeState {
  MatrixXd bilateral;  // sellers x buyers, MWh
  VectorXd net;        // per peer, MWh
  VectorXd prices;     // per seller, $/MWh

  /// Net volumes and bilateral sums agree within `tol` and nothing is negative.
  bool consistent(const PeerSet& peers, double tol = 1e-9) const;
};

/// Splits each buyer's volume across sellers in proportion to the sellers'
/// volumes. Bilateral sums match seller volumes exactly when supply = demand.
MatrixXd pro_rata_bilateral(const PeerSet& peers, const VectorXd& volumes);

/// Per-peer market welfare: sellers earn lambda_i p_i - c_i(p_i); buyers get
/// sum_i h(p_ij) - sum_i lambda_i p_ij over their bilateral purchases.
VectorXd peer_market_welfare(const TradeState& trade, const PeerSet& peers);

/// sum_j h_j(p_j) - sum_i c_i(p_i) over net volumes; payments cancel once the
/// market clears.
double market_surplus(const PeerSet& peers, const VectorXd& volumes);

/// Total network cost in $, split by cause.
struct NetworkCost {
  double voltage{0};
  double congestion{0};
  double loss{0};
  double total() const { return voltage + congestion + loss; }
};

/// Exact incremental network cost between the no-trade state and the traded
/// state, with dead-band activation evaluated at the traded state.
NetworkCost exact_network_cost(const RadialNetwork<double>& net, const GridState<double>& initial,
                               const GridState<double>& traded, const Activation<double>& act,
                               const CostSchedule& sched);

/// Node-level injection change (p.u.) caused by per-peer volumes (MWh over one hour).
VectorXd peer_injections_pu(const PeerSet& peers, const VectorXd& volumes, Index num_nodes, double base_power_mva);

/// First-order network cost predicted by the causal factors for the given
/// volumes, accumulated node by node.
NetworkCost linearized_network_cost(const PeerSet& peers, const VectorXd& volumes,
                                    const CausalFactors<double>& factors, const Activation<double>& act,
                                    const CostSchedule& sched, double base_power_mva);

/// Universal policy: every peer pays total_cost * p_k / sum_t p_t.
VectorXd allocate_universal(const VectorXd& volumes, const NetworkCost& total);

/// Per-peer unit network rates ($/MWh) of the causal policy. Signed: a peer
/// whose volume relieves a violated limit or reduces loss gets a credit.
struct UnitRates {
  VectorXd voltage;
  VectorXd congestion;
  VectorXd loss;
  VectorXd total() const { return voltage + congestion + loss; }
};

UnitRates causal_unit_rates(const PeerSet& peers, const CausalFactors<double>& factors, const Activation<double>& act,
                            const CostSchedule& sched);

/// Causal charges VC, FC, LC in $ (rates times volumes).
struct CausalCharges {
  VectorXd voltage;
  VectorXd congestion;
  VectorXd loss;
  VectorXd total() const { return voltage + congestion + loss; }
};

CausalCharges allocate_causal(const PeerSet& peers, const VectorXd& volumes, const CausalFactors<double>& factors,
                              const Activation<double>& act, const CostSchedule& sched);

}  // namespace p2pgrid
