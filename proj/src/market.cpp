#include "p2pgrid/market.hpp"

#include <cmath>
#include <sstream>

#include "p2pgrid/errors.hpp"
#include "p2pgrid/text_table.hpp"

namespace p2pgrid {

namespace {

void check_domain(const std::string& id, double p, double lo, double hi) {
  // Tolerate round-off from clamped iterates.
  const double slack = 1e-12 * std::max(1.0, std::abs(hi));
  if (!(p >= lo - slack && p <= hi + slack)) {
    std::ostringstream msg;
    msg << "volume " << p << " of peer '" << id << "' outside [" << lo << ", " << hi << "]";
    throw DomainError(msg.str());
  }
}

double utility_unchecked(const BuyingPeer& peer, double p) {
  const double knee = buyer_knee(peer);
  if (p >= knee) return peer.beta * peer.beta / (4 * peer.alpha);
  return peer.beta * p - peer.alpha * p * p;
}

}  // namespace

double seller_cost(const SellingPeer& peer, double p) {
  check_domain(peer.id, p, peer.p_min, peer.p_max);
  return peer.alpha * p * p + peer.beta * p + peer.gamma;
}

double seller_marginal_cost(const SellingPeer& peer, double p) { return 2 * peer.alpha * p + peer.beta; }

double buyer_utility(const BuyingPeer& peer, double p) {
  check_domain(peer.id, p, peer.p_min, peer.p_max);
  return utility_unchecked(peer, p);
}

double buyer_marginal_utility(const BuyingPeer& peer, double p) {
  return p >= buyer_knee(peer) ? 0.0 : peer.beta - 2 * peer.alpha * p;
}

PeerSet::PeerSet(std::vector<SellingPeer> sellers, std::vector<BuyingPeer> buyers)
    : sellers_(std::move(sellers)), buyers_(std::move(buyers)) {
  for (const auto& s : sellers_) {
    if (!(s.alpha > 0)) throw DomainError("seller '" + s.id + "' needs alpha > 0");
    if (!(s.p_min >= 0 && s.p_min <= s.p_max)) throw DomainError("seller '" + s.id + "' has invalid bounds");
  }
  for (const auto& b : buyers_) {
    if (!(b.alpha > 0) || !(b.beta > 0)) throw DomainError("buyer '" + b.id + "' needs alpha > 0 and beta > 0");
    if (!(b.p_min >= 0 && b.p_min <= b.p_max)) throw DomainError("buyer '" + b.id + "' has invalid bounds");
  }
}

const std::string& PeerSet::id(Index k) const {
  return role(k) == PeerRole::Seller ? seller(k).id : buyer(k - num_sellers()).id;
}

Index PeerSet::node(Index k) const {
  return role(k) == PeerRole::Seller ? seller(k).node : buyer(k - num_sellers()).node;
}

double PeerSet::p_min(Index k) const {
  return role(k) == PeerRole::Seller ? seller(k).p_min : buyer(k - num_sellers()).p_min;
}

double PeerSet::p_max(Index k) const {
  return role(k) == PeerRole::Seller ? seller(k).p_max : buyer(k - num_sellers()).p_max;
}

void PeerSet::check_placement(Index num_nodes) const {
  for (Index k = 0; k < size(); ++k) {
    if (node(k) < 1 || node(k) >= num_nodes) {
      throw TopologyError("peer '" + id(k) + "' must sit on a non-slack node of the network");
    }
  }
}

PeerSet parse_peers(const std::string& text, const std::string& source) {
  std::vector<SellingPeer> sellers;
  std::vector<BuyingPeer> buyers;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = strip_comment(raw);
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 8) throw ParseError(source, line_no, "peer row needs 8 fields");
    const auto node = parse_index(f[2], source, line_no);
    const double alpha = parse_number(f[3], source, line_no);
    const double beta = parse_number(f[4], source, line_no);
    const double gamma = parse_number(f[5], source, line_no);
    const double p_min = parse_number(f[6], source, line_no);
    const double p_max = parse_number(f[7], source, line_no);
    if (f[1] == "sell") {
      sellers.push_back({f[0], node, alpha, beta, gamma, p_min, p_max});
    } else if (f[1] == "buy") {
      buyers.push_back({f[0], node, alpha, beta, p_min, p_max});
    } else {
      throw ParseError(source, line_no, "role must be 'sell' or 'buy'");
    }
  }
  return PeerSet(std::move(sellers), std::move(buyers));
}

PeerSet load_peers(const std::string& path) { return parse_peers(read_text_file(path), path); }

bool TradeState::consistent(const PeerSet& peers, double tol) const {
  const Index ns = peers.num_sellers();
  const Index nb = peers.num_buyers();
  if (bilateral.rows() != ns || bilateral.cols() != nb || net.size() != peers.size()) return false;
  if ((bilateral.array() < 0).any() || (net.array() < 0).any()) return false;
  for (Index i = 0; i < ns; ++i) {
    if (std::abs(bilateral.row(i).sum() - net(i)) > tol) return false;
  }
  for (Index j = 0; j < nb; ++j) {
    if (std::abs(bilateral.col(j).sum() - net(ns + j)) > tol) return false;
  }
  for (Index k = 0; k < peers.size(); ++k) {
    if (net(k) < peers.p_min(k) - tol || net(k) > peers.p_max(k) + tol) return false;
  }
  return true;
}

MatrixXd pro_rata_bilateral(const PeerSet& peers, const VectorXd& volumes) {
  const Index ns = peers.num_sellers();
  const Index nb = peers.num_buyers();
  MatrixXd out = MatrixXd::Zero(ns, nb);
  const double supply = peers.supply(volumes);
  if (supply <= 0) return out;
  for (Index i = 0; i < ns; ++i) {
    for (Index j = 0; j < nb; ++j) out(i, j) = volumes(ns + j) * volumes(i) / supply;
  }
  return out;
}

VectorXd peer_market_welfare(const TradeState& trade, const PeerSet& peers) {
  const Index ns = peers.num_sellers();
  VectorXd u(peers.size());
  for (Index i = 0; i < ns; ++i) {
    const double p = trade.net(i);
    u(i) = trade.prices(i) * p - seller_cost(peers.seller(i), p);
  }
  for (Index j = 0; j < peers.num_buyers(); ++j) {
    const auto& b = peers.buyer(j);
    check_domain(b.id, trade.net(ns + j), b.p_min, b.p_max);
    double w = 0;
    for (Index i = 0; i < ns; ++i) {
      const double pij = trade.bilateral(i, j);
      w += utility_unchecked(b, pij) - trade.prices(i) * pij;
    }
    u(ns + j) = w;
  }
  return u;
}

double market_surplus(const PeerSet& peers, const VectorXd& volumes) {
  double total = 0;
  for (Index i = 0; i < peers.num_sellers(); ++i) total -= seller_cost(peers.seller(i), volumes(i));
  for (Index j = 0; j < peers.num_buyers(); ++j) {
    total += buyer_utility(peers.buyer(j), volumes(peers.num_sellers() + j));
  }
  return total;
}

NetworkCost exact_network_cost(const RadialNetwork<double>& net, const GridState<double>& initial,
                               const GridState<double>& traded, const Activation<double>& act,
                               const CostSchedule& sched) {
  const double base = net.base().power_mva;
  NetworkCost cost;
  for (Index n = 0; n < net.num_nodes(); ++n) {
    if (act.voltage_rate(n) == 0) continue;
    const double change = std::abs(traded.voltages(n)) - std::abs(initial.voltages(n));
    cost.voltage += act.voltage_rate(n) * act.voltage_direction(n) * change * base;
  }
  for (Index l = 0; l < net.num_lines(); ++l) {
    if (act.flow_rate(l) == 0) continue;
    const double change = std::abs(traded.line_flows(l)) - std::abs(initial.line_flows(l));
    cost.congestion += act.flow_rate(l) * act.flow_direction(l) * change * base;
  }
  cost.loss = sched.loss * (traded.loss - initial.loss) * base;
  return cost;
}

VectorXd peer_injections_pu(const PeerSet& peers, const VectorXd& volumes, Index num_nodes, double base_power_mva) {
  VectorXd inj = VectorXd::Zero(num_nodes);
  for (Index k = 0; k < peers.size(); ++k) inj(peers.node(k)) += peers.injection_sign(k) * volumes(k) / base_power_mva;
  return inj;
}

NetworkCost linearized_network_cost(const PeerSet& peers, const VectorXd& volumes,
                                    const CausalFactors<double>& factors, const Activation<double>& act,
                                    const CostSchedule& sched, double base_power_mva) {
  const Index num_nodes = factors.phi.rows();
  const VectorXd inj = peer_injections_pu(peers, volumes, num_nodes, base_power_mva).tail(num_nodes - 1);
  NetworkCost cost;
  const VectorXd dv = factors.phi * inj;
  for (Index n = 0; n < num_nodes; ++n) {
    if (act.voltage_rate(n) != 0) cost.voltage += act.voltage_rate(n) * act.voltage_direction(n) * dv(n) * base_power_mva;
  }
  for (Index l = 0; l < factors.chi.rows(); ++l) {
    if (act.flow_rate(l) == 0) continue;
    if (!factors.chi_defined[static_cast<std::size_t>(l)]) {
      throw AllocationError("flow sensitivity of violated line " + std::to_string(l) + " is undefined (zero flow)");
    }
    cost.congestion += act.flow_rate(l) * act.flow_direction(l) * factors.chi.row(l).dot(inj) * base_power_mva;
  }
  cost.loss = sched.loss * 2 * factors.psi.dot(inj) * base_power_mva;
  return cost;
}

VectorXd allocate_universal(const VectorXd& volumes, const NetworkCost& total) {
  const double volume = volumes.sum();
  if (volume <= 0) return VectorXd::Zero(volumes.size());
  return volumes * (total.total() / volume);
}

UnitRates causal_unit_rates(const PeerSet& peers, const CausalFactors<double>& factors, const Activation<double>& act,
                            const CostSchedule& sched) {
  const Index k_total = peers.size();
  UnitRates rates{VectorXd::Zero(k_total), VectorXd::Zero(k_total), VectorXd::Zero(k_total)};
  const VectorXd v_weight = act.voltage_rate.cwiseProduct(act.voltage_direction);
  const VectorXd f_weight = act.flow_rate.cwiseProduct(act.flow_direction);
  for (Index k = 0; k < k_total; ++k) {
    const Index col = sensitivity_column(peers.node(k));
    const double sign = peers.injection_sign(k);
    rates.voltage(k) = sign * v_weight.dot(factors.phi.col(col));
    double flow = 0;
    for (Index l = 0; l < factors.chi.rows(); ++l) {
      if (f_weight(l) == 0) continue;
      if (!factors.chi_defined[static_cast<std::size_t>(l)]) {
        throw AllocationError("flow sensitivity of violated line " + std::to_string(l) + " is undefined (zero flow)");
      }
      flow += f_weight(l) * factors.chi(l, col);
    }
    rates.congestion(k) = sign * flow;
    rates.loss(k) = sign * 2 * sched.loss * factors.psi(col);
  }
  return rates;
}

CausalCharges allocate_causal(const PeerSet& peers, const VectorXd& volumes, const CausalFactors<double>& factors,
                              const Activation<double>& act, const CostSchedule& sched) {
  const auto rates = causal_unit_rates(peers, factors, act, sched);
  return {rates.voltage.cwiseProduct(volumes), rates.congestion.cwiseProduct(volumes),
          rates.loss.cwiseProduct(volumes)};
}

}  // namespace p2pgrid
