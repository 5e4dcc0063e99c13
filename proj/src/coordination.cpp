#include "p2pgrid/coordination.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <sstream>

namespace p2pgrid {

std::string to_string(Policy policy) {
  switch (policy) {
    case Policy::Base:
      return "base";
    case Policy::Universal:
      return "universal";
    case Policy::Causal:
      return "causal";
  }
  return "unknown";
}

Policy parse_policy(const std::string& name) {
  if (name == "base") return Policy::Base;
  if (name == "universal") return Policy::Universal;
  if (name == "causal") return Policy::Causal;
  throw ConfigError("unknown policy '" + name + "' (expected base, universal or causal)");
}

double best_response(const SellingPeer& peer, double price, double unit_rate) {
  const double p = (price - peer.beta - unit_rate) / (2 * peer.alpha);
  return std::clamp(p, peer.p_min, peer.p_max);
}

double best_response(const BuyingPeer& peer, double price, double unit_rate) {
  const double marginal_cost = price + unit_rate;
  if (marginal_cost < 0) return peer.p_max;  // utility never decreases
  const double p = (peer.beta - marginal_cost) / (2 * peer.alpha);
  return std::clamp(p, peer.p_min, peer.p_max);
}

VectorXd price_update(const VectorXd& prices, const VectorXd& attributed_demand, const VectorXd& seller_volumes,
                      double epsilon) {
  return (prices + epsilon * (attributed_demand - seller_volumes)).cwiseMax(0.0);
}

Ledgers ledger_update(const Ledgers& ledgers, const PeerSet& peers, const VectorXd& volumes,
                      const CausalFactors<double>& factors, const Activation<double>& act, const CostSchedule& sched,
                      double eta, LedgerMode mode) {
  const UnitRates step = causal_unit_rates(peers, factors, act, sched);
  Ledgers next;
  if (mode == LedgerMode::UnitRate) {
    next.voltage = (ledgers.voltage + eta * step.voltage).cwiseMax(0.0);
    next.congestion = (ledgers.congestion + eta * step.congestion).cwiseMax(0.0);
    next.loss = step.loss;
  } else {
    next.voltage = (ledgers.voltage + step.voltage.cwiseProduct(volumes)).cwiseMax(0.0);
    next.congestion = (ledgers.congestion + step.congestion.cwiseProduct(volumes)).cwiseMax(0.0);
    next.loss = (ledgers.loss + step.loss.cwiseProduct(volumes)).cwiseMax(0.0);
  }
  return next;
}

namespace {

// Floor on the volume a dollar ledger is spread over when converted to a rate.
constexpr double kAccumulatedVolumeFloor = 1e-3;

UnitRates ledger_rates(const Ledgers& ledgers, const VectorXd& volumes, LedgerMode mode) {
  if (mode == LedgerMode::UnitRate) return {ledgers.voltage, ledgers.congestion, ledgers.loss};
  const VectorXd scale = volumes.cwiseMax(kAccumulatedVolumeFloor).cwiseInverse();
  return {ledgers.voltage.cwiseProduct(scale), ledgers.congestion.cwiseProduct(scale),
          ledgers.loss.cwiseProduct(scale)};
}

double max_abs_diff(const VectorXd& a, const VectorXd& b) {
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

Injection<double> traded_injection(const RadialNetwork<double>& net, const Injection<double>& base,
                                   const PeerSet& peers, const VectorXd& volumes) {
  const VectorXd delta = peer_injections_pu(peers, volumes, net.num_nodes(), net.base().power_mva);
  Injection<double> s = base;
  for (Index n = 1; n < net.num_nodes(); ++n) s(n) += delta(n);
  return s;
}

// Total volume swings back and forth with non-shrinking spread.
class OscillationGuard {
 public:
  OscillationGuard(int window, double threshold) : window_(window), threshold_(threshold) {}

  bool observe(double total_volume) {
    samples_.push_back(total_volume);
    if (static_cast<int>(samples_.size()) > window_ + 1) samples_.pop_front();
    if (++count_ % window_ != 0 || static_cast<int>(samples_.size()) <= window_) return false;
    const double mean = std::accumulate(samples_.begin(), samples_.end(), 0.0) / static_cast<double>(samples_.size());
    double var = 0;
    for (double x : samples_) var += (x - mean) * (x - mean);
    var /= static_cast<double>(samples_.size());
    // Sign changes between consecutive nonzero steps; flat steps are skipped
    // so a stair-step cycle (0, 5, 5, 0, ...) still counts.
    int steps = 0, flips = 0;
    double last = 0;
    for (std::size_t i = 1; i < samples_.size(); ++i) {
      const double d = samples_[i] - samples_[i - 1];
      if (std::abs(d) <= 1e-12) continue;
      if (last * d < 0) ++flips;
      last = d;
      ++steps;
    }
    const bool oscillating =
        var > threshold_ && steps >= window_ / 4 && 2 * flips >= steps && var >= 0.9 * previous_var_;
    previous_var_ = var;
    return oscillating;
  }

 private:
  int window_;
  double threshold_;
  long count_{0};
  double previous_var_{0};
  std::deque<double> samples_;
};

}  // namespace

VectorXd effective_unit_rates(const Ledgers& ledgers, const VectorXd& volumes, LedgerMode mode) {
  return ledger_rates(ledgers, volumes, mode).total();
}

double default_initial_price(const PeerSet& peers) {
  double seller = 0;
  for (const auto& s : peers.sellers()) seller += s.beta;
  double buyer = 0;
  for (const auto& b : peers.buyers()) buyer += b.beta;
  seller /= std::max<Index>(1, peers.num_sellers());
  buyer /= std::max<Index>(1, peers.num_buyers());
  return std::max(0.0, 0.5 * (seller + buyer));
}

NegotiationResult run_negotiation(const RadialNetwork<double>& net, const PeerSet& peers, const CostSchedule& sched,
                                  Policy policy, const NegotiationConfig& config) {
  if (!(config.epsilon > 0)) throw ConfigError("epsilon must be positive");
  if (!(config.eta > 0 && config.eta <= 1)) throw ConfigError("eta must lie in (0, 1]");
  if (peers.num_sellers() == 0 || peers.num_buyers() == 0) throw ConfigError("market needs sellers and buyers");
  peers.check_placement(net.num_nodes());

  const Index ns = peers.num_sellers();
  const Index k_total = peers.size();
  const double base_mva = net.base().power_mva;
  PowerFlowOptions pf = config.power_flow;

  NegotiationResult result;
  result.policy = policy;
  const Injection<double> s0 = net.base_injection();
  result.initial_grid = solve_power_flow(net, s0, pf);
  CausalFactors<double> factors = build_sensitivity_table(net, result.initial_grid).factors;
  const Activation<double> initial_act = activation(result.initial_grid, net, sched);

  NegotiationState& st = result.state;
  st.epsilon = config.epsilon;
  st.eta = config.eta;
  st.ledgers = Ledgers::zeros(k_total);
  if (policy == Policy::Causal && config.ledger_mode == LedgerMode::UnitRate) {
    // Loss rates are published before trading starts.
    st.ledgers.loss = causal_unit_rates(peers, factors, initial_act, sched).loss;
  }
  VectorXd volumes = VectorXd::Zero(k_total);
  VectorXd prices = VectorXd::Constant(ns, config.initial_price.value_or(default_initial_price(peers)));

  GridState<double> grid = result.initial_grid;
  Activation<double> act = initial_act;
  OscillationGuard guard(config.oscillation_window, config.oscillation_threshold);

  for (st.tau = 1; st.tau <= config.max_iter; ++st.tau) {
    const VectorXd rates = policy == Policy::Base ? VectorXd::Zero(k_total)
                                                  : effective_unit_rates(st.ledgers, volumes, config.ledger_mode);
    // Sellers share one price path (see price attribution below); buyers face its mean.
    const double buyer_price = prices.mean();
    VectorXd next(k_total);
    for (Index i = 0; i < ns; ++i) next(i) = best_response(peers.seller(i), prices(i), rates(i));
    for (Index j = 0; j < peers.num_buyers(); ++j) {
      next(ns + j) = best_response(peers.buyer(j), buyer_price, rates(ns + j));
    }

    // Residual demand facing seller i: total demand minus its competitors' supply.
    const double demand = peers.demand(next);
    const double supply = peers.supply(volumes);
    const VectorXd seller_prev = volumes.head(ns);
    const VectorXd attributed = (VectorXd::Constant(ns, demand - supply) + seller_prev).eval();
    const VectorXd next_prices = price_update(prices, attributed, seller_prev, st.epsilon);

    grid = solve_power_flow(net, traded_injection(net, s0, peers, next), pf, grid.voltages);
    act = activation(grid, net, sched);
    if (config.relinearize && policy != Policy::Base) factors = build_sensitivity_table(net, grid).factors;

    Ledgers next_ledgers = st.ledgers;
    if (policy == Policy::Causal) {
      next_ledgers = ledger_update(st.ledgers, peers, next, factors, act, sched, st.eta, config.ledger_mode);
    } else if (policy == Policy::Universal) {
      const NetworkCost cost = config.universal_cost == UniversalCostModel::Exact
                                   ? exact_network_cost(net, result.initial_grid, grid, act, sched)
                                   : linearized_network_cost(peers, next, factors, act, sched, base_mva);
      const double total_volume = next.sum();
      const auto uniform = [k_total](double x) { return VectorXd::Constant(k_total, x); };
      // No volume, no new information: every rate holds.
      if (total_volume > 0) {
        next_ledgers.voltage = (st.ledgers.voltage + uniform(st.eta * cost.voltage / total_volume)).cwiseMax(0.0);
        next_ledgers.congestion =
            (st.ledgers.congestion + uniform(st.eta * cost.congestion / total_volume)).cwiseMax(0.0);
        // Damped toward the average loss cost; the undamped map can cycle when
        // only high-loss trades survive a high rate.
        const double loss_target = std::max(0.0, cost.loss / total_volume);
        next_ledgers.loss = st.ledgers.loss + st.eta * (uniform(loss_target) - st.ledgers.loss);
      }
    }

    const double dp = max_abs_diff(next, volumes);
    const double dlambda = max_abs_diff(next_prices, prices);
    const double dledger = std::max({max_abs_diff(next_ledgers.voltage, st.ledgers.voltage),
                                     max_abs_diff(next_ledgers.congestion, st.ledgers.congestion),
                                     max_abs_diff(next_ledgers.loss, st.ledgers.loss)});

    if (config.record_history) {
      IterationRecord rec;
      rec.tau = st.tau;
      rec.volumes = next;
      rec.prices = next_prices;
      rec.ledgers = next_ledgers;
      rec.loss_mwh = grid.loss * base_mva;
      rec.welfare = market_surplus(peers, next) - sched.loss * (grid.loss - result.initial_grid.loss) * base_mva;
      rec.violations = act.violations();
      st.history.push_back(std::move(rec));
    }

    volumes = next;
    prices = next_prices;
    st.ledgers = next_ledgers;

    if (dp <= config.tol_p && dlambda <= config.tol_lambda && dledger <= config.tol_lambda) {
      result.converged = true;
      break;
    }
    if (guard.observe(peers.supply(volumes))) {
      if (++result.step_halvings > config.max_step_halvings) {
        std::ostringstream msg;
        msg << to_string(policy) << " negotiation oscillates after " << config.max_step_halvings
            << " step halvings (epsilon " << st.epsilon << ", iteration " << st.tau << ")";
        throw NegotiationDivergence(msg.str(), st.history);
      }
      st.epsilon *= 0.5;
    }
  }
  st.tau = std::min(st.tau, config.max_iter);

  st.trade.net = volumes;
  st.trade.prices = prices;
  st.trade.bilateral = pro_rata_bilateral(peers, volumes);
  result.grid = grid;
  result.activation = act;
  result.factors = factors;
  result.unit_rates = policy == Policy::Base ? UnitRates{VectorXd::Zero(k_total), VectorXd::Zero(k_total),
                                                         VectorXd::Zero(k_total)}
                                             : ledger_rates(st.ledgers, volumes, config.ledger_mode);
  return result;
}

double linearized_welfare(const PeerSet& peers, const VectorXd& volumes, const VectorXd& unit_rates) {
  return market_surplus(peers, volumes) - unit_rates.dot(volumes);
}

namespace {

struct BalancedBox {
  VectorXd lo, hi, a;  // a = +1 sellers, -1 buyers
};

// Euclidean projection onto {lo <= p <= hi, a.p = 0}: p = clamp(y - mu a).
// Returns mu.
double project_balanced(const BalancedBox& box, const VectorXd& y, VectorXd& out) {
  auto evaluate = [&](double mu) {
    out = (y - mu * box.a).cwiseMax(box.lo).cwiseMin(box.hi);
    return box.a.dot(out);
  };
  const double span = y.cwiseAbs().maxCoeff() + box.hi.cwiseAbs().maxCoeff() + box.lo.cwiseAbs().maxCoeff() + 1;
  double lo = -span;
  double hi = span;
  for (int it = 0; it < 200 && hi - lo > 0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    (evaluate(mid) > 0 ? lo : hi) = mid;
  }
  const double mu = 0.5 * (lo + hi);
  evaluate(mu);
  return mu;
}

}  // namespace

SocialOptimum social_optimum(const PeerSet& peers, const VectorXd& unit_rates, const OptimumOptions& options) {
  const Index ns = peers.num_sellers();
  const Index k_total = peers.size();
  if (unit_rates.size() != k_total) throw Error("unit rate vector size does not match the peer set");
  BalancedBox box{VectorXd(k_total), VectorXd(k_total), VectorXd(k_total)};
  double lipschitz = 0;
  for (Index k = 0; k < k_total; ++k) {
    box.lo(k) = peers.p_min(k);
    box.hi(k) = peers.p_max(k);
    box.a(k) = peers.injection_sign(k);
    const double alpha = k < ns ? peers.seller(k).alpha : peers.buyer(k - ns).alpha;
    lipschitz = std::max(lipschitz, 2 * alpha);
  }
  const double supply_lo = box.lo.head(ns).sum();
  const double supply_hi = box.hi.head(ns).sum();
  const double demand_lo = box.lo.tail(k_total - ns).sum();
  const double demand_hi = box.hi.tail(k_total - ns).sum();
  if (supply_lo > demand_hi || demand_lo > supply_hi) throw Error("volume bounds admit no balanced trade");

  auto gradient = [&](const VectorXd& p) {
    VectorXd g(k_total);
    for (Index i = 0; i < ns; ++i) g(i) = -seller_marginal_cost(peers.seller(i), p(i)) - unit_rates(i);
    for (Index j = 0; j < k_total - ns; ++j) g(ns + j) = buyer_marginal_utility(peers.buyer(j), p(ns + j)) - unit_rates(ns + j);
    return g;
  };

  const double step = 1.0 / lipschitz;
  VectorXd p;
  project_balanced(box, 0.5 * (box.lo + box.hi), p);
  SocialOptimum out;
  VectorXd next;
  double mu = 0;
  std::vector<double> trace;
  for (out.iterations = 1; out.iterations <= options.max_iterations; ++out.iterations) {
    mu = project_balanced(box, p + step * gradient(p), next);
    out.projected_gradient_norm = lipschitz * (next - p).cwiseAbs().maxCoeff();
    p.swap(next);
    if (out.projected_gradient_norm <= options.tolerance) break;
    if (out.iterations % 100000 == 0) trace.push_back(out.projected_gradient_norm);
  }
  if (out.projected_gradient_norm > options.tolerance) {
    std::ostringstream msg;
    msg << "social optimum did not converge; projected-gradient norm trace:";
    for (double g : trace) msg << ' ' << g;
    throw Error(msg.str());
  }
  out.volumes = p;
  out.welfare = linearized_welfare(peers, p, unit_rates);
  out.clearing_price = -mu * lipschitz;
  return out;
}

SocialOptimum social_optimum(const RadialNetwork<double>& net, const PeerSet& peers, const CostSchedule& sched,
                             const CausalFactors<double>& factors, const OptimumOptions& options) {
  const GridState<double> initial = solve_power_flow(net, net.base_injection());
  const Activation<double> act = activation(initial, net, sched);
  return social_optimum(peers, causal_unit_rates(peers, factors, act, sched).total(), options);
}

VectorXd first_order_residuals(const PeerSet& peers, const NegotiationResult& run) {
  const Index ns = peers.num_sellers();
  const VectorXd& p = run.volumes();
  const VectorXd& prices = run.state.trade.prices;
  const VectorXd rates = run.unit_rates.total();
  VectorXd out(peers.size());
  for (Index k = 0; k < peers.size(); ++k) {
    const double width = peers.p_max(k) - peers.p_min(k);
    const double margin = 1e-9 * std::max(1.0, width);
    if (p(k) <= peers.p_min(k) + margin || p(k) >= peers.p_max(k) - margin) {
      out(k) = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    if (k < ns) {
      out(k) = std::abs(prices(k) - seller_marginal_cost(peers.seller(k), p(k)) - rates(k));
    } else {
      out(k) = std::abs(buyer_marginal_utility(peers.buyer(k - ns), p(k)) - prices.mean() - rates(k));
    }
  }
  return out;
}

PropositionReport verify_propositions(const PropositionInputs& in) {
  if (in.peers == nullptr || in.universal == nullptr || in.causal == nullptr) {
    throw Error("verify_propositions needs peers, a universal run and a causal run");
  }
  const PeerSet& peers = *in.peers;
  PropositionReport r;
  r.welfare_optimum = in.optimum.welfare;
  r.welfare_universal = linearized_welfare(peers, in.universal->volumes(), in.unit_rates);
  r.welfare_causal = linearized_welfare(peers, in.causal->volumes(), in.unit_rates);
  const double scale = std::abs(r.welfare_optimum);
  r.universal_gap = (r.welfare_optimum - r.welfare_universal) / scale;
  r.causal_gap = std::abs(r.welfare_causal - r.welfare_optimum) / scale;
  // A converged run still carries a supply/demand mismatch up to tol_p; the
  // optimum is exactly balanced, so allow the mismatch valued at the price.
  const VectorXd& pu_net = in.universal->volumes();
  const double imbalance_slack =
      std::abs(peers.supply(pu_net) - peers.demand(pu_net)) * std::abs(in.optimum.clearing_price);
  r.universal_bounded = r.welfare_universal <= r.welfare_optimum + 1e-6 * scale + imbalance_slack;

  const VectorXd& pu = in.universal->volumes();
  const double total = pu.sum();
  const double average = total > 0 ? in.unit_rates.dot(pu) / total : 0.0;
  r.universal_average_marginal_residual = (in.unit_rates.array() - average).abs().maxCoeff();

  const VectorXd fo = first_order_residuals(peers, *in.causal);
  r.causal_max_first_order_residual = 0;
  for (Index k = 0; k < fo.size(); ++k) {
    if (!std::isnan(fo(k))) r.causal_max_first_order_residual = std::max(r.causal_max_first_order_residual, fo(k));
  }
  r.colocation_gap = in.colocation_gap;

  if (!r.universal_bounded) r.violations.push_back("universal welfare exceeds the social optimum");
  if (!in.universal->converged) r.violations.push_back("universal run did not converge");
  if (!in.causal->converged) r.violations.push_back("causal run did not converge");
  if (r.causal_gap > in.causal_tolerance) r.violations.push_back("causal welfare differs from the social optimum");
  if (r.causal_max_first_order_residual > in.residual_tolerance) {
    r.violations.push_back("causal first-order residual above tolerance");
  }
  if (!std::isnan(r.colocation_gap) && std::abs(r.colocation_gap) > in.colocation_tolerance) {
    r.violations.push_back("co-location universal gap above tolerance");
  }
  return r;
}

double colocation_gap(const PeerSet& peers, const CostSchedule& sched, const NegotiationConfig& config) {
  std::vector<NodeData<double>> nodes(3);
  nodes[2].p_load = 0.1;
  nodes[2].q_load = 0.05;
  std::vector<LineData<double>> lines{{0, 1, 0.02, 0.02}, {1, 2, 0.02, 0.02}};
  const RadialNetwork<double> net(nodes, lines);

  std::vector<SellingPeer> sellers = peers.sellers();
  std::vector<BuyingPeer> buyers = peers.buyers();
  for (auto& s : sellers) s.node = 1;
  for (auto& b : buyers) b.node = 2;
  const PeerSet placed(std::move(sellers), std::move(buyers));

  CostSchedule loss_only;
  loss_only.loss = sched.loss;
  NegotiationConfig cfg = config;
  cfg.universal_cost = UniversalCostModel::Linearized;
  cfg.record_history = false;
  const NegotiationResult uni = run_negotiation(net, placed, loss_only, Policy::Universal, cfg);
  const VectorXd rates = causal_unit_rates(placed, uni.factors, activation(uni.initial_grid, net, loss_only), loss_only).total();
  const SocialOptimum opt = social_optimum(placed, rates);
  return (opt.welfare - linearized_welfare(placed, uni.volumes(), rates)) / std::abs(opt.welfare);
}

}  // namespace p2pgrid
