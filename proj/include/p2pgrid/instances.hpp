#pragma once

// Seeded random radial feeders and peer markets for property checks.

#include <cstdint>
#include <random>

#include "p2pgrid/market.hpp"
#include "p2pgrid/network.hpp"

namespace p2pgrid {

struct FeederOptions {
  Index min_nodes{2};  // including the slack bus
  Index max_nodes{33};
  double r_min{0.002}, r_max{0.01};  // p.u.
  double x_min{0.002}, x_max{0.01};
  /// Total active load in p.u.; split randomly over the non-slack nodes.
  double total_load{0.3};
  double power_factor_q{0.5};  // q = power_factor_q * p
};

struct MarketOptions {
  Index min_sellers{2}, max_sellers{4};
  Index min_buyers{2}, max_buyers{5};
  double seller_alpha_min{0.5}, seller_alpha_max{2.0};
  double seller_beta_min{10}, seller_beta_max{30};
  double buyer_alpha_min{0.5}, buyer_alpha_max{2.0};
  double buyer_beta_min{40}, buyer_beta_max{80};
  double seller_p_max_min{1}, seller_p_max_max{3};
  double buyer_p_max_min{0.5}, buyer_p_max_max{2};
};

/// Random tree: every node attaches to a uniformly chosen earlier node.
RadialNetwork<double> random_feeder(std::mt19937_64& rng, const FeederOptions& options = {});

/// Peers placed uniformly on the non-slack nodes of a feeder with `num_nodes` nodes.
PeerSet random_peers(std::mt19937_64& rng, Index num_nodes, const MarketOptions& options = {});

struct MarketInstance {
  RadialNetwork<double> net;
  PeerSet peers;
};

MarketInstance random_market(std::uint64_t seed, const FeederOptions& feeder = {}, const MarketOptions& market = {});

}  // namespace p2pgrid
