#include "p2pgrid/instances.hpp"

#include <algorithm>
#include <string>

namespace p2pgrid {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Index uniform_index(std::mt19937_64& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

}  // namespace

RadialNetwork<double> random_feeder(std::mt19937_64& rng, const FeederOptions& options) {
  const Index n = uniform_index(rng, std::max<Index>(2, options.min_nodes), options.max_nodes);
  std::vector<NodeData<double>> nodes(static_cast<std::size_t>(n));
  std::vector<double> share(static_cast<std::size_t>(n), 0.0);
  double share_sum = 0;
  for (Index i = 1; i < n; ++i) share_sum += share[static_cast<std::size_t>(i)] = uniform(rng, 0.2, 1.0);
  for (Index i = 1; i < n; ++i) {
    auto& node = nodes[static_cast<std::size_t>(i)];
    node.p_load = options.total_load * share[static_cast<std::size_t>(i)] / share_sum;
    node.q_load = options.power_factor_q * node.p_load;
  }
  std::vector<LineData<double>> lines;
  for (Index i = 1; i < n; ++i) {
    LineData<double> line;
    line.from = uniform_index(rng, 0, i - 1);
    line.to = i;
    line.r = uniform(rng, options.r_min, options.r_max);
    line.x = uniform(rng, options.x_min, options.x_max);
    lines.push_back(line);
  }
  return RadialNetwork<double>(std::move(nodes), std::move(lines));
}

PeerSet random_peers(std::mt19937_64& rng, Index num_nodes, const MarketOptions& o) {
  const Index ns = uniform_index(rng, o.min_sellers, o.max_sellers);
  const Index nb = uniform_index(rng, o.min_buyers, o.max_buyers);
  std::vector<SellingPeer> sellers;
  for (Index i = 0; i < ns; ++i) {
    SellingPeer s;
    s.id = "S" + std::to_string(i + 1);
    s.node = uniform_index(rng, 1, num_nodes - 1);
    s.alpha = uniform(rng, o.seller_alpha_min, o.seller_alpha_max);
    s.beta = uniform(rng, o.seller_beta_min, o.seller_beta_max);
    s.p_max = uniform(rng, o.seller_p_max_min, o.seller_p_max_max);
    sellers.push_back(s);
  }
  std::vector<BuyingPeer> buyers;
  for (Index j = 0; j < nb; ++j) {
    BuyingPeer b;
    b.id = "B" + std::to_string(j + 1);
    b.node = uniform_index(rng, 1, num_nodes - 1);
    b.alpha = uniform(rng, o.buyer_alpha_min, o.buyer_alpha_max);
    b.beta = uniform(rng, o.buyer_beta_min, o.buyer_beta_max);
    b.p_max = uniform(rng, o.buyer_p_max_min, o.buyer_p_max_max);
    buyers.push_back(b);
  }
  return PeerSet(std::move(sellers), std::move(buyers));
}

MarketInstance random_market(std::uint64_t seed, const FeederOptions& feeder, const MarketOptions& market) {
  std::mt19937_64 rng(seed);
  RadialNetwork<double> net = random_feeder(rng, feeder);
  PeerSet peers = random_peers(rng, net.num_nodes(), market);
  return {std::move(net), std::move(peers)};
}

}  // namespace p2pgrid
