#include <doctest.h>

#include <random>

#include "oracles/sweep.hpp"
#include "oracles/two_node.hpp"
#include "p2pgrid/errors.hpp"
#include "p2pgrid/instances.hpp"
#include "p2pgrid/powerflow.hpp"

using namespace p2pgrid;
using cd = std::complex<double>;

namespace {

RadialNetwork<double> two_node(double p_load, double q_load, double r = 0.1, double x = 0.1) {
  std::vector<NodeData<double>> nodes(2);
  nodes[1].p_load = p_load;
  nodes[1].q_load = q_load;
  return RadialNetwork<double>(nodes, {{0, 1, r, x}});
}

std::vector<cd> to_std(const Injection<double>& s) { return {s.data(), s.data() + s.size()}; }

RadialNetwork<double> ieee33() { return load_network(std::string(P2PGRID_DATA_DIR) + "/ieee33_baranwu.net"); }

}  // namespace

TEST_CASE("no load gives a flat profile and zero loss") {
  const auto net = ieee33();
  const auto st = solve_power_flow(net, Injection<double>::Zero(net.num_nodes()));
  CHECK(st.converged);
  CHECK((st.voltages.array() - cd(1)).abs().maxCoeff() < 1e-14);
  CHECK(std::abs(st.loss) < 1e-12);
}

TEST_CASE("two-node load matches the closed-form quadratic") {
  const auto net = two_node(0.1, 0);
  const auto st = solve_power_flow(net, net.base_injection());
  const auto ref = oracle::two_node(0.1, 0.1, 0.1, 0);
  CHECK(std::abs(st.voltages(1)) < 1);
  CHECK(std::abs(st.voltages(1)) == doctest::Approx(ref.v1).epsilon(1e-12));
  CHECK(st.loss > 0);
  CHECK(st.loss == doctest::Approx(ref.loss).epsilon(1e-10));
  CHECK(st.mismatch <= 1e-10);
  const auto s = detail::computed_injections(net.admittance(), st.voltages);
  CHECK(std::abs(s(1) - st.injections(1)) <= 1e-10);
}

TEST_CASE("two-node energy balance: slack supply = load + loss = sending-end flow") {
  const auto net = two_node(0.08, 0.03);
  const auto st = solve_power_flow(net, net.base_injection());
  CHECK(st.injections(0).real() == doctest::Approx(0.08 + st.loss).epsilon(1e-12));
  CHECK(st.line_flows(0).real() == doctest::Approx(0.08 + st.loss).epsilon(1e-12));
  // o = |i|^2 r
  const cd i = (st.voltages(0) - st.voltages(1)) / cd(0.1, 0.1);
  CHECK(st.loss == doctest::Approx(std::norm(i) * 0.1).epsilon(1e-12));
}

TEST_CASE("ieee33 base case against the sweep solver") {
  const auto net = ieee33();
  const auto st = solve_power_flow(net, net.base_injection());
  const auto ref = oracle::backward_forward_sweep(net, to_std(net.base_injection()));
  CHECK(st.loss == doctest::Approx(ref.loss).epsilon(1e-8));
  for (Index n = 0; n < net.num_nodes(); ++n) CHECK(std::abs(st.voltages(n) - ref.v[static_cast<std::size_t>(n)]) < 1e-10);
  for (Index l = 0; l < net.num_lines(); ++l) {
    CHECK(std::abs(st.line_flows(l) - ref.sending_power[static_cast<std::size_t>(l)]) < 1e-10);
  }
  // Published figures for this feeder: about 202.7 kW loss, 0.913 p.u. at the far end.
  CHECK(st.loss * 10 * 1000 == doctest::Approx(202.7).epsilon(2e-3));
  CHECK(std::abs(st.voltages(17)) == doctest::Approx(0.9131).epsilon(1e-3));
  CHECK(st.iterations <= 6);
}

TEST_CASE("random feeders agree with the sweep solver") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 30; ++i) {
    const auto net = random_feeder(rng);
    const auto st = solve_power_flow(net, net.base_injection());
    const auto ref = oracle::backward_forward_sweep(net, to_std(net.base_injection()));
    CHECK(st.loss == doctest::Approx(ref.loss).epsilon(1e-8));
  }
}

TEST_CASE("node-voltage flow form differs from the branch flow off flat start") {
  const auto net = two_node(0.1, 0.05);
  PowerFlowOptions o;
  o.flow_model = FlowModel::NodeVoltageForm;
  const auto nv = solve_power_flow(net, net.base_injection(), o);
  const auto bf = solve_power_flow(net, net.base_injection());
  CHECK(nv.line_flows(0) == std::norm(nv.voltages(0)) * std::conj(net.series_admittance(0)));
  CHECK(std::abs(nv.line_flows(0) - bf.line_flows(0)) > 1e-3);
  // At flat voltage with no load the branch flow is zero.
  const auto flat = solve_power_flow(net, Injection<double>::Zero(2));
  CHECK(std::abs(flat.line_flows(0)) < 1e-14);
}

TEST_CASE("warm start reaches the same solution") {
  const auto net = ieee33();
  const auto a = solve_power_flow(net, net.base_injection());
  Injection<double> s = net.base_injection();
  s(10) += 0.01;
  const auto b = solve_power_flow(net, s, {}, a.voltages);
  const auto c = solve_power_flow(net, s);
  CHECK((b.voltages - c.voltages).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(b.iterations <= c.iterations);
}

TEST_CASE("impossible load does not converge") {
  const auto net = two_node(5, 5);
  CHECK_THROWS_AS(solve_power_flow(net, net.base_injection()), DivergenceError);
}

TEST_CASE("activation rules") {
  std::vector<NodeData<double>> nodes(3);
  nodes[2].p_load = 0.3;
  std::vector<LineData<double>> lines{{0, 1, 0.2, 0.2, 0.2}, {1, 2, 0.01, 0.01}};
  const RadialNetwork<double> net(nodes, lines);
  const auto st = solve_power_flow(net, net.base_injection());
  CostSchedule sched{10, 3, 7};
  const auto act = activation(st, net, sched);
  REQUIRE(std::abs(st.voltages(2)) < 0.95);
  CHECK(act.voltage_rate(2) == 3);
  CHECK(act.voltage_direction(2) == -1);
  CHECK(act.voltage_rate(0) == 0);
  CHECK(act.flow_rate(0) == 7);
  CHECK(act.flow_direction(0) == 1);
  CHECK(act.flow_rate(1) == 0);

  const auto quiet = activation(solve_power_flow(net, Injection<double>::Zero(3)), net, sched);
  CHECK(quiet.violations() == 0);
  CHECK(quiet.voltage_rate.cwiseAbs().sum() == 0);
}
