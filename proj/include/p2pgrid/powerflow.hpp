#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <type_traits>

#include <Eigen/Dense>
#include <Eigen/LU>

#include "p2pgrid/errors.hpp"
#include "p2pgrid/network.hpp"

namespace p2pgrid {

/// How the complex line flow s^f_l is evaluated.
enum class FlowModel {
  /// s^f = v_n conj(v_n - v_m) conj(y_l), measured at the upstream end n.
  BranchFlow,
  /// s^f = v_n conj(v_n) conj(y_l); node-voltage-only form kept for comparison.
  NodeVoltageForm,
};

struct PowerFlowOptions {
  double tolerance{1e-10};
  int max_iterations{50};
  FlowModel flow_model{FlowModel::BranchFlow};
};

/// Solved operating point for one injection vector.
template <typename Scalar>
struct GridState {
  ComplexVector<Scalar> voltages;
  /// Specified injections, with the slack entry replaced by the balancing value.
  ComplexVector<Scalar> injections;
  /// Sending-end (upstream) complex flow per line.
  ComplexVector<Scalar> line_flows;
  /// Total active loss, p.u.
  Scalar loss{0};
  bool converged{false};
  int iterations{0};
  Scalar mismatch{0};
  FlowModel flow_model{FlowModel::BranchFlow};
};

/// Unit network costs, $/MWh. Voltage and congestion rates apply only to
/// nodes/lines outside their dead band.
struct CostSchedule {
  double loss{0};        // c_o
  double voltage{0};     // c^_v
  double congestion{0};  // c^_s
};

/// Dead-band activation of the voltage and congestion rates at one state.
/// `*_direction` is -1 below the band, +1 above it and 0 inside, so that
/// rate * direction * (change in magnitude) is positive when a change deepens
/// the violation.
template <typename Scalar>
struct Activation {
  RealVector<Scalar> voltage_rate;
  RealVector<Scalar> voltage_direction;
  RealVector<Scalar> flow_rate;
  RealVector<Scalar> flow_direction;

  Index violated_nodes() const { return (voltage_direction.array() != Scalar(0)).count(); }
  Index violated_lines() const { return (flow_direction.array() != Scalar(0)).count(); }
  Index violations() const { return violated_nodes() + violated_lines(); }
};

namespace detail {

/// Real 2N x 2N Jacobian of s_n = v_n conj(sum_m Y_nm v_m) (n = 1..N) with
/// respect to (Re v_1..Re v_N, Im v_1..Im v_N). Rows are (Re s_1..N, Im s_1..N).
/// The same matrix is the coefficient matrix of the voltage sensitivity system.
template <typename Scalar>
RealMatrix<Scalar> rectangular_jacobian(const ComplexMatrix<Scalar>& y, const ComplexVector<Scalar>& v) {
  const Index n_total = y.rows();
  const Index n = n_total - 1;
  const ComplexVector<Scalar> current = y * v;
  RealMatrix<Scalar> jac(2 * n, 2 * n);
  for (Index row = 0; row < n; ++row) {
    const Index bus = row + 1;
    const Scalar e = v(bus).real();
    const Scalar f = v(bus).imag();
    for (Index col = 0; col < n; ++col) {
      const Scalar g = y(bus, col + 1).real();
      const Scalar b = y(bus, col + 1).imag();
      jac(row, col) = e * g + f * b;
      jac(row, n + col) = f * g - e * b;
      jac(n + row, col) = f * g - e * b;
      jac(n + row, n + col) = -e * g - f * b;
    }
    const Scalar ir = current(bus).real();
    const Scalar ii = current(bus).imag();
    jac(row, row) += ir;
    jac(row, n + row) += ii;
    jac(n + row, row) -= ii;
    jac(n + row, n + row) += ir;
  }
  return jac;
}

template <typename Scalar>
ComplexVector<Scalar> computed_injections(const ComplexMatrix<Scalar>& y, const ComplexVector<Scalar>& v) {
  return v.cwiseProduct((y * v).conjugate());
}

}  // namespace detail

/// Sending-end complex flow of line l.
template <typename Scalar>
std::complex<Scalar> line_flow(const ComplexVector<Scalar>& voltages, const RadialNetwork<Scalar>& net, Index l,
                               FlowModel model = FlowModel::BranchFlow) {
  const Index from = net.upstream(l);
  const Index to = net.downstream(l);
  const std::complex<Scalar> y_conj = std::conj(net.series_admittance(l));
  const std::complex<Scalar> vn = voltages(from);
  if (model == FlowModel::NodeVoltageForm) return vn * std::conj(vn) * y_conj;
  return vn * std::conj(vn - voltages(to)) * y_conj;
}

template <typename Scalar>
std::complex<Scalar> line_flow(const GridState<Scalar>& state, const RadialNetwork<Scalar>& net, Index l) {
  if (l < 0 || l >= net.num_lines()) throw Error("line index " + std::to_string(l) + " out of range");
  return line_flow(state.voltages, net, l, state.flow_model);
}

/// Total active loss o = Re(v^H G v), p.u.
template <typename Scalar>
Scalar system_loss(const ComplexVector<Scalar>& voltages, const RadialNetwork<Scalar>& net) {
  const RealMatrix<Scalar> g = net.admittance().real();
  const ComplexVector<Scalar> gv = g.template cast<std::complex<Scalar>>() * voltages;
  return voltages.dot(gv).real();  // dot() conjugates the first argument
}

template <typename Scalar>
Scalar system_loss(const GridState<Scalar>& state, const RadialNetwork<Scalar>& net) {
  return system_loss(state.voltages, net);
}

/// Newton-Raphson power flow in rectangular coordinates. Entry 0 of
/// `injections` is ignored; the slack voltage is held at 1 + j0.
template <typename Scalar>
GridState<Scalar> solve_power_flow(const RadialNetwork<Scalar>& net, const std::type_identity_t<Injection<Scalar>>& injections,
                                   const PowerFlowOptions& options = {},
                                   const std::optional<std::type_identity_t<ComplexVector<Scalar>>>& warm_start = std::nullopt) {
  using Complex = std::complex<Scalar>;
  const Index n_total = net.num_nodes();
  const Index n = n_total - 1;
  if (injections.size() != n_total) throw Error("injection vector size does not match the network");
  for (Index k = 1; k < n_total; ++k) {
    if (!std::isfinite(injections(k).real()) || !std::isfinite(injections(k).imag())) {
      throw Error("injection at node " + std::to_string(k) + " is not finite");
    }
  }
  const ComplexMatrix<Scalar>& y = net.admittance();

  ComplexVector<Scalar> v = warm_start ? *warm_start : ComplexVector<Scalar>::Constant(n_total, Complex(1));
  if (v.size() != n_total) throw Error("warm start size does not match the network");
  v(0) = Complex(1);

  const Scalar tol = static_cast<Scalar>(options.tolerance);
  Scalar mismatch = 0;
  RealVector<Scalar> residual(2 * n);
  int iter = 0;
  for (;; ++iter) {
    const ComplexVector<Scalar> s = detail::computed_injections(y, v);
    mismatch = 0;
    for (Index k = 0; k < n; ++k) {
      const Complex d = s(k + 1) - injections(k + 1);
      residual(k) = d.real();
      residual(n + k) = d.imag();
      mismatch = std::max(mismatch, std::abs(d));
    }
    if (!std::isfinite(mismatch)) {
      throw DivergenceError("power flow produced a non-finite mismatch", static_cast<double>(mismatch), iter);
    }
    if (mismatch <= tol) break;
    if (iter >= options.max_iterations) {
      throw DivergenceError("power flow did not converge in " + std::to_string(options.max_iterations) +
                                " iterations (mismatch " + std::to_string(static_cast<double>(mismatch)) + ")",
                            static_cast<double>(mismatch), iter);
    }
    const Eigen::PartialPivLU<RealMatrix<Scalar>> lu(detail::rectangular_jacobian(y, v));
    const Scalar rcond = lu.rcond();
    if (!(rcond > std::numeric_limits<Scalar>::epsilon())) {
      throw NumericalError("singular power-flow Jacobian", static_cast<double>(rcond));
    }
    const RealVector<Scalar> step = lu.solve(-residual);
    for (Index k = 0; k < n; ++k) v(k + 1) += Complex(step(k), step(n + k));
  }

  GridState<Scalar> state;
  state.voltages = v;
  state.injections = injections;
  state.injections(0) = detail::computed_injections(y, v)(0);
  state.flow_model = options.flow_model;
  state.line_flows.resize(net.num_lines());
  for (Index l = 0; l < net.num_lines(); ++l) state.line_flows(l) = line_flow(v, net, l, options.flow_model);
  state.loss = system_loss(v, net);
  state.converged = true;
  state.iterations = iter;
  state.mismatch = mismatch;
  return state;
}

/// Which nodes and lines sit outside their dead bands, and the rate that
/// applies to each.
template <typename Scalar>
Activation<Scalar> activation(const GridState<Scalar>& state, const RadialNetwork<Scalar>& net,
                              const CostSchedule& sched) {
  Activation<Scalar> act;
  const Index n_total = net.num_nodes();
  act.voltage_rate = RealVector<Scalar>::Zero(n_total);
  act.voltage_direction = RealVector<Scalar>::Zero(n_total);
  for (Index k = 0; k < n_total; ++k) {
    const Scalar mag = std::abs(state.voltages(k));
    const auto& nd = net.node(k);
    if (mag < nd.v_min) {
      act.voltage_direction(k) = -1;
    } else if (mag > nd.v_max) {
      act.voltage_direction(k) = 1;
    }
    if (act.voltage_direction(k) != 0) act.voltage_rate(k) = static_cast<Scalar>(sched.voltage);
  }
  const Index n_lines = net.num_lines();
  act.flow_rate = RealVector<Scalar>::Zero(n_lines);
  act.flow_direction = RealVector<Scalar>::Zero(n_lines);
  for (Index l = 0; l < n_lines; ++l) {
    const Scalar mag = std::abs(state.line_flows(l));
    const auto& ln = net.line(l);
    if (mag < ln.s_min) {
      act.flow_direction(l) = -1;
    } else if (mag > ln.s_max) {
      act.flow_direction(l) = 1;
    }
    if (act.flow_direction(l) != 0) act.flow_rate(l) = static_cast<Scalar>(sched.congestion);
  }
  return act;
}

}  // namespace p2pgrid
