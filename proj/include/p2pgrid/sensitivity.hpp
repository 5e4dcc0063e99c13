#pragma once

// Analytic sensitivities of voltages, flows and loss to active-power
// injections at the non-slack nodes.
//
// Column j of every table corresponds to an injection at node j + 1; the slack
// bus has no column. Row 0 of the voltage tables is identically zero because the
// slack voltage is fixed.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/LU>

#include "p2pgrid/errors.hpp"
#include "p2pgrid/network.hpp"
#include "p2pgrid/powerflow.hpp"

namespace p2pgrid {

/// Column of the sensitivity tables holding injections at `node` (node >= 1).
inline Index sensitivity_column(Index node) { return node - 1; }

template <typename Scalar>
struct VoltageSensitivity {
  /// (N+1) x N, entry (n, j) = dv_n / dp at node j+1.
  ComplexMatrix<Scalar> dv_dp;
  /// LAPACK-style reciprocal condition estimate of the 2N x 2N real system.
  Scalar reciprocal_condition{0};
};

/// Flow sensitivities. Magnitude entries of lines whose flow is (numerically)
/// zero are NaN and `defined[l]` is false: |s| is not differentiable there.
template <typename Scalar>
struct FlowSensitivity {
  ComplexMatrix<Scalar> dflow_dp;
  RealMatrix<Scalar> magnitude;
  std::vector<bool> defined;
};

/// Voltage, flow and loss causal factors (Phi, X, Psi) at the linearization state.
template <typename Scalar>
struct CausalFactors {
  RealMatrix<Scalar> phi;  // (N+1) x N
  RealMatrix<Scalar> chi;  // L x N, NaN rows where undefined
  RealVector<Scalar> psi;  // N
  std::vector<bool> chi_defined;
};

template <typename Scalar>
struct SensitivityTable {
  ComplexMatrix<Scalar> dv_dp;
  RealMatrix<Scalar> dvmag_dp;
  ComplexMatrix<Scalar> dflow_dp;
  RealMatrix<Scalar> dflowmag_dp;
  std::vector<bool> flow_defined;
  RealVector<Scalar> dloss_dp;
  CausalFactors<Scalar> factors;
  GridState<Scalar> linearization_state;
  /// G v at the linearization state (the loss "current").
  ComplexVector<Scalar> conductance_current;
  Scalar reciprocal_condition{0};
};

inline constexpr double kMinReciprocalCondition = 1e-13;
inline constexpr double kMinVoltageMagnitude = 1e-6;
inline constexpr double kMinFlowMagnitude = 1e-9;

/// Solves, for every non-slack node k,
///   1{n=k} = conj(dv_n) (Y v)_n + conj(v_n) sum_{m>=1} Y_nm dv_m,   n = 1..N,
/// with dv_0 = 0. The equation is linear in (Re dv, Im dv); it is assembled as
/// one real 2N x 2N system, factorized once and solved for all N right-hand
/// sides.
template <typename Scalar>
VoltageSensitivity<Scalar> solve_voltage_sensitivity(const RadialNetwork<Scalar>& net,
                                                     const GridState<Scalar>& state) {
  const Index n = net.num_nodes() - 1;
  const Eigen::PartialPivLU<RealMatrix<Scalar>> lu(detail::rectangular_jacobian(net.admittance(), state.voltages));
  const Scalar rcond = lu.rcond();
  if (!(rcond > static_cast<Scalar>(kMinReciprocalCondition))) {
    throw NumericalError("voltage sensitivity system is singular (rcond " +
                             std::to_string(static_cast<double>(rcond)) + ")",
                         static_cast<double>(rcond));
  }
  RealMatrix<Scalar> rhs = RealMatrix<Scalar>::Zero(2 * n, n);
  rhs.topRows(n).setIdentity();
  const RealMatrix<Scalar> x = lu.solve(rhs);

  VoltageSensitivity<Scalar> out;
  out.reciprocal_condition = rcond;
  out.dv_dp = ComplexMatrix<Scalar>::Zero(n + 1, n);
  for (Index k = 0; k < n; ++k) {
    for (Index row = 0; row < n; ++row) out.dv_dp(row + 1, k) = std::complex<Scalar>(x(row, k), x(n + row, k));
  }
  return out;
}

/// d|v_n|/dp = Re(conj(v_n) dv_n/dp) / |v_n|.
template <typename Scalar>
RealMatrix<Scalar> voltage_magnitude_sensitivity(const ComplexMatrix<Scalar>& dv_dp, const GridState<Scalar>& state) {
  RealMatrix<Scalar> out(dv_dp.rows(), dv_dp.cols());
  for (Index row = 0; row < dv_dp.rows(); ++row) {
    const std::complex<Scalar> v = state.voltages(row);
    const Scalar mag = std::abs(v);
    if (mag < static_cast<Scalar>(kMinVoltageMagnitude)) {
      throw NumericalError("degenerate voltage magnitude at node " + std::to_string(row), 0.0);
    }
    for (Index k = 0; k < dv_dp.cols(); ++k) out(row, k) = (std::conj(v) * dv_dp(row, k)).real() / mag;
  }
  return out;
}

/// Complex flow derivative for the state's flow model, then
/// d|s^f_l|/dp = Re(conj(s^f_l) ds^f_l/dp) / |s^f_l|.
template <typename Scalar>
FlowSensitivity<Scalar> flow_magnitude_sensitivity(const RadialNetwork<Scalar>& net, const GridState<Scalar>& state,
                                                   const ComplexMatrix<Scalar>& dv_dp) {
  using Complex = std::complex<Scalar>;
  const Index n_lines = net.num_lines();
  const Index n_cols = dv_dp.cols();
  FlowSensitivity<Scalar> out;
  out.dflow_dp.resize(n_lines, n_cols);
  out.magnitude.resize(n_lines, n_cols);
  out.defined.assign(static_cast<std::size_t>(n_lines), true);
  for (Index l = 0; l < n_lines; ++l) {
    const Index from = net.upstream(l);
    const Index to = net.downstream(l);
    const Complex y_conj = std::conj(net.series_admittance(l));
    const Complex vn = state.voltages(from);
    const Complex vm = state.voltages(to);
    for (Index k = 0; k < n_cols; ++k) {
      const Complex dvn = dv_dp(from, k);
      const Complex dvm = dv_dp(to, k);
      if (state.flow_model == FlowModel::NodeVoltageForm) {
        out.dflow_dp(l, k) = y_conj * Scalar(2) * (std::conj(vn) * dvn).real();
      } else {
        out.dflow_dp(l, k) = y_conj * (dvn * std::conj(vn - vm) + vn * std::conj(dvn - dvm));
      }
    }
    const Complex flow = state.line_flows(l);
    const Scalar mag = std::abs(flow);
    if (mag < static_cast<Scalar>(kMinFlowMagnitude)) {
      out.defined[static_cast<std::size_t>(l)] = false;
      out.magnitude.row(l).setConstant(std::numeric_limits<Scalar>::quiet_NaN());
      continue;
    }
    for (Index k = 0; k < n_cols; ++k) out.magnitude(l, k) = (std::conj(flow) * out.dflow_dp(l, k)).real() / mag;
  }
  return out;
}

/// do/dp_k = 2 Re(sum_n conj(dv_n/dp_k) (G v)_n).
template <typename Scalar>
RealVector<Scalar> loss_sensitivity(const RadialNetwork<Scalar>& net, const GridState<Scalar>& state,
                                    const ComplexMatrix<Scalar>& dv_dp) {
  const ComplexVector<Scalar> gv = net.admittance().real().template cast<std::complex<Scalar>>() * state.voltages;
  // adjoint() conjugates dv; the product sums over nodes.
  return Scalar(2) * (dv_dp.adjoint() * gv).real();
}

/// Phi and X are the magnitude sensitivities at the linearization state.
/// Psi_k = Re(sum_n conj(dv_n/dp_k) (G v)_n), so 2 c_o Psi_k p_k is the loss
/// charge of an injection p_k.
template <typename Scalar>
CausalFactors<Scalar> causal_factors(const SensitivityTable<Scalar>& table) {
  CausalFactors<Scalar> f;
  f.phi = table.dvmag_dp;
  f.chi = table.dflowmag_dp;
  f.chi_defined = table.flow_defined;
  f.psi = (table.dv_dp.adjoint() * table.conductance_current).real();
  return f;
}

template <typename Scalar>
SensitivityTable<Scalar> build_sensitivity_table(const RadialNetwork<Scalar>& net, const GridState<Scalar>& state) {
  SensitivityTable<Scalar> t;
  auto vs = solve_voltage_sensitivity(net, state);
  t.dv_dp = std::move(vs.dv_dp);
  t.reciprocal_condition = vs.reciprocal_condition;
  t.dvmag_dp = voltage_magnitude_sensitivity(t.dv_dp, state);
  auto fs = flow_magnitude_sensitivity(net, state, t.dv_dp);
  t.dflow_dp = std::move(fs.dflow_dp);
  t.dflowmag_dp = std::move(fs.magnitude);
  t.flow_defined = std::move(fs.defined);
  t.dloss_dp = loss_sensitivity(net, state, t.dv_dp);
  t.linearization_state = state;
  t.conductance_current = net.admittance().real().template cast<std::complex<Scalar>>() * state.voltages;
  t.factors = causal_factors(t);
  return t;
}

/// Delimited dump: one row per injection node, column groups |v| per node,
/// |s^f| per line, then loss.
std::string sensitivity_table_csv(const SensitivityTable<double>& table);

}  // namespace p2pgrid
