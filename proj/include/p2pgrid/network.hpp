#pragma once

#include <complex>
#include <cmath>
#include <limits>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "p2pgrid/errors.hpp"

namespace p2pgrid {

using Index = Eigen::Index;

template <typename Scalar>
using ComplexVector = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>;
template <typename Scalar>
using ComplexMatrix = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RealVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RealMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Complex nodal injection vector s_n = p_n + j q_n in p.u., one entry per node.
/// The slack entry is an output of the power flow, never an input.
template <typename Scalar>
using Injection = ComplexVector<Scalar>;

/// Per-unit system bases. Power in MVA, voltage in kV (line-to-line).
template <typename Scalar>
struct PerUnitBase {
  Scalar power_mva{10};
  Scalar voltage_kv{12.66};

  Scalar impedance_ohm() const { return voltage_kv * voltage_kv / power_mva; }

  Scalar power_to_pu(Scalar mva) const { return mva / power_mva; }
  Scalar power_from_pu(Scalar pu) const { return pu * power_mva; }
  Scalar impedance_to_pu(Scalar ohm) const { return ohm / impedance_ohm(); }
  Scalar impedance_from_pu(Scalar pu) const { return pu * impedance_ohm(); }
  Scalar voltage_to_pu(Scalar kv) const { return kv / voltage_kv; }
  Scalar voltage_from_pu(Scalar pu) const { return pu * voltage_kv; }
};

/// Node record, p.u. quantities. Loads are consumption (positive = drawing power).
template <typename Scalar>
struct NodeData {
  Scalar p_load{0};
  Scalar q_load{0};
  Scalar v_min{Scalar(0.95)};
  Scalar v_max{Scalar(1.05)};
};

/// Line record, p.u. quantities. `from`/`to` as listed in the source data; the
/// network re-orients each line so that flows are measured at the end closer to
/// the slack bus.
template <typename Scalar>
struct LineData {
  Index from{0};
  Index to{0};
  Scalar r{0};
  Scalar x{0};
  Scalar s_max{std::numeric_limits<Scalar>::infinity()};
  Scalar s_min{0};
};

/// Nodal admittance matrix of a set of series branches (no shunts, no taps).
/// Y_nm = -1/(r + jx) per line, Y_nn = -sum_{m != n} Y_nm.
template <typename Scalar>
ComplexMatrix<Scalar> build_admittance(std::span<const LineData<Scalar>> lines, Index num_nodes) {
  using Complex = std::complex<Scalar>;
  ComplexMatrix<Scalar> y = ComplexMatrix<Scalar>::Zero(num_nodes, num_nodes);
  for (std::size_t l = 0; l < lines.size(); ++l) {
    const auto& line = lines[l];
    if (line.r == Scalar(0) && line.x == Scalar(0)) {
      throw SingularBranchError("line " + std::to_string(l) + " has zero impedance");
    }
    const Complex series = Complex(1) / Complex(line.r, line.x);
    y(line.from, line.to) -= series;
    y(line.to, line.from) -= series;
    y(line.from, line.from) += series;
    y(line.to, line.to) += series;
  }
  return y;
}

/// Immutable radial distribution network. Node 0 is the slack bus.
template <typename Scalar>
class RadialNetwork {
 public:
  using Complex = std::complex<Scalar>;

  RadialNetwork(std::vector<NodeData<Scalar>> nodes, std::vector<LineData<Scalar>> lines,
                PerUnitBase<Scalar> base = {})
      : nodes_(std::move(nodes)), lines_(std::move(lines)), base_(base) {
    validate_and_orient();
    admittance_ = build_admittance<Scalar>(lines_, num_nodes());
  }

  /// N + 1, including the slack bus.
  Index num_nodes() const { return static_cast<Index>(nodes_.size()); }
  Index num_lines() const { return static_cast<Index>(lines_.size()); }

  const NodeData<Scalar>& node(Index n) const { return nodes_.at(static_cast<std::size_t>(n)); }
  const LineData<Scalar>& line(Index l) const { return lines_.at(static_cast<std::size_t>(l)); }
  const std::vector<NodeData<Scalar>>& nodes() const { return nodes_; }
  const std::vector<LineData<Scalar>>& lines() const { return lines_; }
  const PerUnitBase<Scalar>& base() const { return base_; }

  /// End of line l closer to the slack bus (sending end).
  Index upstream(Index l) const { return upstream_[static_cast<std::size_t>(l)]; }
  Index downstream(Index l) const { return downstream_[static_cast<std::size_t>(l)]; }
  /// Line feeding node n from upstream; -1 for the slack bus.
  Index parent_line(Index n) const { return parent_line_[static_cast<std::size_t>(n)]; }
  /// Number of lines between node n and the slack bus.
  Index depth(Index n) const { return depth_[static_cast<std::size_t>(n)]; }

  const ComplexMatrix<Scalar>& admittance() const { return admittance_; }

  /// 1 / (r + jx) of line l, i.e. -Y_nm.
  Complex series_admittance(Index l) const {
    const auto& ln = line(l);
    return Complex(1) / Complex(ln.r, ln.x);
  }

  /// Initial operating point P^0: every node draws its load.
  Injection<Scalar> base_injection() const {
    Injection<Scalar> s(num_nodes());
    for (Index n = 0; n < num_nodes(); ++n) s(n) = -Complex(node(n).p_load, node(n).q_load);
    s(0) = Complex(0);
    return s;
  }

 private:
  void validate_and_orient() {
    const Index n_nodes = num_nodes();
    if (n_nodes < 2) throw TopologyError("network needs the slack bus and at least one node");
    if (num_lines() != n_nodes - 1) {
      throw TopologyError("radial network with " + std::to_string(n_nodes) + " nodes needs " +
                          std::to_string(n_nodes - 1) + " lines, got " + std::to_string(num_lines()));
    }
    for (Index n = 0; n < n_nodes; ++n) {
      const auto& nd = node(n);
      if (!(nd.v_min < nd.v_max)) {
        throw LimitError("node " + std::to_string(n) + " has inverted voltage band");
      }
      if (!std::isfinite(nd.p_load) || !std::isfinite(nd.q_load)) {
        throw LimitError("node " + std::to_string(n) + " has a non-finite load");
      }
    }
    std::vector<std::vector<std::pair<Index, Index>>> adjacency(static_cast<std::size_t>(n_nodes));
    for (Index l = 0; l < num_lines(); ++l) {
      const auto& ln = line(l);
      if (ln.from < 0 || ln.from >= n_nodes || ln.to < 0 || ln.to >= n_nodes || ln.from == ln.to) {
        throw TopologyError("line " + std::to_string(l) + " references an invalid node pair");
      }
      if (!(ln.s_min < ln.s_max)) {
        throw LimitError("line " + std::to_string(l) + " has inverted flow band");
      }
      adjacency[static_cast<std::size_t>(ln.from)].emplace_back(ln.to, l);
      adjacency[static_cast<std::size_t>(ln.to)].emplace_back(ln.from, l);
    }

    // N lines and every node reachable from the slack <=> tree.
    parent_line_.assign(static_cast<std::size_t>(n_nodes), -1);
    depth_.assign(static_cast<std::size_t>(n_nodes), -1);
    upstream_.assign(lines_.size(), -1);
    downstream_.assign(lines_.size(), -1);
    std::queue<Index> frontier;
    frontier.push(0);
    depth_[0] = 0;
    while (!frontier.empty()) {
      const Index n = frontier.front();
      frontier.pop();
      for (const auto& [m, l] : adjacency[static_cast<std::size_t>(n)]) {
        if (l == parent_line_[static_cast<std::size_t>(n)]) continue;
        if (depth_[static_cast<std::size_t>(m)] >= 0) {
          throw TopologyError("line " + std::to_string(l) + " closes a loop");
        }
        depth_[static_cast<std::size_t>(m)] = depth_[static_cast<std::size_t>(n)] + 1;
        parent_line_[static_cast<std::size_t>(m)] = l;
        upstream_[static_cast<std::size_t>(l)] = n;
        downstream_[static_cast<std::size_t>(l)] = m;
        frontier.push(m);
      }
    }
    for (Index n = 0; n < n_nodes; ++n) {
      if (depth_[static_cast<std::size_t>(n)] < 0) {
        throw TopologyError("node " + std::to_string(n) + " is not connected to the slack bus");
      }
    }
  }

  std::vector<NodeData<Scalar>> nodes_;
  std::vector<LineData<Scalar>> lines_;
  PerUnitBase<Scalar> base_;
  std::vector<Index> upstream_;
  std::vector<Index> downstream_;
  std::vector<Index> parent_line_;
  std::vector<Index> depth_;
  ComplexMatrix<Scalar> admittance_;
};

template <typename Scalar>
ComplexMatrix<Scalar> build_admittance(const RadialNetwork<Scalar>& net) {
  return build_admittance<Scalar>(std::span<const LineData<Scalar>>(net.lines()), net.num_nodes());
}

/// Reads a network file (header / nodes / lines sections) and returns a
/// validated network in p.u.
RadialNetwork<double> load_network(const std::string& path);

/// Same, from text already in memory; `source` names it in error messages.
RadialNetwork<double> parse_network(const std::string& text, const std::string& source = "<network>");

}  // namespace p2pgrid
