#include "p2pgrid/sensitivity.hpp"
#include "p2pgrid/text_table.hpp"

namespace p2pgrid {

std::string sensitivity_table_csv(const SensitivityTable<double>& table) {
  const Index num_nodes = table.dvmag_dp.rows();
  const Index num_lines = table.dflowmag_dp.rows();
  std::vector<std::string> header{"injection_node"};
  for (Index n = 0; n < num_nodes; ++n) header.push_back("dv" + std::to_string(n));
  for (Index l = 0; l < num_lines; ++l) header.push_back("ds" + std::to_string(l));
  header.push_back("dloss");
  TextTable out(std::move(header));
  for (Index k = 0; k < table.dvmag_dp.cols(); ++k) {
    std::vector<std::string> row{std::to_string(k + 1)};
    for (Index n = 0; n < num_nodes; ++n) row.push_back(format_number(table.dvmag_dp(n, k)));
    for (Index l = 0; l < num_lines; ++l) row.push_back(format_number(table.dflowmag_dp(l, k)));
    row.push_back(format_number(table.dloss_dp(k)));
    out.add_row(std::move(row));
  }
  return out.str();
}

}  // namespace p2pgrid
