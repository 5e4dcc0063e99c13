#include <algorithm>
#include <fstream>
#include <optional>
#include <sstream>

#include "p2pgrid/network.hpp"
#include "p2pgrid/text_table.hpp"

namespace p2pgrid {

namespace {

enum class Section { None, Header, Nodes, Lines };

struct RawNode {
  double p_load, q_load;
  std::optional<double> v_min, v_max;
};

struct RawLine {
  Index from, to;
  double r, x;
  std::optional<double> s_max, s_min;
};

}  // namespace

RadialNetwork<double> parse_network(const std::string& text, const std::string& source) {
  PerUnitBase<double> base;
  bool physical = true;
  double default_v_min = 0.95;
  double default_v_max = 1.05;
  std::vector<RawNode> raw_nodes;
  std::vector<RawLine> raw_lines;

  Section section = Section::None;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = strip_comment(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line == "[header]") {
        section = Section::Header;
      } else if (line == "[nodes]") {
        section = Section::Nodes;
      } else if (line == "[lines]") {
        section = Section::Lines;
      } else {
        throw ParseError(source, line_no, "unknown section " + line);
      }
      continue;
    }
    switch (section) {
      case Section::None:
        throw ParseError(source, line_no, "data before the first section");
      case Section::Header: {
        const auto [key, value] = split_key_value(line, source, line_no);
        if (key == "base_power_mva") {
          base.power_mva = parse_number(value, source, line_no);
        } else if (key == "base_voltage_kv") {
          base.voltage_kv = parse_number(value, source, line_no);
        } else if (key == "units") {
          if (value == "physical") {
            physical = true;
          } else if (value == "pu") {
            physical = false;
          } else {
            throw ParseError(source, line_no, "units must be 'physical' or 'pu'");
          }
        } else if (key == "default_v_min") {
          default_v_min = parse_number(value, source, line_no);
        } else if (key == "default_v_max") {
          default_v_max = parse_number(value, source, line_no);
        } else {
          throw ParseError(source, line_no, "unknown header key '" + key + "'");
        }
        break;
      }
      case Section::Nodes: {
        const auto fields = split_fields(line);
        if (fields.size() != 3 && fields.size() != 5) {
          throw ParseError(source, line_no, "node row needs 3 or 5 fields (index p_load q_load [v_min v_max])");
        }
        const auto index = parse_index(fields[0], source, line_no);
        if (index != static_cast<Index>(raw_nodes.size())) {
          throw ParseError(source, line_no, "node indices must be consecutive from 0");
        }
        RawNode node{parse_number(fields[1], source, line_no), parse_number(fields[2], source, line_no), {}, {}};
        if (fields.size() == 5) {
          node.v_min = parse_number(fields[3], source, line_no);
          node.v_max = parse_number(fields[4], source, line_no);
        }
        raw_nodes.push_back(node);
        break;
      }
      case Section::Lines: {
        const auto fields = split_fields(line);
        if (fields.size() < 5 || fields.size() > 7) {
          throw ParseError(source, line_no, "line row needs 5 to 7 fields (index from to r x [s_max [s_min]])");
        }
        const auto index = parse_index(fields[0], source, line_no);
        if (index != static_cast<Index>(raw_lines.size())) {
          throw ParseError(source, line_no, "line indices must be consecutive from 0");
        }
        RawLine ln{parse_index(fields[1], source, line_no), parse_index(fields[2], source, line_no),
                   parse_number(fields[3], source, line_no), parse_number(fields[4], source, line_no), {}, {}};
        if (fields.size() >= 6) ln.s_max = parse_number(fields[5], source, line_no);
        if (fields.size() == 7) ln.s_min = parse_number(fields[6], source, line_no);
        raw_lines.push_back(ln);
        break;
      }
    }
  }
  if (raw_nodes.empty()) throw ParseError(source, line_no, "no [nodes] rows");
  if (!(base.power_mva > 0) || !(base.voltage_kv > 0)) {
    throw ParseError(source, 0, "base power and base voltage must be positive");
  }

  std::vector<NodeData<double>> nodes;
  nodes.reserve(raw_nodes.size());
  for (const auto& rn : raw_nodes) {
    NodeData<double> nd;
    nd.p_load = physical ? base.power_to_pu(rn.p_load) : rn.p_load;
    nd.q_load = physical ? base.power_to_pu(rn.q_load) : rn.q_load;
    nd.v_min = rn.v_min.value_or(default_v_min);
    nd.v_max = rn.v_max.value_or(default_v_max);
    nodes.push_back(nd);
  }
  std::vector<LineData<double>> lines;
  lines.reserve(raw_lines.size());
  for (const auto& rl : raw_lines) {
    LineData<double> ld;
    ld.from = rl.from;
    ld.to = rl.to;
    ld.r = physical ? base.impedance_to_pu(rl.r) : rl.r;
    ld.x = physical ? base.impedance_to_pu(rl.x) : rl.x;
    if (rl.s_max) ld.s_max = physical ? base.power_to_pu(*rl.s_max) : *rl.s_max;
    if (rl.s_min) ld.s_min = physical ? base.power_to_pu(*rl.s_min) : *rl.s_min;
    lines.push_back(ld);
  }
  return RadialNetwork<double>(std::move(nodes), std::move(lines), base);
}

RadialNetwork<double> load_network(const std::string& path) {
  return parse_network(read_text_file(path), path);
}

}  // namespace p2pgrid
