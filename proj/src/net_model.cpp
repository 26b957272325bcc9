#include "flexcoop/net_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace flexcoop {

using nlohmann::json;

int NetworkModel::bus_index(int bus_id) const {
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (buses[i].id == bus_id) return static_cast<int>(i);
  }
  return -1;
}

std::string ValidationReport::summary() const {
  std::ostringstream os;
  for (const auto& issue : issues) {
    os << issue.element << ": " << issue.message << "\n";
  }
  return os.str();
}

namespace {

std::string branch_name(const Branch& b) {
  return "branch " + std::to_string(b.from_bus) + "-" + std::to_string(b.to_bus);
}

/// Union-find over bus indices, used to spot the first cycle-closing branch.
struct DisjointSet {
  std::vector<int> parent;
  explicit DisjointSet(int n) : parent(n) {
    for (int i = 0; i < n; ++i) parent[i] = i;
  }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[a] = b;
    return true;
  }
};

}  // namespace

Topology build_topology(const NetworkModel& model) {
  const int n_bus = static_cast<int>(model.buses.size());
  const int n_br = static_cast<int>(model.branches.size());

  const int root = model.bus_index(model.reference_bus);
  if (root < 0) {
    throw TopologyError("reference_bus " + std::to_string(model.reference_bus) +
                        " is not a bus of the network");
  }

  std::unordered_map<int, int> index_of;
  index_of.reserve(model.buses.size());
  for (int i = 0; i < n_bus; ++i) index_of[model.buses[i].id] = i;

  DisjointSet ds(n_bus);
  std::vector<std::vector<std::pair<int, int>>> adjacency(n_bus);  // (neighbor, branch)
  for (int b = 0; b < n_br; ++b) {
    const Branch& br = model.branches[b];
    const auto it_from = index_of.find(br.from_bus);
    const auto it_to = index_of.find(br.to_bus);
    if (it_from == index_of.end() || it_to == index_of.end()) {
      throw TopologyError(branch_name(br) + " references an unknown bus");
    }
    if (it_from->second == it_to->second) {
      throw TopologyError(branch_name(br) + " is a self-loop");
    }
    if (!ds.unite(it_from->second, it_to->second)) {
      throw TopologyError(branch_name(br) +
                          " closes a cycle; the network must be radial");
    }
    adjacency[it_from->second].push_back({it_to->second, b});
    adjacency[it_to->second].push_back({it_from->second, b});
  }

  Topology topo;
  topo.parent_branch.assign(n_bus, -1);
  topo.up_bus.assign(n_br, -1);
  topo.down_bus.assign(n_br, -1);
  topo.child_branches.assign(n_bus, {});
  topo.bfs_order.reserve(n_bus);

  std::vector<char> seen(n_bus, 0);
  topo.bfs_order.push_back(root);
  seen[root] = 1;
  for (std::size_t head = 0; head < topo.bfs_order.size(); ++head) {
    const int u = topo.bfs_order[head];
    for (const auto& [v, b] : adjacency[u]) {
      if (seen[v]) continue;
      seen[v] = 1;
      topo.parent_branch[v] = b;
      topo.up_bus[b] = u;
      topo.down_bus[b] = v;
      topo.child_branches[u].push_back(b);
      topo.bfs_order.push_back(v);
    }
  }

  if (static_cast<int>(topo.bfs_order.size()) != n_bus) {
    for (int i = 0; i < n_bus; ++i) {
      if (!seen[i]) {
        throw TopologyError("bus " + std::to_string(model.buses[i].id) +
                            " is not connected to the reference bus");
      }
    }
  }
  return topo;
}

ValidationReport validate(const NetworkModel& model,
                          const std::vector<FlexUnit>& units) {
  ValidationReport report;
  auto add = [&report](std::string element, std::string message) {
    report.issues.push_back({std::move(element), std::move(message)});
  };

  if (!(model.base_mva > 0.0)) add("network", "base_mva must be positive");
  if (!(model.base_kv > 0.0)) add("network", "base_kv must be positive");
  if (!(model.v_min > 0.0 && model.v_min < 1.0 && model.v_max > 1.0)) {
    add("network", "voltage limits must satisfy 0 < v_min < 1 < v_max");
  }

  for (const Branch& br : model.branches) {
    if (br.r_pu < 0.0 || br.x_pu < 0.0) {
      add(branch_name(br), "impedance components must be non-negative");
    }
    if (!(br.r_pu + br.x_pu > 0.0)) {
      add(branch_name(br), "r + x must be positive");
    }
    if (br.limit_mva && !(*br.limit_mva > 0.0)) {
      add(branch_name(br), "limit_mva must be positive when present");
    }
  }

  for (const FlexUnit& u : units) {
    const std::string name = "unit " + u.id;
    if (model.bus_index(u.bus) < 0) {
      add(name, "bus " + std::to_string(u.bus) + " does not exist");
    }
    if (!(u.p_min_mw <= u.p_max_mw)) add(name, "p_min_mw exceeds p_max_mw");
    if (!(u.q_min_mvar <= u.q_max_mvar)) add(name, "q_min_mvar exceeds q_max_mvar");
    if (u.p0_mw < u.p_min_mw || u.p0_mw > u.p_max_mw) {
      add(name, "initial setpoint p0_mw lies outside [p_min_mw, p_max_mw]");
    }
    if (u.q0_mvar < u.q_min_mvar || u.q0_mvar > u.q_max_mvar) {
      add(name, "initial setpoint q0_mvar lies outside [q_min_mvar, q_max_mvar]");
    }
    if (u.cost_p < 0.0 || u.cost_q < 0.0) add(name, "cost rates must be non-negative");
  }

  std::unordered_set<std::string> unit_ids;
  for (const FlexUnit& u : units) {
    if (!unit_ids.insert(u.id).second) {
      add("unit " + u.id, "duplicate unit id");
    }
  }
  return report;
}

namespace {

double require_number(const json& j, const std::string& where, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_number()) {
    throw SchemaError(where + ": missing or non-numeric field '" + key + "'");
  }
  return it->get<double>();
}

int require_int(const json& j, const std::string& where, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_number_integer()) {
    throw SchemaError(where + ": missing or non-integer field '" + key + "'");
  }
  return it->get<int>();
}

std::string require_string(const json& j, const std::string& where, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    throw SchemaError(where + ": missing or non-string field '" + key + "'");
  }
  return it->get<std::string>();
}

const json& require_section(const json& j, const char* key, json::value_t type) {
  const auto it = j.find(key);
  if (it == j.end() || it->type() != type) {
    throw SchemaError(std::string("document: missing or malformed section '") +
                      key + "'");
  }
  return *it;
}

}  // namespace

CaseData load_case(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("document is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("document root must be an object");

  CaseData c;
  if (doc.contains("name") && doc["name"].is_string()) {
    c.name = doc["name"].get<std::string>();
  }
  if (doc.contains("notes") && doc["notes"].is_array()) {
    for (const auto& n : doc["notes"]) {
      if (n.is_string()) c.notes.push_back(n.get<std::string>());
    }
  }

  const json& network = require_section(doc, "network", json::value_t::object);
  c.model.base_mva = require_number(network, "network", "base_mva");
  c.model.base_kv = require_number(network, "network", "base_kv");
  c.model.v_min = require_number(network, "network", "v_min");
  c.model.v_max = require_number(network, "network", "v_max");
  c.model.reference_bus = require_int(network, "network", "reference_bus");

  const json& buses = require_section(doc, "buses", json::value_t::array);
  std::unordered_set<int> bus_ids;
  for (const auto& jb : buses) {
    Bus bus;
    bus.id = require_int(jb, "bus", "id");
    const std::string where = "bus " + std::to_string(bus.id);
    bus.p_load_mw = require_number(jb, where, "p_load_mw");
    bus.q_load_mvar = require_number(jb, where, "q_load_mvar");
    if (!bus_ids.insert(bus.id).second) {
      throw SchemaError(where + ": duplicate bus id");
    }
    c.model.buses.push_back(bus);
  }
  if (c.model.buses.empty()) throw SchemaError("buses: at least one bus required");

  const double z_base_ohm =
      c.model.base_kv * c.model.base_kv / c.model.base_mva;

  const json& branches = require_section(doc, "branches", json::value_t::array);
  for (const auto& jb : branches) {
    Branch br;
    br.from_bus = require_int(jb, "branch", "from");
    br.to_bus = require_int(jb, "branch", "to");
    const std::string where = branch_name(br);
    const bool has_ohm = jb.contains("r_ohm") || jb.contains("x_ohm");
    const bool has_pu = jb.contains("r_pu") || jb.contains("x_pu");
    if (has_ohm == has_pu) {
      throw SchemaError(where +
                        ": impedance must be given as r_ohm/x_ohm or r_pu/x_pu "
                        "(exactly one form)");
    }
    if (has_ohm) {
      br.r_pu = require_number(jb, where, "r_ohm") / z_base_ohm;
      br.x_pu = require_number(jb, where, "x_ohm") / z_base_ohm;
    } else {
      br.r_pu = require_number(jb, where, "r_pu");
      br.x_pu = require_number(jb, where, "x_pu");
    }
    if (jb.contains("limit_mva")) {
      if (!jb["limit_mva"].is_number()) {
        throw SchemaError(where + ": limit_mva must be numeric");
      }
      br.limit_mva = jb["limit_mva"].get<double>();
    }
    c.model.branches.push_back(br);
  }

  if (doc.contains("units")) {
    const json& units = require_section(doc, "units", json::value_t::array);
    for (const auto& ju : units) {
      FlexUnit u;
      u.id = require_string(ju, "unit", "id");
      const std::string where = "unit " + u.id;
      u.bus = require_int(ju, where, "bus");
      u.p_min_mw = require_number(ju, where, "p_min_mw");
      u.p_max_mw = require_number(ju, where, "p_max_mw");
      u.q_min_mvar = require_number(ju, where, "q_min_mvar");
      u.q_max_mvar = require_number(ju, where, "q_max_mvar");
      u.p0_mw = require_number(ju, where, "p0_mw");
      u.q0_mvar = require_number(ju, where, "q0_mvar");
      u.cost_p = require_number(ju, where, "cost_p");
      u.cost_q = require_number(ju, where, "cost_q");
      c.units.push_back(u);
    }
  }

  const json& tariff = require_section(doc, "tariff", json::value_t::object);
  c.tariff.price_p = require_number(tariff, "tariff", "price_p");
  c.tariff.price_q = require_number(tariff, "tariff", "price_q");

  build_topology(c.model);  // throws on cycles / disconnection

  const ValidationReport report = validate(c.model, c.units);
  if (!report.ok()) {
    throw SchemaError("case is structurally invalid:\n" + report.summary());
  }
  return c;
}

CaseData load_case_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open case file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return load_case(buffer.str());
}

std::string save_case(const CaseData& c) {
  json doc;
  if (!c.name.empty()) doc["name"] = c.name;
  if (!c.notes.empty()) doc["notes"] = c.notes;
  doc["network"] = {
      {"base_mva", c.model.base_mva},   {"base_kv", c.model.base_kv},
      {"v_min", c.model.v_min},         {"v_max", c.model.v_max},
      {"reference_bus", c.model.reference_bus},
  };
  doc["buses"] = json::array();
  for (const Bus& b : c.model.buses) {
    doc["buses"].push_back(
        {{"id", b.id}, {"p_load_mw", b.p_load_mw}, {"q_load_mvar", b.q_load_mvar}});
  }
  doc["branches"] = json::array();
  for (const Branch& br : c.model.branches) {
    json jb = {{"from", br.from_bus},
               {"to", br.to_bus},
               {"r_pu", br.r_pu},
               {"x_pu", br.x_pu}};
    if (br.limit_mva) jb["limit_mva"] = *br.limit_mva;
    doc["branches"].push_back(jb);
  }
  doc["units"] = json::array();
  for (const FlexUnit& u : c.units) {
    doc["units"].push_back({{"id", u.id},
                            {"bus", u.bus},
                            {"p_min_mw", u.p_min_mw},
                            {"p_max_mw", u.p_max_mw},
                            {"q_min_mvar", u.q_min_mvar},
                            {"q_max_mvar", u.q_max_mvar},
                            {"p0_mw", u.p0_mw},
                            {"q0_mvar", u.q0_mvar},
                            {"cost_p", u.cost_p},
                            {"cost_q", u.cost_q}});
  }
  doc["tariff"] = {{"price_p", c.tariff.price_p}, {"price_q", c.tariff.price_q}};
  return doc.dump(2) + "\n";
}

std::string case_fingerprint(const CaseData& c) {
  const std::string text = save_case(c);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return std::string(out);
}

}  // namespace flexcoop
