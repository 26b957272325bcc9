#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace flexcoop {

/// Power exchanged at the TSO-DSO interface, in consumption convention:
/// positive means the distribution network imports from the grid.
struct OperatingPoint {
  double p_mw = 0.0;
  double q_mvar = 0.0;
};

struct Bus {
  int id = 0;
  double p_load_mw = 0.0;
  double q_load_mvar = 0.0;
};

/// Impedances are stored per-unit on the network base; case files may give
/// them in ohms and are converted on load.
struct Branch {
  int from_bus = 0;
  int to_bus = 0;
  double r_pu = 0.0;
  double x_pu = 0.0;
  std::optional<double> limit_mva;
};

/// Positive p means injection into the network.
struct FlexUnit {
  std::string id;
  int bus = 0;
  double p_min_mw = 0.0;
  double p_max_mw = 0.0;
  double q_min_mvar = 0.0;
  double q_max_mvar = 0.0;
  double p0_mw = 0.0;
  double q0_mvar = 0.0;
  double cost_p = 0.0;  // $/MWh per MW of up or down regulation
  double cost_q = 0.0;  // $/MVArh
};

struct TariffModel {
  double price_p = 0.0;  // $/MWh paid by the TSO per MW of |delta P_ref|
  double price_q = 0.0;  // $/MVArh
};

struct NetworkModel {
  double base_mva = 0.0;
  double base_kv = 0.0;
  double v_min = 0.0;  // p.u.
  double v_max = 0.0;  // p.u.
  int reference_bus = 0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;

  /// Index into `buses` for a bus id; -1 if absent.
  int bus_index(int bus_id) const;
};

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TopologyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rooted tree view of a radial network, in breadth-first order from the
/// reference bus. Branch b connects up_bus[b] (closer to the root) with
/// down_bus[b]; both are indices into model.buses / model.branches.
struct Topology {
  std::vector<int> bfs_order;                    // bus indices, [0] = reference
  std::vector<int> parent_branch;                // per bus index, -1 at the root
  std::vector<int> up_bus;                       // per branch index
  std::vector<int> down_bus;                     // per branch index
  std::vector<std::vector<int>> child_branches;  // per bus index
};

/// Verifies the network is a single connected tree and orients it from the
/// reference bus. Throws TopologyError naming the first cycle-closing branch
/// or an unreachable bus.
Topology build_topology(const NetworkModel& model);

struct ValidationIssue {
  std::string element;  // "bus 7", "branch 3-4", "unit A", "network"
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool ok() const { return issues.empty(); }
  std::string summary() const;
};

/// Structural checks beyond what load_case enforces syntactically: bound
/// ordering, initial setpoints inside capability boxes, impedance sanity,
/// voltage band around 1.0, unit buses present.
ValidationReport validate(const NetworkModel& model,
                          const std::vector<FlexUnit>& units);

struct CaseData {
  std::string name;
  std::vector<std::string> notes;
  NetworkModel model;
  std::vector<FlexUnit> units;
  TariffModel tariff;
};

/// Parses a case document (JSON text). Schema violations, duplicate ids,
/// unknown endpoints and non-radial topologies all throw with the offending
/// element named. The returned case satisfies validate().
CaseData load_case(const std::string& json_text);

CaseData load_case_file(const std::string& path);

/// Serializes a case so that load_case(save_case(c)) reproduces c exactly.
std::string save_case(const CaseData& c);

/// Names: "ieee33" (Baran-Wu 33-bus feeder with four flexible units) and
/// "motivating3" (3-bus feeder with two identical units on one feeder).
CaseData builtin_case(const std::string& name);

bool is_builtin_case(const std::string& name);

/// The raw JSON document behind a builtin case.
std::string builtin_case_document(const std::string& name);

/// FNV-1a hash of the canonical serialization, as fixed-width hex. Used to
/// key run manifests and the coalition-value cache.
std::string case_fingerprint(const CaseData& c);

}  // namespace flexcoop
