#pragma once

#include <string>
#include <vector>

#include "flexcoop/net_model.hpp"

namespace flexcoop {

/// One unit's dispatched operating point, aligned by index with the units
/// vector passed alongside. Positive p injects into the network.
struct UnitSetpoint {
  double p_mw = 0.0;
  double q_mvar = 0.0;
};

struct PowerFlowOptions {
  double tolerance_pu = 1e-8;  // max power mismatch
  int max_iterations = 100;
};

/// Branch-flow (DistFlow) solution on the rooted tree. For branch b from
/// parent i to child j, with v the squared voltage magnitude and l the
/// squared current magnitude (all per-unit):
///
///   P_b - r_b*l_b + p_net_j = sum of child branch flows at j
///   v_j = v_i - 2*(r_b*P_b + x_b*Q_b) + (r_b^2 + x_b^2)*l_b
///   l_b * v_i = P_b^2 + Q_b^2
///
/// p_net_j is unit injection minus load. branch_p/q are sending-end flows.
struct PowerFlowSolution {
  std::vector<double> v_sq;           // per bus index, p.u.^2
  std::vector<double> branch_p_mw;    // sending end, toward the child
  std::vector<double> branch_q_mvar;
  std::vector<double> branch_l_pu;    // squared current, p.u.
  double p_ref_mw = 0.0;              // interface consumption at the root
  double q_ref_mvar = 0.0;
  bool converged = false;
  int iterations = 0;
  double max_mismatch_pu = 0.0;

  double min_voltage_pu() const;
  int min_voltage_bus_index() const;
};

/// Scratch buffers; reuse across calls in hot loops.
struct SweepWorkspace {
  std::vector<double> p_net_pu, q_net_pu;      // per bus
  std::vector<double> acc_p, acc_q;            // per bus
};

/// Core solver on per-bus net injections (injection minus load, in MW /
/// MVAr). v_warm, when given, seeds the voltage profile (size = #buses);
/// otherwise a flat 1.0 p.u. start is used. Injections are not required to
/// lie inside any unit capability box.
PowerFlowSolution solve_powerflow_net(const NetworkModel& model,
                                      const Topology& topo,
                                      const std::vector<double>& net_p_mw,
                                      const std::vector<double>& net_q_mvar,
                                      const PowerFlowOptions& options = {},
                                      const std::vector<double>* v_warm = nullptr,
                                      SweepWorkspace* workspace = nullptr);

/// Convenience wrapper: assembles per-bus net injections from unit
/// setpoints (aligned with `units`) and bus loads.
PowerFlowSolution solve_powerflow(const NetworkModel& model,
                                  const Topology& topo,
                                  const std::vector<FlexUnit>& units,
                                  const std::vector<UnitSetpoint>& setpoints,
                                  const PowerFlowOptions& options = {});

enum class ViolationKind { voltage_lower, voltage_upper, thermal, unit_bound };

struct Violation {
  ViolationKind kind;
  std::string element;   // "bus 18", "branch 6-26", "unit D"
  double magnitude;      // p.u. for voltages, MVA for thermal, MW/MVAr for bounds
};

struct FeasibilityReport {
  std::vector<Violation> violations;
  bool feasible() const { return violations.empty(); }
};

/// Checks a converged solution against the voltage band, optional thermal
/// limits, and the units' capability boxes, with slack `tol` (p.u. on
/// voltages; scaled by the network base for MVA/MW checks). Throws
/// std::invalid_argument if the solution did not converge.
FeasibilityReport check_feasibility(const NetworkModel& model,
                                    const Topology& topo,
                                    const std::vector<FlexUnit>& units,
                                    const std::vector<UnitSetpoint>& setpoints,
                                    const PowerFlowSolution& solution,
                                    double tol = 1e-6);

}  // namespace flexcoop
