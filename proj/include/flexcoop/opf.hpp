#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "flexcoop/net_model.hpp"
#include "flexcoop/powerflow.hpp"

namespace flexcoop {

/// Coalition of flexible units as a bitmask over indices into the units
/// vector (bit i set = units[i] participates).
using CoalitionMask = std::uint32_t;

inline CoalitionMask full_coalition(std::size_t n_units) {
  return n_units >= 32 ? ~CoalitionMask{0}
                       : ((CoalitionMask{1} << n_units) - 1u);
}

std::string coalition_label(CoalitionMask mask,
                            const std::vector<FlexUnit>& units);

/// Whether units may deviate in opposite directions on the same axis.
/// `forbid` restricts the whole fleet to one global sign per axis (the four
/// combinations are enumerated and the best feasible one kept).
enum class SwapMode { allow, forbid };

/// Objective direction for boundary tracing: minimize w_p*P_ref + w_q*Q_ref.
/// Normalized to unit length on construction.
struct DirectionWeights {
  double w_p = 0.0;
  double w_q = 0.0;
  DirectionWeights(double p, double q);
  static DirectionWeights from_angle(double theta_rad);
};

enum class SolveStatus { optimal, infeasible, not_converged };

const char* to_string(SolveStatus s);

/// Per-unit regulation split. Up and down are never simultaneously positive.
struct Regulation {
  std::string unit;
  double p_up_mw = 0.0;
  double p_down_mw = 0.0;
  double q_up_mvar = 0.0;
  double q_down_mvar = 0.0;
  double net_p() const { return p_up_mw - p_down_mw; }
  double net_q() const { return q_up_mvar - q_down_mvar; }
};

struct DispatchSolution {
  SolveStatus status = SolveStatus::not_converged;
  std::vector<Regulation> regulations;   // aligned with units
  std::vector<UnitSetpoint> setpoints;   // absolute, aligned with units
  PowerFlowSolution state;
  OperatingPoint achieved;               // (P_ref, Q_ref) of `state`
  double total_cost = 0.0;               // sum of cost_p*(up+down) + cost_q*(...)
  bool swap_active_p = false;
  bool swap_active_q = false;
  int sign_pattern = -1;                 // 0..3 when policy=forbid, else -1
  std::string diagnostics;
};

struct SolverConfig {
  double trust_region_init_pu = 0.1;   // on the network base
  double trust_region_floor_pu = 1e-9;
  double step_tol_pu = 1e-7;           // infinity norm of the setpoint step
  double residual_tol_pu = 1e-8;       // power mismatch + constraint violation
  double fd_step_pu = 1e-5;            // finite-difference probe size
  double feas_tol = 1e-6;              // slack for the final feasibility check
  int max_iterations = 150;
  /// Try all starting points and keep the cheapest optimum. Turn off for
  /// pure membership probes where the first feasible answer suffices.
  bool multi_start = true;
};

struct WarmStart {
  std::vector<UnitSetpoint> setpoints;
};

/// Interface exchange with every unit at its initial setpoint — the common
/// reference for requests, areas and regulations. Throws when the base power
/// flow does not converge.
OperatingPoint initial_interface_point(const NetworkModel& model,
                                       const Topology& topo,
                                       const std::vector<FlexUnit>& units);

/// Boundary-tracing problem: minimize the weighted interface exchange over
/// the coalition's capability boxes subject to network limits. Non-members
/// stay at their initial setpoints.
DispatchSolution solve_direction(const NetworkModel& model, const Topology& topo,
                                 const std::vector<FlexUnit>& units,
                                 CoalitionMask coalition, DirectionWeights weights,
                                 SwapMode policy = SwapMode::allow,
                                 const SolverConfig& config = {},
                                 const WarmStart* warm = nullptr);

/// Cost-minimal redispatch reaching the target interface exchange exactly.
/// status == infeasible doubles as the area membership test.
DispatchSolution solve_dispatch(const NetworkModel& model, const Topology& topo,
                                const std::vector<FlexUnit>& units,
                                CoalitionMask coalition, OperatingPoint target,
                                SwapMode policy = SwapMode::allow,
                                const SolverConfig& config = {},
                                const WarmStart* warm = nullptr);

struct ReachResult {
  double t_max_mva = 0.0;
  DispatchSolution at_max;  // dispatch at the last feasible probe
};

/// Largest t such that initial + t*direction is reachable by the coalition,
/// found by bisection on the dispatch membership test. `direction` is
/// normalized internally; resolution is the bisection stopping width.
ReachResult max_reach(const NetworkModel& model, const Topology& topo,
                      const std::vector<FlexUnit>& units, CoalitionMask coalition,
                      OperatingPoint direction, SwapMode policy = SwapMode::allow,
                      double resolution_mva = 1e-3,
                      const SolverConfig& config = {});

struct SwapReport {
  bool active_p = false;
  bool active_q = false;
  // (producing unit, consuming unit) label pairs per axis.
  std::vector<std::pair<std::string, std::string>> p_pairs;
  std::vector<std::pair<std::string, std::string>> q_pairs;
};

/// Flags units regulating in opposite directions on the same axis beyond
/// tol (MW / MVAr).
SwapReport detect_swap(const DispatchSolution& solution, double tol_mw = 1e-6);

}  // namespace flexcoop
