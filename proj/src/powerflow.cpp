#include "flexcoop/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flexcoop {

double PowerFlowSolution::min_voltage_pu() const {
  double best = 1e30;
  for (const double v : v_sq) best = std::min(best, v);
  return std::sqrt(best);
}

int PowerFlowSolution::min_voltage_bus_index() const {
  int arg = -1;
  double best = 1e30;
  for (std::size_t i = 0; i < v_sq.size(); ++i) {
    if (v_sq[i] < best) {
      best = v_sq[i];
      arg = static_cast<int>(i);
    }
  }
  return arg;
}

PowerFlowSolution solve_powerflow_net(const NetworkModel& model,
                                      const Topology& topo,
                                      const std::vector<double>& net_p_mw,
                                      const std::vector<double>& net_q_mvar,
                                      const PowerFlowOptions& options,
                                      const std::vector<double>* v_warm,
                                      SweepWorkspace* workspace) {
  const std::size_t n_bus = model.buses.size();
  const std::size_t n_br = model.branches.size();
  if (net_p_mw.size() != n_bus || net_q_mvar.size() != n_bus) {
    throw std::invalid_argument("net injection vectors must match bus count");
  }

  PowerFlowSolution sol;
  if (v_warm && v_warm->size() == n_bus) {
    sol.v_sq = *v_warm;
  } else {
    sol.v_sq.assign(n_bus, 1.0);
  }
  sol.branch_p_mw.assign(n_br, 0.0);
  sol.branch_q_mvar.assign(n_br, 0.0);
  sol.branch_l_pu.assign(n_br, 0.0);

  SweepWorkspace local;
  SweepWorkspace& ws = workspace ? *workspace : local;
  ws.p_net_pu.assign(n_bus, 0.0);
  ws.q_net_pu.assign(n_bus, 0.0);
  ws.acc_p.assign(n_bus, 0.0);
  ws.acc_q.assign(n_bus, 0.0);

  const double inv_base = 1.0 / model.base_mva;
  for (std::size_t i = 0; i < n_bus; ++i) {
    ws.p_net_pu[i] = net_p_mw[i] * inv_base;
    ws.q_net_pu[i] = net_q_mvar[i] * inv_base;
  }

  // Flows in p.u. while iterating; scaled to MW at the end.
  std::vector<double>& P = sol.branch_p_mw;
  std::vector<double>& Q = sol.branch_q_mvar;
  std::vector<double>& L = sol.branch_l_pu;

  const int root = topo.bfs_order.empty() ? 0 : topo.bfs_order[0];
  sol.v_sq[root] = 1.0;

  double mismatch = 0.0;
  int it = 0;
  for (it = 1; it <= options.max_iterations; ++it) {
    // Backward: accumulate receiving-end flows from the leaves toward the
    // root, then lift each branch to its sending end via l = (P^2+Q^2)/v_j.
    for (std::size_t k = topo.bfs_order.size(); k-- > 1;) {
      const int j = topo.bfs_order[k];
      double ap = -ws.p_net_pu[j];
      double aq = -ws.q_net_pu[j];
      for (const int cb : topo.child_branches[j]) {
        ap += P[cb];
        aq += Q[cb];
      }
      const int pb = topo.parent_branch[j];
      const Branch& br = model.branches[pb];
      const double l = (ap * ap + aq * aq) / sol.v_sq[j];
      L[pb] = l;
      P[pb] = ap + br.r_pu * l;
      Q[pb] = aq + br.x_pu * l;
    }

    // Forward: propagate squared voltages from the root.
    for (std::size_t k = 1; k < topo.bfs_order.size(); ++k) {
      const int j = topo.bfs_order[k];
      const int pb = topo.parent_branch[j];
      const Branch& br = model.branches[pb];
      const int i = topo.up_bus[pb];
      sol.v_sq[j] = sol.v_sq[i] - 2.0 * (br.r_pu * P[pb] + br.x_pu * Q[pb]) +
                    (br.r_pu * br.r_pu + br.x_pu * br.x_pu) * L[pb];
    }

    // Power mismatch: re-evaluate the nodal balance with the sending-end
    // current identity l*v_i = P^2 + Q^2. At a fixed point the backward
    // sweep's receiving-end l agrees with it, so the residual vanishes.
    mismatch = 0.0;
    for (std::size_t k = 1; k < topo.bfs_order.size(); ++k) {
      const int j = topo.bfs_order[k];
      const int pb = topo.parent_branch[j];
      const Branch& br = model.branches[pb];
      const int i = topo.up_bus[pb];
      const double l_hat = (P[pb] * P[pb] + Q[pb] * Q[pb]) / sol.v_sq[i];
      double rp = P[pb] - br.r_pu * l_hat + ws.p_net_pu[j];
      double rq = Q[pb] - br.x_pu * l_hat + ws.q_net_pu[j];
      for (const int cb : topo.child_branches[j]) {
        rp -= P[cb];
        rq -= Q[cb];
      }
      mismatch = std::max(mismatch, std::max(std::fabs(rp), std::fabs(rq)));
    }
    if (mismatch < options.tolerance_pu) break;
  }

  sol.iterations = std::min(it, options.max_iterations);
  sol.max_mismatch_pu = mismatch;
  sol.converged = mismatch < options.tolerance_pu &&
                  std::isfinite(mismatch);

  // Interface exchange: root branch flows plus local net load at the root.
  double p_ref = -ws.p_net_pu[root];
  double q_ref = -ws.q_net_pu[root];
  for (const int cb : topo.child_branches[root]) {
    p_ref += P[cb];
    q_ref += Q[cb];
  }
  sol.p_ref_mw = p_ref * model.base_mva;
  sol.q_ref_mvar = q_ref * model.base_mva;

  for (std::size_t b = 0; b < n_br; ++b) {
    P[b] *= model.base_mva;
    Q[b] *= model.base_mva;
  }
  return sol;
}

PowerFlowSolution solve_powerflow(const NetworkModel& model,
                                  const Topology& topo,
                                  const std::vector<FlexUnit>& units,
                                  const std::vector<UnitSetpoint>& setpoints,
                                  const PowerFlowOptions& options) {
  if (units.size() != setpoints.size()) {
    throw std::invalid_argument("setpoints must align with units");
  }
  const std::size_t n_bus = model.buses.size();
  std::vector<double> net_p(n_bus), net_q(n_bus);
  for (std::size_t i = 0; i < n_bus; ++i) {
    net_p[i] = -model.buses[i].p_load_mw;
    net_q[i] = -model.buses[i].q_load_mvar;
  }
  for (std::size_t u = 0; u < units.size(); ++u) {
    const int bi = model.bus_index(units[u].bus);
    if (bi < 0) {
      throw std::invalid_argument("unit " + units[u].id + " sits on unknown bus");
    }
    net_p[bi] += setpoints[u].p_mw;
    net_q[bi] += setpoints[u].q_mvar;
  }
  return solve_powerflow_net(model, topo, net_p, net_q, options);
}

FeasibilityReport check_feasibility(const NetworkModel& model,
                                    const Topology& topo,
                                    const std::vector<FlexUnit>& units,
                                    const std::vector<UnitSetpoint>& setpoints,
                                    const PowerFlowSolution& solution,
                                    double tol) {
  if (!solution.converged) {
    throw std::invalid_argument(
        "feasibility check requires a converged power flow solution");
  }
  if (units.size() != setpoints.size()) {
    throw std::invalid_argument("setpoints must align with units");
  }

  FeasibilityReport report;
  const double v_lo_sq = model.v_min * model.v_min;
  const double v_hi_sq = model.v_max * model.v_max;

  for (std::size_t i = 0; i < model.buses.size(); ++i) {
    const double v_sq = solution.v_sq[i];
    const std::string element = "bus " + std::to_string(model.buses[i].id);
    if (v_sq < v_lo_sq) {
      const double gap = model.v_min - std::sqrt(std::max(v_sq, 0.0));
      if (gap > tol) {
        report.violations.push_back({ViolationKind::voltage_lower, element, gap});
      }
    } else if (v_sq > v_hi_sq) {
      const double gap = std::sqrt(v_sq) - model.v_max;
      if (gap > tol) {
        report.violations.push_back({ViolationKind::voltage_upper, element, gap});
      }
    }
  }

  const double mva_tol = tol * model.base_mva;
  for (std::size_t b = 0; b < model.branches.size(); ++b) {
    const Branch& br = model.branches[b];
    if (!br.limit_mva) continue;
    const double s =
        std::hypot(solution.branch_p_mw[b], solution.branch_q_mvar[b]);
    if (s > *br.limit_mva + mva_tol) {
      report.violations.push_back({ViolationKind::thermal,
                                   "branch " + std::to_string(br.from_bus) + "-" +
                                       std::to_string(br.to_bus),
                                   s - *br.limit_mva});
    }
  }

  for (std::size_t u = 0; u < units.size(); ++u) {
    const FlexUnit& unit = units[u];
    const UnitSetpoint& sp = setpoints[u];
    const std::string element = "unit " + unit.id;
    const double over_p = std::max(sp.p_mw - unit.p_max_mw, unit.p_min_mw - sp.p_mw);
    if (over_p > mva_tol) {
      report.violations.push_back({ViolationKind::unit_bound, element, over_p});
    }
    const double over_q =
        std::max(sp.q_mvar - unit.q_max_mvar, unit.q_min_mvar - sp.q_mvar);
    if (over_q > mva_tol) {
      report.violations.push_back({ViolationKind::unit_bound, element, over_q});
    }
  }

  (void)topo;
  return report;
}

}  // namespace flexcoop
