#pragma once

// Independent reference implementations used only by the tests. These are
// deliberately written against different formulations than the library
// (complex phasors instead of the squared-magnitude recursion, plain
// point-in-polygon instead of the component machinery) so agreement is
// meaningful.

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "flexcoop/net_model.hpp"
#include "flexcoop/powerflow.hpp"

namespace oracles {

struct PhasorSolution {
  std::vector<double> v_mag_pu;  // per bus index
  double p_ref_mw = 0.0;
  double q_ref_mvar = 0.0;
  bool converged = false;
};

/// Complex-phasor backward/forward sweep on the rooted tree: backward pass
/// accumulates branch currents from nominal-voltage loads, forward pass
/// updates voltages, iterated to a fixed point. Never touches the squared
/// quantities the library works with.
inline PhasorSolution phasor_sweep(const flexcoop::NetworkModel& model,
                                   const flexcoop::Topology& topo,
                                   const std::vector<double>& net_p_mw,
                                   const std::vector<double>& net_q_mvar,
                                   double tol = 1e-12, int max_iter = 500) {
  using cd = std::complex<double>;
  const std::size_t nb = model.buses.size();
  const std::size_t ne = model.branches.size();
  std::vector<cd> v(nb, cd(1.0, 0.0));
  std::vector<cd> s(nb);  // per-bus net injection, p.u.
  for (std::size_t b = 0; b < nb; ++b)
    s[b] = cd(net_p_mw[b] / model.base_mva, net_q_mvar[b] / model.base_mva);
  std::vector<cd> z(ne);
  for (std::size_t e = 0; e < ne; ++e)
    z[e] = cd(model.branches[e].r_pu, model.branches[e].x_pu);

  PhasorSolution out;
  out.v_mag_pu.assign(nb, 1.0);
  std::vector<cd> i_branch(ne);
  for (int iter = 0; iter < max_iter; ++iter) {
    // Backward: branch current = load current at the child bus plus the
    // currents of the child's subtree, visiting children before parents.
    std::vector<cd> acc(nb, cd(0.0, 0.0));
    for (std::size_t k = topo.bfs_order.size(); k-- > 0;) {
      const int bus = topo.bfs_order[k];
      // current drawn at the bus: conj(S_draw / V), S_draw = -s (injection)
      acc[bus] += std::conj(-s[bus] / v[bus]);
      const int pb = topo.parent_branch[bus];
      if (pb >= 0) {
        i_branch[pb] = acc[bus];
        acc[topo.up_bus[pb]] += acc[bus];
      }
    }
    // Forward: drop voltages along each branch from the root.
    double shift = 0.0;
    for (std::size_t k = 1; k < topo.bfs_order.size(); ++k) {
      const int bus = topo.bfs_order[k];
      const int pb = topo.parent_branch[bus];
      const cd v_new = v[topo.up_bus[pb]] - z[pb] * i_branch[pb];
      shift = std::max(shift, std::abs(v_new - v[bus]));
      v[bus] = v_new;
    }
    if (shift < tol) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged) return out;
  for (std::size_t b = 0; b < nb; ++b) out.v_mag_pu[b] = std::abs(v[b]);
  // Interface exchange = what flows from the reference bus into the feeder
  // plus whatever is drawn at the reference bus itself.
  cd s_root(0.0, 0.0);
  const int root = topo.bfs_order[0];
  for (int cb : topo.child_branches[root])
    s_root += v[root] * std::conj(i_branch[cb]);
  s_root -= s[root];
  out.p_ref_mw = s_root.real() * model.base_mva;
  out.q_ref_mvar = s_root.imag() * model.base_mva;
  return out;
}

inline PhasorSolution phasor_sweep_units(
    const flexcoop::NetworkModel& model, const flexcoop::Topology& topo,
    const std::vector<flexcoop::FlexUnit>& units,
    const std::vector<flexcoop::UnitSetpoint>& setpoints) {
  const std::size_t nb = model.buses.size();
  std::vector<double> p(nb), q(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    p[b] = -model.buses[b].p_load_mw;
    q[b] = -model.buses[b].q_load_mvar;
  }
  for (std::size_t i = 0; i < units.size(); ++i) {
    const int b = model.bus_index(units[i].bus);
    if (b < 0) throw std::invalid_argument("oracle: unit bus not in model");
    p[b] += setpoints[i].p_mw;
    q[b] += setpoints[i].q_mvar;
  }
  return phasor_sweep(model, topo, p, q);
}

/// Exhaustive two-unit dispatch oracle: every lattice setpoint pair on the
/// units' active-power boxes that yields a converged, limit-respecting power
/// flow, together with its regulation cost and interface flow. Only
/// meaningful for cases with exactly two units and fixed reactive power.
struct LatticePoint {
  double p1 = 0.0;      // unit 0 setpoint, MW
  double p2 = 0.0;      // unit 1 setpoint, MW
  double cost = 0.0;    // sum of cost_p * |p - p0|
  double p_ref = 0.0;   // interface active power, MW
};

inline std::vector<LatticePoint> feasible_lattice(
    const flexcoop::NetworkModel& model, const flexcoop::Topology& topo,
    const std::vector<flexcoop::FlexUnit>& units, double step_mw) {
  using namespace flexcoop;
  std::vector<LatticePoint> out;
  if (units.size() != 2) return out;
  const PowerFlowOptions opts{1e-11, 300};
  const auto steps = [&](const FlexUnit& u) {
    std::vector<double> vals;
    const int lo = static_cast<int>(std::ceil(u.p_min_mw / step_mw - 1e-9));
    const int hi = static_cast<int>(std::floor(u.p_max_mw / step_mw + 1e-9));
    for (int k = lo; k <= hi; ++k) vals.push_back(k * step_mw);
    return vals;
  };
  for (double p1 : steps(units[0])) {
    for (double p2 : steps(units[1])) {
      std::vector<UnitSetpoint> sps(2);
      sps[0] = {p1, units[0].q0_mvar};
      sps[1] = {p2, units[1].q0_mvar};
      const PowerFlowSolution sol =
          solve_powerflow(model, topo, units, sps, opts);
      if (!sol.converged) continue;
      if (!check_feasibility(model, topo, units, sps, sol).feasible()) continue;
      LatticePoint lp;
      lp.p1 = p1;
      lp.p2 = p2;
      lp.cost = units[0].cost_p * std::abs(p1 - units[0].p0_mw) +
                units[1].cost_p * std::abs(p2 - units[1].p0_mw);
      lp.p_ref = sol.p_ref_mw;
      out.push_back(lp);
    }
  }
  return out;
}

/// The lattice point whose interface flow is closest to target_p.
inline const LatticePoint* nearest_lattice_point(
    const std::vector<LatticePoint>& lattice, double target_p) {
  const LatticePoint* best = nullptr;
  for (const LatticePoint& lp : lattice) {
    if (!best || std::abs(lp.p_ref - target_p) < std::abs(best->p_ref - target_p))
      best = &lp;
  }
  return best;
}

/// Cheapest lattice cost among points whose interface flow lies within
/// band_mw of target_p; negative when no point qualifies.
inline double lattice_cost_at(const std::vector<LatticePoint>& lattice,
                              double target_p, double band_mw) {
  double best = -1.0;
  for (const LatticePoint& lp : lattice) {
    if (std::abs(lp.p_ref - target_p) > band_mw) continue;
    if (best < 0.0 || lp.cost < best) best = lp.cost;
  }
  return best;
}

/// Even-odd point-in-polygon on an open ring, with an edge-distance slack.
inline bool point_in_ring(const std::vector<flexcoop::OperatingPoint>& ring,
                          double px, double py, double tol) {
  const std::size_t n = ring.size();
  if (n < 3) return false;
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = ring[i].p_mw, yi = ring[i].q_mvar;
    const double xj = ring[j].p_mw, yj = ring[j].q_mvar;
    if ((yi > py) != (yj > py) &&
        px < (xj - xi) * (py - yi) / (yj - yi) + xi)
      inside = !inside;
    // distance from the point to segment (i, j)
    const double dx = xj - xi, dy = yj - yi;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((px - xi) * dx + (py - yi) * dy) / len2 : 0.0;
    t = std::max(0.0, std::min(1.0, t));
    const double ex = xi + t * dx - px, ey = yi + t * dy - py;
    if (std::hypot(ex, ey) <= tol) return true;
  }
  return inside;
}

}  // namespace oracles
