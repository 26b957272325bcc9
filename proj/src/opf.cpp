#include "flexcoop/opf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "flexcoop/linprog.hpp"

namespace flexcoop {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Penalty rates. They only need to dominate the regulation cost rates by a
// few orders of magnitude; shadow prices in the studied cases stay below
// ~1e4 $/MW, so 1e6 keeps elastic slacks at zero whenever the target is
// reachable.
constexpr double kElasticCost = 1e6;    // $ per MW of unmet interface target
constexpr double kVoltSlackCost = 1e6;  // $ per pu^2 of relaxed voltage row
constexpr double kBranchSlackCost = 1e6;
constexpr double kWatchMargin = 0.03;   // pu^2 proximity that pre-seeds voltage rows
constexpr double kLinTol = 1e-9;

/// One decision axis: the p or q setpoint of one unit, with the absolute
/// window it may move in (capability box intersected with the sign pattern).
struct Axis {
  int unit = 0;
  bool is_q = false;
  double lo = 0.0;
  double hi = 0.0;
  double base = 0.0;  // initial setpoint, the zero of the regulation split
  double cost = 0.0;
  double eps = 0.0;   // deterministic tie-break added to the LP cost only
};

double axis_value(const UnitSetpoint& sp, const Axis& a) {
  return a.is_q ? sp.q_mvar : sp.p_mw;
}

void set_axis_value(UnitSetpoint& sp, const Axis& a, double v) {
  (a.is_q ? sp.q_mvar : sp.p_mw) = v;
}

struct Jacobian {
  std::vector<double> d_pref;               // per axis, MW per MW
  std::vector<double> d_qref;               // per axis, MVAr per MW
  std::vector<std::vector<double>> d_vsq;   // per axis: per bus, pu^2 per MW
  std::vector<std::vector<double>> d_brp;   // per axis: per limited branch
  std::vector<std::vector<double>> d_brq;
};

/// Exact network response at a set of unit setpoints, with warm-started
/// repeat solves and central-difference sensitivities.
class NetworkResponse {
 public:
  NetworkResponse(const NetworkModel& model, const Topology& topo,
                  const std::vector<FlexUnit>& units)
      : model_(model), topo_(topo), units_(units) {
    const std::size_t nb = model.buses.size();
    base_p_.resize(nb);
    base_q_.resize(nb);
    for (std::size_t b = 0; b < nb; ++b) {
      base_p_[b] = -model.buses[b].p_load_mw;
      base_q_[b] = -model.buses[b].q_load_mvar;
    }
    unit_bus_.reserve(units.size());
    for (const auto& u : units) unit_bus_.push_back(model.bus_index(u.bus));
    for (std::size_t e = 0; e < model.branches.size(); ++e)
      if (model.branches[e].limit_mva) limited_.push_back(static_cast<int>(e));
    net_p_.resize(nb);
    net_q_.resize(nb);
    v_warm_.assign(nb, 1.0);
    opts_.tolerance_pu = 1e-11;
    opts_.max_iterations = 300;
  }

  const std::vector<int>& limited_branches() const { return limited_; }

  PowerFlowSolution eval(const std::vector<UnitSetpoint>& sp,
                         bool update_warm = true) {
    fill_net(sp);
    PowerFlowSolution sol = solve_powerflow_net(model_, topo_, net_p_, net_q_,
                                                opts_, &v_warm_, &work_);
    if (sol.converged && update_warm) v_warm_ = sol.v_sq;
    return sol;
  }

  /// Central differences of (P_ref, Q_ref, v_sq, limited branch flows) with
  /// respect to each axis, taken on the exact sweep around `sp`.
  void jacobian(const std::vector<UnitSetpoint>& sp,
                const std::vector<Axis>& axes, double h_mw, Jacobian& jac) {
    const std::size_t na = axes.size();
    const std::size_t nb = model_.buses.size();
    jac.d_pref.assign(na, 0.0);
    jac.d_qref.assign(na, 0.0);
    jac.d_vsq.assign(na, std::vector<double>(nb, 0.0));
    jac.d_brp.assign(na, std::vector<double>(limited_.size(), 0.0));
    jac.d_brq.assign(na, std::vector<double>(limited_.size(), 0.0));
    std::vector<UnitSetpoint> probe = sp;
    for (std::size_t k = 0; k < na; ++k) {
      const Axis& a = axes[k];
      const double v0 = axis_value(sp[a.unit], a);
      set_axis_value(probe[a.unit], a, v0 + h_mw);
      PowerFlowSolution hi = eval(probe, false);
      set_axis_value(probe[a.unit], a, v0 - h_mw);
      PowerFlowSolution lo = eval(probe, false);
      set_axis_value(probe[a.unit], a, v0);
      if (!hi.converged || !lo.converged)
        throw std::runtime_error("power flow diverged inside a sensitivity probe");
      const double inv = 1.0 / (2.0 * h_mw);
      jac.d_pref[k] = (hi.p_ref_mw - lo.p_ref_mw) * inv;
      jac.d_qref[k] = (hi.q_ref_mvar - lo.q_ref_mvar) * inv;
      for (std::size_t b = 0; b < nb; ++b)
        jac.d_vsq[k][b] = (hi.v_sq[b] - lo.v_sq[b]) * inv;
      for (std::size_t e = 0; e < limited_.size(); ++e) {
        jac.d_brp[k][e] =
            (hi.branch_p_mw[limited_[e]] - lo.branch_p_mw[limited_[e]]) * inv;
        jac.d_brq[k][e] =
            (hi.branch_q_mvar[limited_[e]] - lo.branch_q_mvar[limited_[e]]) * inv;
      }
    }
  }

 private:
  void fill_net(const std::vector<UnitSetpoint>& sp) {
    net_p_ = base_p_;
    net_q_ = base_q_;
    for (std::size_t i = 0; i < units_.size(); ++i) {
      net_p_[unit_bus_[i]] += sp[i].p_mw;
      net_q_[unit_bus_[i]] += sp[i].q_mvar;
    }
  }

  const NetworkModel& model_;
  const Topology& topo_;
  const std::vector<FlexUnit>& units_;
  std::vector<double> base_p_, base_q_, net_p_, net_q_, v_warm_;
  std::vector<int> unit_bus_, limited_;
  PowerFlowOptions opts_;
  SweepWorkspace work_;
};

enum class Mode { direction, dispatch };

struct IterPoint {
  std::vector<UnitSetpoint> sp;
  PowerFlowSolution pf;
  bool ok = false;
  double cost = 0.0;
  double obj = 0.0;       // cost (dispatch) or weighted exchange (direction)
  double eq_sum_mw = 0.0;
  double eq_max_pu = 0.0;
  double viol_v_sum = 0.0;  // pu^2
  double viol_v_max = 0.0;
  double viol_s_sum = 0.0;  // MVA
  double viol_s_max = 0.0;
  double merit = kInf;
};

struct SlpResult {
  bool optimal = false;
  bool clean = true;  // finished without a numerical breakdown
  double objective = kInf;
  DispatchSolution sol;
};

double regulation_cost(const std::vector<FlexUnit>& units,
                       const std::vector<UnitSetpoint>& sp) {
  double cost = 0.0;
  for (std::size_t i = 0; i < units.size(); ++i) {
    cost += units[i].cost_p * std::abs(sp[i].p_mw - units[i].p0_mw);
    cost += units[i].cost_q * std::abs(sp[i].q_mvar - units[i].q0_mvar);
  }
  return cost;
}

class SlpEngine {
 public:
  SlpEngine(const NetworkModel& model, const Topology& topo,
            const std::vector<FlexUnit>& units, NetworkResponse& net,
            const SolverConfig& cfg)
      : model_(model), units_(units), net_(net), cfg_(cfg) {
    (void)topo;
    base_ = model.base_mva;
    vmin_sq_ = model.v_min * model.v_min;
    vmax_sq_ = model.v_max * model.v_max;
  }

  SlpResult run(const std::vector<Axis>& axes, Mode mode, OperatingPoint target,
                DirectionWeights w, std::vector<UnitSetpoint> start,
                const std::string& tag) {
    SlpResult res;
    const double h_mw = cfg_.fd_step_pu * base_;
    const double step_tol_mw = cfg_.step_tol_pu * base_;
    const double tr_floor_mw = cfg_.trust_region_floor_pu * base_;
    double tr_mw = cfg_.trust_region_init_pu * base_;

    IterPoint cur = evaluate(axes, mode, target, w, std::move(start));
    if (!cur.ok) {
      res.clean = false;
      res.sol = failure_solution(cur, SolveStatus::not_converged,
                                 tag + ": power flow diverged at the start point");
      return res;
    }

    // (bus, side) pairs with an active linearized voltage row; side 0 = lower.
    std::set<std::pair<int, int>> watched;
    seed_watch(cur.pf, watched);

    Jacobian jac;
    int iter = 0;
    int rejects = 0;
    bool converged = false;
    bool stuck = false;
    for (iter = 1; iter <= cfg_.max_iterations; ++iter) {
      net_.jacobian(cur.sp, axes, h_mw, jac);
      std::vector<double> y_new;
      if (!solve_step_lp(axes, mode, target, w, cur, jac, tr_mw, watched, y_new)) {
        res.clean = false;
        break;
      }

      double step_norm = 0.0;
      for (std::size_t k = 0; k < axes.size(); ++k)
        step_norm = std::max(step_norm,
                             std::abs(y_new[k] - axis_value(cur.sp[axes[k].unit], axes[k])));

      if (step_norm < step_tol_mw) {
        if (residual_ok(cur, mode)) {
          converged = true;
          break;
        }
        // The proposed step is below the step tolerance while the residual
        // is still above its own tolerance. When the micro-step actually
        // closes the gap, take it and keep iterating; only a step that no
        // longer helps means the target is out of reach.
        std::vector<UnitSetpoint> sp_fix = cur.sp;
        for (std::size_t k = 0; k < axes.size(); ++k)
          set_axis_value(sp_fix[axes[k].unit], axes[k],
                         std::clamp(y_new[k], axes[k].lo, axes[k].hi));
        IterPoint fix = evaluate(axes, mode, target, w, std::move(sp_fix));
        const double res_cur = cur.eq_max_pu +
                               std::max(cur.viol_v_max, cur.viol_s_max / base_);
        const double res_fix = !fix.ok ? kInf
                                       : fix.eq_max_pu +
                                             std::max(fix.viol_v_max,
                                                      fix.viol_s_max / base_);
        if (res_fix < 0.5 * res_cur) {
          cur = std::move(fix);
          continue;
        }
        stuck = true;  // the linearization cannot move closer: unreachable
        break;
      }

      std::vector<UnitSetpoint> sp_try = cur.sp;
      for (std::size_t k = 0; k < axes.size(); ++k)
        set_axis_value(sp_try[axes[k].unit], axes[k],
                       std::clamp(y_new[k], axes[k].lo, axes[k].hi));
      IterPoint trial = evaluate(axes, mode, target, w, std::move(sp_try));

      const double merit_gate = cur.merit - 1e-12 * std::max(1.0, std::abs(cur.merit));
      const double viol_cur = cur.viol_v_sum + cur.viol_s_sum / base_;
      const double viol_try = trial.ok ? trial.viol_v_sum + trial.viol_s_sum / base_ : kInf;
      if (!trial.ok) {
        tr_mw *= 0.5;
        ++rejects;
      } else if (viol_try > viol_cur + 1e-12 && viol_try > cfg_.residual_tol_pu) {
        // Constraint violation grew: tighten the trust region, keep the step
        // only when the merit still improved.
        tr_mw *= 0.5;
        if (trial.merit < merit_gate)
          cur = std::move(trial);
        else
          ++rejects;
      } else if (trial.merit < merit_gate) {
        cur = std::move(trial);
        tr_mw = std::min(tr_mw * 1.5, cfg_.trust_region_init_pu * base_);
      } else if (trial.merit < cur.merit + 1e-12 * std::max(1.0, std::abs(cur.merit)) &&
                 step_norm < 16.0 * step_tol_mw) {
        // Flat wiggle right at the solution; take it and let the step test end
        // the loop next round.
        cur = std::move(trial);
      } else {
        tr_mw *= 0.5;
        ++rejects;
      }

      if (tr_mw < tr_floor_mw) {
        if (residual_ok(cur, mode))
          converged = true;
        else
          stuck = true;
        break;
      }
    }

    if (!converged && !stuck && res.clean && iter > cfg_.max_iterations) {
      if (residual_ok(cur, mode)) converged = true;
    }

    std::ostringstream diag;
    diag << tag << ": iterations=" << std::min(iter, cfg_.max_iterations)
         << " rejects=" << rejects << " watched=" << watched.size();

    if (converged) {
      res.optimal = true;
      res.objective = cur.obj;
      res.sol = assemble(cur, diag.str());
      res.sol.status = SolveStatus::optimal;
    } else {
      diag << (stuck ? " (target unreachable within constraints)"
                     : " (no convergence)");
      res.sol = failure_solution(cur, stuck && res.clean ? SolveStatus::infeasible
                                                         : SolveStatus::not_converged,
                                 diag.str());
      res.clean = res.clean && stuck;
    }
    return res;
  }

 private:
  IterPoint evaluate(const std::vector<Axis>& axes, Mode mode,
                     OperatingPoint target, DirectionWeights w,
                     std::vector<UnitSetpoint> sp) {
    (void)axes;
    IterPoint pt;
    pt.sp = std::move(sp);
    pt.pf = net_.eval(pt.sp);
    if (!pt.pf.converged) return pt;
    pt.ok = true;
    pt.cost = regulation_cost(units_, pt.sp);
    if (mode == Mode::dispatch) {
      const double dp = pt.pf.p_ref_mw - target.p_mw;
      const double dq = pt.pf.q_ref_mvar - target.q_mvar;
      pt.eq_sum_mw = std::abs(dp) + std::abs(dq);
      pt.eq_max_pu = std::max(std::abs(dp), std::abs(dq)) / base_;
      pt.obj = pt.cost;
    } else {
      pt.obj = w.w_p * pt.pf.p_ref_mw + w.w_q * pt.pf.q_ref_mvar;
    }
    for (double v : pt.pf.v_sq) {
      const double under = vmin_sq_ - v;
      const double over = v - vmax_sq_;
      if (under > 0) {
        pt.viol_v_sum += under;
        pt.viol_v_max = std::max(pt.viol_v_max, under);
      }
      if (over > 0) {
        pt.viol_v_sum += over;
        pt.viol_v_max = std::max(pt.viol_v_max, over);
      }
    }
    for (int e : net_.limited_branches()) {
      const double s = std::hypot(pt.pf.branch_p_mw[e], pt.pf.branch_q_mvar[e]);
      const double excess = s - *model_.branches[e].limit_mva;
      if (excess > 0) {
        pt.viol_s_sum += excess;
        pt.viol_s_max = std::max(pt.viol_s_max, excess);
      }
    }
    pt.merit = pt.obj + kElasticCost * pt.eq_sum_mw +
               kVoltSlackCost * 10.0 * pt.viol_v_sum +
               kBranchSlackCost * pt.viol_s_sum;
    return pt;
  }

  bool residual_ok(const IterPoint& pt, Mode mode) const {
    const double viol_pu = std::max(pt.viol_v_max, pt.viol_s_max / base_);
    if (viol_pu > cfg_.residual_tol_pu) return false;
    if (mode == Mode::dispatch && pt.eq_max_pu > cfg_.residual_tol_pu) return false;
    return true;
  }

  void seed_watch(const PowerFlowSolution& pf,
                  std::set<std::pair<int, int>>& watched) const {
    for (std::size_t b = 0; b < pf.v_sq.size(); ++b) {
      if (pf.v_sq[b] < vmin_sq_ + kWatchMargin) watched.insert({static_cast<int>(b), 0});
      if (pf.v_sq[b] > vmax_sq_ - kWatchMargin) watched.insert({static_cast<int>(b), 1});
    }
  }

  /// One trust-region LP around `cur`, re-solved while the proposed step
  /// violates the linearized voltage profile at an unwatched bus.
  bool solve_step_lp(const std::vector<Axis>& axes, Mode mode,
                     OperatingPoint target, DirectionWeights w,
                     const IterPoint& cur, const Jacobian& jac, double tr_mw,
                     std::set<std::pair<int, int>>& watched,
                     std::vector<double>& y_new) {
    const std::size_t na = axes.size();
    const std::size_t nb = model_.buses.size();
    std::vector<double> n_cur(na), n_lo(na), n_hi(na);
    for (std::size_t k = 0; k < na; ++k) {
      const double y = axis_value(cur.sp[axes[k].unit], axes[k]);
      n_cur[k] = y - axes[k].base;
      n_lo[k] = std::max(axes[k].lo, y - tr_mw) - axes[k].base;
      n_hi[k] = std::min(axes[k].hi, y + tr_mw) - axes[k].base;
    }

    for (int round = 0; round < 6; ++round) {
      std::vector<std::pair<int, int>> rows(watched.begin(), watched.end());
      const std::size_t n_elastic = mode == Mode::dispatch ? 4 : 0;
      const std::size_t n_br = net_.limited_branches().size();
      LpProblem lp;
      lp.n_vars = 2 * na + n_elastic + rows.size() + n_br;
      lp.c.assign(lp.n_vars, 0.0);
      lp.lower.assign(lp.n_vars, 0.0);
      lp.upper.assign(lp.n_vars, kInf);
      for (std::size_t k = 0; k < na; ++k) {
        lp.c[2 * k] = axes[k].cost + axes[k].eps;
        lp.c[2 * k + 1] = axes[k].cost + axes[k].eps;
        if (mode == Mode::direction) {
          const double g = w.w_p * jac.d_pref[k] + w.w_q * jac.d_qref[k];
          lp.c[2 * k] = g;
          lp.c[2 * k + 1] = -g;
        }
        lp.lower[2 * k] = std::max(0.0, n_lo[k]);
        lp.upper[2 * k] = std::max(0.0, n_hi[k]);
        lp.lower[2 * k + 1] = std::max(0.0, -n_hi[k]);
        lp.upper[2 * k + 1] = std::max(0.0, -n_lo[k]);
      }
      const std::size_t e0 = 2 * na;
      for (std::size_t j = 0; j < n_elastic; ++j) lp.c[e0 + j] = kElasticCost;
      const std::size_t v0 = e0 + n_elastic;
      for (std::size_t j = 0; j < rows.size(); ++j) lp.c[v0 + j] = kVoltSlackCost;
      const std::size_t s0 = v0 + rows.size();
      for (std::size_t j = 0; j < n_br; ++j) lp.c[s0 + j] = kBranchSlackCost;

      if (mode == Mode::dispatch) {
        std::vector<double> ap(lp.n_vars, 0.0), aq(lp.n_vars, 0.0);
        double bp = target.p_mw - cur.pf.p_ref_mw;
        double bq = target.q_mvar - cur.pf.q_ref_mvar;
        for (std::size_t k = 0; k < na; ++k) {
          ap[2 * k] = jac.d_pref[k];
          ap[2 * k + 1] = -jac.d_pref[k];
          aq[2 * k] = jac.d_qref[k];
          aq[2 * k + 1] = -jac.d_qref[k];
          bp += jac.d_pref[k] * n_cur[k];
          bq += jac.d_qref[k] * n_cur[k];
        }
        ap[e0] = 1.0;
        ap[e0 + 1] = -1.0;
        aq[e0 + 2] = 1.0;
        aq[e0 + 3] = -1.0;
        lp.add_row(ap, bp, LpProblem::RowType::eq);
        lp.add_row(aq, bq, LpProblem::RowType::eq);
      }
      for (std::size_t j = 0; j < rows.size(); ++j) {
        const int bus = rows[j].first;
        const bool upper = rows[j].second == 1;
        std::vector<double> a(lp.n_vars, 0.0);
        double b = upper ? vmax_sq_ - cur.pf.v_sq[bus] : cur.pf.v_sq[bus] - vmin_sq_;
        for (std::size_t k = 0; k < na; ++k) {
          const double jv = jac.d_vsq[k][bus];
          const double coef = upper ? jv : -jv;
          a[2 * k] = coef;
          a[2 * k + 1] = -coef;
          b += coef * n_cur[k];
        }
        a[v0 + j] = -1.0;
        lp.add_row(a, b, LpProblem::RowType::le);
      }
      for (std::size_t j = 0; j < n_br; ++j) {
        const int e = net_.limited_branches()[j];
        const double p = cur.pf.branch_p_mw[e];
        const double q = cur.pf.branch_q_mvar[e];
        const double s = std::hypot(p, q);
        if (s < 1e-6 * base_) continue;  // gradient undefined at zero flow
        std::vector<double> a(lp.n_vars, 0.0);
        double b = *model_.branches[e].limit_mva - s;
        for (std::size_t k = 0; k < na; ++k) {
          const double coef = (p * jac.d_brp[k][j] + q * jac.d_brq[k][j]) / s;
          a[2 * k] = coef;
          a[2 * k + 1] = -coef;
          b += coef * n_cur[k];
        }
        a[s0 + j] = -1.0;
        lp.add_row(a, b, LpProblem::RowType::le);
      }

      LpSolution ls = solve_lp(lp);
      if (ls.status != LpStatus::optimal) return false;

      y_new.assign(na, 0.0);
      for (std::size_t k = 0; k < na; ++k)
        y_new[k] = axes[k].base + ls.x[2 * k] - ls.x[2 * k + 1];

      // Check the proposed step against the linearized voltage profile at
      // every bus; pull newly violated buses into the watched set.
      bool added = false;
      for (std::size_t b = 0; b < nb; ++b) {
        double v_lin = cur.pf.v_sq[b];
        for (std::size_t k = 0; k < na; ++k)
          v_lin += jac.d_vsq[k][b] *
                   (y_new[k] - axis_value(cur.sp[axes[k].unit], axes[k]));
        const int bi = static_cast<int>(b);
        if (v_lin < vmin_sq_ - kLinTol && watched.insert({bi, 0}).second) added = true;
        if (v_lin > vmax_sq_ + kLinTol && watched.insert({bi, 1}).second) added = true;
      }
      if (!added) return true;
    }
    return true;  // merit check still guards the accepted nonlinear point
  }

  DispatchSolution assemble(const IterPoint& pt, const std::string& diag) const {
    DispatchSolution sol;
    sol.setpoints = pt.sp;
    sol.state = pt.pf;
    sol.achieved = {pt.pf.p_ref_mw, pt.pf.q_ref_mvar};
    sol.total_cost = pt.cost;
    sol.regulations.resize(units_.size());
    for (std::size_t i = 0; i < units_.size(); ++i) {
      Regulation& r = sol.regulations[i];
      r.unit = units_[i].id;
      const double dp = pt.sp[i].p_mw - units_[i].p0_mw;
      const double dq = pt.sp[i].q_mvar - units_[i].q0_mvar;
      r.p_up_mw = std::max(dp, 0.0);
      r.p_down_mw = std::max(-dp, 0.0);
      r.q_up_mvar = std::max(dq, 0.0);
      r.q_down_mvar = std::max(-dq, 0.0);
    }
    sol.diagnostics = diag;
    SwapReport swap = detect_swap(sol);
    sol.swap_active_p = swap.active_p;
    sol.swap_active_q = swap.active_q;
    return sol;
  }

  DispatchSolution failure_solution(const IterPoint& pt, SolveStatus status,
                                    const std::string& diag) const {
    DispatchSolution sol = pt.ok ? assemble(pt, diag) : DispatchSolution{};
    if (!pt.ok) {
      sol.setpoints = pt.sp;
      sol.regulations.resize(units_.size());
      for (std::size_t i = 0; i < units_.size(); ++i)
        sol.regulations[i].unit = units_[i].id;
      sol.diagnostics = diag;
    }
    sol.status = status;
    return sol;
  }

  const NetworkModel& model_;
  const std::vector<FlexUnit>& units_;
  NetworkResponse& net_;
  const SolverConfig& cfg_;
  double base_ = 1.0;
  double vmin_sq_ = 0.0;
  double vmax_sq_ = 0.0;
};

std::vector<int> label_ranks(const std::vector<FlexUnit>& units) {
  std::vector<int> order(units.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return units[a].id < units[b].id; });
  std::vector<int> rank(units.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = static_cast<int>(r);
  return rank;
}

/// Decision axes for one sign pattern. pattern = -1 keeps the full capability
/// boxes; otherwise bit 0 selects p up (set) or down, bit 1 the same for q.
std::vector<Axis> build_axes(const std::vector<FlexUnit>& units,
                             CoalitionMask coalition, int pattern,
                             const std::vector<int>& ranks, double eps_scale) {
  std::vector<Axis> axes;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (!(coalition & (CoalitionMask{1} << i))) continue;
    const FlexUnit& u = units[i];
    double plo = u.p_min_mw, phi = u.p_max_mw;
    double qlo = u.q_min_mvar, qhi = u.q_max_mvar;
    if (pattern >= 0) {
      if (pattern & 1)
        plo = u.p0_mw;
      else
        phi = u.p0_mw;
      if (pattern & 2)
        qlo = u.q0_mvar;
      else
        qhi = u.q0_mvar;
    }
    const double eps_p = eps_scale * (1.0 + ranks[i]);
    if (phi - plo > 1e-12)
      axes.push_back({static_cast<int>(i), false, plo, phi, u.p0_mw, u.cost_p, eps_p});
    if (qhi - qlo > 1e-12)
      axes.push_back({static_cast<int>(i), true, qlo, qhi, u.q0_mvar, u.cost_q,
                      eps_p * 1.25});
  }
  return axes;
}

std::vector<UnitSetpoint> initial_setpoints(const std::vector<FlexUnit>& units) {
  std::vector<UnitSetpoint> sp(units.size());
  for (std::size_t i = 0; i < units.size(); ++i) sp[i] = {units[i].p0_mw, units[i].q0_mvar};
  return sp;
}

std::vector<UnitSetpoint> clip_to_axes(const std::vector<FlexUnit>& units,
                                       const std::vector<Axis>& axes,
                                       const std::vector<UnitSetpoint>& wanted) {
  std::vector<UnitSetpoint> sp = initial_setpoints(units);
  for (const Axis& a : axes)
    set_axis_value(sp[a.unit], a,
                   std::clamp(axis_value(wanted[a.unit], a), a.lo, a.hi));
  return sp;
}

void check_coalition(CoalitionMask coalition, std::size_t n_units) {
  if (coalition & ~full_coalition(n_units))
    throw std::invalid_argument("coalition mask references units beyond the case");
}

double eps_scale_for(const std::vector<FlexUnit>& units) {
  double scale = 1.0;
  for (const auto& u : units) scale = std::max({scale, u.cost_p, u.cost_q});
  return 1e-9 * scale;
}

bool same_setpoints(const std::vector<UnitSetpoint>& a,
                    const std::vector<UnitSetpoint>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i].p_mw - b[i].p_mw) > 1e-12 ||
        std::abs(a[i].q_mvar - b[i].q_mvar) > 1e-12)
      return false;
  return true;
}

}  // namespace

DirectionWeights::DirectionWeights(double p, double q) {
  const double norm = std::hypot(p, q);
  if (!(norm > 1e-12))
    throw std::invalid_argument("direction weights must not both be zero");
  w_p = p / norm;
  w_q = q / norm;
}

DirectionWeights DirectionWeights::from_angle(double theta_rad) {
  return DirectionWeights(std::cos(theta_rad), std::sin(theta_rad));
}

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::not_converged: return "not_converged";
  }
  return "unknown";
}

std::string coalition_label(CoalitionMask mask, const std::vector<FlexUnit>& units) {
  std::string out;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (!(mask & (CoalitionMask{1} << i))) continue;
    if (!out.empty()) out += "+";
    out += units[i].id;
  }
  return out.empty() ? "empty" : out;
}

OperatingPoint initial_interface_point(const NetworkModel& model,
                                       const Topology& topo,
                                       const std::vector<FlexUnit>& units) {
  // Solved at the solver's internal tolerance so that targets placed
  // relative to this point carry no phantom mismatch.
  const PowerFlowSolution pf = solve_powerflow(
      model, topo, units, initial_setpoints(units), {1e-11, 300});
  if (!pf.converged)
    throw std::runtime_error("power flow did not converge at the initial setpoints");
  return {pf.p_ref_mw, pf.q_ref_mvar};
}

DispatchSolution solve_direction(const NetworkModel& model, const Topology& topo,
                                 const std::vector<FlexUnit>& units,
                                 CoalitionMask coalition, DirectionWeights weights,
                                 SwapMode policy, const SolverConfig& config,
                                 const WarmStart* warm) {
  check_coalition(coalition, units.size());
  NetworkResponse net(model, topo, units);
  SlpEngine engine(model, topo, units, net, config);
  const std::vector<int> ranks = label_ranks(units);
  const double eps_scale = eps_scale_for(units);

  std::vector<int> patterns;
  if (policy == SwapMode::allow) {
    patterns = {-1};
  } else {
    const int pref = (weights.w_p > 0 ? 1 : 0) | (weights.w_q > 0 ? 2 : 0);
    patterns = {pref, pref ^ 1, pref ^ 2, pref ^ 3};
  }

  DispatchSolution best;
  best.status = SolveStatus::infeasible;
  double best_obj = kInf;
  bool any_clean = false;
  bool any = false;
  for (int pattern : patterns) {
    const std::vector<Axis> axes = build_axes(units, coalition, pattern, ranks, eps_scale);
    std::vector<std::vector<UnitSetpoint>> starts;
    if (warm) starts.push_back(clip_to_axes(units, axes, warm->setpoints));
    if (config.multi_start) {
      std::vector<UnitSetpoint> greedy = initial_setpoints(units);
      for (const Axis& a : axes) {
        const double wgt = a.is_q ? weights.w_q : weights.w_p;
        if (wgt > 0)
          set_axis_value(greedy[a.unit], a, a.hi);
        else if (wgt < 0)
          set_axis_value(greedy[a.unit], a, a.lo);
      }
      starts.push_back(std::move(greedy));
      starts.push_back(initial_setpoints(units));
    } else if (starts.empty()) {
      starts.push_back(initial_setpoints(units));
    }
    starts.erase(std::unique(starts.begin(), starts.end(), same_setpoints),
                 starts.end());
    for (std::size_t s = 0; s < starts.size(); ++s) {
      std::ostringstream tag;
      tag << "direction pattern=" << pattern << " start=" << s;
      SlpResult r = engine.run(axes, Mode::direction, {}, weights,
                               std::move(starts[s]), tag.str());
      any_clean = any_clean || r.clean;
      if (r.optimal &&
          (!any ||
           r.objective < best_obj - 1e-12 * std::max(1.0, std::abs(best_obj)))) {
        best_obj = r.objective;
        best = std::move(r.sol);
        best.sign_pattern = pattern;
        any = true;
      }
    }
  }
  if (!any) {
    best.status = any_clean ? SolveStatus::infeasible : SolveStatus::not_converged;
    best.diagnostics = "no feasible boundary point found";
  }
  return best;
}

DispatchSolution solve_dispatch(const NetworkModel& model, const Topology& topo,
                                const std::vector<FlexUnit>& units,
                                CoalitionMask coalition, OperatingPoint target,
                                SwapMode policy, const SolverConfig& config,
                                const WarmStart* warm) {
  check_coalition(coalition, units.size());
  NetworkResponse net(model, topo, units);
  SlpEngine engine(model, topo, units, net, config);
  const std::vector<int> ranks = label_ranks(units);
  const double eps_scale = eps_scale_for(units);

  PowerFlowSolution f0 = net.eval(initial_setpoints(units));
  if (!f0.converged) {
    DispatchSolution sol;
    sol.status = SolveStatus::not_converged;
    sol.diagnostics = "power flow diverged at the initial setpoints";
    return sol;
  }
  const double need_p = target.p_mw - f0.p_ref_mw;
  const double need_q = target.q_mvar - f0.q_ref_mvar;

  std::vector<int> patterns;
  if (policy == SwapMode::allow) {
    patterns = {-1};
  } else {
    // More import needed means members back off injection, so p regulates down.
    const int pref = (need_p < 0 ? 1 : 0) | (need_q < 0 ? 2 : 0);
    patterns = {pref, pref ^ 1, pref ^ 2, pref ^ 3};
  }

  DispatchSolution best;
  double best_cost = kInf;
  bool any = false;
  bool any_clean = false;
  DispatchSolution first_failure;
  bool have_failure = false;
  for (int pattern : patterns) {
    const std::vector<Axis> axes = build_axes(units, coalition, pattern, ranks, eps_scale);
    int n_p = 0, n_q = 0;
    for (const Axis& a : axes) (a.is_q ? n_q : n_p)++;
    std::vector<UnitSetpoint> prop = initial_setpoints(units);
    for (const Axis& a : axes) {
      const double need = a.is_q ? need_q : need_p;
      const int n = a.is_q ? n_q : n_p;
      if (n > 0)
        set_axis_value(prop[a.unit], a,
                       std::clamp(a.base - need / n, a.lo, a.hi));
    }
    std::vector<std::vector<UnitSetpoint>> starts;
    if (warm) starts.push_back(clip_to_axes(units, axes, warm->setpoints));
    starts.push_back(std::move(prop));
    if (config.multi_start) starts.push_back(initial_setpoints(units));
    starts.erase(std::unique(starts.begin(), starts.end(), same_setpoints),
                 starts.end());
    for (std::size_t s = 0; s < starts.size(); ++s) {
      std::ostringstream tag;
      tag << "dispatch pattern=" << pattern << " start=" << s;
      SlpResult r = engine.run(axes, Mode::dispatch, target, DirectionWeights(1, 0),
                               std::move(starts[s]), tag.str());
      any_clean = any_clean || r.clean;
      if (r.optimal) {
        if (!any || r.objective < best_cost - 1e-12 * std::max(1.0, best_cost)) {
          best_cost = r.objective;
          best = std::move(r.sol);
          best.sign_pattern = pattern;
          any = true;
        }
        if (!config.multi_start) return any ? best : std::move(r.sol);
      } else if (!have_failure) {
        first_failure = std::move(r.sol);
        have_failure = true;
      }
    }
  }
  if (any) return best;
  DispatchSolution sol = have_failure ? std::move(first_failure) : DispatchSolution{};
  sol.status = any_clean ? SolveStatus::infeasible : SolveStatus::not_converged;
  return sol;
}

ReachResult max_reach(const NetworkModel& model, const Topology& topo,
                      const std::vector<FlexUnit>& units, CoalitionMask coalition,
                      OperatingPoint direction, SwapMode policy,
                      double resolution_mva, const SolverConfig& config) {
  check_coalition(coalition, units.size());
  if (!(resolution_mva > 0))
    throw std::invalid_argument("reach resolution must be positive");

  SolverConfig fast = config;
  fast.multi_start = false;

  // The origin must match initial_interface_point bit for bit: targets are
  // placed at origin + t*dir, and a looser power flow here would shift the
  // certified boundary points by more than the dispatch residual tolerance.
  const OperatingPoint origin = initial_interface_point(model, topo, units);

  ReachResult out;
  out.at_max = solve_dispatch(model, topo, units, coalition, origin, policy, fast);
  const double norm = std::hypot(direction.p_mw, direction.q_mvar);
  if (norm < 1e-12 || out.at_max.status != SolveStatus::optimal) return out;
  const double dp = direction.p_mw / norm;
  const double dq = direction.q_mvar / norm;

  auto probe = [&](double t, const DispatchSolution& seed) {
    WarmStart ws{seed.setpoints};
    return solve_dispatch(model, topo, units, coalition,
                          {origin.p_mw + t * dp, origin.q_mvar + t * dq}, policy,
                          fast, &ws);
  };

  double cap = 0.0;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (!(coalition & (CoalitionMask{1} << i))) continue;
    const FlexUnit& u = units[i];
    cap += std::hypot(std::max(u.p_max_mw - u.p0_mw, u.p0_mw - u.p_min_mw),
                      std::max(u.q_max_mvar - u.q0_mvar, u.q0_mvar - u.q_min_mvar));
  }
  double lo = 0.0;
  double hi = std::max({4.0 * resolution_mva, 1.25 * cap + 0.01});
  bool bounded = false;
  for (int g = 0; g < 6; ++g) {
    DispatchSolution s = probe(hi, out.at_max);
    if (s.status == SolveStatus::optimal) {
      lo = hi;
      out.at_max = std::move(s);
      hi *= 2.0;
    } else {
      bounded = true;
      break;
    }
  }
  if (!bounded) {
    out.t_max_mva = lo;
    out.at_max.diagnostics += "; reach bracket never closed";
    return out;
  }
  while (hi - lo > resolution_mva) {
    const double mid = 0.5 * (lo + hi);
    DispatchSolution s = probe(mid, out.at_max);
    if (s.status == SolveStatus::optimal) {
      lo = mid;
      out.at_max = std::move(s);
    } else {
      hi = mid;
    }
  }
  out.t_max_mva = lo;
  return out;
}

SwapReport detect_swap(const DispatchSolution& solution, double tol_mw) {
  SwapReport rep;
  std::vector<std::pair<std::string, double>> p_net, q_net;
  for (const Regulation& r : solution.regulations) {
    p_net.emplace_back(r.unit, r.net_p());
    q_net.emplace_back(r.unit, r.net_q());
  }
  auto collect = [&](const std::vector<std::pair<std::string, double>>& nets,
                     std::vector<std::pair<std::string, std::string>>& pairs) {
    for (const auto& up : nets) {
      if (up.second <= tol_mw) continue;
      for (const auto& dn : nets)
        if (dn.second < -tol_mw) pairs.emplace_back(up.first, dn.first);
    }
    return !pairs.empty();
  };
  rep.active_p = collect(p_net, rep.p_pairs);
  rep.active_q = collect(q_net, rep.q_pairs);
  return rep;
}

}  // namespace flexcoop
