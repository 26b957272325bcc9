#include "flexcoop/linprog.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flexcoop {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

enum class VarState { basic, at_lower, at_upper };

struct Simplex {
  int m = 0;       // rows
  int n_total = 0; // structural + slack + artificial
  int n_struct = 0;
  int art_begin = 0;

  std::vector<std::vector<double>> T;  // m x n_total, starts as A, becomes B^-1 A
  std::vector<double> bcol;            // B^-1 b
  std::vector<double> cost;            // phase-dependent
  std::vector<double> lower, upper;
  std::vector<VarState> state;
  std::vector<int> basis;              // basic variable per row

  std::vector<double> xval;            // current value of every variable
  std::vector<double> zrow;            // reduced costs

  double nonbasic_value(int j) const {
    return state[j] == VarState::at_upper ? upper[j] : lower[j];
  }

  void refresh_values() {
    for (int j = 0; j < n_total; ++j) {
      if (state[j] != VarState::basic) xval[j] = nonbasic_value(j);
    }
    for (int i = 0; i < m; ++i) {
      double v = bcol[i];
      for (int j = 0; j < n_total; ++j) {
        if (state[j] == VarState::basic) continue;
        const double xj = xval[j];
        if (xj != 0.0) v -= T[i][j] * xj;
      }
      xval[basis[i]] = v;
    }
  }

  void refresh_reduced_costs() {
    // z_j = c_j - c_B . T_j
    for (int j = 0; j < n_total; ++j) zrow[j] = cost[j];
    for (int i = 0; i < m; ++i) {
      const double cb = cost[basis[i]];
      if (cb == 0.0) continue;
      const auto& row = T[i];
      for (int j = 0; j < n_total; ++j) zrow[j] -= cb * row[j];
    }
  }

  void pivot(int row, int col) {
    const double piv = T[row][col];
    const double inv = 1.0 / piv;
    auto& prow = T[row];
    for (int j = 0; j < n_total; ++j) prow[j] *= inv;
    prow[col] = 1.0;
    bcol[row] *= inv;
    for (int i = 0; i < m; ++i) {
      if (i == row) continue;
      const double f = T[i][col];
      if (f == 0.0) continue;
      auto& irow = T[i];
      for (int j = 0; j < n_total; ++j) irow[j] -= f * prow[j];
      irow[col] = 0.0;
      bcol[i] -= f * bcol[row];
    }
  }

  /// Returns optimal=true on success; false means iteration trouble.
  bool optimize(double cost_eps, int iteration_cap, bool* unbounded) {
    *unbounded = false;
    int iter = 0;
    const int bland_after = 3 * (m + n_total) + 50;
    for (;;) {
      if (++iter > iteration_cap) return false;
      const bool bland = iter > bland_after;
      refresh_values();
      refresh_reduced_costs();

      // Entering variable: nonbasic whose reduced cost points inward.
      int enter = -1;
      double best = cost_eps;
      int enter_dir = 0;
      for (int j = 0; j < n_total; ++j) {
        if (state[j] == VarState::basic) continue;
        if (lower[j] == upper[j]) continue;  // fixed
        const double z = zrow[j];
        if (state[j] == VarState::at_lower && z < -cost_eps) {
          if (bland) { enter = j; enter_dir = +1; break; }
          if (-z > best) { best = -z; enter = j; enter_dir = +1; }
        } else if (state[j] == VarState::at_upper && z > cost_eps) {
          if (bland) { enter = j; enter_dir = -1; break; }
          if (z > best) { best = z; enter = j; enter_dir = -1; }
        }
      }
      if (enter < 0) return true;  // optimal

      // Ratio test: entering moves t >= 0 along enter_dir.
      double t_limit = upper[enter] - lower[enter];  // bound flip span
      int leave_row = -1;
      double leave_pivot = 0.0;
      int leave_to_upper = 0;
      for (int i = 0; i < m; ++i) {
        const double a = enter_dir * T[i][enter];
        if (std::fabs(a) < 1e-11) continue;
        const int bi = basis[i];
        const double xb = xval[bi];
        double t;
        int to_upper;
        if (a > 0.0) {  // basic decreases toward its lower bound
          if (lower[bi] == -kInf) continue;
          t = (xb - lower[bi]) / a;
          to_upper = 0;
        } else {        // basic increases toward its upper bound
          if (upper[bi] == kInf) continue;
          t = (xb - upper[bi]) / a;
          to_upper = 1;
        }
        if (t < 0.0) t = 0.0;
        const bool better =
            t < t_limit - 1e-12 ||
            (t < t_limit + 1e-12 &&
             (leave_row < 0 || (bland ? bi < basis[leave_row]
                                      : std::fabs(T[i][enter]) >
                                            std::fabs(leave_pivot))));
        if (better) {
          t_limit = std::min(t, t_limit);
          leave_row = i;
          leave_pivot = T[i][enter];
          leave_to_upper = to_upper;
        }
      }

      if (t_limit == kInf || !std::isfinite(t_limit)) {
        *unbounded = true;
        return true;
      }

      if (leave_row < 0) {
        // Pure bound flip.
        state[enter] = (state[enter] == VarState::at_lower) ? VarState::at_upper
                                                            : VarState::at_lower;
        continue;
      }

      // Pivot: entering becomes basic, leaving goes to the bound it hit.
      const int leave = basis[leave_row];
      state[leave] = leave_to_upper ? VarState::at_upper : VarState::at_lower;
      state[enter] = VarState::basic;
      basis[leave_row] = enter;
      pivot(leave_row, enter);
    }
  }
};

}  // namespace

LpSolution solve_lp(const LpProblem& problem) {
  const int n = problem.n_vars;
  const int m = static_cast<int>(problem.rows.size());
  if (static_cast<int>(problem.c.size()) != n ||
      static_cast<int>(problem.lower.size()) != n ||
      static_cast<int>(problem.upper.size()) != n) {
    throw std::invalid_argument("linprog: inconsistent problem dimensions");
  }
  for (int j = 0; j < n; ++j) {
    if (problem.lower[j] > problem.upper[j] + 1e-12) {
      LpSolution out;
      out.status = LpStatus::infeasible;
      return out;
    }
    if (problem.lower[j] == -kInf && problem.upper[j] == kInf) {
      throw std::invalid_argument(
          "linprog: every variable needs a finite bound on one side");
    }
  }

  int n_slack = 0;
  for (const auto& row : problem.rows) {
    if (row.type == LpProblem::RowType::le) ++n_slack;
  }

  Simplex sx;
  sx.m = m;
  sx.n_struct = n;
  sx.art_begin = n + n_slack;
  sx.n_total = n + n_slack + m;
  sx.T.assign(m, std::vector<double>(sx.n_total, 0.0));
  sx.bcol.assign(m, 0.0);
  sx.lower.assign(sx.n_total, 0.0);
  sx.upper.assign(sx.n_total, kInf);
  sx.state.assign(sx.n_total, VarState::at_lower);
  sx.basis.assign(m, -1);
  sx.xval.assign(sx.n_total, 0.0);
  sx.zrow.assign(sx.n_total, 0.0);

  for (int j = 0; j < n; ++j) {
    sx.lower[j] = problem.lower[j];
    sx.upper[j] = problem.upper[j];
    // Start at the finite bound closest to zero.
    if (problem.lower[j] == -kInf) {
      sx.state[j] = VarState::at_upper;
    } else if (problem.upper[j] == kInf) {
      sx.state[j] = VarState::at_lower;
    } else {
      sx.state[j] = (std::fabs(problem.lower[j]) <= std::fabs(problem.upper[j]))
                        ? VarState::at_lower
                        : VarState::at_upper;
    }
  }

  int slack = n;
  for (int i = 0; i < m; ++i) {
    const auto& row = problem.rows[i];
    if (static_cast<int>(row.a.size()) != n) {
      throw std::invalid_argument("linprog: row width mismatch");
    }
    for (int j = 0; j < n; ++j) sx.T[i][j] = row.a[j];
    sx.bcol[i] = row.b;
    if (row.type == LpProblem::RowType::le) {
      sx.T[i][slack] = 1.0;
      ++slack;
    }
  }

  // Orient each row so its artificial starts basic at a nonnegative value
  // with a +1 identity column; the tableau must begin in canonical form.
  for (int i = 0; i < m; ++i) {
    double r = sx.bcol[i];
    for (int j = 0; j < n; ++j) {
      const double xj = sx.state[j] == VarState::at_upper ? sx.upper[j] : sx.lower[j];
      if (xj != 0.0) r -= sx.T[i][j] * xj;
    }
    if (r < 0.0) {
      for (int j = 0; j < sx.n_total; ++j) sx.T[i][j] = -sx.T[i][j];
      sx.bcol[i] = -sx.bcol[i];
    }
    const int art = sx.art_begin + i;
    sx.T[i][art] = 1.0;
    sx.basis[i] = art;
    sx.state[art] = VarState::basic;
  }

  double c_scale = 1.0;
  for (int j = 0; j < n; ++j) c_scale = std::max(c_scale, std::fabs(problem.c[j]));
  const int iteration_cap = 60 * (m + sx.n_total) + 500;

  LpSolution out;

  // Phase 1: drive the artificials out.
  sx.cost.assign(sx.n_total, 0.0);
  for (int i = 0; i < m; ++i) sx.cost[sx.art_begin + i] = 1.0;
  bool unbounded = false;
  if (!sx.optimize(1e-9, iteration_cap, &unbounded)) {
    out.status = LpStatus::iteration_limit;
    return out;
  }
  sx.refresh_values();
  double infeas = 0.0;
  for (int i = 0; i < m; ++i) infeas += std::fabs(sx.xval[sx.art_begin + i]);
  if (infeas > 1e-7) {
    out.status = LpStatus::infeasible;
    return out;
  }
  // Lock artificials at zero for phase 2.
  for (int i = 0; i < m; ++i) {
    const int art = sx.art_begin + i;
    sx.lower[art] = sx.upper[art] = 0.0;
    if (sx.state[art] != VarState::basic) sx.state[art] = VarState::at_lower;
  }

  // Phase 2.
  sx.cost.assign(sx.n_total, 0.0);
  for (int j = 0; j < n; ++j) sx.cost[j] = problem.c[j];
  if (!sx.optimize(1e-9 * c_scale, iteration_cap, &unbounded)) {
    out.status = LpStatus::iteration_limit;
    return out;
  }
  if (unbounded) {
    out.status = LpStatus::unbounded;
    return out;
  }

  sx.refresh_values();
  out.x.assign(n, 0.0);
  double obj = 0.0;
  for (int j = 0; j < n; ++j) {
    out.x[j] = sx.xval[j];
    obj += problem.c[j] * sx.xval[j];
  }
  out.objective = obj;
  out.status = LpStatus::optimal;
  return out;
}

}  // namespace flexcoop
