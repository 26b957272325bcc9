#pragma once

#include <limits>
#include <vector>

namespace flexcoop {

/// Dense linear program
///
///   min c.x   s.t.  rows (a.x <= b or a.x == b),  lower <= x <= upper
///
/// sized for the OPF subproblems (tens of variables and rows). Every
/// variable needs at least one finite bound; +/-infinity is accepted on the
/// other side.
struct LpProblem {
  enum class RowType { le, eq };
  struct Row {
    std::vector<double> a;
    double b = 0.0;
    RowType type = RowType::le;
  };

  int n_vars = 0;
  std::vector<double> c;
  std::vector<double> lower, upper;
  std::vector<Row> rows;

  static constexpr double inf = std::numeric_limits<double>::infinity();

  void add_row(std::vector<double> a, double b, RowType type) {
    rows.push_back({std::move(a), b, type});
  }
};

enum class LpStatus { optimal, infeasible, unbounded, iteration_limit };

struct LpSolution {
  LpStatus status = LpStatus::iteration_limit;
  std::vector<double> x;
  double objective = 0.0;
};

/// Two-phase primal simplex with bounded variables and a Bland fallback for
/// degenerate cycling. Deterministic: identical inputs give identical pivots.
LpSolution solve_lp(const LpProblem& problem);

}  // namespace flexcoop
