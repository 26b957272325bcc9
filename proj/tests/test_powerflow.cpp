#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "flexcoop/net_model.hpp"
#include "flexcoop/powerflow.hpp"
#include "flexcoop/rng.hpp"
#include "oracles.hpp"

using namespace flexcoop;

namespace {

struct LoadedCase {
  CaseData data;
  Topology topo;
};

LoadedCase loaded(const char* name) {
  LoadedCase lc{builtin_case(name), {}};
  lc.topo = build_topology(lc.data.model);
  return lc;
}

std::vector<UnitSetpoint> zeros(std::size_t n) {
  return std::vector<UnitSetpoint>(n);
}

/// Interface flow must equal total load minus total injection plus series
/// losses; the reactive balance is the same with x in place of r.
void check_energy_balance(const NetworkModel& model,
                          const std::vector<FlexUnit>& units,
                          const std::vector<UnitSetpoint>& sps,
                          const PowerFlowSolution& sol) {
  double p = 0.0, q = 0.0;
  for (const Bus& b : model.buses) {
    p += b.p_load_mw;
    q += b.q_load_mvar;
  }
  for (const UnitSetpoint& sp : sps) {
    p -= sp.p_mw;
    q -= sp.q_mvar;
  }
  (void)units;
  for (std::size_t b = 0; b < model.branches.size(); ++b) {
    p += model.branches[b].r_pu * sol.branch_l_pu[b] * model.base_mva;
    q += model.branches[b].x_pu * sol.branch_l_pu[b] * model.base_mva;
  }
  CHECK(sol.p_ref_mw == doctest::Approx(p).epsilon(1e-7));
  CHECK(sol.q_ref_mvar == doctest::Approx(q).epsilon(1e-7));
}

}  // namespace

TEST_CASE("zero load yields a flat profile and no interface flow") {
  NetworkModel m;
  m.base_mva = 1.0;
  m.base_kv = 10.0;
  m.v_min = 0.9;
  m.v_max = 1.1;
  m.reference_bus = 1;
  m.buses = {{1, 0.0, 0.0}, {2, 0.0, 0.0}, {3, 0.0, 0.0}};
  m.branches = {{1, 2, 0.05, 0.03, std::nullopt}, {2, 3, 0.04, 0.02, std::nullopt}};
  const Topology topo = build_topology(m);
  const PowerFlowSolution s =
      solve_powerflow_net(m, topo, {0.0, 0.0, 0.0}, {0.0, 0.0, 0.0});
  REQUIRE(s.converged);
  for (double v : s.v_sq) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.p_ref_mw == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(s.q_ref_mvar == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(s.min_voltage_pu() == doctest::Approx(1.0));
}

TEST_CASE("33-bus base case reproduces the canonical operating point") {
  const LoadedCase lc = loaded("ieee33");
  const PowerFlowSolution s = solve_powerflow(lc.data.model, lc.topo,
                                              lc.data.units,
                                              zeros(lc.data.units.size()));
  REQUIRE(s.converged);
  CHECK(s.iterations <= 100);
  CHECK(s.max_mismatch_pu <= 1e-8);
  CHECK(s.p_ref_mw == doctest::Approx(3.91767673).epsilon(1e-8));
  CHECK(s.q_ref_mvar == doctest::Approx(2.43514068).epsilon(1e-8));
  const double vmin = s.min_voltage_pu();
  CHECK(vmin == doctest::Approx(0.913090487).epsilon(1e-8));
  CHECK(vmin > 0.90);
  CHECK(vmin < 0.92);
  CHECK(lc.data.model.buses[s.min_voltage_bus_index()].id == 18);
  // Losses are positive and small relative to load.
  CHECK(s.p_ref_mw > 3.715);
  CHECK(s.p_ref_mw < 3.715 * 1.08);
}

TEST_CASE("three-bus case has constant reactive interface flow") {
  const LoadedCase lc = loaded("motivating3");
  Rng rng(5);
  for (int k = 0; k < 20; ++k) {
    std::vector<UnitSetpoint> sps(2);
    for (auto& sp : sps) sp.p_mw = rng.uniform(-0.5, 0.5);
    const PowerFlowSolution s =
        solve_powerflow(lc.data.model, lc.topo, lc.data.units, sps);
    REQUIRE(s.converged);
    // Both branches are purely resistive, so reactive losses are zero and
    // the interface always carries exactly the total reactive load.
    CHECK(s.q_ref_mvar == doctest::Approx(0.03).epsilon(1e-12));
  }
  const PowerFlowSolution base = solve_powerflow(lc.data.model, lc.topo,
                                                 lc.data.units, zeros(2));
  CHECK(std::sqrt(base.v_sq[2]) == doctest::Approx(0.990305744).epsilon(1e-8));
}

TEST_CASE("sweep solution matches an independent phasor solver") {
  const LoadedCase lc = loaded("ieee33");
  const auto& model = lc.data.model;
  Rng rng(101);

  auto compare = [&](const std::vector<UnitSetpoint>& sps) {
    const PowerFlowSolution s =
        solve_powerflow(model, lc.topo, lc.data.units, sps);
    REQUIRE(s.converged);
    const oracles::PhasorSolution ref =
        oracles::phasor_sweep_units(model, lc.topo, lc.data.units, sps);
    REQUIRE(ref.converged);
    for (std::size_t i = 0; i < model.buses.size(); ++i) {
      CHECK(std::sqrt(s.v_sq[i]) == doctest::Approx(ref.v_mag_pu[i]).epsilon(1e-6));
    }
    CHECK(s.p_ref_mw == doctest::Approx(ref.p_ref_mw).epsilon(1e-6));
    CHECK(s.q_ref_mvar == doctest::Approx(ref.q_ref_mvar).epsilon(1e-6));
  };

  compare(zeros(4));
  for (int k = 0; k < 100; ++k) {
    std::vector<UnitSetpoint> sps(4);
    for (auto& sp : sps) {
      sp.p_mw = rng.uniform(-0.5, 0.5);
      sp.q_mvar = rng.uniform(-0.5, 0.5);
    }
    compare(sps);
  }
}

TEST_CASE("interface flow accounts for loads, injections, and losses") {
  const LoadedCase lc = loaded("ieee33");
  Rng rng(11);
  for (int k = 0; k < 25; ++k) {
    std::vector<UnitSetpoint> sps(4);
    for (auto& sp : sps) {
      sp.p_mw = rng.uniform(-0.5, 0.5);
      sp.q_mvar = rng.uniform(-0.5, 0.5);
    }
    const PowerFlowSolution s =
        solve_powerflow(lc.data.model, lc.topo, lc.data.units, sps);
    REQUIRE(s.converged);
    check_energy_balance(lc.data.model, lc.data.units, sps, s);
  }
}

TEST_CASE("branch current obeys the flow identity at the sending end") {
  const LoadedCase lc = loaded("ieee33");
  const auto& model = lc.data.model;
  // The identity holds to the convergence tolerance, so solve tightly here.
  const PowerFlowSolution s = solve_powerflow(model, lc.topo, lc.data.units,
                                              zeros(4), {1e-12, 300});
  REQUIRE(s.converged);
  for (std::size_t b = 0; b < model.branches.size(); ++b) {
    const double v_up = s.v_sq[lc.topo.up_bus[b]];
    const double p_pu = s.branch_p_mw[b] / model.base_mva;
    const double q_pu = s.branch_q_mvar[b] / model.base_mva;
    CHECK(s.branch_l_pu[b] * v_up ==
          doctest::Approx(p_pu * p_pu + q_pu * q_pu).epsilon(1e-8));
  }
}

TEST_CASE("voltage drop equation holds along every branch") {
  const LoadedCase lc = loaded("ieee33");
  const auto& model = lc.data.model;
  const PowerFlowSolution s = solve_powerflow(model, lc.topo, lc.data.units,
                                              zeros(4), {1e-12, 300});
  REQUIRE(s.converged);
  for (std::size_t b = 0; b < model.branches.size(); ++b) {
    const Branch& br = model.branches[b];
    const double p_pu = s.branch_p_mw[b] / model.base_mva;
    const double q_pu = s.branch_q_mvar[b] / model.base_mva;
    const double want = s.v_sq[lc.topo.up_bus[b]] -
                        2.0 * (br.r_pu * p_pu + br.x_pu * q_pu) +
                        (br.r_pu * br.r_pu + br.x_pu * br.x_pu) * s.branch_l_pu[b];
    CHECK(s.v_sq[lc.topo.down_bus[b]] == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("heavier load depresses voltage and raises the interface draw") {
  const LoadedCase lc = loaded("ieee33");
  NetworkModel heavier = lc.data.model;
  heavier.buses[17].p_load_mw += 0.5;  // bus 18, feeder end
  const PowerFlowSolution before = solve_powerflow(lc.data.model, lc.topo,
                                                   lc.data.units, zeros(4));
  const PowerFlowSolution after =
      solve_powerflow(heavier, lc.topo, lc.data.units, zeros(4));
  REQUIRE(before.converged);
  REQUIRE(after.converged);
  CHECK(after.min_voltage_pu() < before.min_voltage_pu());
  CHECK(after.p_ref_mw > before.p_ref_mw + 0.5);  // load plus extra losses
}

TEST_CASE("injection at the weak end lifts the minimum voltage") {
  const LoadedCase lc = loaded("ieee33");
  std::vector<UnitSetpoint> sps(4);
  sps[3].p_mw = 0.5;  // unit D at bus 18
  const PowerFlowSolution base = solve_powerflow(lc.data.model, lc.topo,
                                                 lc.data.units, zeros(4));
  const PowerFlowSolution boosted =
      solve_powerflow(lc.data.model, lc.topo, lc.data.units, sps);
  CHECK(boosted.min_voltage_pu() > base.min_voltage_pu());
  CHECK(boosted.p_ref_mw < base.p_ref_mw);
}

TEST_CASE("net-injection solver and unit wrapper agree bitwise") {
  const LoadedCase lc = loaded("ieee33");
  const auto& model = lc.data.model;
  std::vector<UnitSetpoint> sps(4);
  sps[0] = {0.2, -0.1};
  sps[2] = {-0.4, 0.3};
  std::vector<double> net_p(model.buses.size()), net_q(model.buses.size());
  for (std::size_t i = 0; i < model.buses.size(); ++i) {
    net_p[i] = -model.buses[i].p_load_mw;
    net_q[i] = -model.buses[i].q_load_mvar;
  }
  for (std::size_t u = 0; u < lc.data.units.size(); ++u) {
    const int bi = model.bus_index(lc.data.units[u].bus);
    net_p[bi] += sps[u].p_mw;
    net_q[bi] += sps[u].q_mvar;
  }
  const PowerFlowSolution a = solve_powerflow(model, lc.topo, lc.data.units, sps);
  const PowerFlowSolution b = solve_powerflow_net(model, lc.topo, net_p, net_q);
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  CHECK(a.p_ref_mw == b.p_ref_mw);
  CHECK(a.q_ref_mvar == b.q_ref_mvar);
  for (std::size_t i = 0; i < a.v_sq.size(); ++i) CHECK(a.v_sq[i] == b.v_sq[i]);
}

TEST_CASE("warm starts and shared workspaces do not change the answer") {
  const LoadedCase lc = loaded("ieee33");
  const auto& model = lc.data.model;
  std::vector<double> net_p(model.buses.size()), net_q(model.buses.size());
  for (std::size_t i = 0; i < model.buses.size(); ++i) {
    net_p[i] = -model.buses[i].p_load_mw;
    net_q[i] = -model.buses[i].q_load_mvar;
  }
  const PowerFlowSolution cold = solve_powerflow_net(model, lc.topo, net_p, net_q);
  REQUIRE(cold.converged);

  SweepWorkspace ws;
  const PowerFlowSolution warm = solve_powerflow_net(
      model, lc.topo, net_p, net_q, {}, &cold.v_sq, &ws);
  REQUIRE(warm.converged);
  CHECK(warm.iterations <= cold.iterations);
  for (std::size_t i = 0; i < cold.v_sq.size(); ++i) {
    // Warm and cold runs stop at different iterates inside the convergence
    // band, so agreement is only to the solver tolerance.
    CHECK(warm.v_sq[i] == doctest::Approx(cold.v_sq[i]).epsilon(1e-6));
  }

  const PowerFlowSolution again =
      solve_powerflow_net(model, lc.topo, net_p, net_q, {}, nullptr, &ws);
  CHECK(again.p_ref_mw == cold.p_ref_mw);
  for (std::size_t i = 0; i < cold.v_sq.size(); ++i) {
    CHECK(again.v_sq[i] == cold.v_sq[i]);
  }
}

TEST_CASE("tighter tolerance shrinks the reported mismatch") {
  const LoadedCase lc = loaded("ieee33");
  PowerFlowOptions loose{1e-4, 100};
  PowerFlowOptions tight{1e-12, 300};
  const PowerFlowSolution a = solve_powerflow(lc.data.model, lc.topo,
                                              lc.data.units, zeros(4), loose);
  const PowerFlowSolution b = solve_powerflow(lc.data.model, lc.topo,
                                              lc.data.units, zeros(4), tight);
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  CHECK(a.max_mismatch_pu <= 1e-4);
  CHECK(b.max_mismatch_pu <= 1e-12);
  CHECK(a.iterations <= b.iterations);
}

TEST_CASE("an impossible loading reports non-convergence") {
  const LoadedCase lc = loaded("motivating3");
  NetworkModel collapse = lc.data.model;
  collapse.buses[2].p_load_mw = 50.0;  // far beyond the feeder's capability
  const PowerFlowSolution s =
      solve_powerflow(collapse, lc.topo, lc.data.units, zeros(2));
  CHECK(!s.converged);
}

TEST_CASE("feasibility report is clean at the base point") {
  const LoadedCase lc = loaded("ieee33");
  const auto sps = zeros(4);
  const PowerFlowSolution s =
      solve_powerflow(lc.data.model, lc.topo, lc.data.units, sps);
  const FeasibilityReport r =
      check_feasibility(lc.data.model, lc.topo, lc.data.units, sps, s);
  CHECK(r.feasible());
}

TEST_CASE("low voltage at the feeder end is flagged by bus name") {
  const LoadedCase lc = loaded("ieee33");
  std::vector<UnitSetpoint> sps(4);
  for (auto& sp : sps) sp.p_mw = -0.5;  // all units consume at full depth
  const PowerFlowSolution s =
      solve_powerflow(lc.data.model, lc.topo, lc.data.units, sps);
  REQUIRE(s.converged);
  const FeasibilityReport r =
      check_feasibility(lc.data.model, lc.topo, lc.data.units, sps, s);
  REQUIRE(!r.feasible());
  bool saw_bus18 = false;
  for (const Violation& v : r.violations) {
    CHECK(v.kind == ViolationKind::voltage_lower);
    CHECK(v.magnitude > 0.0);
    saw_bus18 = saw_bus18 || v.element == "bus 18";
  }
  CHECK(saw_bus18);
}

TEST_CASE("upper voltage violations are reported on tightened bands") {
  const LoadedCase lc = loaded("motivating3");
  NetworkModel narrow = lc.data.model;
  narrow.v_max = 1.0005;
  std::vector<UnitSetpoint> sps(2);
  sps[0].p_mw = 0.5;
  sps[1].p_mw = 0.5;
  const PowerFlowSolution s = solve_powerflow(narrow, lc.topo, lc.data.units, sps);
  REQUIRE(s.converged);
  const FeasibilityReport r =
      check_feasibility(narrow, lc.topo, lc.data.units, sps, s);
  REQUIRE(!r.feasible());
  CHECK(r.violations[0].kind == ViolationKind::voltage_upper);
}

TEST_CASE("thermal limits and unit bounds are checked") {
  const LoadedCase lc = loaded("ieee33");
  NetworkModel limited = lc.data.model;
  limited.branches[0].limit_mva = 1.0;  // far below the ~4.6 MVA root flow
  const auto sps = zeros(4);
  const PowerFlowSolution s =
      solve_powerflow(limited, lc.topo, lc.data.units, sps);
  const FeasibilityReport r =
      check_feasibility(limited, lc.topo, lc.data.units, sps, s);
  REQUIRE(!r.feasible());
  CHECK(r.violations[0].kind == ViolationKind::thermal);
  CHECK(r.violations[0].element == "branch 1-2");

  std::vector<UnitSetpoint> outside(4);
  outside[1].p_mw = 0.7;  // beyond unit B's 0.5 MW cap
  const PowerFlowSolution s2 =
      solve_powerflow(lc.data.model, lc.topo, lc.data.units, outside);
  const FeasibilityReport r2 =
      check_feasibility(lc.data.model, lc.topo, lc.data.units, outside, s2);
  REQUIRE(!r2.feasible());
  bool saw_unit = false;
  for (const Violation& v : r2.violations) {
    if (v.kind == ViolationKind::unit_bound) {
      saw_unit = true;
      CHECK(v.element == "unit B");
      CHECK(v.magnitude == doctest::Approx(0.2));
    }
  }
  CHECK(saw_unit);
}

TEST_CASE("feasibility checking requires a converged solution") {
  const LoadedCase lc = loaded("ieee33");
  PowerFlowSolution bogus;
  bogus.converged = false;
  CHECK_THROWS_AS(check_feasibility(lc.data.model, lc.topo, lc.data.units,
                                    zeros(4), bogus),
                  std::invalid_argument);
}
