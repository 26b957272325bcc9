#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "flexcoop/flexarea.hpp"
#include "flexcoop/net_model.hpp"
#include "flexcoop/pricing.hpp"

using namespace flexcoop;

namespace {

struct Fixture {
  CaseData data;
  Topology topo;
  OperatingPoint initial;
  FlexArea area;

  Fixture() : data(builtin_case("ieee33")) {
    topo = build_topology(data.model);
    initial = initial_interface_point(data.model, topo, data.units);
    area = trace_area(data.model, topo, data.units, 0b1111, 16, SwapMode::forbid);
  }

  static const Fixture& get() {
    static Fixture fx;
    return fx;
  }
};

bool records_equal(const PaymentRecord& a, const PaymentRecord& b) {
  if (a.scheme != b.scheme || a.status != b.status) return false;
  if (a.request.delta_p_mw != b.request.delta_p_mw) return false;
  if (a.request.delta_q_mvar != b.request.delta_q_mvar) return false;
  if (a.achieved.p_mw != b.achieved.p_mw) return false;
  if (a.achieved.q_mvar != b.achieved.q_mvar) return false;
  if (a.cost_total != b.cost_total || a.revenue != b.revenue) return false;
  if (a.dso_surplus != b.dso_surplus) return false;
  if (a.units.size() != b.units.size()) return false;
  for (std::size_t i = 0; i < a.units.size(); ++i) {
    if (a.units[i].unit != b.units[i].unit) return false;
    if (a.units[i].delivered_mva != b.units[i].delivered_mva) return false;
    if (a.units[i].cost != b.units[i].cost) return false;
    if (a.units[i].payment != b.units[i].payment) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("payment scheme names render") {
  CHECK(std::string(to_string(PaymentScheme::costmin)) == "costmin");
  CHECK(std::string(to_string(PaymentScheme::shapley)) == "shapley");
}

TEST_CASE("request sampling is reproducible and stays inside the area") {
  const Fixture& fx = Fixture::get();
  const std::vector<FlexRequest> a = sample_requests(fx.area, 40, 0.6, 17);
  const std::vector<FlexRequest> b = sample_requests(fx.area, 40, 0.6, 17);
  REQUIRE(a.size() == 40);
  REQUIRE(b.size() == 40);
  bool identical = true;
  bool any_nonzero = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    identical = identical && a[i].delta_p_mw == b[i].delta_p_mw &&
                a[i].delta_q_mvar == b[i].delta_q_mvar;
    any_nonzero = any_nonzero || a[i].magnitude_mva() > 1e-6;
    const OperatingPoint target{fx.area.initial.p_mw + a[i].delta_p_mw,
                                fx.area.initial.q_mvar + a[i].delta_q_mvar};
    CHECK(fx.area.contains(target));
  }
  CHECK(identical);
  CHECK(any_nonzero);

  const std::vector<FlexRequest> other = sample_requests(fx.area, 40, 0.6, 18);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    differs = differs || a[i].delta_p_mw != other[i].delta_p_mw;
  CHECK(differs);
}

TEST_CASE("zero sigma degenerates to the initial point") {
  const Fixture& fx = Fixture::get();
  const std::vector<FlexRequest> reqs = sample_requests(fx.area, 5, 0.0, 3);
  for (const FlexRequest& r : reqs) {
    CHECK(r.delta_p_mw == 0.0);
    CHECK(r.delta_q_mvar == 0.0);
  }
}

TEST_CASE("sampling rejects impossible parameters") {
  const Fixture& fx = Fixture::get();
  CHECK_THROWS_AS(sample_requests(fx.area, -1, 0.5, 1), std::invalid_argument);
  CHECK_THROWS_AS(sample_requests(fx.area, 5, -0.5, 1), std::invalid_argument);
  // A sigma far beyond the area exhausts the redraw budget.
  CHECK_THROWS_AS(sample_requests(fx.area, 3, 1e6, 1), std::runtime_error);
}

TEST_CASE("cost-covering payments hand each unit its declared cost") {
  const Fixture& fx = Fixture::get();
  const FlexRequest req{-0.8, -0.3};
  const PaymentRecord rec = payments_costmin(fx.data.model, fx.topo,
                                             fx.data.units, req, fx.data.tariff);
  REQUIRE(rec.status == SolveStatus::optimal);
  CHECK(rec.scheme == PaymentScheme::costmin);
  REQUIRE(rec.units.size() == 4);

  // The request lies inside the area, so the dispatch lands on the target.
  CHECK(rec.achieved.p_mw == doctest::Approx(fx.initial.p_mw - 0.8).epsilon(1e-6));
  CHECK(rec.achieved.q_mvar == doctest::Approx(fx.initial.q_mvar - 0.3).epsilon(1e-6));

  double cost_sum = 0.0;
  for (const UnitPayment& row : rec.units) {
    CHECK(row.payment == row.cost);
    CHECK(row.cost >= 0.0);
    CHECK(row.delivered_mva >= 0.0);
    cost_sum += row.cost;
  }
  CHECK(rec.cost_total == doctest::Approx(cost_sum).epsilon(1e-12));
  CHECK(rec.payment_total() == doctest::Approx(cost_sum).epsilon(1e-12));

  const double revenue_expected = fx.data.tariff.price_p * 0.8 +
                                  fx.data.tariff.price_q * 0.3;
  CHECK(rec.revenue == doctest::Approx(revenue_expected).epsilon(1e-5));
  CHECK(rec.dso_surplus ==
        doctest::Approx(rec.revenue - rec.cost_total).epsilon(1e-12));
  // Tariff rates exceed every declared cost rate, so the operator profits.
  CHECK(rec.dso_surplus > 0.0);
}

TEST_CASE("a zero request settles at zero money") {
  const Fixture& fx = Fixture::get();
  const PaymentRecord rec = payments_costmin(fx.data.model, fx.topo,
                                             fx.data.units, {0.0, 0.0},
                                             fx.data.tariff);
  REQUIRE(rec.status == SolveStatus::optimal);
  CHECK(rec.cost_total <= 1e-6);
  CHECK(rec.revenue <= 1e-6);
  for (const UnitPayment& row : rec.units) CHECK(row.delivered_mva <= 1e-5);
}

TEST_CASE("surplus-sharing payments hand the whole revenue to the fleet") {
  const Fixture& fx = Fixture::get();
  const FlexRequest req{-0.8, -0.3};
  const PaymentRecord cm = payments_costmin(fx.data.model, fx.topo,
                                            fx.data.units, req, fx.data.tariff);
  const PaymentRecord sh = payments_shapley(fx.data.model, fx.topo,
                                            fx.data.units, req, fx.data.tariff);
  REQUIRE(sh.status == SolveStatus::optimal);
  CHECK(sh.scheme == PaymentScheme::shapley);

  // Both schemes settle the same dispatch.
  CHECK(sh.achieved.p_mw == cm.achieved.p_mw);
  CHECK(sh.achieved.q_mvar == cm.achieved.q_mvar);
  CHECK(sh.cost_total == cm.cost_total);
  CHECK(sh.revenue == cm.revenue);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(sh.units[i].unit == cm.units[i].unit);
    CHECK(sh.units[i].cost == cm.units[i].cost);
    CHECK(sh.units[i].delivered_mva == cm.units[i].delivered_mva);
  }

  // Cost reimbursement plus surplus shares exhausts the revenue exactly.
  CHECK(sh.payment_total() ==
        doctest::Approx(sh.revenue).epsilon(1e-9));
  CHECK(std::abs(sh.dso_surplus) <= 1e-9 * std::max(1.0, sh.revenue));

  // The surplus split never pays a unit less than nothing here: every unit
  // could serve part of this request, so its share is non-negative.
  double share_sum = 0.0;
  for (const UnitPayment& row : sh.units) {
    const double share = row.payment - row.cost;
    CHECK(share >= -1e-9);
    share_sum += share;
  }
  CHECK(share_sum == doctest::Approx(sh.revenue - sh.cost_total).epsilon(1e-9));
}

TEST_CASE("requests beyond the area settle at the reachable magnitude") {
  const Fixture& fx = Fixture::get();
  const FlexRequest req{-10.0, 0.0};
  const PaymentRecord rec = payments_costmin(fx.data.model, fx.topo,
                                             fx.data.units, req, fx.data.tariff);
  REQUIRE(rec.status == SolveStatus::optimal);
  const double delta_p = fx.initial.p_mw - rec.achieved.p_mw;
  CHECK(delta_p > 1.0);   // the fleet does move a long way
  CHECK(delta_p < 5.0);   // but nowhere near the 10 MW ask
  CHECK(rec.achieved.q_mvar == doctest::Approx(fx.initial.q_mvar).epsilon(1e-4));
  CHECK(rec.revenue ==
        doctest::Approx(fx.data.tariff.price_p * delta_p).epsilon(1e-4));
}

TEST_CASE("a shared cache reproduces the settlement bitwise") {
  const Fixture& fx = Fixture::get();
  const FlexRequest req{-0.5, 0.2};
  ValueCache cache;
  const PaymentRecord first = payments_shapley(fx.data.model, fx.topo,
                                               fx.data.units, req,
                                               fx.data.tariff, {}, &cache);
  CHECK(cache.size() >= 15);
  const PaymentRecord second = payments_shapley(fx.data.model, fx.topo,
                                                fx.data.units, req,
                                                fx.data.tariff, {}, &cache);
  CHECK(records_equal(first, second));
}

TEST_CASE("payment studies are deterministic per seed") {
  const Fixture& fx = Fixture::get();
  const PaymentStudy a = run_payment_study(fx.data.model, fx.topo, fx.data.units,
                                           fx.area, fx.data.tariff, 12, 0.6, 5);
  const PaymentStudy b = run_payment_study(fx.data.model, fx.topo, fx.data.units,
                                           fx.area, fx.data.tariff, 12, 0.6, 5);
  REQUIRE(a.costmin.size() == 12);
  REQUIRE(a.shapley.size() == 12);
  CHECK(a.total_revenue == b.total_revenue);
  CHECK(a.total_cost == b.total_cost);
  CHECK(a.dso_total_costmin == b.dso_total_costmin);
  CHECK(a.dso_total_shapley == b.dso_total_shapley);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(records_equal(a.costmin[i], b.costmin[i]));
    CHECK(records_equal(a.shapley[i], b.shapley[i]));
  }
}

TEST_CASE("parallel settlement matches the sequential study") {
  const Fixture& fx = Fixture::get();
  const PaymentStudy seq = run_payment_study(fx.data.model, fx.topo, fx.data.units,
                                             fx.area, fx.data.tariff, 10, 0.6, 9,
                                             {}, nullptr, 1);
  const PaymentStudy par = run_payment_study(fx.data.model, fx.topo, fx.data.units,
                                             fx.area, fx.data.tariff, 10, 0.6, 9,
                                             {}, nullptr, 3);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(records_equal(seq.costmin[i], par.costmin[i]));
    CHECK(records_equal(seq.shapley[i], par.shapley[i]));
  }
  for (std::size_t u = 0; u < 4; ++u) {
    CHECK(seq.total_payment_costmin[u] == par.total_payment_costmin[u]);
    CHECK(seq.total_payment_shapley[u] == par.total_payment_shapley[u]);
  }
}

TEST_CASE("study aggregates reconcile with the per-request records") {
  const Fixture& fx = Fixture::get();
  const PaymentStudy study = run_payment_study(fx.data.model, fx.topo,
                                               fx.data.units, fx.area,
                                               fx.data.tariff, 30, 0.6, 1);
  CHECK(study.failures == 0);
  CHECK(study.warnings.empty());
  CHECK(study.sigma_mva == 0.6);
  CHECK(study.seed == 1);

  double revenue = 0.0, cost = 0.0, dso_cm = 0.0, dso_sh = 0.0;
  std::vector<double> pay_cm(4, 0.0), pay_sh(4, 0.0), active(4, 0.0);
  for (std::size_t i = 0; i < study.costmin.size(); ++i) {
    const PaymentRecord& cm = study.costmin[i];
    const PaymentRecord& sh = study.shapley[i];
    REQUIRE(cm.status == SolveStatus::optimal);
    revenue += cm.revenue;
    cost += cm.cost_total;
    dso_cm += cm.dso_surplus;
    dso_sh += sh.dso_surplus;
    for (std::size_t u = 0; u < 4; ++u) {
      pay_cm[u] += cm.units[u].payment;
      pay_sh[u] += sh.units[u].payment;
      if (cm.units[u].delivered_mva > 1e-6) active[u] += 1.0;
    }
  }
  CHECK(study.total_revenue == doctest::Approx(revenue).epsilon(1e-12));
  CHECK(study.total_cost == doctest::Approx(cost).epsilon(1e-12));
  CHECK(study.dso_total_costmin == doctest::Approx(dso_cm).epsilon(1e-12));
  CHECK(study.dso_total_shapley == doctest::Approx(dso_sh).epsilon(1e-12));
  // The whole-revenue scheme leaves the operator nothing in aggregate.
  CHECK(std::abs(study.dso_total_shapley) <= 1e-6 * std::max(1.0, revenue));
  for (std::size_t u = 0; u < 4; ++u) {
    CHECK(study.total_payment_costmin[u] == doctest::Approx(pay_cm[u]).epsilon(1e-12));
    CHECK(study.total_payment_shapley[u] == doctest::Approx(pay_sh[u]).epsilon(1e-12));
    CHECK(study.activation_frequency[u] ==
          doctest::Approx(active[u] / 30.0).epsilon(1e-12));
    CHECK(study.activation_frequency[u] >= 0.0);
    CHECK(study.activation_frequency[u] <= 1.0);
  }

  // The cheapest unit backs every request; the dearest one only steps in
  // when the rest saturate.
  CHECK(study.activation_frequency[3] == 1.0);       // unit D
  CHECK(study.activation_frequency[0] < 0.5);        // unit A
  CHECK(study.activation_frequency[0] <
        study.activation_frequency[3]);
}

TEST_CASE("payment series come out sorted for duration curves") {
  const Fixture& fx = Fixture::get();
  const PaymentStudy study = run_payment_study(fx.data.model, fx.topo,
                                               fx.data.units, fx.area,
                                               fx.data.tariff, 8, 0.6, 2);
  for (std::size_t u = 0; u < 4; ++u) {
    const std::vector<double> series = payment_series(study.shapley, u);
    REQUIRE(series.size() == 8);
    for (std::size_t i = 1; i < series.size(); ++i)
      CHECK(series[i - 1] >= series[i]);
  }
}
