#include "flexcoop/pricing.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "flexcoop/parallel.hpp"
#include "flexcoop/powerflow.hpp"
#include "flexcoop/rng.hpp"

namespace flexcoop {

namespace {

constexpr double kActivationTolMva = 1e-6;
constexpr int kMaxRedraws = 100;

struct Settlement {
  DispatchSolution sol;
  OperatingPoint initial{};
  OperatingPoint target{};
  double revenue = 0.0;
  bool ok = false;
};

/// Cost-minimal no-swap dispatch of the whole fleet toward the request,
/// capped at the reachable magnitude when the target lies outside the area.
Settlement settle_request(const NetworkModel& model, const Topology& topo,
                          const std::vector<FlexUnit>& units, FlexRequest request,
                          const TariffModel& tariff, const GameConfig& config) {
  Settlement s;
  s.initial = initial_interface_point(model, topo, units);
  s.target = {s.initial.p_mw + request.delta_p_mw,
              s.initial.q_mvar + request.delta_q_mvar};
  const CoalitionMask full = full_coalition(static_cast<int>(units.size()));

  SolverConfig fast = config.solver;
  fast.multi_start = false;
  DispatchSolution probe =
      solve_dispatch(model, topo, units, full, s.target, SwapMode::forbid, fast);
  if (probe.status == SolveStatus::optimal) {
    WarmStart warm{probe.setpoints};
    s.sol = solve_dispatch(model, topo, units, full, s.target, SwapMode::forbid,
                           config.solver, &warm);
  } else {
    const double t_req = request.magnitude_mva();
    if (t_req < 1e-12) {
      s.sol = std::move(probe);  // zero request that still failed: report as-is
    } else {
      ReachResult reach = max_reach(model, topo, units, full,
                                    {request.delta_p_mw, request.delta_q_mvar},
                                    SwapMode::forbid, config.reach_resolution_mva,
                                    config.solver);
      const double t_ach = std::min(t_req, reach.t_max_mva);
      const OperatingPoint capped{
          s.initial.p_mw + t_ach * request.delta_p_mw / t_req,
          s.initial.q_mvar + t_ach * request.delta_q_mvar / t_req};
      WarmStart warm{reach.at_max.setpoints};
      s.sol = solve_dispatch(model, topo, units, full, capped, SwapMode::forbid,
                             config.solver, &warm);
    }
  }
  s.ok = s.sol.status == SolveStatus::optimal;
  if (s.ok)
    s.revenue = tariff.price_p * std::abs(s.sol.achieved.p_mw - s.initial.p_mw) +
                tariff.price_q * std::abs(s.sol.achieved.q_mvar - s.initial.q_mvar);
  return s;
}

std::vector<UnitPayment> unit_rows(const std::vector<FlexUnit>& units,
                                   const Settlement& s) {
  std::vector<UnitPayment> rows(units.size());
  for (std::size_t i = 0; i < units.size(); ++i) {
    rows[i].unit = units[i].id;
    if (!s.ok) continue;
    const Regulation& reg = s.sol.regulations[i];
    rows[i].delivered_mva = std::hypot(reg.net_p(), reg.net_q());
    rows[i].cost = units[i].cost_p * (reg.p_up_mw + reg.p_down_mw) +
                   units[i].cost_q * (reg.q_up_mvar + reg.q_down_mvar);
  }
  return rows;
}

PaymentRecord costmin_record(const std::vector<FlexUnit>& units,
                             FlexRequest request, const Settlement& s) {
  PaymentRecord rec;
  rec.scheme = PaymentScheme::costmin;
  rec.request = request;
  rec.status = s.sol.status;
  rec.units = unit_rows(units, s);
  if (!s.ok) return rec;
  rec.achieved = s.sol.achieved;
  rec.revenue = s.revenue;
  for (auto& row : rec.units) {
    row.payment = row.cost;
    rec.cost_total += row.cost;
  }
  rec.dso_surplus = rec.revenue - rec.cost_total;
  return rec;
}

PaymentRecord shapley_record(const NetworkModel& model, const Topology& topo,
                             const std::vector<FlexUnit>& units,
                             FlexRequest request, const TariffModel& tariff,
                             const GameConfig& config, const Settlement& s,
                             ValueCache* cache) {
  PaymentRecord rec;
  rec.scheme = PaymentScheme::shapley;
  rec.request = request;
  rec.status = s.sol.status;
  rec.units = unit_rows(units, s);
  if (!s.ok) return rec;
  rec.achieved = s.sol.achieved;
  rec.revenue = s.revenue;
  for (const auto& row : rec.units) rec.cost_total += row.cost;

  GameConfig game_config = config;
  game_config.metric = GameMetric::surplus;

  // The grand coalition's surplus is defined by the very dispatch being
  // settled; seed it so the game prices every unit against that dispatch.
  ValueCache local;
  ValueCache* store = cache ? cache : &local;
  const CoalitionMask full = full_coalition(static_cast<int>(units.size()));
  store->put(characteristic_cache_key(game_config, full, s.target),
             rec.revenue - rec.cost_total);

  const CooperativeGame game =
      build_game(model, topo, units, s.target, game_config, tariff, store);
  const ShapleyAllocation shares = shapley_exact(game);
  for (std::size_t i = 0; i < rec.units.size(); ++i) {
    rec.units[i].payment = rec.units[i].cost + shares.values[i];
    rec.dso_surplus -= rec.units[i].payment;
  }
  rec.dso_surplus += rec.revenue;
  return rec;
}

}  // namespace

const char* to_string(PaymentScheme s) {
  switch (s) {
    case PaymentScheme::costmin: return "costmin";
    case PaymentScheme::shapley: return "shapley";
  }
  return "unknown";
}

double PaymentRecord::payment_total() const {
  double total = 0.0;
  for (const auto& row : units) total += row.payment;
  return total;
}

std::vector<FlexRequest> sample_requests(const FlexArea& area, int count,
                                         double sigma_mva, std::uint64_t seed) {
  if (count < 0) throw std::invalid_argument("request count must be non-negative");
  if (sigma_mva < 0.0) throw std::invalid_argument("sigma must be non-negative");
  Rng rng(seed);
  std::vector<FlexRequest> requests;
  requests.reserve(count);
  for (int i = 0; i < count; ++i) {
    bool accepted = false;
    for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
      const FlexRequest cand{rng.normal(0.0, sigma_mva), rng.normal(0.0, sigma_mva)};
      const OperatingPoint target{area.initial.p_mw + cand.delta_p_mw,
                                  area.initial.q_mvar + cand.delta_q_mvar};
      if (area.contains(target)) {
        requests.push_back(cand);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      std::ostringstream msg;
      msg << "request " << i << " exhausted " << kMaxRedraws
          << " redraws; sigma " << sigma_mva
          << " is too large for the reachable area";
      throw std::runtime_error(msg.str());
    }
  }
  return requests;
}

PaymentRecord payments_costmin(const NetworkModel& model, const Topology& topo,
                               const std::vector<FlexUnit>& units,
                               FlexRequest request, const TariffModel& tariff,
                               const GameConfig& config) {
  const Settlement s = settle_request(model, topo, units, request, tariff, config);
  return costmin_record(units, request, s);
}

PaymentRecord payments_shapley(const NetworkModel& model, const Topology& topo,
                               const std::vector<FlexUnit>& units,
                               FlexRequest request, const TariffModel& tariff,
                               const GameConfig& config, ValueCache* cache) {
  const Settlement s = settle_request(model, topo, units, request, tariff, config);
  return shapley_record(model, topo, units, request, tariff, config, s, cache);
}

PaymentStudy run_payment_study(const NetworkModel& model, const Topology& topo,
                               const std::vector<FlexUnit>& units,
                               const FlexArea& area, const TariffModel& tariff,
                               int count, double sigma_mva, std::uint64_t seed,
                               const GameConfig& config, ValueCache* cache,
                               int jobs) {
  PaymentStudy study;
  study.sigma_mva = sigma_mva;
  study.seed = seed;
  study.requests = sample_requests(area, count, sigma_mva, seed);
  const std::size_t n_req = study.requests.size();
  const std::size_t n_units = units.size();
  study.costmin.resize(n_req);
  study.shapley.resize(n_req);

  ValueCache local;
  ValueCache* store = cache ? cache : &local;
  std::vector<std::string> slot_warnings(n_req);

  parallel_for(n_req, jobs, [&](std::size_t i) {
    const FlexRequest req = study.requests[i];
    try {
      const Settlement s = settle_request(model, topo, units, req, tariff, config);
      study.costmin[i] = costmin_record(units, req, s);
      study.shapley[i] =
          shapley_record(model, topo, units, req, tariff, config, s, store);
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "request " << i << " (dP=" << req.delta_p_mw
          << ", dQ=" << req.delta_q_mvar << ") failed: " << e.what();
      slot_warnings[i] = msg.str();
      std::vector<UnitPayment> zeros(n_units);
      for (std::size_t u = 0; u < n_units; ++u) zeros[u].unit = units[u].id;
      study.costmin[i].request = req;
      study.costmin[i].units = zeros;
      study.shapley[i].request = req;
      study.shapley[i].scheme = PaymentScheme::shapley;
      study.shapley[i].units = std::move(zeros);
    }
  });

  study.activation_frequency.assign(n_units, 0.0);
  study.total_payment_costmin.assign(n_units, 0.0);
  study.total_payment_shapley.assign(n_units, 0.0);
  for (std::size_t i = 0; i < n_req; ++i) {
    if (!slot_warnings[i].empty()) study.warnings.push_back(slot_warnings[i]);
    const PaymentRecord& cm = study.costmin[i];
    const PaymentRecord& sh = study.shapley[i];
    if (cm.status != SolveStatus::optimal || sh.status != SolveStatus::optimal) {
      ++study.failures;
      continue;
    }
    study.total_revenue += cm.revenue;
    study.total_cost += cm.cost_total;
    study.dso_total_costmin += cm.dso_surplus;
    study.dso_total_shapley += sh.dso_surplus;
    for (std::size_t u = 0; u < n_units; ++u) {
      if (cm.units[u].delivered_mva > kActivationTolMva)
        study.activation_frequency[u] += 1.0;
      study.total_payment_costmin[u] += cm.units[u].payment;
      study.total_payment_shapley[u] += sh.units[u].payment;
    }
  }
  if (n_req > 0)
    for (double& f : study.activation_frequency) f /= static_cast<double>(n_req);
  return study;
}

std::vector<double> payment_series(const std::vector<PaymentRecord>& records,
                                   std::size_t unit_index) {
  std::vector<double> series;
  series.reserve(records.size());
  for (const auto& rec : records)
    if (unit_index < rec.units.size()) series.push_back(rec.units[unit_index].payment);
  std::sort(series.begin(), series.end(), std::greater<double>());
  return series;
}

}  // namespace flexcoop
