#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "flexcoop/coopgame.hpp"
#include "flexcoop/flexarea.hpp"
#include "flexcoop/net_model.hpp"
#include "flexcoop/opf.hpp"

namespace flexcoop {

/// A flexibility request: the desired change of the interface exchange
/// relative to the initial operating point.
struct FlexRequest {
  double delta_p_mw = 0.0;
  double delta_q_mvar = 0.0;
  double magnitude_mva() const { return std::hypot(delta_p_mw, delta_q_mvar); }
};

/// Draws `count` requests with both deltas from a zero-mean normal of the
/// given sigma, rejecting draws whose target lies outside `area`. Throws
/// when one slot burns through 100 redraws (sigma far too large for the
/// area, or the area is degenerate).
std::vector<FlexRequest> sample_requests(const FlexArea& area, int count,
                                         double sigma_mva, std::uint64_t seed);

enum class PaymentScheme { costmin, shapley };
const char* to_string(PaymentScheme s);

struct UnitPayment {
  std::string unit;
  double delivered_mva = 0.0;  // magnitude of the unit's net regulation
  double cost = 0.0;           // declared cost of that regulation, $/h
  double payment = 0.0;        // what the unit receives, $/h
};

/// Settlement of a single request. Both schemes settle the same no-swap
/// cost-minimal dispatch of the whole fleet; only the payment rule differs.
struct PaymentRecord {
  PaymentScheme scheme = PaymentScheme::costmin;
  FlexRequest request;
  OperatingPoint achieved{};  // absolute; equals the target inside the area
  SolveStatus status = SolveStatus::not_converged;
  std::vector<UnitPayment> units;  // aligned with the fleet
  double cost_total = 0.0;
  double revenue = 0.0;      // tariff value of the achieved deltas
  double dso_surplus = 0.0;  // revenue minus all payments

  double payment_total() const;
};

/// Pay every unit exactly its declared cost; the operator keeps the whole
/// surplus.
PaymentRecord payments_costmin(const NetworkModel& model, const Topology& topo,
                               const std::vector<FlexUnit>& units,
                               FlexRequest request, const TariffModel& tariff,
                               const GameConfig& config = {});

/// Reimburse every unit its cost and split the entire surplus by the exact
/// Shapley value of the surplus game; the operator keeps nothing. Surplus
/// shares can be negative when the fleet as a whole loses money on the
/// request.
PaymentRecord payments_shapley(const NetworkModel& model, const Topology& topo,
                               const std::vector<FlexUnit>& units,
                               FlexRequest request, const TariffModel& tariff,
                               const GameConfig& config = {},
                               ValueCache* cache = nullptr);

struct PaymentStudy {
  std::vector<FlexRequest> requests;
  std::vector<PaymentRecord> costmin;  // one record per request
  std::vector<PaymentRecord> shapley;
  /// Per unit: fraction of requests in which it delivered more than
  /// 1e-6 MVA. Scheme-independent, since both settle the same dispatch.
  std::vector<double> activation_frequency;
  std::vector<double> total_payment_costmin;  // per unit, summed over requests
  std::vector<double> total_payment_shapley;
  double total_revenue = 0.0;
  double total_cost = 0.0;
  double dso_total_costmin = 0.0;
  double dso_total_shapley = 0.0;
  double sigma_mva = 0.0;
  std::uint64_t seed = 0;
  int failures = 0;  // requests whose settlement dispatch did not solve
  std::vector<std::string> warnings;
};

/// Samples requests inside `area` and settles every one under both schemes.
/// jobs > 1 processes requests concurrently; results are slot-addressed and
/// identical for any job count.
PaymentStudy run_payment_study(const NetworkModel& model, const Topology& topo,
                               const std::vector<FlexUnit>& units,
                               const FlexArea& area, const TariffModel& tariff,
                               int count, double sigma_mva, std::uint64_t seed,
                               const GameConfig& config = {},
                               ValueCache* cache = nullptr, int jobs = 1);

/// One unit's payments across a study, sorted descending (for duration-curve
/// style plots and tables).
std::vector<double> payment_series(const std::vector<PaymentRecord>& records,
                                   std::size_t unit_index);

}  // namespace flexcoop
