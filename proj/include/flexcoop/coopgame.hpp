#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "flexcoop/net_model.hpp"
#include "flexcoop/opf.hpp"

namespace flexcoop {

/// What a coalition's value measures for one flexibility request:
///  - capacity: the apparent power (MVA) deliverable toward the request,
///    capped at the requested magnitude;
///  - cost: the minimized regulation cost ($/h) at the achieved point;
///  - surplus: tariff revenue at the achieved point minus that cost ($/h).
enum class GameMetric { capacity, cost, surplus };

const char* to_string(GameMetric m);

struct GameConfig {
  GameMetric metric = GameMetric::capacity;
  /// Swap policy for capacity and cost values. Surplus values are always
  /// computed under SwapMode::forbid regardless of this field.
  SwapMode policy = SwapMode::allow;
  double reach_resolution_mva = 1e-3;
  SolverConfig solver;
};

/// Persistent memo of characteristic values, shared across runs through an
/// optional directory (one JSON file per case fingerprint). Thread-safe;
/// values are deterministic, so concurrent writes of the same key are benign.
class ValueCache {
 public:
  ValueCache() = default;
  ValueCache(const std::string& directory, const std::string& case_fingerprint);
  ~ValueCache();
  ValueCache(const ValueCache&) = delete;
  ValueCache& operator=(const ValueCache&) = delete;

  std::optional<double> get(const std::string& key) const;
  void put(const std::string& key, double value);
  void flush();
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, double> values_;
  std::string path_;
  bool dirty_ = false;
};

struct CooperativeGame {
  int n_players = 0;
  GameMetric metric = GameMetric::capacity;
  OperatingPoint request{};  // absolute (P_ref, Q_ref) target
  OperatingPoint initial{};
  std::vector<double> values;  // size 2^n, indexed by coalition mask; [0] = 0

  double value(CoalitionMask mask) const { return values.at(mask); }
};

/// Value of one coalition for the request (absolute interface target), with
/// non-members frozen at their initial setpoints.
double characteristic_value(const NetworkModel& model, const Topology& topo,
                            const std::vector<FlexUnit>& units,
                            CoalitionMask coalition, OperatingPoint request,
                            const GameConfig& config, const TariffModel& tariff,
                            ValueCache* cache = nullptr);

/// Cache key under which characteristic_value stores the coalition's value.
/// Exposed so callers that already priced a coalition (e.g. from a dispatch
/// they need for other reasons) can seed the cache instead of recomputing.
std::string characteristic_cache_key(const GameConfig& config,
                                     CoalitionMask coalition,
                                     OperatingPoint request);

/// All 2^n coalition values (empty = 0). jobs > 1 evaluates coalitions
/// concurrently; results are deterministic either way.
CooperativeGame build_game(const NetworkModel& model, const Topology& topo,
                           const std::vector<FlexUnit>& units,
                           OperatingPoint request, const GameConfig& config,
                           const TariffModel& tariff, ValueCache* cache = nullptr,
                           int jobs = 1);

/// v(S ∪ {player}) − v(S); requires player ∉ S.
double marginal_contribution(const CooperativeGame& game, CoalitionMask without,
                             int player);

struct ShapleyAllocation {
  std::vector<double> values;      // per player, same units as the game
  bool sampled = false;
  long long n_samples = 0;
  std::vector<double> std_errors;  // sampled mode only
};

ShapleyAllocation shapley_exact(const CooperativeGame& game);

/// Permutation-sampling estimate. When the player count is small enough to
/// enumerate all n! orderings and n_samples covers them, sampling proceeds in
/// balanced shuffled epochs (a sample count that is a multiple of n! then
/// reproduces the exact value); otherwise orderings are drawn i.i.d.
ShapleyAllocation shapley_sampled(const std::function<double(CoalitionMask)>& value_of,
                                  int n_players, long long n_samples,
                                  std::uint64_t seed);

ShapleyAllocation shapley_sampled(const CooperativeGame& game, long long n_samples,
                                  std::uint64_t seed);

}  // namespace flexcoop
