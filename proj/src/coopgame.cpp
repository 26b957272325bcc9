#include "flexcoop/coopgame.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "flexcoop/parallel.hpp"
#include "flexcoop/powerflow.hpp"
#include "flexcoop/rng.hpp"

namespace flexcoop {

namespace {

std::string bits_hex(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(bits));
  return buf;
}

std::string cache_key(GameMetric metric, SwapMode policy, double resolution,
                      CoalitionMask mask, OperatingPoint request) {
  std::ostringstream key;
  key << "m" << static_cast<int>(metric) << ":s" << static_cast<int>(policy)
      << ":r" << bits_hex(resolution) << ":c" << mask << ":" << bits_hex(request.p_mw)
      << ":" << bits_hex(request.q_mvar);
  return key.str();
}

double characteristic_value_at(const NetworkModel& model, const Topology& topo,
                               const std::vector<FlexUnit>& units,
                               CoalitionMask coalition, OperatingPoint request,
                               OperatingPoint initial, const GameConfig& config,
                               const TariffModel& tariff, ValueCache* cache) {
  if (coalition == 0) return 0.0;
  const SwapMode policy =
      config.metric == GameMetric::surplus ? SwapMode::forbid : config.policy;
  const std::string key =
      cache_key(config.metric, policy, config.reach_resolution_mva, coalition, request);
  if (cache)
    if (auto hit = cache->get(key)) return *hit;

  const double dp = request.p_mw - initial.p_mw;
  const double dq = request.q_mvar - initial.q_mvar;
  const double t_req = std::hypot(dp, dq);

  double value = 0.0;
  if (t_req < 1e-12) {
    value = 0.0;  // nothing requested: zero reach cap, zero cost, zero surplus
  } else {
    // Cheap full-target membership first; bisect only when it fails.
    SolverConfig fast = config.solver;
    fast.multi_start = false;
    double t_ach = t_req;
    DispatchSolution at_target =
        solve_dispatch(model, topo, units, coalition, request, policy, fast);
    if (at_target.status != SolveStatus::optimal) {
      ReachResult reach = max_reach(model, topo, units, coalition,
                                    {dp, dq}, policy,
                                    config.reach_resolution_mva, config.solver);
      t_ach = std::min(t_req, reach.t_max_mva);
      at_target = std::move(reach.at_max);
    }
    if (config.metric == GameMetric::capacity) {
      value = t_ach;
    } else {
      const OperatingPoint achieved{initial.p_mw + t_ach * dp / t_req,
                                    initial.q_mvar + t_ach * dq / t_req};
      WarmStart warm{at_target.setpoints};
      DispatchSolution best =
          solve_dispatch(model, topo, units, coalition, achieved, policy,
                         config.solver, at_target.status == SolveStatus::optimal
                             ? &warm
                             : nullptr);
      if (best.status != SolveStatus::optimal) {
        std::ostringstream msg;
        msg << "dispatch at the achieved point (t=" << t_ach
            << " MVA) failed for coalition " << coalition_label(coalition, units)
            << ": " << best.diagnostics;
        throw std::runtime_error(msg.str());
      }
      if (config.metric == GameMetric::cost) {
        value = best.total_cost;
      } else {
        const double revenue =
            tariff.price_p * std::abs(best.achieved.p_mw - initial.p_mw) +
            tariff.price_q * std::abs(best.achieved.q_mvar - initial.q_mvar);
        value = revenue - best.total_cost;
      }
    }
  }
  if (cache) cache->put(key, value);
  return value;
}

}  // namespace

std::string characteristic_cache_key(const GameConfig& config,
                                     CoalitionMask coalition,
                                     OperatingPoint request) {
  const SwapMode policy =
      config.metric == GameMetric::surplus ? SwapMode::forbid : config.policy;
  return cache_key(config.metric, policy, config.reach_resolution_mva, coalition,
                   request);
}

const char* to_string(GameMetric m) {
  switch (m) {
    case GameMetric::capacity: return "capacity";
    case GameMetric::cost: return "cost";
    case GameMetric::surplus: return "surplus";
  }
  return "unknown";
}

ValueCache::ValueCache(const std::string& directory, const std::string& case_fingerprint) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  path_ = (fs::path(directory) / ("values-" + case_fingerprint + ".json")).string();
  std::ifstream in(path_);
  if (!in) return;
  try {
    nlohmann::json doc = nlohmann::json::parse(in);
    for (auto it = doc.begin(); it != doc.end(); ++it)
      if (it.value().is_number()) values_[it.key()] = it.value().get<double>();
  } catch (const nlohmann::json::exception&) {
    values_.clear();  // corrupt cache: start over rather than fail the run
  }
}

ValueCache::~ValueCache() {
  try {
    flush();
  } catch (...) {
  }
}

std::optional<double> ValueCache::get(const std::string& key) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

void ValueCache::put(const std::string& key, double value) {
  std::lock_guard<std::mutex> lock(mu_);
  values_[key] = value;
  dirty_ = true;
}

void ValueCache::flush() {
  std::lock_guard<std::mutex> lock(mu_);
  if (path_.empty() || !dirty_) return;
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [k, v] : values_) doc[k] = v;
  std::ofstream out(path_);
  out << doc.dump() << "\n";
  dirty_ = false;
}

std::size_t ValueCache::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return values_.size();
}

double characteristic_value(const NetworkModel& model, const Topology& topo,
                            const std::vector<FlexUnit>& units,
                            CoalitionMask coalition, OperatingPoint request,
                            const GameConfig& config, const TariffModel& tariff,
                            ValueCache* cache) {
  return characteristic_value_at(model, topo, units, coalition, request,
                                 initial_interface_point(model, topo, units), config,
                                 tariff, cache);
}

CooperativeGame build_game(const NetworkModel& model, const Topology& topo,
                           const std::vector<FlexUnit>& units,
                           OperatingPoint request, const GameConfig& config,
                           const TariffModel& tariff, ValueCache* cache, int jobs) {
  if (units.size() > 16)
    throw std::invalid_argument("exact game construction is limited to 16 units");
  CooperativeGame game;
  game.n_players = static_cast<int>(units.size());
  game.metric = config.metric;
  game.request = request;
  game.initial = initial_interface_point(model, topo, units);
  game.values.assign(std::size_t{1} << units.size(), 0.0);
  parallel_for(game.values.size() - 1, jobs, [&](std::size_t i) {
    const CoalitionMask mask = static_cast<CoalitionMask>(i + 1);
    game.values[mask] = characteristic_value_at(model, topo, units, mask, request,
                                                game.initial, config, tariff, cache);
  });
  return game;
}

double marginal_contribution(const CooperativeGame& game, CoalitionMask without,
                             int player) {
  if (player < 0 || player >= game.n_players)
    throw std::invalid_argument("player index out of range");
  const CoalitionMask bit = CoalitionMask{1} << player;
  if (without & bit)
    throw std::invalid_argument("player already belongs to the coalition");
  return game.value(without | bit) - game.value(without);
}

ShapleyAllocation shapley_exact(const CooperativeGame& game) {
  const int n = game.n_players;
  std::vector<double> factorial(n + 1, 1.0);
  for (int i = 1; i <= n; ++i) factorial[i] = factorial[i - 1] * i;
  ShapleyAllocation alloc;
  alloc.values.assign(n, 0.0);
  const CoalitionMask full = full_coalition(n);
  for (int i = 0; i < n; ++i) {
    const CoalitionMask bit = CoalitionMask{1} << i;
    double phi = 0.0;
    const CoalitionMask others = full & ~bit;
    // Iterate the subsets of the other players.
    CoalitionMask sub = 0;
    while (true) {
      const int s = __builtin_popcount(sub);
      const double weight = factorial[s] * factorial[n - s - 1] / factorial[n];
      phi += weight * (game.value(sub | bit) - game.value(sub));
      if (sub == others) break;
      sub = (sub - others) & others;  // next subset of `others`
    }
    alloc.values[i] = phi;
  }
  return alloc;
}

ShapleyAllocation shapley_sampled(const std::function<double(CoalitionMask)>& value_of,
                                  int n_players, long long n_samples,
                                  std::uint64_t seed) {
  if (n_players < 1 || n_players > 31)
    throw std::invalid_argument("sampled Shapley supports 1..31 players");
  if (n_samples < 1) throw std::invalid_argument("need at least one sample");
  const int n = n_players;
  Rng rng(seed);

  std::map<CoalitionMask, double> memo;
  auto value = [&](CoalitionMask m) {
    if (m == 0) return 0.0;
    auto it = memo.find(m);
    if (it != memo.end()) return it->second;
    const double v = value_of(m);
    memo.emplace(m, v);
    return v;
  };

  std::vector<double> sum(n, 0.0), sum_sq(n, 0.0);
  auto run_permutation = [&](const std::vector<int>& perm) {
    CoalitionMask mask = 0;
    for (int pos = 0; pos < n; ++pos) {
      const int player = perm[pos];
      const CoalitionMask bit = CoalitionMask{1} << player;
      const double mc = value(mask | bit) - value(mask);
      sum[player] += mc;
      sum_sq[player] += mc * mc;
      mask |= bit;
    }
  };

  long long factorial = 1;
  bool enumerable = n <= 7;
  if (enumerable)
    for (int i = 2; i <= n; ++i) factorial *= i;

  if (enumerable && n_samples >= factorial) {
    // Balanced mode: whole shuffled epochs of every ordering, then a
    // without-replacement remainder from a fresh shuffle.
    std::vector<std::vector<int>> all;
    std::vector<int> base(n);
    std::iota(base.begin(), base.end(), 0);
    do {
      all.push_back(base);
    } while (std::next_permutation(base.begin(), base.end()));
    std::vector<int> order(all.size());
    std::iota(order.begin(), order.end(), 0);
    long long remaining = n_samples;
    while (remaining > 0) {
      rng.shuffle(order);
      const long long take = std::min<long long>(remaining, factorial);
      for (long long k = 0; k < take; ++k) run_permutation(all[order[k]]);
      remaining -= take;
    }
  } else {
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (long long s = 0; s < n_samples; ++s) {
      rng.shuffle(perm);
      run_permutation(perm);
    }
  }

  ShapleyAllocation alloc;
  alloc.sampled = true;
  alloc.n_samples = n_samples;
  alloc.values.assign(n, 0.0);
  alloc.std_errors.assign(n, 0.0);
  const double count = static_cast<double>(n_samples);
  for (int i = 0; i < n; ++i) {
    alloc.values[i] = sum[i] / count;
    if (n_samples > 1) {
      const double var =
          std::max(0.0, (sum_sq[i] - sum[i] * sum[i] / count) / (count - 1.0));
      alloc.std_errors[i] = std::sqrt(var / count);
    }
  }
  return alloc;
}

ShapleyAllocation shapley_sampled(const CooperativeGame& game, long long n_samples,
                                  std::uint64_t seed) {
  return shapley_sampled([&game](CoalitionMask m) { return game.value(m); },
                         game.n_players, n_samples, seed);
}

}  // namespace flexcoop
