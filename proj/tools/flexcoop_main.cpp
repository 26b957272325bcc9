#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "flexcoop/coopgame.hpp"
#include "flexcoop/flexarea.hpp"
#include "flexcoop/net_model.hpp"
#include "flexcoop/opf.hpp"
#include "flexcoop/parallel.hpp"
#include "flexcoop/powerflow.hpp"
#include "flexcoop/pricing.hpp"
#include "flexcoop/report.hpp"
#include "flexcoop/version.hpp"

namespace {

using namespace flexcoop;

std::string fmt(double v) { return format_number(v); }

struct RunContext {
  CaseData data;
  Topology topo;
  std::string fingerprint;
  std::filesystem::path dir;
  int jobs = 1;
  bool quiet = false;
  RunManifest manifest;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  std::string file(const std::string& name) {
    manifest.outputs.push_back(name);
    return (dir / name).string();
  }

  void warn(const std::string& message) {
    manifest.warnings.push_back(message);
    if (!quiet) std::cerr << "warning: " << message << "\n";
  }

  void say(const std::string& line) {
    if (!quiet) std::cout << line << "\n";
  }

  void finish() {
    manifest.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count();
    write_manifest((dir / "manifest.json").string(), manifest);
    say("outputs written to " + dir.string());
  }
};

RunContext make_context(const std::string& case_ref, const std::string& subcommand,
                        std::string out_dir, int jobs, bool quiet) {
  RunContext ctx;
  ctx.data = is_builtin_case(case_ref) ? builtin_case(case_ref)
                                       : load_case_file(case_ref);
  ctx.topo = build_topology(ctx.data.model);
  ctx.fingerprint = case_fingerprint(ctx.data);
  if (out_dir.empty()) out_dir = "out_" + subcommand;
  std::filesystem::create_directories(out_dir);
  ctx.dir = out_dir;
  ctx.jobs = jobs;
  ctx.quiet = quiet;
  ctx.manifest.tool_version = kVersion;
  ctx.manifest.subcommand = subcommand;
  ctx.manifest.case_name = case_ref;
  ctx.manifest.case_fingerprint = ctx.fingerprint;
  ctx.manifest.params["case"] = case_ref;
  ctx.manifest.params["jobs"] = std::to_string(jobs);
  ctx.manifest.params["out"] = out_dir;
  return ctx;
}

CoalitionMask parse_coalition(const std::string& text,
                              const std::vector<FlexUnit>& units) {
  if (text == "all") return full_coalition(units.size());
  CoalitionMask mask = 0;
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ',')) {
    const auto a = token.find_first_not_of(" \t");
    const auto b = token.find_last_not_of(" \t");
    if (a == std::string::npos) continue;
    token = token.substr(a, b - a + 1);
    bool found = false;
    for (std::size_t i = 0; i < units.size(); ++i)
      if (units[i].id == token) {
        mask |= CoalitionMask{1} << i;
        found = true;
        break;
      }
    if (!found) {
      std::string known;
      for (const auto& u : units) known += (known.empty() ? "" : ", ") + u.id;
      throw SchemaError("unknown unit '" + token + "' in --coalition (case has: " +
                        known + ")");
    }
  }
  if (mask == 0) throw SchemaError("--coalition selected no units");
  return mask;
}

SwapMode parse_swap(const std::string& text) {
  if (text == "allow") return SwapMode::allow;
  if (text == "forbid") return SwapMode::forbid;
  throw SchemaError("--swap must be 'allow' or 'forbid'");
}

std::unique_ptr<ValueCache> make_cache(const RunContext& ctx) {
  const char* dir = std::getenv("FLEXCOOP_CACHE_DIR");
  if (dir && *dir) return std::make_unique<ValueCache>(dir, ctx.fingerprint);
  return std::make_unique<ValueCache>();
}

// ---- powerflow --------------------------------------------------------------

int run_powerflow(RunContext& ctx) {
  const auto& model = ctx.data.model;
  std::vector<UnitSetpoint> setpoints(ctx.data.units.size());
  for (std::size_t i = 0; i < ctx.data.units.size(); ++i)
    setpoints[i] = {ctx.data.units[i].p0_mw, ctx.data.units[i].q0_mvar};
  const PowerFlowSolution pf =
      solve_powerflow(model, ctx.topo, ctx.data.units, setpoints);

  CsvWriter buses(ctx.file("buses.csv"));
  buses.row({"bus", "v_pu"});
  for (std::size_t b = 0; b < model.buses.size(); ++b)
    buses.row({std::to_string(model.buses[b].id), fmt(std::sqrt(pf.v_sq[b]))});
  buses.close();

  CsvWriter branches(ctx.file("branches.csv"));
  branches.row({"from", "to", "p_mw", "q_mvar", "s_mva", "loading_pct"});
  double loss_mw = 0.0;
  for (std::size_t b = 0; b < model.branches.size(); ++b) {
    const Branch& br = model.branches[b];
    const double s = std::hypot(pf.branch_p_mw[b], pf.branch_q_mvar[b]);
    loss_mw += br.r_pu * pf.branch_l_pu[b] * model.base_mva;
    branches.row({std::to_string(br.from_bus), std::to_string(br.to_bus),
                  fmt(pf.branch_p_mw[b]), fmt(pf.branch_q_mvar[b]), fmt(s),
                  br.limit_mva ? fmt(100.0 * s / *br.limit_mva) : std::string()});
  }
  branches.close();

  const int min_bus = model.buses[pf.min_voltage_bus_index()].id;
  ctx.say("converged: " + std::string(pf.converged ? "yes" : "NO") + " in " +
          std::to_string(pf.iterations) + " iterations (max mismatch " +
          fmt(pf.max_mismatch_pu) + " pu)");
  ctx.say("interface exchange: P = " + fmt(pf.p_ref_mw) + " MW, Q = " +
          fmt(pf.q_ref_mvar) + " MVAr");
  ctx.say("losses: " + fmt(loss_mw) + " MW");
  ctx.say("lowest voltage: " + fmt(pf.min_voltage_pu()) + " pu at bus " +
          std::to_string(min_bus));
  if (!pf.converged) ctx.warn("power flow did not converge");
  ctx.finish();
  return pf.converged ? 0 : 1;
}

// ---- area -------------------------------------------------------------------

void write_vertices_csv(RunContext& ctx, const std::string& name,
                        const FlexArea& area) {
  CsvWriter csv(ctx.file(name));
  csv.row({"theta_deg", "p_mw", "q_mvar"});
  for (std::size_t i = 0; i < area.vertices.size(); ++i)
    csv.row({fmt(area.vertex_angles_deg[i]), fmt(area.vertices[i].p_mw),
             fmt(area.vertices[i].q_mvar)});
  csv.close();
}

int run_area(RunContext& ctx, const std::string& coalition_text, int dirs,
             const std::string& swap_text, bool enumerate_all) {
  const SwapMode policy = parse_swap(swap_text);
  ctx.manifest.params["coalition"] = coalition_text;
  ctx.manifest.params["dirs"] = std::to_string(dirs);
  ctx.manifest.params["swap"] = swap_text;
  ctx.manifest.params["enumerate"] = enumerate_all ? "true" : "false";

  if (enumerate_all) {
    std::vector<FlexArea> all = coalition_areas(ctx.data.model, ctx.topo,
                                                ctx.data.units, dirs, policy, {},
                                                ctx.jobs);
    CsvWriter vertices(ctx.file("areas.csv"));
    vertices.row({"coalition", "theta_deg", "p_mw", "q_mvar"});
    CsvWriter summary(ctx.file("summary.csv"));
    summary.row({"coalition", "size", "n_vertices", "area_mva2"});
    std::vector<FlexArea> drawn;
    std::vector<std::string> labels;
    for (CoalitionMask mask = 1; mask < all.size(); ++mask) {
      const FlexArea& area = all[mask];
      const std::string label = coalition_label(mask, ctx.data.units);
      for (std::size_t i = 0; i < area.vertices.size(); ++i)
        vertices.row({label, fmt(area.vertex_angles_deg[i]),
                      fmt(area.vertices[i].p_mw), fmt(area.vertices[i].q_mvar)});
      summary.row({label, std::to_string(__builtin_popcount(mask)),
                   std::to_string(area.vertices.size()), fmt(area.area())});
      for (const auto& w : area.warnings) ctx.warn(label + ": " + w);
      drawn.push_back(area);
      labels.push_back(label);
    }
    vertices.close();
    summary.close();
    SvgOptions svg;
    svg.title = ctx.data.name + ": flexibility areas of all coalitions (" +
                swap_text + ")";
    write_areas_svg(ctx.file("areas.svg"), drawn, labels, svg);
    ctx.say("traced " + std::to_string(drawn.size()) + " coalition areas at " +
            std::to_string(dirs) + " directions");
    ctx.finish();
    return 0;
  }

  const CoalitionMask mask = parse_coalition(coalition_text, ctx.data.units);
  const FlexArea area =
      trace_area(ctx.data.model, ctx.topo, ctx.data.units, mask, dirs, policy);
  for (const auto& w : area.warnings) ctx.warn(w);
  write_vertices_csv(ctx, "vertices.csv", area);
  CsvWriter comps(ctx.file("components.csv"));
  comps.row({"component", "p_mw", "q_mvar"});
  for (std::size_t c = 0; c < area.components.size(); ++c)
    for (const auto& p : area.components[c])
      comps.row({std::to_string(c), fmt(p.p_mw), fmt(p.q_mvar)});
  comps.close();
  SvgOptions svg;
  svg.title = ctx.data.name + ": flexibility area of " +
              coalition_label(mask, ctx.data.units) + " (" + swap_text + ")";
  write_area_svg(ctx.file("area.svg"), area, svg);

  ctx.say("coalition " + coalition_label(mask, ctx.data.units) + ", policy " +
          swap_text + ", " + std::to_string(dirs) + " directions");
  ctx.say("initial interface: P = " + fmt(area.initial.p_mw) + " MW, Q = " +
          fmt(area.initial.q_mvar) + " MVAr");
  ctx.say("vertices: " + std::to_string(area.vertices.size()) + " in " +
          std::to_string(area.components.size()) + " component(s), area " +
          fmt(area.area()) + " MVA^2");
  ctx.finish();
  if (area.vertices.size() < 3) {
    if (!ctx.quiet) std::cerr << "error: traced area is degenerate\n";
    return 1;
  }
  return 0;
}

// ---- dispatch ---------------------------------------------------------------

int run_dispatch(RunContext& ctx, const std::string& coalition_text,
                 double target_dp, double target_dq, const std::string& swap_text) {
  const SwapMode policy = parse_swap(swap_text);
  const CoalitionMask mask = parse_coalition(coalition_text, ctx.data.units);
  ctx.manifest.params["coalition"] = coalition_text;
  ctx.manifest.params["target_p"] = fmt(target_dp);
  ctx.manifest.params["target_q"] = fmt(target_dq);
  ctx.manifest.params["swap"] = swap_text;

  const OperatingPoint initial =
      initial_interface_point(ctx.data.model, ctx.topo, ctx.data.units);
  const OperatingPoint target{initial.p_mw + target_dp, initial.q_mvar + target_dq};
  const DispatchSolution sol = solve_dispatch(ctx.data.model, ctx.topo,
                                              ctx.data.units, mask, target, policy);

  ctx.say("coalition " + coalition_label(mask, ctx.data.units) + ", policy " +
          swap_text);
  ctx.say("initial interface: P = " + fmt(initial.p_mw) + " MW, Q = " +
          fmt(initial.q_mvar) + " MVAr");
  ctx.say("target interface:  P = " + fmt(target.p_mw) + " MW, Q = " +
          fmt(target.q_mvar) + " MVAr (dP = " + fmt(target_dp) + ", dQ = " +
          fmt(target_dq) + ")");
  ctx.say("status: " + std::string(to_string(sol.status)));
  if (sol.status != SolveStatus::optimal) {
    if (!sol.diagnostics.empty()) ctx.say("  " + sol.diagnostics);
    ctx.warn("dispatch failed: " + std::string(to_string(sol.status)));
    ctx.finish();
    return 1;
  }

  ctx.say("achieved interface: P = " + fmt(sol.achieved.p_mw) + " MW, Q = " +
          fmt(sol.achieved.q_mvar) + " MVAr");
  ctx.say("total regulation cost: " + fmt(sol.total_cost) + " $/h");
  ctx.say(std::string("power swap: P ") + (sol.swap_active_p ? "ACTIVE" : "none") +
          ", Q " + (sol.swap_active_q ? "ACTIVE" : "none"));

  CsvWriter csv(ctx.file("regulations.csv"));
  csv.row({"unit", "bus", "p_up_mw", "p_down_mw", "q_up_mvar", "q_down_mvar",
           "net_p_mw", "net_q_mvar", "cost"});
  for (std::size_t i = 0; i < ctx.data.units.size(); ++i) {
    const Regulation& r = sol.regulations[i];
    const FlexUnit& u = ctx.data.units[i];
    const double cost = u.cost_p * (r.p_up_mw + r.p_down_mw) +
                        u.cost_q * (r.q_up_mvar + r.q_down_mvar);
    csv.row({u.id, std::to_string(u.bus), fmt(r.p_up_mw), fmt(r.p_down_mw),
             fmt(r.q_up_mvar), fmt(r.q_down_mvar), fmt(r.net_p()), fmt(r.net_q()),
             fmt(cost)});
    ctx.say("  " + u.id + ": net dP = " + fmt(r.net_p()) + " MW, net dQ = " +
            fmt(r.net_q()) + " MVAr, cost " + fmt(cost) + " $/h");
  }
  csv.close();
  ctx.finish();
  return 0;
}

// ---- shapley ----------------------------------------------------------------

GameMetric parse_metric(const std::string& text) {
  if (text == "capacity") return GameMetric::capacity;
  if (text == "cost") return GameMetric::cost;
  if (text == "surplus") return GameMetric::surplus;
  throw SchemaError("--metric must be capacity, cost or surplus");
}

int run_shapley(RunContext& ctx, const std::string& metric_text, double target_dp,
                double target_dq, const std::string& method, long long samples,
                std::uint64_t seed, const std::string& swap_text) {
  if (method != "exact" && method != "sampled")
    throw SchemaError("--method must be 'exact' or 'sampled'");
  GameConfig config;
  config.metric = parse_metric(metric_text);
  config.policy = parse_swap(swap_text);
  ctx.manifest.params["metric"] = metric_text;
  ctx.manifest.params["target_p"] = fmt(target_dp);
  ctx.manifest.params["target_q"] = fmt(target_dq);
  ctx.manifest.params["method"] = method;
  ctx.manifest.params["samples"] = std::to_string(samples);
  ctx.manifest.params["seed"] = std::to_string(seed);
  ctx.manifest.params["swap"] = swap_text;

  const OperatingPoint initial =
      initial_interface_point(ctx.data.model, ctx.topo, ctx.data.units);
  const OperatingPoint target{initial.p_mw + target_dp, initial.q_mvar + target_dq};
  auto cache = make_cache(ctx);
  const CooperativeGame game = build_game(ctx.data.model, ctx.topo, ctx.data.units,
                                          target, config, ctx.data.tariff,
                                          cache.get(), ctx.jobs);
  const ShapleyAllocation alloc = method == "exact"
                                      ? shapley_exact(game)
                                      : shapley_sampled(game, samples, seed);
  const double grand = game.values.back();

  CsvWriter allocation(ctx.file("allocation.csv"));
  allocation.row({"unit", "bus", "value", "share_pct", "std_error"});
  ctx.say("metric " + metric_text + ", request dP = " + fmt(target_dp) +
          " MW, dQ = " + fmt(target_dq) + " MVAr, method " + method);
  ctx.say("grand coalition value: " + fmt(grand));
  for (std::size_t i = 0; i < ctx.data.units.size(); ++i) {
    const double share =
        std::abs(grand) > 1e-12 ? 100.0 * alloc.values[i] / grand : 0.0;
    const double std_err = alloc.sampled ? alloc.std_errors[i] : 0.0;
    allocation.row({ctx.data.units[i].id, std::to_string(ctx.data.units[i].bus),
                    fmt(alloc.values[i]), fmt(share), fmt(std_err)});
    std::ostringstream line;
    line << "  " << ctx.data.units[i].id << ": " << fmt(alloc.values[i])
         << " (share " << fmt(share) << "%";
    if (alloc.sampled) line << ", std err " << fmt(std_err);
    line << ")";
    ctx.say(line.str());
  }
  allocation.close();

  CsvWriter table(ctx.file("characteristic.csv"));
  table.row({"coalition", "size", "value"});
  for (CoalitionMask mask = 1; mask < game.values.size(); ++mask)
    table.row({coalition_label(mask, ctx.data.units),
               std::to_string(__builtin_popcount(mask)), fmt(game.values[mask])});
  table.close();
  ctx.finish();
  return 0;
}

// ---- simulate-payments ------------------------------------------------------

void write_payment_csv(RunContext& ctx, const std::string& name,
                       const std::vector<PaymentRecord>& records,
                       const std::vector<FlexUnit>& units) {
  CsvWriter csv(ctx.file(name));
  std::vector<std::string> header{"request", "delta_p_mw", "delta_q_mvar"};
  for (const auto& u : units) header.push_back("payment_" + u.id);
  header.insert(header.end(), {"revenue", "cost_total", "dso_surplus", "status"});
  csv.row(header);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const PaymentRecord& r = records[i];
    std::vector<std::string> row{std::to_string(i), fmt(r.request.delta_p_mw),
                                 fmt(r.request.delta_q_mvar)};
    for (const auto& u : r.units) row.push_back(fmt(u.payment));
    row.insert(row.end(), {fmt(r.revenue), fmt(r.cost_total), fmt(r.dso_surplus),
                           to_string(r.status)});
    csv.row(row);
  }
  csv.close();
}

int run_simulate_payments(RunContext& ctx, int count, double sigma,
                          std::uint64_t seed, int dirs) {
  ctx.manifest.params["count"] = std::to_string(count);
  ctx.manifest.params["sigma"] = fmt(sigma);
  ctx.manifest.params["seed"] = std::to_string(seed);
  ctx.manifest.params["dirs"] = std::to_string(dirs);
  // Requests must be deliverable without power swaps, so they are drawn from
  // the no-swap area of the whole fleet.
  const FlexArea area = trace_area(ctx.data.model, ctx.topo, ctx.data.units,
                                   full_coalition(ctx.data.units.size()), dirs,
                                   SwapMode::forbid);
  for (const auto& w : area.warnings) ctx.warn(w);

  auto cache = make_cache(ctx);
  const PaymentStudy study =
      run_payment_study(ctx.data.model, ctx.topo, ctx.data.units, area,
                        ctx.data.tariff, count, sigma, seed, {}, cache.get(),
                        ctx.jobs);
  for (const auto& w : study.warnings) ctx.warn(w);

  CsvWriter requests(ctx.file("requests.csv"));
  requests.row({"request", "delta_p_mw", "delta_q_mvar"});
  for (std::size_t i = 0; i < study.requests.size(); ++i)
    requests.row({std::to_string(i), fmt(study.requests[i].delta_p_mw),
                  fmt(study.requests[i].delta_q_mvar)});
  requests.close();

  write_payment_csv(ctx, "payments_costmin.csv", study.costmin, ctx.data.units);
  write_payment_csv(ctx, "payments_shapley.csv", study.shapley, ctx.data.units);

  CsvWriter series(ctx.file("series.csv"));
  series.row({"scheme", "unit", "rank", "payment"});
  for (std::size_t u = 0; u < ctx.data.units.size(); ++u) {
    const auto cm = payment_series(study.costmin, u);
    const auto sh = payment_series(study.shapley, u);
    for (std::size_t k = 0; k < cm.size(); ++k)
      series.row({"costmin", ctx.data.units[u].id, std::to_string(k + 1),
                  fmt(cm[k])});
    for (std::size_t k = 0; k < sh.size(); ++k)
      series.row({"shapley", ctx.data.units[u].id, std::to_string(k + 1),
                  fmt(sh[k])});
  }
  series.close();

  CsvWriter summary(ctx.file("summary.csv"));
  summary.row({"unit", "activation_frequency", "total_payment_costmin",
               "total_payment_shapley"});
  for (std::size_t u = 0; u < ctx.data.units.size(); ++u)
    summary.row({ctx.data.units[u].id, fmt(study.activation_frequency[u]),
                 fmt(study.total_payment_costmin[u]),
                 fmt(study.total_payment_shapley[u])});
  summary.close();

  CsvWriter totals(ctx.file("totals.csv"));
  totals.row({"quantity", "value"});
  totals.row({"requests", std::to_string(study.requests.size())});
  totals.row({"failures", std::to_string(study.failures)});
  totals.row({"total_revenue", fmt(study.total_revenue)});
  totals.row({"total_cost", fmt(study.total_cost)});
  totals.row({"dso_total_costmin", fmt(study.dso_total_costmin)});
  totals.row({"dso_total_shapley", fmt(study.dso_total_shapley)});
  totals.close();

  ctx.say(std::to_string(study.requests.size()) + " requests settled, " +
          std::to_string(study.failures) + " failures");
  for (std::size_t u = 0; u < ctx.data.units.size(); ++u)
    ctx.say("  " + ctx.data.units[u].id + ": activation " +
            fmt(100.0 * study.activation_frequency[u]) + "%, totals " +
            fmt(study.total_payment_costmin[u]) + " $/h (costmin) / " +
            fmt(study.total_payment_shapley[u]) + " $/h (shapley)");
  ctx.say("revenue " + fmt(study.total_revenue) + " $/h, cost " +
          fmt(study.total_cost) + " $/h, operator keeps " +
          fmt(study.dso_total_costmin) + " (costmin) / " +
          fmt(study.dso_total_shapley) + " (shapley)");
  ctx.finish();
  return (count > 0 && study.failures == count) ? 1 : 0;
}

// ---- sweep ------------------------------------------------------------------

int run_sweep(RunContext& ctx, const std::string& mode, double step,
              const std::string& swap_text, int dirs) {
  if (mode != "costmin_share" && mode != "shapley_capacity" &&
      mode != "shapley_surplus")
    throw SchemaError(
        "--mode must be costmin_share, shapley_capacity or shapley_surplus");
  if (step <= 0.0) throw SchemaError("--step must be positive");
  const SwapMode policy = parse_swap(swap_text);
  ctx.manifest.params["mode"] = mode;
  ctx.manifest.params["step"] = fmt(step);
  ctx.manifest.params["swap"] = swap_text;
  ctx.manifest.params["dirs"] = std::to_string(dirs);

  const auto& units = ctx.data.units;
  const CoalitionMask full = full_coalition(units.size());
  const FlexArea area =
      trace_area(ctx.data.model, ctx.topo, units, full, dirs, policy);
  for (const auto& w : area.warnings) ctx.warn(w);
  const std::vector<OperatingPoint> grid = grid_requests(area, step);

  const std::size_t n_units = units.size();
  std::vector<std::vector<double>> shares(grid.size(),
                                          std::vector<double>(n_units, 0.0));
  std::vector<std::string> failures(grid.size());
  auto cache = make_cache(ctx);

  parallel_for(grid.size(), ctx.jobs, [&](std::size_t g) {
    const OperatingPoint point = grid[g];
    try {
      if (mode == "costmin_share") {
        const DispatchSolution sol = solve_dispatch(ctx.data.model, ctx.topo,
                                                    units, full, point, policy);
        if (sol.status != SolveStatus::optimal) {
          failures[g] = to_string(sol.status);
          return;
        }
        double total = 0.0;
        std::vector<double> delivered(n_units, 0.0);
        for (std::size_t u = 0; u < n_units; ++u) {
          delivered[u] = std::hypot(sol.regulations[u].net_p(),
                                    sol.regulations[u].net_q());
          total += delivered[u];
        }
        if (total > 1e-9)
          for (std::size_t u = 0; u < n_units; ++u)
            shares[g][u] = 100.0 * delivered[u] / total;
      } else {
        GameConfig config;
        config.metric = mode == "shapley_capacity" ? GameMetric::capacity
                                                   : GameMetric::surplus;
        config.policy = policy;
        const CooperativeGame game =
            build_game(ctx.data.model, ctx.topo, units, point, config,
                       ctx.data.tariff, cache.get());
        const ShapleyAllocation alloc = shapley_exact(game);
        const double grand = game.values.back();
        if (std::abs(grand) > 1e-12)
          for (std::size_t u = 0; u < n_units; ++u)
            shares[g][u] = 100.0 * alloc.values[u] / grand;
      }
    } catch (const std::exception& e) {
      failures[g] = e.what();
    }
  });

  CsvWriter csv(ctx.file("sweep.csv"));
  csv.row({"p_mw", "q_mvar", "unit", "share_pct"});
  std::size_t n_failed = 0;
  CsvWriter failed(ctx.file("failures.csv"));
  failed.row({"p_mw", "q_mvar", "reason"});
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (!failures[g].empty()) {
      ++n_failed;
      failed.row({fmt(grid[g].p_mw), fmt(grid[g].q_mvar), failures[g]});
      continue;
    }
    for (std::size_t u = 0; u < n_units; ++u)
      csv.row({fmt(grid[g].p_mw), fmt(grid[g].q_mvar), units[u].id,
               fmt(shares[g][u])});
  }
  csv.close();
  failed.close();
  if (n_failed > 0)
    ctx.warn(std::to_string(n_failed) + " of " + std::to_string(grid.size()) +
             " grid points failed; see failures.csv");
  ctx.say(mode + " over " + std::to_string(grid.size()) + " grid points (step " +
          fmt(step) + " MVA, policy " + swap_text + ")");
  ctx.finish();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Flexibility areas, optimal dispatch, cooperative-game allocations and "
      "payment studies for DER fleets in radial distribution networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string case_ref = "ieee33";
  int jobs = 1;
  std::string out_dir;
  bool quiet = false;
  app.add_option("--case", case_ref,
                 "Case file path or builtin name (ieee33, motivating3)")
      ->capture_default_str();
  app.add_option("--jobs", jobs, "Worker threads for independent solves")
      ->capture_default_str();
  app.add_option("--out", out_dir, "Output directory (default: out_<subcommand>)");
  app.add_flag("--quiet", quiet, "Suppress console summaries");

  auto* cmd_pf = app.add_subcommand(
      "powerflow", "Solve the network at the initial setpoints");
  cmd_pf->fallthrough();

  std::string coalition = "all";
  int dirs = 72;
  std::string swap = "allow";
  bool enumerate_all = false;
  auto* cmd_area =
      app.add_subcommand("area", "Trace the reachable interface-exchange region");
  cmd_area->fallthrough();
  cmd_area->add_option("--coalition", coalition, "Comma-separated unit ids or 'all'")
      ->capture_default_str();
  cmd_area->add_option("--dirs", dirs, "Number of boundary directions (>= 8)")
      ->capture_default_str();
  cmd_area->add_option("--swap", swap, "Power-swap policy: allow | forbid")
      ->capture_default_str();
  cmd_area->add_flag("--enumerate", enumerate_all,
                     "Trace every coalition of the fleet");

  double target_p = 0.0, target_q = 0.0;
  auto* cmd_dispatch = app.add_subcommand(
      "dispatch", "Cost-minimal dispatch toward an interface change");
  cmd_dispatch->fallthrough();
  cmd_dispatch->add_option("--coalition", coalition,
                           "Comma-separated unit ids or 'all'")
      ->capture_default_str();
  cmd_dispatch
      ->add_option("--target-p", target_p, "Requested interface change, MW")
      ->capture_default_str();
  cmd_dispatch
      ->add_option("--target-q", target_q, "Requested interface change, MVAr")
      ->capture_default_str();
  cmd_dispatch->add_option("--swap", swap, "Power-swap policy: allow | forbid")
      ->capture_default_str();

  std::string metric = "capacity";
  std::string method = "exact";
  long long samples = 500;
  std::uint64_t seed = 1;
  auto* cmd_shapley = app.add_subcommand(
      "shapley", "Allocate a request across units by Shapley value");
  cmd_shapley->fallthrough();
  cmd_shapley
      ->add_option("--metric", metric, "Game metric: capacity | cost | surplus")
      ->capture_default_str();
  cmd_shapley->add_option("--target-p", target_p, "Requested interface change, MW")
      ->capture_default_str();
  cmd_shapley
      ->add_option("--target-q", target_q, "Requested interface change, MVAr")
      ->capture_default_str();
  cmd_shapley->add_option("--method", method, "exact | sampled")
      ->capture_default_str();
  cmd_shapley->add_option("--samples", samples, "Permutation samples when sampled")
      ->capture_default_str();
  cmd_shapley->add_option("--seed", seed, "RNG seed for sampling")
      ->capture_default_str();
  cmd_shapley->add_option("--swap", swap, "Power-swap policy: allow | forbid")
      ->capture_default_str();

  int count = 1000;
  double sigma = 0.6;
  auto* cmd_sim = app.add_subcommand(
      "simulate-payments",
      "Sample random requests and settle them under both payment schemes");
  cmd_sim->fallthrough();
  cmd_sim->add_option("--count", count, "Number of requests")
      ->capture_default_str();
  cmd_sim->add_option("--sigma", sigma, "Std deviation of request deltas, MVA")
      ->capture_default_str();
  cmd_sim->add_option("--seed", seed, "RNG seed")->capture_default_str();
  cmd_sim->add_option("--dirs", dirs, "Directions for the sampling area")
      ->capture_default_str();

  std::string mode = "costmin_share";
  double step = 0.03;
  auto* cmd_sweep = app.add_subcommand(
      "sweep", "Per-unit allocation shares on a grid over the reachable region");
  cmd_sweep->fallthrough();
  cmd_sweep
      ->add_option("--mode", mode,
                   "costmin_share | shapley_capacity | shapley_surplus")
      ->capture_default_str();
  cmd_sweep->add_option("--step", step, "Grid spacing, MVA")->capture_default_str();
  cmd_sweep->add_option("--swap", swap, "Power-swap policy: allow | forbid")
      ->capture_default_str();
  cmd_sweep->add_option("--dirs", dirs, "Directions for the bounding area")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const std::string sub = app.get_subcommands().front()->get_name();
    RunContext ctx = make_context(case_ref, sub, out_dir, jobs, quiet);
    if (quiet) ctx.quiet = true;
    if (sub == "powerflow") return run_powerflow(ctx);
    if (sub == "area") return run_area(ctx, coalition, dirs, swap, enumerate_all);
    if (sub == "dispatch")
      return run_dispatch(ctx, coalition, target_p, target_q, swap);
    if (sub == "shapley")
      return run_shapley(ctx, metric, target_p, target_q, method, samples, seed,
                         swap);
    if (sub == "simulate-payments")
      return run_simulate_payments(ctx, count, sigma, seed, dirs);
    if (sub == "sweep") return run_sweep(ctx, mode, step, swap, dirs);
    std::cerr << "error: unknown subcommand " << sub << "\n";
    return 2;
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const TopologyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
