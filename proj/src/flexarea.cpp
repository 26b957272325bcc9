#include "flexcoop/flexarea.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "flexcoop/parallel.hpp"
#include "flexcoop/powerflow.hpp"

namespace flexcoop {

namespace {

constexpr double kDedupTol = 1e-6;  // MVA distance for merging traced vertices
constexpr double kPi = 3.14159265358979323846;

std::vector<OperatingPoint> open_ring(const std::vector<OperatingPoint>& ring) {
  std::vector<OperatingPoint> out = ring;
  while (out.size() > 1 &&
         std::hypot(out.front().p_mw - out.back().p_mw,
                    out.front().q_mvar - out.back().q_mvar) <= kDedupTol)
    out.pop_back();
  return out;
}

double signed_area(const std::vector<OperatingPoint>& open) {
  double twice = 0.0;
  const std::size_t n = open.size();
  if (n < 3) return 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = open[i];
    const auto& b = open[(i + 1) % n];
    twice += a.p_mw * b.q_mvar - b.p_mw * a.q_mvar;
  }
  return 0.5 * twice;
}

bool point_in_ring(const std::vector<OperatingPoint>& open, const OperatingPoint& pt) {
  const std::size_t n = open.size();
  if (n < 3) return false;
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& a = open[i];
    const auto& b = open[j];
    const bool crosses = (a.q_mvar > pt.q_mvar) != (b.q_mvar > pt.q_mvar);
    if (crosses) {
      const double x = (b.p_mw - a.p_mw) * (pt.q_mvar - a.q_mvar) /
                           (b.q_mvar - a.q_mvar) +
                       a.p_mw;
      if (pt.p_mw < x) inside = !inside;
    }
  }
  return inside;
}

double segment_distance(const OperatingPoint& a, const OperatingPoint& b,
                        const OperatingPoint& pt) {
  const double dx = b.p_mw - a.p_mw;
  const double dy = b.q_mvar - a.q_mvar;
  const double len_sq = dx * dx + dy * dy;
  double t = 0.0;
  if (len_sq > 0.0)
    t = std::clamp(((pt.p_mw - a.p_mw) * dx + (pt.q_mvar - a.q_mvar) * dy) / len_sq,
                   0.0, 1.0);
  return std::hypot(pt.p_mw - (a.p_mw + t * dx), pt.q_mvar - (a.q_mvar + t * dy));
}

double ring_edge_distance(const std::vector<OperatingPoint>& open,
                          const OperatingPoint& pt) {
  const std::size_t n = open.size();
  if (n == 0) return std::numeric_limits<double>::infinity();
  if (n == 1) return std::hypot(pt.p_mw - open[0].p_mw, pt.q_mvar - open[0].q_mvar);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i)
    best = std::min(best, segment_distance(open[i], open[(i + 1) % n], pt));
  return best;
}

std::vector<OperatingPoint> ensure_ccw(std::vector<OperatingPoint> open) {
  if (signed_area(open) < 0.0) std::reverse(open.begin(), open.end());
  return open;
}

/// Clip `subject` against one CCW convex ring (Sutherland-Hodgman).
std::vector<OperatingPoint> clip_convex(const std::vector<OperatingPoint>& subject,
                                        const std::vector<OperatingPoint>& clip) {
  std::vector<OperatingPoint> out = subject;
  const std::size_t nc = clip.size();
  for (std::size_t e = 0; e < nc && !out.empty(); ++e) {
    const OperatingPoint& ca = clip[e];
    const OperatingPoint& cb = clip[(e + 1) % nc];
    auto side = [&](const OperatingPoint& p) {
      return (cb.p_mw - ca.p_mw) * (p.q_mvar - ca.q_mvar) -
             (cb.q_mvar - ca.q_mvar) * (p.p_mw - ca.p_mw);
    };
    std::vector<OperatingPoint> in = std::move(out);
    out.clear();
    const std::size_t ni = in.size();
    for (std::size_t i = 0; i < ni; ++i) {
      const OperatingPoint& a = in[i];
      const OperatingPoint& b = in[(i + 1) % ni];
      const double sa = side(a);
      const double sb = side(b);
      if (sa >= 0.0) out.push_back(a);
      if ((sa >= 0.0) != (sb >= 0.0)) {
        const double t = sa / (sa - sb);
        out.push_back({a.p_mw + t * (b.p_mw - a.p_mw),
                       a.q_mvar + t * (b.q_mvar - a.q_mvar)});
      }
    }
  }
  return out;
}

void dedup_and_close_angled(const std::vector<OperatingPoint>& pts,
                            const std::vector<double>& angles_deg,
                            std::vector<std::string>& warnings,
                            const std::string& label,
                            std::vector<OperatingPoint>& out_pts,
                            std::vector<double>& out_angles) {
  out_pts.clear();
  out_angles.clear();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!out_pts.empty() &&
        std::hypot(pts[i].p_mw - out_pts.back().p_mw,
                   pts[i].q_mvar - out_pts.back().q_mvar) <= kDedupTol)
      continue;
    out_pts.push_back(pts[i]);
    out_angles.push_back(angles_deg[i]);
  }
  while (out_pts.size() > 1 &&
         std::hypot(out_pts.front().p_mw - out_pts.back().p_mw,
                    out_pts.front().q_mvar - out_pts.back().q_mvar) <= kDedupTol) {
    out_pts.pop_back();
    out_angles.pop_back();
  }
  if (out_pts.size() < 3)
    warnings.push_back(label +
                       ": fewer than 3 distinct boundary points; region is degenerate");
  if (out_pts.size() >= 2) {
    out_pts.push_back(out_pts.front());
    out_angles.push_back(out_angles.front());
  }
}

std::vector<OperatingPoint> dedup_and_close(std::vector<OperatingPoint> pts,
                                            std::vector<std::string>& warnings,
                                            const std::string& label) {
  std::vector<OperatingPoint> ring;
  for (const auto& p : pts) {
    if (!ring.empty() &&
        std::hypot(p.p_mw - ring.back().p_mw, p.q_mvar - ring.back().q_mvar) <= kDedupTol)
      continue;
    ring.push_back(p);
  }
  while (ring.size() > 1 &&
         std::hypot(ring.front().p_mw - ring.back().p_mw,
                    ring.front().q_mvar - ring.back().q_mvar) <= kDedupTol)
    ring.pop_back();
  if (ring.size() < 3)
    warnings.push_back(label + ": fewer than 3 distinct boundary points; region is degenerate");
  if (ring.size() >= 2) ring.push_back(ring.front());
  return ring;
}

struct RawTrace {
  std::vector<std::optional<OperatingPoint>> points;      // per direction
  std::vector<std::string> warnings;
};

RawTrace raw_trace(const NetworkModel& model, const Topology& topo,
                   const std::vector<FlexUnit>& units, CoalitionMask coalition,
                   int n_directions, const SolverConfig& config,
                   const std::string& label) {
  RawTrace out;
  out.points.resize(n_directions);
  WarmStart warm;
  bool have_warm = false;
  for (int k = 0; k < n_directions; ++k) {
    const double theta = 2.0 * kPi * k / n_directions;
    DispatchSolution sol =
        solve_direction(model, topo, units, coalition,
                        DirectionWeights::from_angle(theta), SwapMode::allow,
                        config, have_warm ? &warm : nullptr);
    if (sol.status != SolveStatus::optimal) {
      std::ostringstream msg;
      msg << label << ": direction " << k << " (theta=" << theta
          << ") returned " << to_string(sol.status);
      out.warnings.push_back(msg.str());
      have_warm = false;
      continue;
    }
    warm.setpoints = sol.setpoints;
    have_warm = true;
    out.points[k] = sol.achieved;
  }
  return out;
}

std::vector<FlexUnit> pattern_units(const std::vector<FlexUnit>& units,
                                    CoalitionMask coalition, int pattern) {
  std::vector<FlexUnit> out = units;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(coalition & (CoalitionMask{1} << i))) continue;
    FlexUnit& u = out[i];
    if (pattern & 1)
      u.p_min_mw = u.p0_mw;
    else
      u.p_max_mw = u.p0_mw;
    if (pattern & 2)
      u.q_min_mvar = u.q0_mvar;
    else
      u.q_max_mvar = u.q0_mvar;
  }
  return out;
}

}  // namespace

double polygon_area(const std::vector<OperatingPoint>& ring) {
  return std::abs(signed_area(open_ring(ring)));
}

double FlexArea::area() const {
  std::vector<std::vector<OperatingPoint>> polys;
  for (const auto& comp : components) {
    std::vector<OperatingPoint> open = ensure_ccw(open_ring(comp));
    if (open.size() >= 3) polys.push_back(std::move(open));
  }
  if (polys.empty()) return 0.0;
  // Inclusion-exclusion over the components; intersections are built by
  // successive convex clips, which is exact for the support-traced hulls.
  const std::size_t m = polys.size();
  double total = 0.0;
  for (std::size_t subset = 1; subset < (std::size_t{1} << m); ++subset) {
    std::vector<OperatingPoint> inter;
    bool first = true;
    for (std::size_t i = 0; i < m && (first || !inter.empty()); ++i) {
      if (!(subset & (std::size_t{1} << i))) continue;
      if (first) {
        inter = polys[i];
        first = false;
      } else {
        inter = clip_convex(inter, polys[i]);
      }
    }
    const double a = std::abs(signed_area(inter));
    total += (__builtin_popcountll(subset) % 2 == 1) ? a : -a;
  }
  return std::max(total, 0.0);
}

bool FlexArea::contains(const OperatingPoint& point, double tol_mva) const {
  for (const auto& comp : components) {
    const std::vector<OperatingPoint> open = open_ring(comp);
    if (ring_edge_distance(open, point) <= tol_mva) return true;
    if (point_in_ring(open, point)) return true;
  }
  return false;
}

FlexArea trace_area(const NetworkModel& model, const Topology& topo,
                    const std::vector<FlexUnit>& units, CoalitionMask coalition,
                    int n_directions, SwapMode policy, const SolverConfig& config) {
  if (n_directions < 8)
    throw std::invalid_argument("boundary tracing needs at least 8 directions");
  FlexArea area;
  area.coalition = coalition;
  area.policy = policy;

  std::vector<UnitSetpoint> sp0(units.size());
  for (std::size_t i = 0; i < units.size(); ++i)
    sp0[i] = {units[i].p0_mw, units[i].q0_mvar};
  const PowerFlowSolution f0 = solve_powerflow(model, topo, units, sp0);
  if (!f0.converged)
    throw std::runtime_error("power flow did not converge at the initial setpoints");
  area.initial = {f0.p_ref_mw, f0.q_ref_mvar};

  if (policy == SwapMode::allow) {
    RawTrace raw = raw_trace(model, topo, units, coalition, n_directions, config,
                             "boundary");
    area.warnings = raw.warnings;
    std::vector<OperatingPoint> pts;
    std::vector<double> angles;
    for (int k = 0; k < n_directions; ++k)
      if (raw.points[k]) {
        pts.push_back(*raw.points[k]);
        angles.push_back(360.0 * k / n_directions);
      }
    dedup_and_close_angled(pts, angles, area.warnings, "boundary", area.vertices,
                           area.vertex_angles_deg);
    area.components.push_back(area.vertices);
    return area;
  }

  std::vector<RawTrace> raws(4);
  for (int pat = 0; pat < 4; ++pat) {
    std::ostringstream label;
    label << "sign pattern " << pat;
    raws[pat] = raw_trace(model, topo, pattern_units(units, coalition, pat),
                          coalition, n_directions, config, label.str());
    for (auto& w : raws[pat].warnings) area.warnings.push_back(std::move(w));
    std::ostringstream rl;
    rl << "sign pattern " << pat;
    std::vector<OperatingPoint> pts;
    for (const auto& p : raws[pat].points)
      if (p) pts.push_back(*p);
    area.components.push_back(dedup_and_close(std::move(pts), area.warnings, rl.str()));
  }

  // Envelope: per direction, keep the component point with the best objective.
  std::vector<OperatingPoint> best_pts;
  std::vector<double> best_angles;
  for (int k = 0; k < n_directions; ++k) {
    const double theta = 2.0 * kPi * k / n_directions;
    const double wp = std::cos(theta);
    const double wq = std::sin(theta);
    double best = std::numeric_limits<double>::infinity();
    std::optional<OperatingPoint> best_pt;
    for (int pat = 0; pat < 4; ++pat) {
      if (!raws[pat].points[k]) continue;
      const OperatingPoint& p = *raws[pat].points[k];
      const double obj = wp * p.p_mw + wq * p.q_mvar;
      if (obj < best) {
        best = obj;
        best_pt = p;
      }
    }
    if (best_pt) {
      best_pts.push_back(*best_pt);
      best_angles.push_back(360.0 * k / n_directions);
    }
  }
  dedup_and_close_angled(best_pts, best_angles, area.warnings, "envelope",
                         area.vertices, area.vertex_angles_deg);
  return area;
}

std::vector<FlexArea> coalition_areas(const NetworkModel& model, const Topology& topo,
                                      const std::vector<FlexUnit>& units,
                                      int n_directions, SwapMode policy,
                                      const SolverConfig& config, int jobs) {
  if (units.size() > 10)
    throw std::invalid_argument(
        "coalition enumeration is limited to 10 units (1024 areas)");
  const std::size_t n_masks = std::size_t{1} << units.size();
  std::vector<FlexArea> areas(n_masks);
  parallel_for(n_masks, jobs, [&](std::size_t mask) {
    areas[mask] = trace_area(model, topo, units, static_cast<CoalitionMask>(mask),
                             n_directions, policy, config);
  });
  return areas;
}

std::vector<OperatingPoint> grid_requests(const FlexArea& area, double spacing_mva) {
  if (!(spacing_mva > 0))
    throw std::invalid_argument("grid spacing must be positive");
  double p_lo = area.initial.p_mw, p_hi = area.initial.p_mw;
  double q_lo = area.initial.q_mvar, q_hi = area.initial.q_mvar;
  for (const auto& comp : area.components)
    for (const auto& v : comp) {
      p_lo = std::min(p_lo, v.p_mw);
      p_hi = std::max(p_hi, v.p_mw);
      q_lo = std::min(q_lo, v.q_mvar);
      q_hi = std::max(q_hi, v.q_mvar);
    }
  const long long i_lo = static_cast<long long>(
      std::floor((p_lo - area.initial.p_mw) / spacing_mva)) - 1;
  const long long i_hi = static_cast<long long>(
      std::ceil((p_hi - area.initial.p_mw) / spacing_mva)) + 1;
  const long long j_lo = static_cast<long long>(
      std::floor((q_lo - area.initial.q_mvar) / spacing_mva)) - 1;
  const long long j_hi = static_cast<long long>(
      std::ceil((q_hi - area.initial.q_mvar) / spacing_mva)) + 1;
  std::vector<OperatingPoint> pts;
  for (long long i = i_lo; i <= i_hi; ++i)
    for (long long j = j_lo; j <= j_hi; ++j) {
      const OperatingPoint pt{area.initial.p_mw + i * spacing_mva,
                              area.initial.q_mvar + j * spacing_mva};
      if (area.contains(pt)) pts.push_back(pt);
    }
  return pts;
}

}  // namespace flexcoop
