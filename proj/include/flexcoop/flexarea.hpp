#pragma once

#include <string>
#include <vector>

#include "flexcoop/net_model.hpp"
#include "flexcoop/opf.hpp"

namespace flexcoop {

/// Polygonal approximation of the interface exchange region a coalition can
/// reach. Coordinates are absolute (P_ref MW, Q_ref MVAr). Under
/// SwapMode::forbid the region is the union of up to four sign-pattern
/// components; `vertices` is the per-direction envelope over the components.
struct FlexArea {
  CoalitionMask coalition = 0;
  SwapMode policy = SwapMode::allow;
  OperatingPoint initial{};
  std::vector<OperatingPoint> vertices;
  std::vector<double> vertex_angles_deg;  // sweep angle that produced each vertex
  std::vector<std::vector<OperatingPoint>> components;
  std::vector<std::string> warnings;

  /// Union area of the components (inclusion-exclusion over clipped hulls).
  double area() const;
  /// Point membership: inside any component by even-odd rule, or within
  /// tol_mva of a component edge.
  bool contains(const OperatingPoint& point, double tol_mva = 1e-6) const;
};

/// Unsigned shoelace area; accepts open or explicitly closed rings.
double polygon_area(const std::vector<OperatingPoint>& ring);

/// Trace the reachable-exchange boundary in n_directions equally spaced
/// objective directions (at least 8), warm-starting each solve from its
/// angular neighbor.
FlexArea trace_area(const NetworkModel& model, const Topology& topo,
                    const std::vector<FlexUnit>& units, CoalitionMask coalition,
                    int n_directions, SwapMode policy = SwapMode::allow,
                    const SolverConfig& config = {});

/// Areas for every coalition of the fleet (index = coalition mask).
/// Refuses fleets beyond 10 units. jobs > 1 traces masks concurrently.
std::vector<FlexArea> coalition_areas(const NetworkModel& model, const Topology& topo,
                                      const std::vector<FlexUnit>& units,
                                      int n_directions,
                                      SwapMode policy = SwapMode::allow,
                                      const SolverConfig& config = {}, int jobs = 1);

/// Lattice of exchange targets with the given spacing, centered on the
/// area's initial point and filtered to members of the area.
std::vector<OperatingPoint> grid_requests(const FlexArea& area, double spacing_mva);

}  // namespace flexcoop
