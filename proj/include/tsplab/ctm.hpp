#pragma once

// Discrete-time cell transmission model of an arterial network with two
// vehicle classes (bus, non-bus), turn-movement splits, and signal-gated
// intersection flows.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsplab/phases.hpp"
#include "tsplab/rng.hpp"

namespace tsplab::ctm {

using signal::Approach;
using signal::MovementKind;

struct ConservationViolation : std::logic_error {
  explicit ConservationViolation(const std::string& what)
      : std::logic_error(what) {}
};

struct TopologyError : std::runtime_error {
  explicit TopologyError(const std::string& what) : std::runtime_error(what) {}
};

struct CellParams {
  double length_m = 100.0;
  double free_flow_speed_mps = 15.0;
  double jam_density_vpm = 0.2;
  double saturation_flow_vps = 0.5;
  double backward_wave_speed_mps = 5.0;

  void validate() const {
    if (length_m <= 0 || free_flow_speed_mps <= 0 || jam_density_vpm <= 0 ||
        saturation_flow_vps <= 0 || backward_wave_speed_mps <= 0)
      throw std::invalid_argument("cell parameters must be strictly positive");
    if (free_flow_speed_mps * jam_density_vpm < saturation_flow_vps)
      throw std::invalid_argument(
          "fundamental diagram ill-formed: v * rho_jam < saturation flow");
    if (backward_wave_speed_mps > free_flow_speed_mps)
      throw std::invalid_argument("backward wave faster than free flow");
  }
};

struct CellState {
  double bus_density_vpm = 0.0;
  double nonbus_density_vpm = 0.0;
  double last_outflow_bus_vps = 0.0;
  double last_outflow_nonbus_vps = 0.0;
};

inline double total_density(const CellState& s) {
  return s.bus_density_vpm + s.nonbus_density_vpm;
}

struct ClassFlow {
  double bus = 0.0;
  double nonbus = 0.0;

  [[nodiscard]] double total() const { return bus + nonbus; }
};

enum class FlowRule {
  Triangular,    // S = min(rho*v, q_max), R = min(q_max, w*(rho_jam - rho))
  PaperLiteral,  // q = min(rho, v*dx) / dt per class
};

// Demand a cell offers downstream this step, split across classes in
// proportion to their densities.
inline ClassFlow sending_flow(const CellState& s, const CellParams& p,
                              double dt, FlowRule rule = FlowRule::Triangular) {
  if (dt <= 0) throw std::invalid_argument("dt must be positive");
  const double rho = total_density(s);
  if (rho <= 0) return {};
  double total = 0.0;
  if (rule == FlowRule::Triangular) {
    total = std::min(rho * p.free_flow_speed_mps, p.saturation_flow_vps);
  } else {
    total = std::min(rho, p.free_flow_speed_mps * p.length_m) / dt;
  }
  ClassFlow out;
  out.bus = total * (s.bus_density_vpm / rho);
  out.nonbus = total * (s.nonbus_density_vpm / rho);
  return out;
}

// Space a cell can accept this step.
inline double receiving_flow(const CellState& s, const CellParams& p,
                             double dt) {
  if (dt <= 0) throw std::invalid_argument("dt must be positive");
  const double gap = p.jam_density_vpm - total_density(s);
  if (gap <= 0) return 0.0;
  return std::min(p.saturation_flow_vps, p.backward_wave_speed_mps * gap);
}

// Density update: rho' = rho + (dt/dx) (q_in - q_out) per class. Outflow may
// not exceed the vehicles present; that would be a flow-computation bug.
inline CellState step_density(const CellState& s, const ClassFlow& inflow,
                              const ClassFlow& outflow, double dt, double dx) {
  if (dt <= 0 || dx <= 0) throw std::invalid_argument("dt and dx positive");
  if (inflow.bus < 0 || inflow.nonbus < 0 || outflow.bus < 0 ||
      outflow.nonbus < 0)
    throw std::invalid_argument("flows must be non-negative");
  const double tol = 1e-9;
  if (outflow.bus * dt > s.bus_density_vpm * dx + tol ||
      outflow.nonbus * dt > s.nonbus_density_vpm * dx + tol)
    throw ConservationViolation(
        "outflow exceeds vehicles present (bus " +
        std::to_string(outflow.bus * dt) + "/" +
        std::to_string(s.bus_density_vpm * dx) + ", nonbus " +
        std::to_string(outflow.nonbus * dt) + "/" +
        std::to_string(s.nonbus_density_vpm * dx) + ")");
  CellState out = s;
  out.bus_density_vpm = s.bus_density_vpm + (dt / dx) * (inflow.bus - outflow.bus);
  out.nonbus_density_vpm =
      s.nonbus_density_vpm + (dt / dx) * (inflow.nonbus - outflow.nonbus);
  out.bus_density_vpm = std::max(out.bus_density_vpm, 0.0);
  out.nonbus_density_vpm = std::max(out.nonbus_density_vpm, 0.0);
  out.last_outflow_bus_vps = outflow.bus;
  out.last_outflow_nonbus_vps = outflow.nonbus;
  return out;
}

// Speed realized in the cell last step, from flow = density * speed.
inline double realized_speed(const CellState& s, const CellParams& p) {
  const double rho = total_density(s);
  if (rho <= 1e-12) return p.free_flow_speed_mps;
  const double v = (s.last_outflow_bus_vps + s.last_outflow_nonbus_vps) / rho;
  return std::clamp(v, 0.0, p.free_flow_speed_mps);
}

inline constexpr int kExitLink = -1;
inline constexpr int kBoundaryNode = -1;

struct Movement {
  MovementKind kind = MovementKind::Straight;
  double split_fraction = 1.0;
  int to_link = kExitLink;
};

struct Cell {
  CellParams params;
  CellState state;
};

struct Link {
  int upstream_node = kBoundaryNode;
  int downstream_node = kBoundaryNode;
  Approach approach = Approach::EB;
  bool bus_only = false;
  std::vector<Cell> cells;
  std::vector<Movement> movements;

  [[nodiscard]] double length_m() const {
    double len = 0;
    for (const auto& c : cells) len += c.params.length_m;
    return len;
  }

  [[nodiscard]] double vehicles() const {
    double n = 0;
    for (const auto& c : cells) n += total_density(c.state) * c.params.length_m;
    return n;
  }

  void validate() const {
    if (cells.empty()) throw std::invalid_argument("link needs >= 1 cell");
    for (const auto& c : cells) c.params.validate();
    if (!movements.empty()) {
      double split = 0;
      for (const auto& m : movements) {
        if (m.split_fraction < 0 || m.split_fraction > 1)
          throw std::invalid_argument("split fraction outside [0,1]");
        split += m.split_fraction;
      }
      if (std::abs(split - 1.0) > 1e-9)
        throw std::invalid_argument("movement splits must sum to 1");
    }
  }
};

// Virtual entry point; demand that does not fit the first cell waits here
// and is counted by the waiting metrics.
struct Origin {
  int link = 0;
  double queue_bus_veh = 0.0;
  double queue_nonbus_veh = 0.0;
};

struct Network {
  int node_count = 0;
  std::vector<Link> links;
  std::vector<Origin> origins;
  std::vector<int> destinations;

  void validate() const {
    for (const auto& l : links) {
      l.validate();
      if (l.upstream_node >= node_count || l.downstream_node >= node_count)
        throw std::invalid_argument("link endpoint references missing node");
      for (const auto& m : l.movements)
        if (m.to_link != kExitLink &&
            (m.to_link < 0 || m.to_link >= static_cast<int>(links.size())))
          throw TopologyError("movement references missing link " +
                              std::to_string(m.to_link));
    }
    for (const auto& o : origins)
      if (o.link < 0 || o.link >= static_cast<int>(links.size()))
        throw std::invalid_argument("origin references missing link");
    for (int d : destinations)
      if (d < 0 || d >= static_cast<int>(links.size()))
        throw std::invalid_argument("destination references missing link");
  }

  // Vehicles inside cells; origin queues are tracked separately.
  [[nodiscard]] double total_vehicles() const {
    double n = 0;
    for (const auto& l : links) n += l.vehicles();
    return n;
  }

  [[nodiscard]] double queued_at_origins() const {
    double n = 0;
    for (const auto& o : origins) n += o.queue_bus_veh + o.queue_nonbus_veh;
    return n;
  }
};

struct LinkQueue {
  double bus_veh = 0.0;
  double nonbus_veh = 0.0;

  [[nodiscard]] double total() const { return bus_veh + nonbus_veh; }
};

struct StepMetrics {
  double exited_veh = 0.0;              // vehicles that left via exit movements
  ClassFlow exited_by_class;            // same, per class (veh)
  std::vector<LinkQueue> link_queues;   // vehicles in cells below 0.1 v
  double total_inflow_vps = 0.0;        // across internal + node boundaries
  double total_outflow_vps = 0.0;
};

namespace detail {

struct FlowAccum {
  ClassFlow in;
  ClassFlow out;
};

inline ClassFlow scaled(const ClassFlow& f, double amount_total) {
  const double t = f.total();
  if (t <= 0) return {};
  return {amount_total * f.bus / t, amount_total * f.nonbus / t};
}

}  // namespace detail

// One synchronous step: internal cell-to-cell flows, then signal-gated
// movement flows across nodes, then the density update. Flows across a node
// respect min(sending, receiving, permission); receiving capacity of a shared
// downstream cell is consumed in link-index order.
inline StepMetrics advance_network(
    Network& net, const std::map<int, signal::SignalState>& signals, double dt,
    FlowRule rule = FlowRule::Triangular) {
  if (dt <= 0) throw std::invalid_argument("dt must be positive");

  const int n_links = static_cast<int>(net.links.size());
  std::vector<std::vector<detail::FlowAccum>> acc(n_links);
  std::vector<double> entry_capacity(n_links);  // remaining receiving, cell 0
  for (int li = 0; li < n_links; ++li) {
    acc[li].resize(net.links[li].cells.size());
    const auto& first = net.links[li].cells.front();
    entry_capacity[li] = receiving_flow(first.state, first.params, dt);
  }

  StepMetrics metrics;
  metrics.link_queues.resize(n_links);

  // Internal boundaries.
  for (int li = 0; li < n_links; ++li) {
    auto& link = net.links[li];
    for (std::size_t ci = 0; ci + 1 < link.cells.size(); ++ci) {
      const auto s = sending_flow(link.cells[ci].state, link.cells[ci].params,
                                  dt, rule);
      const double r = receiving_flow(link.cells[ci + 1].state,
                                      link.cells[ci + 1].params, dt);
      const double q = std::min(s.total(), r);
      const ClassFlow f = detail::scaled(s, q);
      acc[li][ci].out.bus += f.bus;
      acc[li][ci].out.nonbus += f.nonbus;
      acc[li][ci + 1].in.bus += f.bus;
      acc[li][ci + 1].in.nonbus += f.nonbus;
      metrics.total_inflow_vps += q;
    }
  }

  // Node boundaries, in deterministic link/movement order.
  for (int li = 0; li < n_links; ++li) {
    auto& link = net.links[li];
    if (link.movements.empty()) continue;
    const std::size_t last = link.cells.size() - 1;
    const auto s =
        sending_flow(link.cells[last].state, link.cells[last].params, dt, rule);
    if (s.total() <= 0) continue;

    const signal::SignalState* sig = nullptr;
    if (link.downstream_node >= 0) {
      auto it = signals.find(link.downstream_node);
      if (it != signals.end()) sig = &it->second;
    }

    for (const auto& mv : link.movements) {
      double factor = 1.0;
      if (sig != nullptr)
        factor = signal::movement_permission(*sig, link.approach, mv.kind);
      if (factor <= 0 || mv.split_fraction <= 0) continue;

      const double demand = s.total() * mv.split_fraction * factor;
      double q = demand;
      if (mv.to_link != kExitLink) {
        if (mv.to_link < 0 || mv.to_link >= n_links)
          throw TopologyError("movement references missing link " +
                              std::to_string(mv.to_link));
        q = std::min(demand, entry_capacity[mv.to_link]);
        entry_capacity[mv.to_link] -= q;
      }
      if (q <= 0) continue;
      const ClassFlow f = detail::scaled(s, q);
      acc[li][last].out.bus += f.bus;
      acc[li][last].out.nonbus += f.nonbus;
      if (mv.to_link == kExitLink) {
        metrics.exited_veh += q * dt;
        metrics.exited_by_class.bus += f.bus * dt;
        metrics.exited_by_class.nonbus += f.nonbus * dt;
      } else {
        acc[mv.to_link][0].in.bus += f.bus;
        acc[mv.to_link][0].in.nonbus += f.nonbus;
      }
      metrics.total_outflow_vps += q;
    }
  }

  // Apply updates and collect queue estimates.
  for (int li = 0; li < n_links; ++li) {
    auto& link = net.links[li];
    for (std::size_t ci = 0; ci < link.cells.size(); ++ci) {
      auto& cell = link.cells[ci];
      cell.state = step_density(cell.state, acc[li][ci].in, acc[li][ci].out,
                                dt, cell.params.length_m);
      const double v = realized_speed(cell.state, cell.params);
      if (v < 0.1 * cell.params.free_flow_speed_mps) {
        metrics.link_queues[li].bus_veh +=
            cell.state.bus_density_vpm * cell.params.length_m;
        metrics.link_queues[li].nonbus_veh +=
            cell.state.nonbus_density_vpm * cell.params.length_m;
      }
    }
  }
  return metrics;
}

// Adds demand at an origin. Arrivals join the virtual queue; whatever fits
// the entry cell's receiving capacity enters the network this step. Returns
// the vehicles that entered cells.
inline ClassFlow inject_demand(Network& net, int origin_index,
                               double rate_bus_vph, double rate_nonbus_vph,
                               double dt, Rng* rng = nullptr) {
  if (rate_bus_vph < 0 || rate_nonbus_vph < 0)
    throw std::invalid_argument("demand rates must be >= 0");
  auto& origin = net.origins.at(origin_index);
  auto& link = net.links.at(origin.link);
  auto& cell = link.cells.front();

  if (rng != nullptr) {
    origin.queue_bus_veh += rng->poisson(rate_bus_vph / 3600.0 * dt);
    origin.queue_nonbus_veh += rng->poisson(rate_nonbus_vph / 3600.0 * dt);
  } else {
    origin.queue_bus_veh += rate_bus_vph / 3600.0 * dt;
    origin.queue_nonbus_veh += rate_nonbus_vph / 3600.0 * dt;
  }

  const double queued = origin.queue_bus_veh + origin.queue_nonbus_veh;
  if (queued <= 0) return {};
  const double cap_veh = receiving_flow(cell.state, cell.params, dt) * dt;
  const double take = std::min(queued, cap_veh);
  if (take <= 0) return {};
  ClassFlow moved;
  moved.bus = take * origin.queue_bus_veh / queued;
  moved.nonbus = take * origin.queue_nonbus_veh / queued;
  origin.queue_bus_veh -= moved.bus;
  origin.queue_nonbus_veh -= moved.nonbus;
  cell.state.bus_density_vpm += moved.bus / cell.params.length_m;
  cell.state.nonbus_density_vpm += moved.nonbus / cell.params.length_m;
  return moved;
}

// Discrete bus probe advected at the local realized speed; used to measure
// per-bus travel times on top of the fluid bus class.
struct BusTag {
  int id = 0;
  int route_pos = 0;   // index into the route's link sequence
  int current_link = 0;
  double position_m = 0.0;
  double entry_time_s = 0.0;
  std::optional<double> exit_time_s;
};

struct BusRoute {
  std::vector<int> links;
  MovementKind crossing_kind = MovementKind::Straight;
};

namespace detail {

inline const Cell& cell_at(const Link& link, double position_m) {
  double offset = 0;
  for (const auto& c : link.cells) {
    offset += c.params.length_m;
    if (position_m < offset) return c;
  }
  return link.cells.back();
}

}  // namespace detail

// Advances tags by local speed. A tag crosses a node only when its serving
// movement shows green and the downstream entry cell has space; otherwise it
// holds at the stop line. Order within a link is preserved.
inline void advance_buses(Network& net,
                          const std::map<int, signal::SignalState>& signals,
                          const BusRoute& route, std::vector<BusTag>& tags,
                          double dt, double sim_time_s) {
  // Front-most first so a follower can never pass its leader.
  std::vector<int> order(tags.size());
  for (std::size_t i = 0; i < tags.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (tags[a].route_pos != tags[b].route_pos)
      return tags[a].route_pos > tags[b].route_pos;
    return tags[a].position_m > tags[b].position_m;
  });

  // Rear-most bus position already settled this step, per link.
  std::map<int, double> ahead;

  for (int idx : order) {
    auto& tag = tags[idx];
    if (tag.exit_time_s.has_value()) continue;
    double remaining = dt;
    while (remaining > 1e-12) {
      const Link& link = net.links.at(tag.current_link);
      const double len = link.length_m();
      const Cell& cell = detail::cell_at(link, tag.position_m);
      const double v = realized_speed(cell.state, cell.params);
      if (v <= 1e-9) break;
      double target = tag.position_m + v * remaining;
      if (target < len) {
        remaining = 0;
        tag.position_m = target;
      } else {
        remaining -= (len - tag.position_m) / v;
        tag.position_m = len;
        const bool last_leg =
            tag.route_pos + 1 >= static_cast<int>(route.links.size());
        if (last_leg) {
          tag.exit_time_s = sim_time_s + (dt - std::max(remaining, 0.0));
          break;
        }
        const int next = route.links.at(tag.route_pos + 1);
        const Link& next_link = net.links.at(next);
        bool may_cross = true;
        if (link.downstream_node >= 0) {
          auto it = signals.find(link.downstream_node);
          if (it != signals.end())
            may_cross = signal::movement_permission(it->second, link.approach,
                                                    route.crossing_kind) > 0;
        }
        const auto& entry = next_link.cells.front();
        may_cross =
            may_cross && receiving_flow(entry.state, entry.params, dt) > 1e-12;
        if (!may_cross) break;  // hold at the stop line
        ++tag.route_pos;
        tag.current_link = next;
        tag.position_m = 0.0;
      }
      auto it = ahead.find(tag.current_link);
      if (it != ahead.end() && tag.position_m > it->second)
        tag.position_m = it->second;  // never pass the leader
    }
    ahead[tag.current_link] = tag.position_m;
  }
}

}  // namespace tsplab::ctm
