#pragma once

// Simulation engine: builds the scenario network, advances CTM + signals +
// controllers in lockstep, injects demand and buses, and accumulates metrics
// including the bounded-count stability statistic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsplab/controllers.hpp"
#include "tsplab/ctm.hpp"
#include "tsplab/phases.hpp"
#include "tsplab/qlearning.hpp"
#include "tsplab/rng.hpp"

namespace tsplab::sim {

struct ConfigError : std::runtime_error {
  std::string field;

  ConfigError(std::string field_name, const std::string& message)
      : std::runtime_error("config field '" + field_name + "': " + message),
        field(std::move(field_name)) {}
};

// Optional demand override window on one origin (non-bus class).
struct DemandPulse {
  int origin = 0;
  double start_s = 0.0;
  double end_s = 0.0;
  double rate_nonbus_vph = 0.0;
};

// Geometry and demand layout of the built-in five-intersection arterial.
struct Arterial5Params {
  int intersections = 5;
  double link_m = 400.0;
  double cell_m = 100.0;
  double free_speed_mps = 15.0;
  double wave_speed_mps = 5.0;
  double sat_flow_per_lane_vps = 0.5;
  double jam_per_lane_vpm = 0.2;
  int arterial_lanes = 3;
  int cross_lanes = 2;
  // Fraction of total demand entering each arterial direction; the rest is
  // spread evenly over the cross-street origins.
  double arterial_share = 0.2;
  double arterial_left = 0.1;
  double arterial_right = 0.1;
  double cross_left = 0.2;
  double cross_right = 0.2;
};

// Explicit network description, loadable from the scenario file.
struct NetworkSpec {
  struct LinkSpec {
    int from = ctm::kBoundaryNode;
    int to = ctm::kBoundaryNode;
    signal::Approach approach = signal::Approach::EB;
    int cells = 4;
    double cell_length_m = 100.0;
    double free_speed_mps = 15.0;
    double jam_density_vpm = 0.2;
    double sat_flow_vps = 0.5;
    double wave_speed_mps = 5.0;
    bool bus_only = false;
    std::vector<ctm::Movement> movements;
  };
  struct OriginSpec {
    int link = 0;
    double nonbus_vph = 0.0;
    double bus_vph = 0.0;
  };
  int nodes = 0;
  std::vector<LinkSpec> links;
  std::vector<OriginSpec> origins;
  std::vector<int> signal_nodes;
  std::vector<int> bus_route_links;
  signal::MovementKind bus_crossing = signal::MovementKind::Straight;
};

struct TrainSpec {
  int episodes = 0;
  double episode_s = 1200.0;
  bool freeze = true;  // stop learning and exploring after training
};

struct ScenarioConfig {
  std::string id = "scenario";
  std::string network = "arterial5";
  std::optional<NetworkSpec> custom_network;
  double demand_vph = 6000.0;
  double bus_headway_min = 30.0;
  double duration_s = 3600.0;
  double warmup_s = 600.0;
  ctrl::ControllerKind controller = ctrl::ControllerKind::FixedTime;
  std::uint64_t seed = 1;
  double dt_s = 1.0;
  double decision_interval_s = 5.0;
  ctm::FlowRule flow_rule = ctm::FlowRule::Triangular;
  bool poisson_arrivals = false;
  signal::RouteKind route_kind = signal::RouteKind::BusRouteStraight;
  signal::TimingPlan base_plan;
  TrainSpec train;
  Arterial5Params arterial;
  ctrl::ControllerOptions controller_opt;
  double metrics_window_s = 60.0;
  std::vector<DemandPulse> pulses;
  double bus_first_departure_s = 120.0;
  double bus_detect_m = 200.0;

  void validate() const {
    if (duration_s <= warmup_s)
      throw ConfigError("duration_s", "must exceed warmup_s");
    if (warmup_s < 0) throw ConfigError("warmup_s", "must be >= 0");
    if (dt_s <= 0) throw ConfigError("dt_s", "must be > 0");
    if (bus_headway_min <= 0) throw ConfigError("bus_headway_min", "must be > 0");
    if (decision_interval_s < dt_s)
      throw ConfigError("decision_interval_s", "must be >= dt_s");
    if (demand_vph < 0) throw ConfigError("demand_vph", "must be >= 0");
    if (metrics_window_s <= 0)
      throw ConfigError("metrics_window_s", "must be > 0");
    if (duration_s - warmup_s < 4 * metrics_window_s)
      throw ConfigError("duration_s",
                        "measured span must cover at least 4 metrics windows");
    if (network != "arterial5" && !custom_network.has_value())
      throw ConfigError("network", "unknown builtin '" + network + "'");
    base_plan.validate();
  }
};

struct BuiltScenario {
  ctm::Network net;
  std::map<int, signal::SignalState> signals;
  ctm::BusRoute bus_route;
  // Resolved per-origin demand (veh/h); parallel to net.origins.
  std::vector<double> origin_nonbus_vph;
  std::vector<double> origin_bus_vph;
  int bus_origin = -1;  // index into net.origins, or -1 when no bus route

  struct NodeWiring {
    int node = 0;
    std::vector<int> incoming;  // car links feeding this node
    int bus_link = -1;          // bus-lane link feeding this node
  };
  std::vector<NodeWiring> wiring;
};

namespace detail {

inline ctm::CellParams make_cell(const Arterial5Params& a, int lanes) {
  ctm::CellParams p;
  p.length_m = a.cell_m;
  p.free_flow_speed_mps = a.free_speed_mps;
  p.backward_wave_speed_mps = a.wave_speed_mps;
  p.saturation_flow_vps = a.sat_flow_per_lane_vps * lanes;
  p.jam_density_vpm = a.jam_per_lane_vpm * lanes;
  return p;
}

inline ctm::Link make_link(int from, int to, signal::Approach approach,
                           const ctm::CellParams& params, double length_m,
                           bool bus_only = false) {
  ctm::Link link;
  link.upstream_node = from;
  link.downstream_node = to;
  link.approach = approach;
  link.bus_only = bus_only;
  const int n = std::max(1, static_cast<int>(std::round(length_m / params.length_m)));
  link.cells.assign(n, ctm::Cell{params, {}});
  return link;
}

}  // namespace detail

// Five four-leg intersections in series along an east-west arterial with a
// parallel dedicated bus lane sharing only the signals. Cross streets feed
// both sides of every intersection; the bus route runs the arterial
// end-to-end eastbound.
inline BuiltScenario build_arterial5(const ScenarioConfig& cfg) {
  using signal::Approach;
  using signal::MovementKind;
  const Arterial5Params& a = cfg.arterial;
  const int n = a.intersections;
  if (n < 1) throw ConfigError("arterial.intersections", "must be >= 1");

  BuiltScenario out;
  out.net.node_count = n;
  auto& links = out.net.links;

  const auto arterial_cell = detail::make_cell(a, a.arterial_lanes);
  const auto cross_cell = detail::make_cell(a, a.cross_lanes);
  const auto bus_cell = detail::make_cell(a, 1);

  // Link layout: eb[0..n], wb[0..n], bus[0..n], then per node nb_in, nb_out,
  // sb_in, sb_out.
  std::vector<int> eb(n + 1), wb(n + 1), bus(n + 1);
  std::vector<int> nb_in(n), nb_out(n), sb_in(n), sb_out(n);

  for (int k = 0; k <= n; ++k) {
    const int from = (k == 0) ? ctm::kBoundaryNode : k - 1;
    const int to = (k == n) ? ctm::kBoundaryNode : k;
    eb[k] = static_cast<int>(links.size());
    links.push_back(detail::make_link(from, to, Approach::EB, arterial_cell, a.link_m));
  }
  for (int k = 0; k <= n; ++k) {
    const int from = (k == 0) ? ctm::kBoundaryNode : n - k;
    const int to = (k == n) ? ctm::kBoundaryNode : n - 1 - k;
    wb[k] = static_cast<int>(links.size());
    links.push_back(detail::make_link(from, to, Approach::WB, arterial_cell, a.link_m));
  }
  for (int k = 0; k <= n; ++k) {
    const int from = (k == 0) ? ctm::kBoundaryNode : k - 1;
    const int to = (k == n) ? ctm::kBoundaryNode : k;
    bus[k] = static_cast<int>(links.size());
    links.push_back(
        detail::make_link(from, to, Approach::EB, bus_cell, a.link_m, true));
  }
  for (int k = 0; k < n; ++k) {
    nb_in[k] = static_cast<int>(links.size());
    links.push_back(detail::make_link(ctm::kBoundaryNode, k, Approach::NB,
                                      cross_cell, a.link_m));
    nb_out[k] = static_cast<int>(links.size());
    links.push_back(detail::make_link(k, ctm::kBoundaryNode, Approach::NB,
                                      cross_cell, a.link_m));
    sb_in[k] = static_cast<int>(links.size());
    links.push_back(detail::make_link(ctm::kBoundaryNode, k, Approach::SB,
                                      cross_cell, a.link_m));
    sb_out[k] = static_cast<int>(links.size());
    links.push_back(detail::make_link(k, ctm::kBoundaryNode, Approach::SB,
                                      cross_cell, a.link_m));
  }

  const auto wb_leaving = [&](int node) { return wb[n - node]; };
  const auto exit_only = [](ctm::Link& l) {
    l.movements = {{MovementKind::Straight, 1.0, ctm::kExitLink}};
  };

  const double art_s = 1.0 - a.arterial_left - a.arterial_right;
  for (int k = 0; k < n; ++k) {
    links[eb[k]].movements = {
        {MovementKind::Left, a.arterial_left, nb_out[k]},
        {MovementKind::Straight, art_s, eb[k + 1]},
        {MovementKind::Right, a.arterial_right, sb_out[k]},
    };
    links[bus[k]].movements = {{cfg.route_kind == signal::RouteKind::BusRouteLeftTurn
                                    ? MovementKind::Left
                                    : MovementKind::Straight,
                                1.0, bus[k + 1]}};
  }
  exit_only(links[eb[n]]);
  exit_only(links[bus[n]]);
  for (int k = 0; k < n; ++k) {
    // wb link entering node k comes from node k+1 side: wb[n-1-k] ends at k.
    const int wbl = wb[n - 1 - k];
    links[wbl].movements = {
        {MovementKind::Left, a.arterial_left, sb_out[k]},
        {MovementKind::Straight, art_s, wb[n - k]},
        {MovementKind::Right, a.arterial_right, nb_out[k]},
    };
  }
  exit_only(links[wb[n]]);
  const double cross_s = 1.0 - a.cross_left - a.cross_right;
  for (int k = 0; k < n; ++k) {
    links[nb_in[k]].movements = {
        {MovementKind::Left, a.cross_left, wb_leaving(k)},
        {MovementKind::Straight, cross_s, nb_out[k]},
        {MovementKind::Right, a.cross_right, eb[k + 1]},
    };
    links[sb_in[k]].movements = {
        {MovementKind::Left, a.cross_left, eb[k + 1]},
        {MovementKind::Straight, cross_s, sb_out[k]},
        {MovementKind::Right, a.cross_right, wb_leaving(k)},
    };
    exit_only(links[nb_out[k]]);
    exit_only(links[sb_out[k]]);
  }

  // Origins and demand split.
  const double cross_share =
      (1.0 - 2.0 * a.arterial_share) / (2.0 * n);
  auto add_origin = [&](int link, double nonbus_vph, double bus_vph) {
    out.net.origins.push_back({link, 0.0, 0.0});
    out.origin_nonbus_vph.push_back(nonbus_vph);
    out.origin_bus_vph.push_back(bus_vph);
    return static_cast<int>(out.net.origins.size()) - 1;
  };
  add_origin(eb[0], cfg.demand_vph * a.arterial_share, 0.0);
  add_origin(wb[0], cfg.demand_vph * a.arterial_share, 0.0);
  for (int k = 0; k < n; ++k) {
    add_origin(nb_in[k], cfg.demand_vph * cross_share, 0.0);
    add_origin(sb_in[k], cfg.demand_vph * cross_share, 0.0);
  }
  out.bus_origin = add_origin(bus[0], 0.0, 0.0);  // buses arrive on schedule

  out.net.destinations = {eb[n], wb[n], bus[n]};
  for (int k = 0; k < n; ++k) {
    out.net.destinations.push_back(nb_out[k]);
    out.net.destinations.push_back(sb_out[k]);
  }

  for (int k = 0; k <= n; ++k) out.bus_route.links.push_back(bus[k]);
  out.bus_route.crossing_kind =
      cfg.route_kind == signal::RouteKind::BusRouteLeftTurn
          ? MovementKind::Left
          : MovementKind::Straight;

  for (int k = 0; k < n; ++k) {
    signal::SignalState s;
    s.model.kind = cfg.route_kind;
    s.plan = cfg.base_plan;
    out.signals.emplace(k, s);
    BuiltScenario::NodeWiring w;
    w.node = k;
    w.incoming = {eb[k], wb[n - 1 - k], nb_in[k], sb_in[k]};
    w.bus_link = bus[k];
    out.wiring.push_back(w);
  }

  out.net.validate();
  return out;
}

inline BuiltScenario build_from_spec(const NetworkSpec& spec) {
  BuiltScenario out;
  out.net.node_count = spec.nodes;
  for (const auto& ls : spec.links) {
    ctm::CellParams p;
    p.length_m = ls.cell_length_m;
    p.free_flow_speed_mps = ls.free_speed_mps;
    p.jam_density_vpm = ls.jam_density_vpm;
    p.saturation_flow_vps = ls.sat_flow_vps;
    p.backward_wave_speed_mps = ls.wave_speed_mps;
    ctm::Link link;
    link.upstream_node = ls.from;
    link.downstream_node = ls.to;
    link.approach = ls.approach;
    link.bus_only = ls.bus_only;
    link.cells.assign(std::max(1, ls.cells), ctm::Cell{p, {}});
    link.movements = ls.movements;
    out.net.links.push_back(std::move(link));
  }
  for (const auto& os : spec.origins) {
    out.net.origins.push_back({os.link, 0.0, 0.0});
    out.origin_nonbus_vph.push_back(os.nonbus_vph);
    out.origin_bus_vph.push_back(os.bus_vph);
  }
  for (std::size_t li = 0; li < out.net.links.size(); ++li)
    for (const auto& m : out.net.links[li].movements)
      if (m.to_link == ctm::kExitLink) {
        out.net.destinations.push_back(static_cast<int>(li));
        break;
      }
  out.bus_route.links = spec.bus_route_links;
  out.bus_route.crossing_kind = spec.bus_crossing;
  if (!spec.bus_route_links.empty()) {
    // Attach the schedule to an origin on the first route link if present.
    for (std::size_t oi = 0; oi < out.net.origins.size(); ++oi)
      if (out.net.origins[oi].link == spec.bus_route_links.front())
        out.bus_origin = static_cast<int>(oi);
  }
  for (int node : spec.signal_nodes) {
    signal::SignalState s;
    out.signals.emplace(node, s);
    BuiltScenario::NodeWiring w;
    w.node = node;
    for (std::size_t li = 0; li < out.net.links.size(); ++li) {
      if (out.net.links[li].downstream_node != node) continue;
      if (out.net.links[li].bus_only)
        w.bus_link = static_cast<int>(li);
      else
        w.incoming.push_back(static_cast<int>(li));
    }
    out.wiring.push_back(w);
  }
  out.net.validate();
  return out;
}

struct MetricsSample {
  double t_s = 0.0;
  double waiting_private = 0.0;  // window mean
  double private_count = 0.0;    // instantaneous, end of window
  double bus_count = 0.0;
};

struct MetricsRecord {
  double avg_waiting_private_cars = 0.0;
  double avg_travel_time_s = 0.0;
  std::optional<double> avg_bus_travel_time_s;
  double stability_statistic = 0.0;  // time-averaged private-car count
  bool stable = true;
  double trend_slope_vps = 0.0;  // waiting-count slope, veh/s
  int buses_completed = 0;
  double vehicles_exited = 0.0;
  std::vector<MetricsSample> series;
};

// Least-squares slope of (t, value) pairs.
inline double trend_slope(const std::vector<double>& t,
                          const std::vector<double>& value) {
  const std::size_t n = t.size();
  if (n < 2 || value.size() != n) return 0.0;
  double mt = 0, mv = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mt += t[i];
    mv += value[i];
  }
  mt /= n;
  mv /= n;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (t[i] - mt) * (value[i] - mv);
    den += (t[i] - mt) * (t[i] - mt);
  }
  return den > 0 ? num / den : 0.0;
}

inline constexpr double kStableSlopeVps = 0.01;

class Engine {
 public:
  explicit Engine(ScenarioConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
    cfg_.validate();
    rebuild();
    signal::PhaseModel model;
    model.kind = cfg_.route_kind;
    for (const auto& w : built_.wiring) {
      controllers_.push_back(
          ctrl::make_controller(cfg_.controller, model, cfg_.controller_opt));
      if (controllers_.back()->uses_ring()) {
        auto& sig = built_.signals.at(w.node);
        sig.auto_ring = true;
        if (cfg_.controller == ctrl::ControllerKind::MBPassiveTSP)
          sig.plan = ctrl::passive_priority_plan(sig.plan, sig.model);
      }
    }
  }

  const ScenarioConfig& config() const { return cfg_; }
  const BuiltScenario& built() const { return built_; }

  // Learning episodes on the configured demand; traffic resets between
  // episodes, controller tables persist.
  void train() {
    for (int ep = 0; ep < cfg_.train.episodes; ++ep) {
      reset_traffic();
      rng_ = Rng(cfg_.seed * 0x9e3779b97f4a7c15ULL + 0x51ed2701 + ep);
      set_learning(true);
      run_span(cfg_.train.episode_s, nullptr);
    }
    if (cfg_.train.episodes > 0 && cfg_.train.freeze) set_learning(false);
  }

  // Measured run. Deterministic in the scenario seed.
  MetricsRecord evaluate() {
    reset_traffic();
    rng_ = Rng(cfg_.seed);
    if (cfg_.train.episodes > 0 && cfg_.train.freeze) set_learning(false);
    MetricsRecord rec;
    run_span(cfg_.duration_s, &rec);
    finalize(rec);
    return rec;
  }

  void set_learning(bool on) {
    for (auto& c : controllers_) c->set_learning(on);
  }

  std::vector<std::string> snapshot_tables() const {
    std::vector<std::string> out;
    for (const auto& c : controllers_) out.push_back(c->save_tables());
    return out;
  }

  void restore_tables(const std::vector<std::string>& tables) {
    if (tables.size() != controllers_.size())
      throw std::invalid_argument("table count does not match intersections");
    for (std::size_t i = 0; i < tables.size(); ++i)
      if (!tables[i].empty()) controllers_[i]->load_tables(tables[i]);
  }

  // Conservation bookkeeping of the most recent run_span.
  double injected_veh() const { return injected_veh_; }
  double exited_veh() const { return exited_veh_; }

 private:
  void rebuild() {
    built_ = cfg_.custom_network.has_value()
                 ? build_from_spec(*cfg_.custom_network)
                 : build_arterial5(cfg_);
    for (auto& [node, sig] : built_.signals) {
      sig.plan = cfg_.base_plan;
      sig.model.kind = cfg_.route_kind;
    }
    tags_.clear();
    next_bus_id_ = 0;
    next_bus_depart_s_ = cfg_.bus_first_departure_s;
    node_delay_bus_.assign(built_.wiring.size(), 0.0);
    node_delay_nonbus_.assign(built_.wiring.size(), 0.0);
    last_step_ = ctm::StepMetrics{};
    last_step_.link_queues.resize(built_.net.links.size());
    injected_veh_ = 0.0;
    exited_veh_ = 0.0;
  }

  void reset_traffic() {
    rebuild();
    // Re-apply ring mode and passive plans after the rebuild.
    for (std::size_t i = 0; i < built_.wiring.size(); ++i) {
      if (controllers_[i]->uses_ring()) {
        auto& sig = built_.signals.at(built_.wiring[i].node);
        sig.auto_ring = true;
        if (cfg_.controller == ctrl::ControllerKind::MBPassiveTSP)
          sig.plan = ctrl::passive_priority_plan(sig.plan, sig.model);
      }
    }
  }

  double origin_rate_nonbus(int oi, double t) const {
    double rate = built_.origin_nonbus_vph[oi];
    for (const auto& p : cfg_.pulses)
      if (p.origin == oi && t >= p.start_s && t < p.end_s)
        rate += p.rate_nonbus_vph;
    return rate;
  }

  ctrl::Observation observe(std::size_t wi) {
    const auto& w = built_.wiring[wi];
    ctrl::Observation obs;
    obs.sig = &built_.signals.at(w.node);
    obs.sim_time_s = t_now_;
    obs.interval_delay_bus_veh_s = node_delay_bus_[wi];
    obs.interval_delay_nonbus_veh_s = node_delay_nonbus_[wi];

    const auto& model = obs.sig->model;
    auto queue_of = [&](int li) {
      double q = last_step_.link_queues[li].total();
      for (std::size_t oi = 0; oi < built_.net.origins.size(); ++oi)
        if (built_.net.origins[oi].link == li)
          q += built_.net.origins[oi].queue_bus_veh +
               built_.net.origins[oi].queue_nonbus_veh;
      return q;
    };

    for (int li : w.incoming) {
      const auto& link = built_.net.links[li];
      const double link_queue = queue_of(li);
      for (const auto& mv : link.movements) {
        if (mv.kind == signal::MovementKind::Right) continue;
        ctrl::MovementObs mo;
        mo.from_link = li;
        mo.approach = link.approach;
        mo.kind = mv.kind;
        mo.queue_up_veh = link_queue * mv.split_fraction;
        if (mv.to_link != ctm::kExitLink) {
          const auto& target = built_.net.links[mv.to_link];
          const double tq = queue_of(mv.to_link);
          if (target.movements.empty()) {
            mo.downstream.emplace_back(1.0, tq);
          } else {
            for (const auto& tmv : target.movements)
              mo.downstream.emplace_back(tmv.split_fraction,
                                         tq * tmv.split_fraction);
          }
        }
        obs.movements.push_back(std::move(mo));
      }
    }

    // Per-phase served queue, bus lane included on its crossing movement.
    const double bus_queue = w.bus_link >= 0 ? queue_of(w.bus_link) : 0.0;
    for (int p = 1; p <= signal::kPhaseCount; ++p) {
      double q = 0.0;
      for (const auto& mo : obs.movements) {
        const auto allowed =
            signal::allowed_movements(signal::PhaseId(p), model, mo.approach);
        if (std::find(allowed.begin(), allowed.end(), mo.kind) != allowed.end())
          q += mo.queue_up_veh;
      }
      if (w.bus_link >= 0) {
        const auto allowed = signal::allowed_movements(
            signal::PhaseId(p), model, built_.net.links[w.bus_link].approach);
        if (std::find(allowed.begin(), allowed.end(),
                      built_.bus_route.crossing_kind) != allowed.end())
          q += bus_queue;
      }
      obs.per_phase_queue[p - 1] = q;
    }

    // Nearest bus approaching this node on the route, within detection range.
    if (w.bus_link >= 0) {
      const auto& link = built_.net.links[w.bus_link];
      const double len = link.length_m();
      double best = -1.0;
      for (const auto& tag : tags_) {
        if (tag.exit_time_s.has_value() || tag.current_link != w.bus_link)
          continue;
        const double dist = len - tag.position_m;
        if (dist <= cfg_.bus_detect_m && (best < 0 || dist < best)) best = dist;
      }
      if (best >= 0) {
        obs.bus_present = true;
        obs.bus_distance_m = best;
      }
    }
    return obs;
  }

  void accumulate_node_delay(double dt) {
    for (std::size_t wi = 0; wi < built_.wiring.size(); ++wi) {
      const auto& w = built_.wiring[wi];
      auto add_cells = [&](int li, bool bus_class) {
        const auto& link = built_.net.links[li];
        double d = 0.0;
        for (const auto& c : link.cells) {
          const double rho = bus_class ? c.state.bus_density_vpm
                                       : c.state.nonbus_density_vpm;
          if (rho <= 0) continue;
          const double v = ctm::realized_speed(c.state, c.params);
          d += rho * c.params.length_m *
               (1.0 - v / c.params.free_flow_speed_mps) * dt;
        }
        return d;
      };
      double bus_d = 0.0, car_d = 0.0;
      for (int li : w.incoming) {
        bus_d += add_cells(li, true);
        car_d += add_cells(li, false);
      }
      if (w.bus_link >= 0) bus_d += add_cells(w.bus_link, true);
      // Origin queues on links feeding this node are fully stopped demand.
      for (std::size_t oi = 0; oi < built_.net.origins.size(); ++oi) {
        const auto& o = built_.net.origins[oi];
        const auto& link = built_.net.links[o.link];
        if (link.downstream_node != w.node) continue;
        bus_d += o.queue_bus_veh * dt;
        car_d += o.queue_nonbus_veh * dt;
      }
      node_delay_bus_[wi] += bus_d;
      node_delay_nonbus_[wi] += car_d;
    }
  }

  double waiting_private_now() const {
    double wsum = 0.0;
    for (const auto& lq : last_step_.link_queues) wsum += lq.nonbus_veh;
    for (const auto& o : built_.net.origins) wsum += o.queue_nonbus_veh;
    return wsum;
  }

  double private_count_now() const {
    double count = 0.0;
    for (const auto& link : built_.net.links)
      for (const auto& c : link.cells)
        count += c.state.nonbus_density_vpm * c.params.length_m;
    for (const auto& o : built_.net.origins) count += o.queue_nonbus_veh;
    return count;
  }

  double bus_count_now() const {
    double count = 0.0;
    for (const auto& link : built_.net.links)
      for (const auto& c : link.cells)
        count += c.state.bus_density_vpm * c.params.length_m;
    for (const auto& o : built_.net.origins) count += o.queue_bus_veh;
    return count;
  }

  void run_span(double duration, MetricsRecord* rec) {
    const double dt = cfg_.dt_s;
    const long steps = static_cast<long>(std::llround(duration / dt));
    const long decision_every =
        std::max<long>(1, std::llround(cfg_.decision_interval_s / dt));
    const long window_every =
        std::max<long>(1, std::llround(cfg_.metrics_window_s / dt));

    double veh_seconds = 0.0;
    double exits_measured = 0.0;
    double waiting_integral = 0.0;
    double count_integral = 0.0;
    double measured_time = 0.0;
    double window_waiting = 0.0;
    long window_samples = 0;

    injected_veh_ = 0.0;
    exited_veh_ = 0.0;

    for (long step = 0; step < steps; ++step) {
      t_now_ = step * dt;

      // Demand.
      for (std::size_t oi = 0; oi < built_.net.origins.size(); ++oi) {
        const double nb = origin_rate_nonbus(static_cast<int>(oi), t_now_);
        const double b = built_.origin_bus_vph[oi];
        if (nb <= 0 && b <= 0) continue;
        const auto moved = ctm::inject_demand(
            built_.net, static_cast<int>(oi), b, nb, dt,
            cfg_.poisson_arrivals ? &rng_ : nullptr);
        injected_veh_ += moved.total();
      }
      // Scheduled buses.
      if (built_.bus_origin >= 0 && !built_.bus_route.links.empty()) {
        while (t_now_ + 1e-9 >= next_bus_depart_s_ &&
               next_bus_depart_s_ < duration) {
          auto& origin = built_.net.origins[built_.bus_origin];
          origin.queue_bus_veh += 1.0;
          ctm::BusTag tag;
          tag.id = next_bus_id_++;
          tag.current_link = built_.bus_route.links.front();
          tag.entry_time_s = next_bus_depart_s_;
          tags_.push_back(tag);
          next_bus_depart_s_ += cfg_.bus_headway_min * 60.0;
        }
      }

      // Decisions. A signal clearing an intergreen keeps its scheduled
      // target; controllers see it as locked.
      if (step % decision_every == 0) {
        for (std::size_t wi = 0; wi < built_.wiring.size(); ++wi) {
          const auto obs = observe(wi);
          const auto action = controllers_[wi]->decide(obs, rng_);
          node_delay_bus_[wi] = 0.0;
          node_delay_nonbus_[wi] = 0.0;
          auto& sig = built_.signals.at(built_.wiring[wi].node);
          if (!controllers_[wi]->uses_ring() && !sig.in_intergreen)
            signal::apply_action(sig, action);
        }
      }

      // Signal progression.
      for (auto& [node, sig] : built_.signals) {
        if (sig.auto_ring)
          signal::tick(sig, dt);
        else
          signal::advance(sig, dt);
      }

      // Traffic.
      last_step_ = ctm::advance_network(built_.net, built_.signals, dt,
                                        cfg_.flow_rule);
      exited_veh_ += last_step_.exited_veh;
      ctm::advance_buses(built_.net, built_.signals, built_.bus_route, tags_,
                         dt, t_now_);
      accumulate_node_delay(dt);

      // Metrics.
      if (rec != nullptr && t_now_ + dt > cfg_.warmup_s) {
        const double w = waiting_private_now();
        veh_seconds += (built_.net.total_vehicles() +
                        built_.net.queued_at_origins()) *
                       dt;
        exits_measured += last_step_.exited_veh;
        waiting_integral += w * dt;
        count_integral += private_count_now() * dt;
        measured_time += dt;
        window_waiting += w;
        ++window_samples;
        if ((step + 1) % window_every == 0) {
          MetricsSample sample;
          sample.t_s = t_now_ + dt;
          sample.waiting_private = window_waiting / window_samples;
          sample.private_count = private_count_now();
          sample.bus_count = bus_count_now();
          rec->series.push_back(sample);
          window_waiting = 0.0;
          window_samples = 0;
        }
      }
    }

    if (rec != nullptr) {
      if (measured_time > 0) {
        rec->avg_waiting_private_cars = waiting_integral / measured_time;
        rec->stability_statistic = count_integral / measured_time;
      }
      rec->vehicles_exited = exits_measured;
      rec->avg_travel_time_s =
          exits_measured > 1e-9 ? veh_seconds / exits_measured : 0.0;
      double bus_tt = 0.0;
      int completed = 0;
      for (const auto& tag : tags_) {
        if (!tag.exit_time_s.has_value() || tag.entry_time_s < cfg_.warmup_s)
          continue;
        bus_tt += *tag.exit_time_s - tag.entry_time_s;
        ++completed;
      }
      rec->buses_completed = completed;
      if (completed > 0) rec->avg_bus_travel_time_s = bus_tt / completed;
    }
  }

  void finalize(MetricsRecord& rec) const {
    std::vector<double> t, w;
    const std::size_t half = rec.series.size() / 2;
    for (std::size_t i = half; i < rec.series.size(); ++i) {
      t.push_back(rec.series[i].t_s);
      w.push_back(rec.series[i].waiting_private);
    }
    rec.trend_slope_vps = trend_slope(t, w);
    rec.stable = rec.trend_slope_vps < kStableSlopeVps;
  }

  ScenarioConfig cfg_;
  BuiltScenario built_;
  std::vector<std::unique_ptr<ctrl::Controller>> controllers_;
  Rng rng_;
  std::vector<ctm::BusTag> tags_;
  double next_bus_depart_s_ = 0.0;
  int next_bus_id_ = 0;
  std::vector<double> node_delay_bus_;
  std::vector<double> node_delay_nonbus_;
  ctm::StepMetrics last_step_;
  double t_now_ = 0.0;
  double injected_veh_ = 0.0;
  double exited_veh_ = 0.0;
};

inline MetricsRecord run(const ScenarioConfig& cfg) {
  Engine engine(cfg);
  engine.train();
  return engine.evaluate();
}

enum class Stability { Stable, Unstable };

struct StabilityProbe {
  Stability verdict = Stability::Stable;
  double slope_vps = 0.0;
};

inline StabilityProbe stability_probe(const ScenarioConfig& cfg,
                                      double window_s = 60.0) {
  ScenarioConfig probe_cfg = cfg;
  probe_cfg.metrics_window_s = window_s;
  probe_cfg.validate();
  const auto rec = run(probe_cfg);
  return {rec.stable ? Stability::Stable : Stability::Unstable,
          rec.trend_slope_vps};
}

}  // namespace tsplab::sim
