#pragma once

// Scenario file handling: JSON (de)serialization for ScenarioConfig with
// field-level error reporting, plus the characteristic-function text format
// used by the shapley subcommand.

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsplab/engine.hpp"
#include "tsplab/shapley.hpp"

namespace tsplab::io {

using nlohmann::json;
using sim::ConfigError;

namespace detail {

template <typename T>
void read_field(const json& j, const std::string& field, T& out) {
  auto it = j.find(field);
  if (it == j.end()) return;
  try {
    it->get_to(out);
  } catch (const json::exception& e) {
    throw ConfigError(field, e.what());
  }
}

inline void reject_unknown(const json& j, const std::string& scope,
                           const std::set<std::string>& known) {
  for (const auto& [key, value] : j.items())
    if (!known.count(key))
      throw ConfigError(scope.empty() ? key : scope + "." + key,
                        "unknown field");
}

inline signal::Approach parse_approach(const std::string& s,
                                       const std::string& field) {
  if (s == "NB") return signal::Approach::NB;
  if (s == "SB") return signal::Approach::SB;
  if (s == "EB") return signal::Approach::EB;
  if (s == "WB") return signal::Approach::WB;
  throw ConfigError(field, "approach must be NB, SB, EB or WB");
}

inline signal::MovementKind parse_kind(const std::string& s,
                                       const std::string& field) {
  if (s == "left") return signal::MovementKind::Left;
  if (s == "straight") return signal::MovementKind::Straight;
  if (s == "right") return signal::MovementKind::Right;
  throw ConfigError(field, "movement must be left, straight or right");
}

}  // namespace detail

inline sim::NetworkSpec parse_network_spec(const json& j) {
  sim::NetworkSpec spec;
  detail::reject_unknown(j, "network",
                         {"nodes", "links", "origins", "signal_nodes",
                          "bus_route", "bus_crossing"});
  detail::read_field(j, "nodes", spec.nodes);
  if (j.contains("links")) {
    int index = 0;
    for (const auto& lj : j.at("links")) {
      const std::string scope = "network.links[" + std::to_string(index) + "]";
      sim::NetworkSpec::LinkSpec ls;
      detail::read_field(lj, "from", ls.from);
      detail::read_field(lj, "to", ls.to);
      if (lj.contains("approach"))
        ls.approach = detail::parse_approach(lj.at("approach").get<std::string>(),
                                             scope + ".approach");
      detail::read_field(lj, "cells", ls.cells);
      detail::read_field(lj, "cell_length_m", ls.cell_length_m);
      detail::read_field(lj, "free_speed_mps", ls.free_speed_mps);
      detail::read_field(lj, "jam_density_vpm", ls.jam_density_vpm);
      detail::read_field(lj, "sat_flow_vps", ls.sat_flow_vps);
      detail::read_field(lj, "wave_speed_mps", ls.wave_speed_mps);
      detail::read_field(lj, "bus_only", ls.bus_only);
      if (lj.contains("movements")) {
        for (const auto& mj : lj.at("movements")) {
          ctm::Movement m;
          m.kind = detail::parse_kind(mj.at("kind").get<std::string>(),
                                      scope + ".movements.kind");
          detail::read_field(mj, "split", m.split_fraction);
          detail::read_field(mj, "to", m.to_link);
          ls.movements.push_back(m);
        }
      }
      spec.links.push_back(std::move(ls));
      ++index;
    }
  }
  if (j.contains("origins")) {
    for (const auto& oj : j.at("origins")) {
      sim::NetworkSpec::OriginSpec os;
      detail::read_field(oj, "link", os.link);
      detail::read_field(oj, "nonbus_vph", os.nonbus_vph);
      detail::read_field(oj, "bus_vph", os.bus_vph);
      spec.origins.push_back(os);
    }
  }
  detail::read_field(j, "signal_nodes", spec.signal_nodes);
  detail::read_field(j, "bus_route", spec.bus_route_links);
  if (j.contains("bus_crossing"))
    spec.bus_crossing = detail::parse_kind(
        j.at("bus_crossing").get<std::string>(), "network.bus_crossing");
  return spec;
}

inline sim::ScenarioConfig parse_scenario(const json& j) {
  sim::ScenarioConfig cfg;
  detail::reject_unknown(
      j, "",
      {"id", "network", "demand_vph", "bus_headway_min", "duration_s",
       "warmup_s", "controller", "seed", "dt_s", "decision_interval_s",
       "flow_rule", "arrivals", "route_model", "plan", "train", "cbql",
       "arterial", "bus", "metrics_window_s", "pulses", "mp_bus_bonus",
       "asc_extension_window_m"});

  detail::read_field(j, "id", cfg.id);
  if (j.contains("network")) {
    const auto& nj = j.at("network");
    if (nj.is_string()) {
      cfg.network = nj.get<std::string>();
    } else if (nj.is_object()) {
      cfg.network = "custom";
      cfg.custom_network = parse_network_spec(nj);
    } else {
      throw ConfigError("network", "must be a builtin name or an object");
    }
  }
  detail::read_field(j, "demand_vph", cfg.demand_vph);
  detail::read_field(j, "bus_headway_min", cfg.bus_headway_min);
  detail::read_field(j, "duration_s", cfg.duration_s);
  detail::read_field(j, "warmup_s", cfg.warmup_s);
  if (j.contains("controller")) {
    const auto name = j.at("controller").get<std::string>();
    const auto kind = ctrl::parse_controller(name);
    if (!kind.has_value())
      throw ConfigError("controller", "unknown controller '" + name + "'");
    cfg.controller = *kind;
  }
  detail::read_field(j, "seed", cfg.seed);
  detail::read_field(j, "dt_s", cfg.dt_s);
  detail::read_field(j, "decision_interval_s", cfg.decision_interval_s);
  if (j.contains("flow_rule")) {
    const auto rule = j.at("flow_rule").get<std::string>();
    if (rule == "triangular")
      cfg.flow_rule = ctm::FlowRule::Triangular;
    else if (rule == "paper-literal")
      cfg.flow_rule = ctm::FlowRule::PaperLiteral;
    else
      throw ConfigError("flow_rule", "must be triangular or paper-literal");
  }
  if (j.contains("arrivals")) {
    const auto mode = j.at("arrivals").get<std::string>();
    if (mode == "fluid")
      cfg.poisson_arrivals = false;
    else if (mode == "poisson")
      cfg.poisson_arrivals = true;
    else
      throw ConfigError("arrivals", "must be fluid or poisson");
  }
  if (j.contains("route_model")) {
    const auto model = j.at("route_model").get<std::string>();
    if (model == "straight")
      cfg.route_kind = signal::RouteKind::BusRouteStraight;
    else if (model == "left")
      cfg.route_kind = signal::RouteKind::BusRouteLeftTurn;
    else
      throw ConfigError("route_model", "must be straight or left");
  }
  if (j.contains("plan")) {
    const auto& pj = j.at("plan");
    detail::reject_unknown(pj, "plan",
                           {"cycle_s", "green_ratio", "min_green_s",
                            "max_green_s", "intergreen_s"});
    detail::read_field(pj, "cycle_s", cfg.base_plan.cycle_s);
    detail::read_field(pj, "min_green_s", cfg.base_plan.min_green_s);
    detail::read_field(pj, "max_green_s", cfg.base_plan.max_green_s);
    detail::read_field(pj, "intergreen_s", cfg.base_plan.intergreen_s);
    if (pj.contains("green_ratio")) {
      const auto ratios = pj.at("green_ratio").get<std::vector<double>>();
      if (ratios.size() != signal::kPhaseCount)
        throw ConfigError("plan.green_ratio", "needs exactly 8 entries");
      std::copy(ratios.begin(), ratios.end(), cfg.base_plan.green_ratio.begin());
    } else {
      // Re-derive equal ratios for the configured cycle and intergreen.
      const double g = (cfg.base_plan.cycle_s -
                        signal::kPhaseCount * cfg.base_plan.intergreen_s) /
                       signal::kPhaseCount;
      cfg.base_plan.green_ratio.fill(g / cfg.base_plan.cycle_s);
    }
    try {
      cfg.base_plan.validate();
    } catch (const std::exception& e) {
      throw ConfigError("plan", e.what());
    }
  }
  if (j.contains("train")) {
    const auto& tj = j.at("train");
    detail::reject_unknown(tj, "train", {"episodes", "episode_s", "freeze"});
    detail::read_field(tj, "episodes", cfg.train.episodes);
    detail::read_field(tj, "episode_s", cfg.train.episode_s);
    detail::read_field(tj, "freeze", cfg.train.freeze);
  }
  if (j.contains("cbql")) {
    const auto& cj = j.at("cbql");
    auto& cb = cfg.controller_opt.cbql;
    detail::reject_unknown(
        cj, "cbql",
        {"gamma", "alpha", "policy_af", "proportion_af", "epsilon",
         "epsilon_min", "epsilon_decay", "epsilon_eval", "tilt_weight",
         "shapley_update", "bus_occupancy", "car_occupancy"});
    detail::read_field(cj, "gamma", cb.gamma);
    detail::read_field(cj, "alpha", cb.alpha);
    detail::read_field(cj, "policy_af", cb.policy_af);
    detail::read_field(cj, "proportion_af", cb.proportion_af);
    detail::read_field(cj, "epsilon", cb.epsilon);
    detail::read_field(cj, "epsilon_min", cb.epsilon_min);
    detail::read_field(cj, "epsilon_decay", cb.epsilon_decay);
    detail::read_field(cj, "epsilon_eval", cb.epsilon_eval);
    detail::read_field(cj, "tilt_weight", cb.tilt_weight);
    detail::read_field(cj, "shapley_update", cb.shapley_update);
    detail::read_field(cj, "bus_occupancy", cb.bus_occupancy);
    detail::read_field(cj, "car_occupancy", cb.car_occupancy);
  }
  if (j.contains("arterial")) {
    const auto& aj = j.at("arterial");
    auto& ar = cfg.arterial;
    detail::reject_unknown(
        aj, "arterial",
        {"intersections", "link_m", "cell_m", "free_speed_mps",
         "wave_speed_mps", "sat_flow_per_lane_vps", "jam_per_lane_vpm",
         "arterial_lanes", "cross_lanes", "arterial_share", "arterial_left",
         "arterial_right", "cross_left", "cross_right"});
    detail::read_field(aj, "intersections", ar.intersections);
    detail::read_field(aj, "link_m", ar.link_m);
    detail::read_field(aj, "cell_m", ar.cell_m);
    detail::read_field(aj, "free_speed_mps", ar.free_speed_mps);
    detail::read_field(aj, "wave_speed_mps", ar.wave_speed_mps);
    detail::read_field(aj, "sat_flow_per_lane_vps", ar.sat_flow_per_lane_vps);
    detail::read_field(aj, "jam_per_lane_vpm", ar.jam_per_lane_vpm);
    detail::read_field(aj, "arterial_lanes", ar.arterial_lanes);
    detail::read_field(aj, "cross_lanes", ar.cross_lanes);
    detail::read_field(aj, "arterial_share", ar.arterial_share);
    detail::read_field(aj, "arterial_left", ar.arterial_left);
    detail::read_field(aj, "arterial_right", ar.arterial_right);
    detail::read_field(aj, "cross_left", ar.cross_left);
    detail::read_field(aj, "cross_right", ar.cross_right);
  }
  if (j.contains("bus")) {
    const auto& bj = j.at("bus");
    detail::reject_unknown(bj, "bus", {"first_departure_s", "detect_m"});
    detail::read_field(bj, "first_departure_s", cfg.bus_first_departure_s);
    detail::read_field(bj, "detect_m", cfg.bus_detect_m);
  }
  detail::read_field(j, "metrics_window_s", cfg.metrics_window_s);
  detail::read_field(j, "mp_bus_bonus", cfg.controller_opt.mp_bus_bonus);
  detail::read_field(j, "asc_extension_window_m",
                     cfg.controller_opt.asc_extension_window_m);
  if (j.contains("pulses")) {
    for (const auto& pj : j.at("pulses")) {
      sim::DemandPulse p;
      detail::read_field(pj, "origin", p.origin);
      detail::read_field(pj, "start_s", p.start_s);
      detail::read_field(pj, "end_s", p.end_s);
      detail::read_field(pj, "rate_nonbus_vph", p.rate_nonbus_vph);
      cfg.pulses.push_back(p);
    }
  }
  cfg.validate();
  return cfg;
}

inline sim::ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("scenario", "cannot open file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("scenario", std::string("parse error in ") + path +
                                      ": " + e.what());
  }
  return parse_scenario(j);
}

// --- characteristic-function files -----------------------------------------
//
// One coalition per line: sorted agent ids separated by spaces, a colon, and
// the value. '#' starts a comment. The empty coalition is implicitly 0.
//
//   # glove game
//   1: 0
//   2: 0
//   1 2: 1

struct CharFnFile {
  std::vector<int> agent_ids;  // sorted
  game::CharacteristicFunction fn{1};
};

inline CharFnFile parse_charfn(std::istream& in) {
  std::map<std::vector<int>, double> rows;
  std::set<int> agents;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos)
      throw ConfigError("charfn", "line " + std::to_string(line_no) +
                                      ": expected '<agents>: <value>'");
    std::istringstream ids(line.substr(0, colon));
    std::vector<int> coalition;
    int id = 0;
    while (ids >> id) coalition.push_back(id);
    std::istringstream val(line.substr(colon + 1));
    double v = 0;
    if (!(val >> v))
      throw ConfigError("charfn",
                        "line " + std::to_string(line_no) + ": bad value");
    std::sort(coalition.begin(), coalition.end());
    for (int a : coalition) agents.insert(a);
    rows[coalition] = v;
  }
  if (agents.empty()) throw ConfigError("charfn", "no coalitions given");
  if (static_cast<int>(agents.size()) > game::kMaxExactAgents)
    throw ConfigError("charfn", "more than " +
                                    std::to_string(game::kMaxExactAgents) +
                                    " agents");

  CharFnFile out;
  out.agent_ids.assign(agents.begin(), agents.end());
  const int n = static_cast<int>(out.agent_ids.size());
  out.fn = game::CharacteristicFunction(n);
  std::map<int, int> slot;
  for (int i = 0; i < n; ++i) slot[out.agent_ids[i]] = i;

  // Every non-empty subset must be present.
  for (game::Coalition mask = 1; mask <= out.fn.grand(); ++mask) {
    std::vector<int> coalition;
    for (int i = 0; i < n; ++i)
      if (mask & (game::Coalition{1} << i)) coalition.push_back(out.agent_ids[i]);
    auto it = rows.find(coalition);
    if (it == rows.end()) {
      std::string text;
      for (std::size_t i = 0; i < coalition.size(); ++i)
        text += (i ? " " : "") + std::to_string(coalition[i]);
      throw ConfigError("charfn", "missing coalition {" + text + "}");
    }
    out.fn.set_value(mask, it->second);
  }
  return out;
}

inline CharFnFile load_charfn(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("charfn", "cannot open file: " + path);
  return parse_charfn(in);
}

}  // namespace tsplab::io
