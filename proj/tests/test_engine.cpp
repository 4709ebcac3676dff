#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <deque>
#include <set>
#include <vector>

#include "tsplab/engine.hpp"

using namespace tsplab;
using sim::ScenarioConfig;

namespace {

ScenarioConfig small_scenario() {
  ScenarioConfig cfg;
  cfg.demand_vph = 2000;
  cfg.duration_s = 900;
  cfg.warmup_s = 300;
  cfg.metrics_window_s = 60;
  cfg.bus_first_departure_s = 320;
  cfg.bus_headway_min = 5;
  return cfg;
}

}  // namespace

TEST_CASE("arterial5 construction contract") {
  ScenarioConfig cfg;
  const auto built = sim::build_arterial5(cfg);

  REQUIRE(built.net.node_count == 5);
  REQUIRE(built.signals.size() == 5);
  REQUIRE(built.bus_route.links.size() == 6);  // five intersections crossed
  REQUIRE(built.wiring.size() == 5);
  REQUIRE_NOTHROW(built.net.validate());

  // The bus route traverses every signalized node.
  std::set<int> crossed;
  for (std::size_t i = 0; i + 1 < built.bus_route.links.size(); ++i)
    crossed.insert(built.net.links[built.bus_route.links[i]].downstream_node);
  REQUIRE(crossed == std::set<int>{0, 1, 2, 3, 4});

  // Every origin reaches some exit by following movements.
  for (const auto& origin : built.net.origins) {
    std::set<int> seen;
    std::deque<int> frontier{origin.link};
    bool reaches_exit = false;
    while (!frontier.empty() && !reaches_exit) {
      const int li = frontier.front();
      frontier.pop_front();
      if (!seen.insert(li).second) continue;
      for (const auto& mv : built.net.links[li].movements) {
        if (mv.to_link == ctm::kExitLink)
          reaches_exit = true;
        else
          frontier.push_back(mv.to_link);
      }
    }
    REQUIRE(reaches_exit);
  }
}

TEST_CASE("zero demand leaves every metric at zero") {
  auto cfg = small_scenario();
  cfg.demand_vph = 0;
  cfg.bus_first_departure_s = cfg.duration_s + 1;  // no buses either
  const auto rec = sim::run(cfg);
  REQUIRE(rec.avg_waiting_private_cars == 0.0);
  REQUIRE(rec.avg_travel_time_s == 0.0);
  REQUIRE(rec.stability_statistic == 0.0);
  REQUIRE_FALSE(rec.avg_bus_travel_time_s.has_value());
  REQUIRE(rec.stable);
}

TEST_CASE("network-wide conservation with boundaries") {
  auto cfg = small_scenario();
  cfg.demand_vph = 5000;
  sim::Engine engine(cfg);
  engine.evaluate();
  const double inside = engine.built().net.total_vehicles();
  REQUIRE(std::abs(inside - (engine.injected_veh() - engine.exited_veh())) <
          1e-9);
}

TEST_CASE("identical config and seed reproduce the record") {
  auto cfg = small_scenario();
  cfg.controller = ctrl::ControllerKind::CBQLTSP;
  cfg.demand_vph = 4000;
  const auto a = sim::run(cfg);
  const auto b = sim::run(cfg);
  REQUIRE(a.avg_waiting_private_cars == b.avg_waiting_private_cars);
  REQUIRE(a.avg_travel_time_s == b.avg_travel_time_s);
  REQUIRE(a.stability_statistic == b.stability_statistic);
  REQUIRE(a.avg_bus_travel_time_s == b.avg_bus_travel_time_s);
  REQUIRE(a.series.size() == b.series.size());
  for (std::size_t i = 0; i < a.series.size(); ++i) {
    REQUIRE(a.series[i].waiting_private == b.series[i].waiting_private);
    REQUIRE(a.series[i].private_count == b.series[i].private_count);
  }
}

TEST_CASE("buses never beat free flow") {
  auto cfg = small_scenario();
  cfg.duration_s = 1800;
  cfg.warmup_s = 300;
  cfg.bus_headway_min = 4;
  cfg.demand_vph = 3000;
  const auto rec = sim::run(cfg);
  REQUIRE(rec.buses_completed >= 1);
  const auto& built = sim::build_arterial5(cfg);
  double route_m = 0;
  for (int li : built.bus_route.links) route_m += built.net.links[li].length_m();
  const double free_flow_s = route_m / cfg.arterial.free_speed_mps;
  REQUIRE(rec.avg_bus_travel_time_s.has_value());
  REQUIRE(*rec.avg_bus_travel_time_s >= free_flow_s);
}

TEST_CASE("waiting grows with demand under fixed time") {
  auto cfg = small_scenario();
  cfg.bus_first_departure_s = cfg.duration_s + 1;
  double prev = -1.0;
  for (double demand : {2000.0, 6000.0, 10000.0}) {
    cfg.demand_vph = demand;
    const auto rec = sim::run(cfg);
    REQUIRE(rec.avg_waiting_private_cars >= prev);
    prev = rec.avg_waiting_private_cars;
  }
}

TEST_CASE("a demand pulse entirely inside warmup has zero effect") {
  auto cfg = small_scenario();
  cfg.demand_vph = 2500;
  const auto base = sim::run(cfg);

  auto pulsed_cfg = cfg;
  pulsed_cfg.pulses.push_back({0, 60.0, 180.0, 1500.0});
  const auto pulsed = sim::run(pulsed_cfg);

  REQUIRE(base.avg_waiting_private_cars == pulsed.avg_waiting_private_cars);
  REQUIRE(base.avg_travel_time_s == pulsed.avg_travel_time_s);
  REQUIRE(base.stability_statistic == pulsed.stability_statistic);
}

TEST_CASE("trend slope synthetic cases") {
  std::vector<double> t, constant, linear;
  for (int i = 0; i < 50; ++i) {
    t.push_back(i * 10.0);
    constant.push_back(100.0);
    linear.push_back(i * 10.0 / 10.0);  // grows at 0.1 veh/s
  }
  REQUIRE(sim::trend_slope(t, constant) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(sim::trend_slope(t, linear) == Catch::Approx(0.1));
}

TEST_CASE("stability probe separates light and absurd demand") {
  auto cfg = small_scenario();
  cfg.duration_s = 2400;
  cfg.warmup_s = 300;
  cfg.bus_first_departure_s = cfg.duration_s + 1;

  cfg.demand_vph = 1500;
  const auto calm = sim::stability_probe(cfg);
  REQUIRE(calm.verdict == sim::Stability::Stable);

  cfg.demand_vph = 30000;
  const auto jammed = sim::stability_probe(cfg);
  REQUIRE(jammed.verdict == sim::Stability::Unstable);
  REQUIRE(jammed.slope_vps > sim::kStableSlopeVps);
}

TEST_CASE("overload under fixed time trends upward") {
  auto cfg = small_scenario();
  cfg.duration_s = 2400;
  cfg.demand_vph = 25000;
  cfg.bus_first_departure_s = cfg.duration_s + 1;
  const auto rec = sim::run(cfg);
  REQUIRE_FALSE(rec.stable);
  // Waiting counts in the second half exceed the first half.
  const std::size_t half = rec.series.size() / 2;
  double first = 0, second = 0;
  for (std::size_t i = 0; i < half; ++i) first += rec.series[i].waiting_private;
  for (std::size_t i = half; i < rec.series.size(); ++i)
    second += rec.series[i].waiting_private;
  REQUIRE(second / (rec.series.size() - half) > first / half);
}

TEST_CASE("max pressure keeps a feasible two-intersection network bounded") {
  ScenarioConfig cfg;
  cfg.arterial.intersections = 2;
  cfg.demand_vph = 3000;
  cfg.duration_s = 20000;
  cfg.warmup_s = 600;
  cfg.controller = ctrl::ControllerKind::MaxPressureNoTSP;
  cfg.bus_first_departure_s = cfg.duration_s + 1;
  const auto rec = sim::run(cfg);
  REQUIRE(rec.stable);
  double peak = 0;
  for (const auto& s : rec.series) peak = std::max(peak, s.waiting_private);
  REQUIRE(peak < 400.0);
}

TEST_CASE("cbql learning curves trend upward on a toy intersection") {
  // Reward proxy: negative waiting. Windows of 1000 decisions; require a
  // non-negative reward slope in at least 8 of 10 seeds.
  int improving = 0;
  for (int seed = 1; seed <= 10; ++seed) {
    ScenarioConfig cfg;
    cfg.arterial.intersections = 1;
    cfg.demand_vph = 3000;
    cfg.controller = ctrl::ControllerKind::CBQLTSP;
    cfg.seed = seed;
    cfg.duration_s = 50000;  // 1e4 decisions at 5 s
    cfg.warmup_s = 0;
    cfg.metrics_window_s = 5000;  // 1000 decisions per window
    cfg.bus_headway_min = 30;
    const auto rec = sim::run(cfg);
    std::vector<double> t, reward;
    for (const auto& s : rec.series) {
      t.push_back(s.t_s);
      reward.push_back(-s.waiting_private);
    }
    if (sim::trend_slope(t, reward) >= 0.0) ++improving;
  }
  REQUIRE(improving >= 8);
}

TEST_CASE("custom network spec builds and runs") {
  ScenarioConfig cfg;
  sim::NetworkSpec spec;
  spec.nodes = 1;
  sim::NetworkSpec::LinkSpec in;
  in.from = ctm::kBoundaryNode;
  in.to = 0;
  in.approach = signal::Approach::EB;
  in.movements = {{signal::MovementKind::Straight, 1.0, 1}};
  sim::NetworkSpec::LinkSpec out_link;
  out_link.from = 0;
  out_link.to = ctm::kBoundaryNode;
  out_link.movements = {{signal::MovementKind::Straight, 1.0, ctm::kExitLink}};
  spec.links = {in, out_link};
  spec.origins = {{0, 1200.0, 0.0}};
  spec.signal_nodes = {0};
  cfg.network = "custom";
  cfg.custom_network = spec;
  cfg.duration_s = 900;
  cfg.warmup_s = 300;
  cfg.bus_first_departure_s = 1e9;

  const auto rec = sim::run(cfg);
  REQUIRE(rec.vehicles_exited > 0.0);
  REQUIRE(rec.stable);
}
