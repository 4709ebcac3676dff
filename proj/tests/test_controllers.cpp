#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <vector>

#include "tsplab/controllers.hpp"

using namespace tsplab;
using ctrl::Observation;
using signal::Approach;
using signal::MovementKind;
using signal::PhaseId;

namespace {

signal::SignalState controller_signal(int phase, double elapsed) {
  signal::SignalState s;
  s.model.kind = signal::RouteKind::BusRouteStraight;
  s.current_phase = PhaseId(phase);
  s.elapsed_in_phase_s = elapsed;
  return s;
}

ctrl::MovementObs straight(Approach a, double queue_up,
                           std::vector<std::pair<double, double>> down = {}) {
  ctrl::MovementObs m;
  m.approach = a;
  m.kind = MovementKind::Straight;
  m.queue_up_veh = queue_up;
  m.downstream = std::move(down);
  return m;
}

}  // namespace

TEST_CASE("fixed time controller never overrides the ring") {
  ctrl::FixedTimeController ft;
  auto sig = controller_signal(3, 2.0);
  Observation obs;
  obs.sig = &sig;
  obs.per_phase_queue.fill(50.0);
  Rng rng(1);
  REQUIRE(ft.decide(obs, rng) == PhaseId(3));
  REQUIRE(ft.uses_ring());

  // The ring itself is periodic with the cycle.
  auto ring = controller_signal(1, 0.0);
  ring.auto_ring = true;
  std::vector<int> first_cycle, second_cycle;
  for (int t = 0; t < 120; ++t) {
    first_cycle.push_back(ring.current_phase.index);
    signal::tick(ring, 1.0);
  }
  for (int t = 0; t < 120; ++t) {
    second_cycle.push_back(ring.current_phase.index);
    signal::tick(ring, 1.0);
  }
  REQUIRE(first_cycle == second_cycle);
}

TEST_CASE("passive priority plan lengthens priority greens") {
  signal::TimingPlan base;
  signal::PhaseModel model{signal::RouteKind::BusRouteStraight};
  const auto plan = ctrl::passive_priority_plan(base, model);
  REQUIRE_NOTHROW(plan.validate());
  REQUIRE(plan.green_time(PhaseId(4)) > base.green_time(PhaseId(4)));
  REQUIRE(plan.green_time(PhaseId(1)) < base.green_time(PhaseId(1)));
  double total = signal::kPhaseCount * plan.intergreen_s;
  for (int p = 1; p <= 8; ++p) total += plan.green_time(PhaseId(p));
  REQUIRE(total == Catch::Approx(base.cycle_s));
}

TEST_CASE("pressure formula") {
  auto sig = controller_signal(4, 10.0);
  Observation obs;
  obs.sig = &sig;

  SECTION("empty network has zero pressure everywhere") {
    for (int p = 1; p <= 8; ++p)
      REQUIRE(ctrl::pressure(obs, PhaseId(p)) == 0.0);
  }

  SECTION("upstream minus split-weighted downstream") {
    obs.movements.push_back(
        straight(Approach::EB, 10.0, {{0.5, 2.0}, {0.5, 3.0}}));
    // Phase 4 serves EB through.
    REQUIRE(ctrl::pressure(obs, PhaseId(4)) == Catch::Approx(7.5));
    // Phase 1 (NB+SB through) does not serve it.
    REQUIRE(ctrl::pressure(obs, PhaseId(1)) == 0.0);
  }
}

TEST_CASE("max pressure picks the heaviest served phase") {
  auto sig = controller_signal(4, 20.0);
  Observation obs;
  obs.sig = &sig;
  obs.movements.push_back(straight(Approach::NB, 12.0));
  obs.movements.push_back(straight(Approach::SB, 12.0));
  obs.movements.push_back(straight(Approach::EB, 3.0));
  obs.movements.push_back(straight(Approach::WB, 3.0));
  ctrl::MaxPressureController mp(false, 150.0);
  Rng rng(1);
  // Phase 1 (NB+SB) carries 24 vs 6 on the arterial phases.
  REQUIRE(mp.decide(obs, rng) == PhaseId(1));

  SECTION("ties break toward the lowest phase id") {
    Observation tie;
    tie.sig = &sig;
    tie.movements.push_back(straight(Approach::NB, 5.0));
    tie.movements.push_back(straight(Approach::SB, 5.0));
    tie.movements.push_back(straight(Approach::EB, 5.0));
    tie.movements.push_back(straight(Approach::WB, 5.0));
    // Phases 1, 4 and 8 all score 10; phase 1 wins.
    REQUIRE(mp.decide(tie, rng) == PhaseId(1));
  }

  SECTION("min green locks the current phase") {
    auto locked = controller_signal(4, 2.0);
    obs.sig = &locked;
    REQUIRE(mp.decide(obs, rng) == PhaseId(4));
  }

  SECTION("max green forces a change") {
    auto expired = controller_signal(1, 60.0);
    Observation heavy;
    heavy.sig = &expired;
    heavy.movements.push_back(straight(Approach::NB, 50.0));
    heavy.movements.push_back(straight(Approach::SB, 50.0));
    const auto action = mp.decide(heavy, rng);
    REQUIRE(action != PhaseId(1));
  }
}

TEST_CASE("max pressure transit bonus") {
  const double bonus = 150.0;
  ctrl::MaxPressureController mp_tsp(true, bonus);
  auto sig = controller_signal(4, 20.0);
  Rng rng(1);

  Observation obs;
  obs.sig = &sig;
  obs.bus_present = true;
  obs.bus_distance_m = 80.0;
  obs.movements.push_back(straight(Approach::EB, 1.0));  // priority phases 4,5,8
  obs.movements.push_back(straight(Approach::NB, 0.0));

  SECTION("priority wins while base deficit stays within the bonus") {
    obs.movements[1].queue_up_veh = 1.0 + bonus - 1.0;  // p_other = p_prio + B - 1
    const auto a = mp_tsp.decide(obs, rng);
    REQUIRE(signal::is_priority_phase(sig.model, a));
  }

  SECTION("a deficit beyond the bonus overrides priority") {
    obs.movements[1].queue_up_veh = 2.0 + bonus + 2.0;  // NB+? phase exceeds
    const auto a = mp_tsp.decide(obs, rng);
    REQUIRE_FALSE(signal::is_priority_phase(sig.model, a));
  }

  SECTION("without a bus both variants agree") {
    obs.bus_present = false;
    ctrl::MaxPressureController mp(false, bonus);
    REQUIRE(mp_tsp.decide(obs, rng) == mp.decide(obs, rng));
  }
}

TEST_CASE("actuated priority rules") {
  ctrl::ActuatedController asc(150.0);
  Rng rng(1);

  SECTION("bus inside the window extends a serving green") {
    auto sig = controller_signal(4, 30.0);  // priority phase, past plan green
    Observation obs;
    obs.sig = &sig;
    obs.bus_present = true;
    obs.bus_distance_m = 50.0;
    REQUIRE(asc.decide(obs, rng) == PhaseId(4));
  }

  SECTION("a waiting bus truncates a non-priority phase after min green") {
    auto sig = controller_signal(2, 9.0);
    Observation obs;
    obs.sig = &sig;
    obs.bus_present = true;
    obs.bus_distance_m = 10.0;
    const auto a = asc.decide(obs, rng);
    REQUIRE(signal::is_priority_phase(sig.model, a));
  }

  SECTION("no bus, empty approach, past plan green: advance the ring") {
    auto sig = controller_signal(2, 15.0);
    Observation obs;
    obs.sig = &sig;
    REQUIRE(asc.decide(obs, rng) == PhaseId(3));
  }

  SECTION("no bus but standing queue: extend up to max green") {
    auto sig = controller_signal(2, 15.0);
    Observation obs;
    obs.sig = &sig;
    obs.per_phase_queue[1] = 8.0;
    REQUIRE(asc.decide(obs, rng) == PhaseId(2));
    sig.elapsed_in_phase_s = 60.0;
    REQUIRE(asc.decide(obs, rng) != PhaseId(2));
  }

  SECTION("min green locks") {
    auto sig = controller_signal(2, 3.0);
    Observation obs;
    obs.sig = &sig;
    obs.bus_present = true;
    REQUIRE(asc.decide(obs, rng) == PhaseId(2));
  }
}

TEST_CASE("cbql cold start samples uniformly") {
  std::array<long, 8> counts{};
  const int trials = 8000;
  for (int t = 0; t < trials; ++t) {
    ctrl::CBQLController cbql(true);
    cbql.set_phase_model({signal::RouteKind::BusRouteStraight});
    auto sig = controller_signal(1, 10.0);
    Observation obs;
    obs.sig = &sig;
    Rng rng(1000 + t);
    ++counts[cbql.decide(obs, rng).index - 1];
  }
  for (int a = 0; a < 8; ++a)
    REQUIRE(std::abs(counts[a] / double(trials) - 0.125) < 0.03);
}

TEST_CASE("cbql respects the min-green lock") {
  ctrl::CBQLController cbql(true);
  cbql.set_phase_model({signal::RouteKind::BusRouteStraight});
  auto sig = controller_signal(6, 2.0);
  Observation obs;
  obs.sig = &sig;
  Rng rng(4);
  for (int i = 0; i < 50; ++i) REQUIRE(cbql.decide(obs, rng) == PhaseId(6));
}

TEST_CASE("tsp mode with zeroed knobs equals the no-tsp controller") {
  ctrl::CBQLConfig zeroed;
  zeroed.tilt_weight = 0.0;
  zeroed.shapley_update = false;
  ctrl::CBQLController tsp(true, zeroed);
  ctrl::CBQLController notsp(false);
  tsp.set_phase_model({signal::RouteKind::BusRouteStraight});
  notsp.set_phase_model({signal::RouteKind::BusRouteStraight});

  Rng rng_a(99), rng_b(99);
  Rng env(7);
  auto sig_a = controller_signal(1, 10.0);
  auto sig_b = controller_signal(1, 10.0);
  for (int step = 0; step < 400; ++step) {
    Observation obs_a, obs_b;
    obs_a.sig = &sig_a;
    obs_b.sig = &sig_b;
    const double delay_bus = env.uniform(0, 5);
    const double delay_car = env.uniform(0, 40);
    obs_a.interval_delay_bus_veh_s = obs_b.interval_delay_bus_veh_s = delay_bus;
    obs_a.interval_delay_nonbus_veh_s = obs_b.interval_delay_nonbus_veh_s =
        delay_car;
    for (int p = 0; p < 8; ++p) {
      const double q = env.uniform(0, 30);
      obs_a.per_phase_queue[p] = q;
      obs_b.per_phase_queue[p] = q;
    }
    obs_a.bus_present = obs_b.bus_present = (step % 7 == 0);
    const auto a = tsp.decide(obs_a, rng_a);
    const auto b = notsp.decide(obs_b, rng_b);
    REQUIRE(a == b);
    sig_a.current_phase = a;
    sig_b.current_phase = b;
    sig_a.elapsed_in_phase_s = sig_b.elapsed_in_phase_s = 10.0;
  }
  REQUIRE(tsp.save_tables() == notsp.save_tables());
}

TEST_CASE("learned priority preference shows under a bus tilt") {
  // Environment sketch: delays shrink when the previous action served the
  // bus route, so the tables learn to favor the priority partition.
  ctrl::CBQLConfig cfg;
  cfg.epsilon = 0.2;
  cfg.epsilon_min = 0.05;
  ctrl::CBQLController cbql(true, cfg);
  const signal::PhaseModel model{signal::RouteKind::BusRouteStraight};
  cbql.set_phase_model(model);
  Rng rng(2024);
  auto sig = controller_signal(1, 10.0);
  int prev = 1;
  for (int step = 0; step < 4000; ++step) {
    Observation obs;
    obs.sig = &sig;
    obs.bus_present = true;
    obs.bus_distance_m = 60.0;
    const bool served = signal::is_priority_phase(model, PhaseId(prev));
    obs.interval_delay_bus_veh_s = served ? 0.5 : 20.0;
    obs.interval_delay_nonbus_veh_s = served ? 5.0 : 60.0;
    obs.per_phase_queue.fill(served ? 2.0 : 12.0);
    const auto a = cbql.decide(obs, rng);
    prev = a.index;
    sig.current_phase = a;
    sig.elapsed_in_phase_s = 10.0;
  }

  cbql.set_learning(false);
  long priority_hits = 0;
  const int draws = 1000;
  Rng eval_rng(555);
  for (int i = 0; i < draws; ++i) {
    Observation obs;
    obs.sig = &sig;
    obs.bus_present = true;
    obs.bus_distance_m = 60.0;
    obs.per_phase_queue.fill(2.0);
    sig.current_phase = PhaseId(1);
    const auto a = cbql.decide(obs, eval_rng);
    if (signal::is_priority_phase(model, a)) ++priority_hits;
  }
  REQUIRE(priority_hits / double(draws) > 0.5);
}

TEST_CASE("controller names round-trip") {
  using ctrl::ControllerKind;
  for (ControllerKind k :
       {ControllerKind::FixedTime, ControllerKind::MBPassiveTSP,
        ControllerKind::MaxPressureNoTSP, ControllerKind::MaxPressureTSP,
        ControllerKind::ActuatedTSP, ControllerKind::CBQLNoTSP,
        ControllerKind::CBQLTSP}) {
    const auto parsed = ctrl::parse_controller(ctrl::controller_name(k));
    REQUIRE(parsed.has_value());
    REQUIRE(*parsed == k);
  }
  REQUIRE_FALSE(ctrl::parse_controller("nonsense").has_value());
}
