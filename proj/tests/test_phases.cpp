#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <vector>

#include "tsplab/phases.hpp"

using namespace tsplab;
using signal::Approach;
using signal::MovementKind;
using signal::PhaseId;
using signal::PhaseModel;
using signal::RouteKind;

namespace {

const std::vector<Approach> kApproaches = {Approach::NB, Approach::SB,
                                           Approach::EB, Approach::WB};

signal::SignalState make_state(RouteKind kind, bool auto_ring) {
  signal::SignalState s;
  s.model.kind = kind;
  s.auto_ring = auto_ring;
  return s;
}

}  // namespace

TEST_CASE("priority phase partition") {
  REQUIRE(signal::priority_phases({RouteKind::BusRouteLeftTurn}) ==
          std::vector<PhaseId>{PhaseId(1), PhaseId(8)});
  REQUIRE(signal::priority_phases({RouteKind::BusRouteStraight}) ==
          std::vector<PhaseId>{PhaseId(4), PhaseId(5), PhaseId(8)});

  // Complement of the left model's priority set.
  std::set<int> non_priority;
  for (int p = 1; p <= 8; ++p)
    if (!signal::is_priority_phase({RouteKind::BusRouteLeftTurn}, PhaseId(p)))
      non_priority.insert(p);
  REQUIRE(non_priority == std::set<int>{2, 3, 4, 5, 6, 7});
}

TEST_CASE("every priority phase serves the bus route movement") {
  for (RouteKind kind :
       {RouteKind::BusRouteStraight, RouteKind::BusRouteLeftTurn}) {
    PhaseModel model{kind};
    const auto bus_kind = kind == RouteKind::BusRouteStraight
                              ? MovementKind::Straight
                              : MovementKind::Left;
    for (PhaseId p : signal::priority_phases(model)) {
      const auto moves = signal::allowed_movements(p, model, Approach::EB);
      REQUIRE(std::find(moves.begin(), moves.end(), bus_kind) != moves.end());
    }
  }
}

TEST_CASE("no phase co-signals conflicting movements") {
  for (RouteKind kind :
       {RouteKind::BusRouteStraight, RouteKind::BusRouteLeftTurn}) {
    PhaseModel model{kind};
    for (int p = 1; p <= 8; ++p) {
      // Gather the protected set over all four approaches.
      std::vector<std::pair<Approach, MovementKind>> moves;
      for (Approach a : kApproaches)
        for (MovementKind k :
             signal::allowed_movements(PhaseId(p), model, a))
          moves.emplace_back(a, k);
      REQUIRE(!moves.empty());
      for (std::size_t i = 0; i < moves.size(); ++i)
        for (std::size_t j = i + 1; j < moves.size(); ++j)
          REQUIRE_FALSE(signal::movements_conflict(
              moves[i].first, moves[i].second, moves[j].first,
              moves[j].second));
    }
  }
}

TEST_CASE("rights are always permitted") {
  PhaseModel model{RouteKind::BusRouteStraight};
  for (int p = 1; p <= 8; ++p)
    for (Approach a : kApproaches)
      REQUIRE(signal::permission_factor(PhaseId(p), model, a,
                                        MovementKind::Right) == 1.0);
}

TEST_CASE("permissive lefts ride the through phase at reduced saturation") {
  PhaseModel protected_model{RouteKind::BusRouteStraight, signal::LeftMode::Protected};
  PhaseModel permissive_model{RouteKind::BusRouteStraight,
                              signal::LeftMode::Permissive};
  // Phase 4 of the straight model: EB+WB through.
  REQUIRE(signal::permission_factor(PhaseId(4), protected_model, Approach::EB,
                                    MovementKind::Left) == 0.0);
  REQUIRE(signal::permission_factor(PhaseId(4), permissive_model, Approach::EB,
                                    MovementKind::Left) ==
          Catch::Approx(signal::kPermissiveLeftFactor));
  // A protected left keeps full permission in either mode.
  REQUIRE(signal::permission_factor(PhaseId(5), permissive_model, Approach::EB,
                                    MovementKind::Left) == 1.0);
  // A left with no through on its approach stays red.
  REQUIRE(signal::permission_factor(PhaseId(4), permissive_model, Approach::NB,
                                    MovementKind::Left) == 0.0);
}

TEST_CASE("timing plan validation") {
  signal::TimingPlan plan;
  REQUIRE_NOTHROW(plan.validate());
  REQUIRE(plan.green_time(PhaseId(1)) == Catch::Approx(11.0));

  signal::TimingPlan bad = plan;
  bad.green_ratio[0] = 0.01;  // 1.2 s green, below min green
  REQUIRE_THROWS(bad.validate());

  signal::TimingPlan unbalanced = plan;
  unbalanced.green_ratio[0] *= 2;  // cycle no longer adds up
  REQUIRE_THROWS(unbalanced.validate());
}

TEST_CASE("ring tick rolls over at green plus intergreen") {
  auto s = make_state(RouteKind::BusRouteStraight, true);
  s.current_phase = PhaseId(3);
  const double slot = s.plan.green_time(PhaseId(3)) + s.plan.intergreen_s;
  const double dt = 1.0;
  s.elapsed_in_phase_s = slot - dt;
  signal::tick(s, dt);
  REQUIRE(s.current_phase == PhaseId(4));
  REQUIRE(s.elapsed_in_phase_s == Catch::Approx(0.0));

  // A small dt inside the green leaves the phase alone.
  signal::tick(s, 0.5);
  REQUIRE(s.current_phase == PhaseId(4));
  REQUIRE(s.elapsed_in_phase_s == Catch::Approx(0.5));
}

TEST_CASE("a full cycle of ticks returns to phase 1") {
  auto s = make_state(RouteKind::BusRouteStraight, true);
  std::vector<int> visited;
  visited.push_back(s.current_phase.index);
  for (int i = 0; i < 2 * signal::kPhaseCount * 120; ++i) {
    signal::tick(s, 0.5);
    if (visited.back() != s.current_phase.index)
      visited.push_back(s.current_phase.index);
    if (visited.size() == 9) break;
  }
  REQUIRE(visited == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 1});
}

TEST_CASE("ring closure visits each phase once per cycle") {
  auto s = make_state(RouteKind::BusRouteLeftTurn, true);
  std::set<int> seen;
  int rollovers = 0;
  int last = s.current_phase.index;
  while (rollovers < 8) {
    signal::tick(s, 1.0);
    if (s.current_phase.index != last) {
      seen.insert(s.current_phase.index);
      last = s.current_phase.index;
      ++rollovers;
    }
  }
  REQUIRE(seen.size() == 8);
}

TEST_CASE("apply_action switch and extension semantics") {
  auto s = make_state(RouteKind::BusRouteStraight, false);
  s.current_phase = PhaseId(2);
  s.elapsed_in_phase_s = s.plan.min_green_s;

  SECTION("switch schedules an intergreen then lands on the target") {
    signal::apply_action(s, PhaseId(5));
    REQUIRE(s.in_intergreen);
    REQUIRE_FALSE(signal::is_green(s));
    // Movements show red while the intergreen clears (rights excepted).
    REQUIRE(signal::movement_permission(s, Approach::EB,
                                        MovementKind::Straight) == 0.0);
    REQUIRE(signal::movement_permission(s, Approach::EB,
                                        MovementKind::Right) == 1.0);
    signal::advance(s, s.plan.intergreen_s);
    REQUIRE_FALSE(s.in_intergreen);
    REQUIRE(s.current_phase == PhaseId(5));
    REQUIRE(s.elapsed_in_phase_s == Catch::Approx(0.0));
  }

  SECTION("re-selecting the current phase extends it") {
    signal::apply_action(s, PhaseId(2));
    REQUIRE_FALSE(s.in_intergreen);
    signal::advance(s, 3.0);
    REQUIRE(s.current_phase == PhaseId(2));
    REQUIRE(s.elapsed_in_phase_s == Catch::Approx(s.plan.min_green_s + 3.0));
  }

  SECTION("switching before min green is a contract violation") {
    s.elapsed_in_phase_s = s.plan.min_green_s - 1.0;
    REQUIRE_THROWS_AS(signal::apply_action(s, PhaseId(7)),
                      signal::MinGreenViolation);
    // Extending is still fine.
    REQUIRE_NOTHROW(signal::apply_action(s, PhaseId(2)));
  }
}

TEST_CASE("controller-mode green is unbounded only until a switch") {
  auto s = make_state(RouteKind::BusRouteStraight, false);
  signal::advance(s, 30.0);
  REQUIRE(signal::is_green(s));
  REQUIRE(s.elapsed_in_phase_s == Catch::Approx(30.0));
  signal::apply_action(s, PhaseId(2));
  signal::advance(s, 2.0);
  REQUIRE(s.in_intergreen);
  signal::advance(s, 2.0);
  REQUIRE(s.current_phase == PhaseId(2));
}
