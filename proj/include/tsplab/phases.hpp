#pragma once

// Eight-phase signal models for straight and left-turn bus routes: the
// priority/non-priority phase partition, per-phase movement permissions with
// protected or permissive lefts, and timing-plan mechanics (fixed-time ring
// progression and controller-driven phase switching).

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsplab::signal {

inline constexpr int kPhaseCount = 8;

// Direction of travel on an approach.
enum class Approach { NB, SB, EB, WB };

enum class MovementKind { Left, Straight, Right };

enum class RouteKind { BusRouteStraight, BusRouteLeftTurn };
enum class LeftMode { Protected, Permissive };

// Approach saturation at or above this switches an intersection to protected
// lefts for the next cycle.
inline constexpr double kProtectedLeftSaturation = 0.7;

// Permitted lefts filter through opposing traffic; they discharge well below
// a protected arrow.
inline constexpr double kPermissiveLeftFactor = 0.35;

struct PhaseModel {
  RouteKind kind = RouteKind::BusRouteStraight;
  LeftMode left_mode = LeftMode::Protected;
};

struct PhaseId {
  int index = 1;  // 1..8

  constexpr PhaseId() = default;
  constexpr explicit PhaseId(int i) : index(i) {}
  auto operator<=>(const PhaseId&) const = default;
};

inline constexpr bool valid_phase(PhaseId p) {
  return p.index >= 1 && p.index <= kPhaseCount;
}

inline PhaseId next_in_ring(PhaseId p) {
  return PhaseId(p.index == kPhaseCount ? 1 : p.index + 1);
}

struct MinGreenViolation : std::logic_error {
  MinGreenViolation(int phase, double elapsed, double min_green)
      : std::logic_error("phase switch away from phase " +
                         std::to_string(phase) + " after " +
                         std::to_string(elapsed) + " s green, min green " +
                         std::to_string(min_green) + " s") {}
};

struct TimingPlan {
  double cycle_s = 120.0;
  std::array<double, kPhaseCount> green_ratio{};  // fraction of cycle per phase
  double min_green_s = 8.0;
  double max_green_s = 60.0;
  double intergreen_s = 4.0;  // yellow + all-red per phase change

  TimingPlan() {
    const double g = (cycle_s - kPhaseCount * intergreen_s) / kPhaseCount;
    green_ratio.fill(g / cycle_s);
  }

  [[nodiscard]] double green_time(PhaseId p) const {
    return green_ratio[p.index - 1] * cycle_s;
  }

  void validate() const {
    double total = kPhaseCount * intergreen_s;
    for (int i = 1; i <= kPhaseCount; ++i) {
      const double g = green_time(PhaseId(i));
      if (g < min_green_s - 1e-9 || g > max_green_s + 1e-9)
        throw std::invalid_argument("phase " + std::to_string(i) + " green " +
                                    std::to_string(g) +
                                    " outside [min_green, max_green]");
      total += g;
    }
    if (std::abs(total - cycle_s) > 0.5)
      throw std::invalid_argument("green times plus intergreens (" +
                                  std::to_string(total) +
                                  " s) do not fill the cycle");
    if (cycle_s <= 0 || min_green_s <= 0 || intergreen_s < 0)
      throw std::invalid_argument("timing plan fields must be positive");
  }
};

// auto_ring signals follow the fixed-time ring via tick(); controller-driven
// signals hold their phase until apply_action() schedules a change.
struct SignalState {
  PhaseId current_phase{1};
  double elapsed_in_phase_s = 0.0;
  PhaseModel model;
  TimingPlan plan;
  bool auto_ring = false;
  bool in_intergreen = false;
  double intergreen_elapsed_s = 0.0;
  PhaseId pending_phase{1};
};

inline std::vector<PhaseId> priority_phases(const PhaseModel& model) {
  if (model.kind == RouteKind::BusRouteLeftTurn)
    return {PhaseId(1), PhaseId(8)};
  return {PhaseId(4), PhaseId(5), PhaseId(8)};
}

inline bool is_priority_phase(const PhaseModel& model, PhaseId p) {
  for (PhaseId q : priority_phases(model))
    if (q == p) return true;
  return false;
}

namespace detail {

struct ProtectedMove {
  Approach approach;
  MovementKind kind;
};

// One conflict-free movement pair per phase. The bus route runs eastbound;
// network builders orient their approaches accordingly. The straight model
// serves EB through in phases 4, 5 and 8; the left model serves EB left in
// phases 1 and 8.
inline const std::array<std::array<ProtectedMove, 2>, kPhaseCount>&
phase_table(RouteKind kind) {
  using A = Approach;
  using M = MovementKind;
  static const std::array<std::array<ProtectedMove, 2>, kPhaseCount> straight{{
      {{{A::NB, M::Straight}, {A::SB, M::Straight}}},  // 1
      {{{A::NB, M::Left}, {A::SB, M::Left}}},          // 2
      {{{A::WB, M::Straight}, {A::WB, M::Left}}},      // 3
      {{{A::EB, M::Straight}, {A::WB, M::Straight}}},  // 4
      {{{A::EB, M::Straight}, {A::EB, M::Left}}},      // 5
      {{{A::NB, M::Straight}, {A::NB, M::Left}}},      // 6
      {{{A::SB, M::Straight}, {A::SB, M::Left}}},      // 7
      {{{A::EB, M::Straight}, {A::WB, M::Straight}}},  // 8
  }};
  static const std::array<std::array<ProtectedMove, 2>, kPhaseCount> left{{
      {{{A::EB, M::Left}, {A::WB, M::Left}}},          // 1
      {{{A::EB, M::Straight}, {A::WB, M::Straight}}},  // 2
      {{{A::NB, M::Straight}, {A::SB, M::Straight}}},  // 3
      {{{A::NB, M::Left}, {A::SB, M::Left}}},          // 4
      {{{A::WB, M::Straight}, {A::WB, M::Left}}},      // 5
      {{{A::NB, M::Straight}, {A::NB, M::Left}}},      // 6
      {{{A::SB, M::Straight}, {A::SB, M::Left}}},      // 7
      {{{A::EB, M::Straight}, {A::EB, M::Left}}},      // 8
  }};
  return kind == RouteKind::BusRouteStraight ? straight : left;
}

inline Approach opposite(Approach a) {
  switch (a) {
    case Approach::NB: return Approach::SB;
    case Approach::SB: return Approach::NB;
    case Approach::EB: return Approach::WB;
    case Approach::WB: return Approach::EB;
  }
  return Approach::NB;
}

}  // namespace detail

// Standard four-leg conflict matrix for protected movements. Rights merge
// with yield and never conflict here.
inline bool movements_conflict(Approach a1, MovementKind k1, Approach a2,
                               MovementKind k2) {
  if (k1 == MovementKind::Right || k2 == MovementKind::Right) return false;
  if (a1 == a2) return false;
  if (a2 == detail::opposite(a1)) return k1 != k2;  // opposing S+L crosses
  return true;                                      // perpendicular
}

// Protected movements an approach holds during a phase. Rights are always
// permitted and are not listed; permissive lefts ride on the matching
// through phase via permission_factor().
inline std::vector<MovementKind> allowed_movements(PhaseId phase,
                                                   const PhaseModel& model,
                                                   Approach approach) {
  if (!valid_phase(phase)) throw std::invalid_argument("phase outside 1..8");
  std::vector<MovementKind> out;
  for (const auto& mv : detail::phase_table(model.kind)[phase.index - 1])
    if (mv.approach == approach) out.push_back(mv.kind);
  return out;
}

// Saturation-flow multiplier for a movement under a given phase: 1 for a
// protected movement (rights always), kPermissiveLeftFactor for a permitted
// left filtering through the opposing through phase, 0 otherwise.
inline double permission_factor(PhaseId phase, const PhaseModel& model,
                                Approach approach, MovementKind kind) {
  if (kind == MovementKind::Right) return 1.0;
  bool has_straight = false;
  for (const auto& mv : detail::phase_table(model.kind)[phase.index - 1]) {
    if (mv.approach == approach && mv.kind == kind) return 1.0;
    if (mv.approach == approach && mv.kind == MovementKind::Straight)
      has_straight = true;
  }
  if (kind == MovementKind::Left && has_straight &&
      model.left_mode == LeftMode::Permissive)
    return kPermissiveLeftFactor;
  return 0.0;
}

// The signal shows green for its current phase whenever it is not clearing
// an intergreen; ring signals additionally bound the green by the plan.
inline bool is_green(const SignalState& s) {
  if (s.in_intergreen) return false;
  if (s.auto_ring)
    return s.elapsed_in_phase_s < s.plan.green_time(s.current_phase);
  return true;
}

// Saturation multiplier for a movement under the signal's current display.
inline double movement_permission(const SignalState& s, Approach approach,
                                  MovementKind kind) {
  if (kind == MovementKind::Right) return 1.0;
  if (!is_green(s)) return 0.0;
  return permission_factor(s.current_phase, s.model, approach, kind);
}

// Fixed-time progression: elapsed spans green + intergreen, then the ring
// rolls to the next phase.
inline void tick(SignalState& s, double dt) {
  if (dt <= 0) throw std::invalid_argument("dt must be positive");
  double remaining = dt;
  while (remaining > 0) {
    const double slot =
        s.plan.green_time(s.current_phase) + s.plan.intergreen_s;
    const double left = slot - s.elapsed_in_phase_s;
    if (remaining < left - 1e-12) {
      s.elapsed_in_phase_s += remaining;
      return;
    }
    remaining -= left;
    s.current_phase = next_in_ring(s.current_phase);
    s.elapsed_in_phase_s = 0.0;
  }
}

// Controller-mode time advance: consumes a scheduled intergreen, otherwise
// just accrues green time. Never switches phase on its own.
inline void advance(SignalState& s, double dt) {
  if (dt <= 0) throw std::invalid_argument("dt must be positive");
  if (s.in_intergreen) {
    s.intergreen_elapsed_s += dt;
    if (s.intergreen_elapsed_s >= s.plan.intergreen_s - 1e-12) {
      const double overshoot = s.intergreen_elapsed_s - s.plan.intergreen_s;
      s.current_phase = s.pending_phase;
      s.elapsed_in_phase_s = std::max(0.0, overshoot);
      s.in_intergreen = false;
      s.intergreen_elapsed_s = 0.0;
    }
    return;
  }
  s.elapsed_in_phase_s += dt;
}

// Request a transition to the given phase. Re-selecting the current phase
// extends its green; anything else schedules an intergreen first and
// requires the minimum green to have elapsed.
inline void apply_action(SignalState& s, PhaseId action) {
  if (!valid_phase(action)) throw std::invalid_argument("phase outside 1..8");
  if (s.in_intergreen) {
    s.pending_phase = action;  // redirect a transition already under way
    return;
  }
  if (action == s.current_phase) return;
  if (s.elapsed_in_phase_s < s.plan.min_green_s - 1e-12)
    throw MinGreenViolation(s.current_phase.index, s.elapsed_in_phase_s,
                            s.plan.min_green_s);
  s.in_intergreen = true;
  s.intergreen_elapsed_s = 0.0;
  s.pending_phase = action;
}

}  // namespace tsplab::signal
