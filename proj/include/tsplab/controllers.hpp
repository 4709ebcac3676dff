#pragma once

// Pluggable signal controllers behind one decision interface: fixed-time and
// passive-priority rings, max-pressure with and without a transit bonus,
// actuated green-extension / red-truncation priority, and the cooperative
// game + Q-learning controller in TSP and no-TSP modes.

#include <algorithm>
#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsplab/phases.hpp"
#include "tsplab/qlearning.hpp"
#include "tsplab/rng.hpp"
#include "tsplab/shapley.hpp"

namespace tsplab::ctrl {

using signal::Approach;
using signal::MovementKind;
using signal::PhaseId;

enum class ControllerKind {
  FixedTime,       // ft-notsp
  MBPassiveTSP,    // mb-tsp: fixed ring, longer priority greens
  MaxPressureNoTSP,
  MaxPressureTSP,
  ActuatedTSP,     // asc-tsp
  CBQLNoTSP,
  CBQLTSP,
};

inline const char* controller_name(ControllerKind k) {
  switch (k) {
    case ControllerKind::FixedTime: return "ft-notsp";
    case ControllerKind::MBPassiveTSP: return "mb-tsp";
    case ControllerKind::MaxPressureNoTSP: return "mp-notsp";
    case ControllerKind::MaxPressureTSP: return "mp-tsp";
    case ControllerKind::ActuatedTSP: return "asc-tsp";
    case ControllerKind::CBQLNoTSP: return "cbql-notsp";
    case ControllerKind::CBQLTSP: return "cbql-tsp";
  }
  return "?";
}

inline std::optional<ControllerKind> parse_controller(const std::string& name) {
  for (ControllerKind k :
       {ControllerKind::FixedTime, ControllerKind::MBPassiveTSP,
        ControllerKind::MaxPressureNoTSP, ControllerKind::MaxPressureTSP,
        ControllerKind::ActuatedTSP, ControllerKind::CBQLNoTSP,
        ControllerKind::CBQLTSP})
    if (name == controller_name(k)) return k;
  return std::nullopt;
}

// Queue state of one signalized movement plus the downstream links it feeds:
// (split, queue) per receiving movement.
struct MovementObs {
  int from_link = -1;
  Approach approach = Approach::EB;
  MovementKind kind = MovementKind::Straight;
  double queue_up_veh = 0.0;
  std::vector<std::pair<double, double>> downstream;
};

struct Observation {
  std::array<double, signal::kPhaseCount> per_phase_queue{};
  std::vector<MovementObs> movements;
  bool bus_present = false;       // on the priority approach, within detection
  double bus_distance_m = 0.0;    // to the stop line
  const signal::SignalState* sig = nullptr;
  double sim_time_s = 0.0;
  // Delay accrued at this intersection since the previous decision.
  double interval_delay_bus_veh_s = 0.0;
  double interval_delay_nonbus_veh_s = 0.0;
};

// Upstream-minus-weighted-downstream queue pressure of a phase. Rights are
// unsignalized and excluded.
inline double pressure(const Observation& obs, PhaseId phase) {
  const auto& model = obs.sig->model;
  double total = 0.0;
  for (const auto& m : obs.movements) {
    if (m.kind == MovementKind::Right) continue;
    const auto allowed = signal::allowed_movements(phase, model, m.approach);
    if (std::find(allowed.begin(), allowed.end(), m.kind) == allowed.end())
      continue;
    double downstream = 0.0;
    for (const auto& [split, queue] : m.downstream) downstream += split * queue;
    total += m.queue_up_veh - downstream;
  }
  return total;
}

inline bool switch_locked(const signal::SignalState& s) {
  return s.in_intergreen || s.elapsed_in_phase_s < s.plan.min_green_s - 1e-12;
}

inline bool must_switch(const signal::SignalState& s) {
  return !s.in_intergreen && s.elapsed_in_phase_s >= s.plan.max_green_s - 1e-12;
}

class Controller {
 public:
  virtual ~Controller() = default;

  // One action per decision interval; the returned phase always respects the
  // min-green contract (identity when locked).
  virtual PhaseId decide(const Observation& obs, Rng& rng) = 0;

  // Ring controllers progress through the plan via tick(); the engine never
  // calls apply_action for them.
  [[nodiscard]] virtual bool uses_ring() const { return false; }

  virtual void set_learning(bool) {}
  [[nodiscard]] virtual std::string save_tables() const { return {}; }
  virtual void load_tables(const std::string&) {}
};

class FixedTimeController : public Controller {
 public:
  PhaseId decide(const Observation& obs, Rng&) override {
    return obs.sig->current_phase;
  }
  [[nodiscard]] bool uses_ring() const override { return true; }
};

// Passive priority: the ring plan itself carries longer greens on the
// priority phases. No detection involved.
inline signal::TimingPlan passive_priority_plan(const signal::TimingPlan& base,
                                                const signal::PhaseModel& model,
                                                double boost = 1.5) {
  signal::TimingPlan plan = base;
  double total = 0.0;
  for (int i = 0; i < signal::kPhaseCount; ++i) {
    if (signal::is_priority_phase(model, PhaseId(i + 1)))
      plan.green_ratio[i] *= boost;
    total += plan.green_ratio[i];
  }
  const double available = base.cycle_s - signal::kPhaseCount * base.intergreen_s;
  for (auto& g : plan.green_ratio) g *= (available / base.cycle_s) / total;
  return plan;
}

class MBPassiveController : public Controller {
 public:
  PhaseId decide(const Observation& obs, Rng&) override {
    return obs.sig->current_phase;
  }
  [[nodiscard]] bool uses_ring() const override { return true; }
};

class MaxPressureController : public Controller {
 public:
  MaxPressureController(bool tsp, double bus_bonus)
      : tsp_(tsp), bus_bonus_(bus_bonus) {}

  PhaseId decide(const Observation& obs, Rng&) override {
    const auto& sig = *obs.sig;
    if (switch_locked(sig)) return sig.current_phase;
    std::array<double, signal::kPhaseCount> score{};
    for (int i = 0; i < signal::kPhaseCount; ++i) {
      score[i] = pressure(obs, PhaseId(i + 1));
      if (tsp_ && obs.bus_present &&
          signal::is_priority_phase(sig.model, PhaseId(i + 1)))
        score[i] += bus_bonus_;
    }
    int best = 0;
    for (int i = 1; i < signal::kPhaseCount; ++i)
      if (score[i] > score[best]) best = i;
    if (must_switch(sig) && best == sig.current_phase.index - 1) {
      int second = -1;
      for (int i = 0; i < signal::kPhaseCount; ++i) {
        if (i == best) continue;
        if (second < 0 || score[i] > score[second]) second = i;
      }
      best = second;
    }
    return PhaseId(best + 1);
  }

 private:
  bool tsp_;
  double bus_bonus_;
};

// Adaptive priority: extends the green while a detected bus is inside the
// extension window, truncates a non-priority phase once min green has
// elapsed when a bus waits, and otherwise runs a gap-out/max-out ring.
class ActuatedController : public Controller {
 public:
  explicit ActuatedController(double extension_window_m = 150.0,
                              double gap_queue_veh = 0.5)
      : window_m_(extension_window_m), gap_queue_(gap_queue_veh) {}

  PhaseId decide(const Observation& obs, Rng&) override {
    const auto& sig = *obs.sig;
    if (switch_locked(sig)) return sig.current_phase;
    const bool serves_bus =
        signal::is_priority_phase(sig.model, sig.current_phase);
    if (obs.bus_present && serves_bus && !must_switch(sig) &&
        obs.bus_distance_m <= window_m_)
      return sig.current_phase;  // green extension
    if (obs.bus_present && !serves_bus)
      return signal::priority_phases(sig.model).front();  // red truncation
    if (sig.elapsed_in_phase_s < sig.plan.green_time(sig.current_phase) &&
        !must_switch(sig))
      return sig.current_phase;
    const double queue = obs.per_phase_queue[sig.current_phase.index - 1];
    if (queue > gap_queue_ && !must_switch(sig))
      return sig.current_phase;  // demand extension
    return signal::next_in_ring(sig.current_phase);
  }

 private:
  double window_m_;
  double gap_queue_;
};

struct CBQLConfig {
  double gamma = 0.9;
  double alpha = -1.0;  // < 0 selects the 1/(1+visits) schedule
  double policy_af = 0.1;
  double proportion_af = 0.1;
  double epsilon = 0.3;
  double epsilon_min = 0.02;
  double epsilon_decay = 0.99985;  // per decision while learning
  double epsilon_eval = 0.0;
  double tilt_weight = 0.5;
  bool shapley_update = true;
  double bus_occupancy = 20.0;  // passengers per bus
  double car_occupancy = 1.5;   // passengers per car
  rl::BucketSpec buckets;
};

// Two learning agents per intersection: a priority-vehicle agent rewarded by
// (negative) occupancy-weighted bus delay and a private-vehicle agent
// rewarded by car delay. Each decision: update both value tables from the
// last interval, improve the shared policy toward the joint argmax, then
// sample the next phase; with a bus detected, the sampling distribution is
// tilted by the Shapley ratios of the current two-player game.
class CBQLController : public Controller {
 public:
  CBQLController(bool tsp, CBQLConfig cfg = {}) : tsp_(tsp), cfg_(cfg) {
    if (!tsp_) {
      cfg_.tilt_weight = 0.0;
      cfg_.shapley_update = false;
    }
    eps_ = cfg_.epsilon;
  }

  PhaseId decide(const Observation& obs, Rng& rng) override {
    const auto [vec, s] = rl::encode_state(
        *obs.sig, std::span<const double>(obs.per_phase_queue), cfg_.buckets);
    (void)vec;
    if (learning_ && have_prev_) learn_from(obs, s);

    const auto& sig = *obs.sig;
    const int current = sig.current_phase.index - 1;
    int action = current;
    if (!switch_locked(sig)) {
      std::vector<double> tilt;
      double weight = 0.0;
      if (tsp_ && obs.bus_present && cfg_.tilt_weight > 0) {
        tilt = priority_tilt(s);
        weight = cfg_.tilt_weight;
      }
      if (must_switch(sig)) {
        action = forced_switch(s, tilt, weight, current, rng);
      } else {
        action = policy_.select_action(s, learning_ ? eps_ : cfg_.epsilon_eval,
                                       rng, tilt, weight);
      }
    }
    prev_state_ = s;
    prev_action_ = action;
    have_prev_ = true;
    return PhaseId(action + 1);
  }

  void set_learning(bool on) override {
    learning_ = on;
    have_prev_ = false;  // do not bridge rewards across a mode change
  }

  [[nodiscard]] std::string save_tables() const override {
    nlohmann::ordered_json j;
    j["priority"] = rl::checkpoint_to_json(q_priority_, policy_);
    j["private"] =
        rl::checkpoint_to_json(q_private_, rl::PolicyTable(kActions));
    j["payoff_priority"] = payoff_priority_.entries;
    j["payoff_private"] = payoff_private_.entries;
    j["payoff_counts"] = payoff_counts_;
    j["epsilon"] = eps_;
    return j.dump(1);
  }

  void load_tables(const std::string& text) override {
    const auto j = nlohmann::json::parse(text);
    rl::PolicyTable scratch(kActions);
    rl::checkpoint_from_json(j.at("priority"), q_priority_, policy_);
    rl::checkpoint_from_json(j.at("private"), q_private_, scratch);
    j.at("payoff_priority").get_to(payoff_priority_.entries);
    j.at("payoff_private").get_to(payoff_private_.entries);
    j.at("payoff_counts").get_to(payoff_counts_);
    eps_ = j.at("epsilon").get<double>();
    have_prev_ = false;
  }

  [[nodiscard]] const rl::QTable& priority_table() const { return q_priority_; }
  [[nodiscard]] const rl::QTable& private_table() const { return q_private_; }
  [[nodiscard]] const rl::PolicyTable& policy() const { return policy_; }
  [[nodiscard]] const rl::TransitionLog& transitions() const { return log_; }
  [[nodiscard]] double epsilon() const { return eps_; }

 private:
  static constexpr int kActions = signal::kPhaseCount;

  std::array<double, kActions> q_row(const rl::QTable& q,
                                     const rl::StateKey& s) const {
    std::array<double, kActions> row{};
    for (int a = 0; a < kActions; ++a) row[a] = q.q(s, a);
    return row;
  }

  game::ShapleyAllocation allocation_at(const rl::StateKey& s) const {
    const auto row_i = q_row(q_priority_, s);
    const auto row_j = q_row(q_private_, s);
    const auto v = game::build_characteristic_fn(row_i, row_j,
                                                 payoff_priority_,
                                                 payoff_private_);
    return game::solve_allocation(v);
  }

  std::vector<double> priority_tilt(const rl::StateKey& s) const {
    const auto alloc = allocation_at(s);
    const auto prio = signal::priority_phases(sigmodel_);
    std::vector<double> tilt(kActions, 0.0);
    const double p_mass = alloc.ratios[0] / prio.size();
    const double np_mass = alloc.ratios[1] / (kActions - prio.size());
    for (int a = 0; a < kActions; ++a) tilt[a] = np_mass;
    for (PhaseId p : prio) tilt[p.index - 1] = p_mass;
    return tilt;
  }

  void learn_from(const Observation& obs, const rl::StateKey& s) {
    const double r_i = -cfg_.bus_occupancy * obs.interval_delay_bus_veh_s;
    const double r_j = -cfg_.car_occupancy * obs.interval_delay_nonbus_veh_s;

    // Both agents experienced the executed joint action.
    const int m = prev_action_;
    auto& c = payoff_counts_[m][m];
    ++c;
    payoff_priority_.entries[m][m] += (r_i - payoff_priority_.entries[m][m]) / c;
    payoff_private_.entries[m][m] += (r_j - payoff_private_.entries[m][m]) / c;

    double target_tail_i = 0.0;
    double target_tail_j = 0.0;
    if (cfg_.shapley_update) {
      const auto alloc = allocation_at(s);
      q_priority_.cbql_update(prev_state_, prev_action_, r_i, alloc.values[0],
                              cfg_.alpha, cfg_.gamma);
      q_private_.cbql_update(prev_state_, prev_action_, r_j, alloc.values[1],
                             cfg_.alpha, cfg_.gamma);
      target_tail_i = alloc.values[0];
      target_tail_j = alloc.values[1];
    } else {
      target_tail_i = q_priority_.max_q(s);
      target_tail_j = q_private_.max_q(s);
      q_priority_.bellman_backup(prev_state_, prev_action_, r_i, s, cfg_.gamma,
                                 cfg_.alpha);
      q_private_.bellman_backup(prev_state_, prev_action_, r_j, s, cfg_.gamma,
                                cfg_.alpha);
    }
    q_priority_.update_max_return(prev_action_, r_i + cfg_.gamma * target_tail_i,
                                  cfg_.proportion_af);
    q_private_.update_max_return(prev_action_, r_j + cfg_.gamma * target_tail_j,
                                 cfg_.proportion_af);

    // Shared policy improves toward the joint best action.
    int best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < kActions; ++a) {
      const double v = q_priority_.q(prev_state_, a) + q_private_.q(prev_state_, a);
      if (v > best_v) {
        best_v = v;
        best = a;
      }
    }
    improve_toward(prev_state_, best);
    log_.record(prev_state_, prev_action_, s, r_i + r_j);
    eps_ = std::max(cfg_.epsilon_min, eps_ * cfg_.epsilon_decay);
  }

  void improve_toward(const rl::StateKey& s, int best) {
    std::vector<double> row = policy_.probs(s);
    for (int a = 0; a < kActions; ++a)
      row[a] += (a == best) ? cfg_.policy_af : -cfg_.policy_af / (kActions - 1);
    double sum = 0;
    for (double& p : row) {
      p = std::max(p, 0.0);
      sum += p;
    }
    for (double& p : row) p /= sum;
    policy_.set_row(s, std::move(row));
  }

  int forced_switch(const rl::StateKey& s, std::span<const double> tilt,
                    double weight, int current, Rng& rng) const {
    std::vector<double> dist = policy_.probs(s);
    if (!tilt.empty())
      for (int a = 0; a < kActions; ++a)
        dist[a] = (1.0 - weight) * dist[a] + weight * tilt[a];
    dist[current] = 0.0;
    double sum = 0;
    for (double p : dist) sum += p;
    if (sum <= 0) {
      for (int a = 0; a < kActions; ++a) dist[a] = (a == current) ? 0.0 : 1.0;
    }
    return rng.sample(dist);
  }

 public:
  // The network builder records the phase model so tilts can target the
  // priority partition.
  void set_phase_model(const signal::PhaseModel& m) { sigmodel_ = m; }

 private:
  bool tsp_;
  CBQLConfig cfg_;
  signal::PhaseModel sigmodel_;
  bool learning_ = true;
  double eps_ = 0.3;

  rl::QTable q_priority_{kActions};
  rl::QTable q_private_{kActions};
  rl::PolicyTable policy_{kActions};
  rl::TransitionLog log_{kActions};
  game::PayoffMatrix payoff_priority_;
  game::PayoffMatrix payoff_private_;
  std::array<std::array<long, kActions>, kActions> payoff_counts_{};

  rl::StateKey prev_state_;
  int prev_action_ = 0;
  bool have_prev_ = false;
};

struct ControllerOptions {
  CBQLConfig cbql;
  double mp_bus_bonus = 150.0;  // 5 x mean saturated queue (q_max * T / 2)
  double asc_extension_window_m = 150.0;
};

inline std::unique_ptr<Controller> make_controller(
    ControllerKind kind, const signal::PhaseModel& model,
    const ControllerOptions& opt = {}) {
  switch (kind) {
    case ControllerKind::FixedTime:
      return std::make_unique<FixedTimeController>();
    case ControllerKind::MBPassiveTSP:
      return std::make_unique<MBPassiveController>();
    case ControllerKind::MaxPressureNoTSP:
      return std::make_unique<MaxPressureController>(false, opt.mp_bus_bonus);
    case ControllerKind::MaxPressureTSP:
      return std::make_unique<MaxPressureController>(true, opt.mp_bus_bonus);
    case ControllerKind::ActuatedTSP:
      return std::make_unique<ActuatedController>(opt.asc_extension_window_m);
    case ControllerKind::CBQLNoTSP: {
      auto c = std::make_unique<CBQLController>(false, opt.cbql);
      c->set_phase_model(model);
      return c;
    }
    case ControllerKind::CBQLTSP: {
      auto c = std::make_unique<CBQLController>(true, opt.cbql);
      c->set_phase_model(model);
      return c;
    }
  }
  throw std::invalid_argument("unknown controller kind");
}

}  // namespace tsplab::ctrl
