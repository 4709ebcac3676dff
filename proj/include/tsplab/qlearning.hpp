#pragma once

// Tabular MDP machinery: state encoding and bucketing, empirical transition
// and reward logs, sampled Bellman backups, max-return tracking, policy
// improvement, the Shapley-weighted value update, and checkpointing.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsplab/phases.hpp"
#include "tsplab/rng.hpp"

namespace tsplab::rl {

inline constexpr int kDefaultActions = 8;

struct UnvisitedPair : std::runtime_error {
  UnvisitedPair(const std::string& key, int action)
      : std::runtime_error("no transitions recorded for state " + key +
                           ", action " + std::to_string(action)) {}
};

// Signal snapshot ordered (phase, green ratio, cycle, per-phase flows).
struct StateVector {
  int phase = 1;
  double green_ratio = 0.0;
  double cycle_s = 0.0;
  std::array<double, kDefaultActions> phase_flows{};
};

struct BucketSpec {
  double flow_bucket_veh = 5.0;
  int flow_bucket_cap = 10;
  double lambda_bucket = 0.1;
  double cycle_bucket_s = 20.0;
};

struct StateKey {
  std::uint8_t phase = 1;
  std::uint8_t lambda_bucket = 0;
  std::uint8_t cycle_bucket = 0;
  std::array<std::uint8_t, kDefaultActions> flow_buckets{};

  auto operator<=>(const StateKey&) const = default;
};

inline std::string key_to_string(const StateKey& k) {
  std::ostringstream os;
  os << int(k.phase) << '|' << int(k.lambda_bucket) << '|'
     << int(k.cycle_bucket) << '|';
  for (int i = 0; i < kDefaultActions; ++i) {
    if (i) os << '.';
    os << int(k.flow_buckets[i]);
  }
  return os.str();
}

inline std::string key_to_string(int k) { return std::to_string(k); }

inline void key_from_string(const std::string& text, StateKey& out) {
  std::istringstream is(text);
  int phase = 0, lambda = 0, cycle = 0;
  char sep = 0;
  if (!(is >> phase >> sep >> lambda >> sep >> cycle >> sep))
    throw std::invalid_argument("malformed state key: " + text);
  out.phase = static_cast<std::uint8_t>(phase);
  out.lambda_bucket = static_cast<std::uint8_t>(lambda);
  out.cycle_bucket = static_cast<std::uint8_t>(cycle);
  for (int i = 0; i < kDefaultActions; ++i) {
    int f = 0;
    if (i && !(is >> sep)) throw std::invalid_argument("malformed state key");
    if (!(is >> f)) throw std::invalid_argument("malformed state key");
    out.flow_buckets[i] = static_cast<std::uint8_t>(f);
  }
}

inline void key_from_string(const std::string& text, int& out) {
  out = std::stoi(text);
}

inline StateKey bucketize(const StateVector& v, const BucketSpec& spec = {}) {
  StateKey key;
  key.phase = static_cast<std::uint8_t>(v.phase);
  key.lambda_bucket = static_cast<std::uint8_t>(
      std::min(255.0, std::floor(v.green_ratio / spec.lambda_bucket)));
  key.cycle_bucket = static_cast<std::uint8_t>(
      std::min(255.0, std::floor(v.cycle_s / spec.cycle_bucket_s)));
  for (int i = 0; i < kDefaultActions; ++i) {
    const int b = static_cast<int>(v.phase_flows[i] / spec.flow_bucket_veh);
    key.flow_buckets[i] = static_cast<std::uint8_t>(
        std::clamp(b, 0, spec.flow_bucket_cap - 1));
  }
  return key;
}

inline std::pair<StateVector, StateKey> encode_state(
    const signal::SignalState& sig, std::span<const double> per_phase_flows,
    const BucketSpec& spec = {}) {
  if (per_phase_flows.size() != kDefaultActions)
    throw std::invalid_argument("expected one flow entry per phase");
  StateVector v;
  v.phase = sig.current_phase.index;
  v.green_ratio = sig.plan.green_ratio[sig.current_phase.index - 1];
  v.cycle_s = sig.plan.cycle_s;
  for (int i = 0; i < kDefaultActions; ++i) v.phase_flows[i] = per_phase_flows[i];
  return {v, bucketize(v, spec)};
}

// Sum of gamma^k * rewards[k].
inline double discounted_return(std::span<const double> rewards, double gamma) {
  if (gamma < 0 || gamma > 1) throw std::invalid_argument("gamma in [0,1]");
  double g = 0.0;
  double w = 1.0;
  for (double r : rewards) {
    g += w * r;
    w *= gamma;
  }
  return g;
}

// Action-value table with visit counts, plus per-action trackers for the
// best return seen and the running estimate of how often an action's return
// hits that maximum.
template <typename Key>
class BasicQTable {
 public:
  struct Row {
    std::vector<double> q;
    std::vector<int> visits;
  };

  explicit BasicQTable(int n_actions = kDefaultActions)
      : n_(n_actions),
        max_return_(n_actions, 0.0),
        max_seen_(n_actions, false),
        proportion_(n_actions, 0.0) {
    if (n_actions < 1) throw std::invalid_argument("need >= 1 action");
  }

  [[nodiscard]] int actions() const { return n_; }

  [[nodiscard]] double q(const Key& s, int a) const {
    check_action(a);
    auto it = rows_.find(s);
    return it == rows_.end() ? 0.0 : it->second.q[a];
  }

  [[nodiscard]] int visits(const Key& s, int a) const {
    check_action(a);
    auto it = rows_.find(s);
    return it == rows_.end() ? 0 : it->second.visits[a];
  }

  [[nodiscard]] double max_q(const Key& s) const {
    auto it = rows_.find(s);
    if (it == rows_.end()) return 0.0;
    return *std::max_element(it->second.q.begin(), it->second.q.end());
  }

  // Lowest index wins ties.
  [[nodiscard]] int argmax(const Key& s) const {
    auto it = rows_.find(s);
    if (it == rows_.end()) return 0;
    int best = 0;
    for (int a = 1; a < n_; ++a)
      if (it->second.q[a] > it->second.q[best]) best = a;
    return best;
  }

  // Sampled one-step backup: Q <- (1-a) Q + a (r + gamma max_a' Q(s', a')).
  // alpha < 0 selects the 1/(1 + visits) schedule. A missing next state is
  // terminal.
  void bellman_backup(const Key& s, int a, double reward,
                      const std::optional<Key>& next, double gamma,
                      double alpha = -1.0) {
    if (gamma < 0 || gamma >= 1) throw std::invalid_argument("gamma in [0,1)");
    const double target =
        reward + (next.has_value() ? gamma * max_q(*next) : 0.0);
    blend(s, a, target, alpha);
  }

  // Shapley-weighted update: Q <- (1-a) Q + a (r + gamma * phi).
  void cbql_update(const Key& s, int a, double reward, double shapley_value,
                   double alpha, double gamma) {
    if (!std::isfinite(shapley_value))
      throw std::invalid_argument("shapley value must be finite");
    if (gamma < 0 || gamma > 1) throw std::invalid_argument("gamma in [0,1]");
    blend(s, a, reward + gamma * shapley_value, alpha);
  }

  // Tracks the best return seen per action and the proportion estimate: a
  // new maximum resets the proportion to 1, anything else decays it toward 1
  // at rate a_f.
  void update_max_return(int a, double observed_return, double a_f) {
    check_action(a);
    if (a_f <= 0 || a_f >= 1) throw std::invalid_argument("a_f in (0,1)");
    if (!max_seen_[a] || observed_return > max_return_[a]) {
      proportion_[a] = 1.0;
    } else {
      proportion_[a] = (1.0 - a_f) * proportion_[a] + a_f;
    }
    max_return_[a] =
        max_seen_[a] ? std::max(max_return_[a], observed_return) : observed_return;
    max_seen_[a] = true;
  }

  [[nodiscard]] bool max_return_known(int a) const {
    check_action(a);
    return max_seen_[a];
  }

  [[nodiscard]] double max_return_seen(int a) const {
    check_action(a);
    if (!max_seen_[a]) throw std::logic_error("no return recorded for action");
    return max_return_[a];
  }

  [[nodiscard]] double proportion_estimate(int a) const {
    check_action(a);
    return proportion_[a];
  }

  void set_tracker(int a, bool seen, double max_return, double proportion) {
    check_action(a);
    max_seen_[a] = seen;
    max_return_[a] = max_return;
    proportion_[a] = proportion;
  }

  [[nodiscard]] const std::map<Key, Row>& rows() const { return rows_; }

  Row& row(const Key& s) {
    auto it = rows_.find(s);
    if (it == rows_.end())
      it = rows_.emplace(s, Row{std::vector<double>(n_, 0.0),
                                std::vector<int>(n_, 0)})
               .first;
    return it->second;
  }

  bool operator==(const BasicQTable& other) const {
    return n_ == other.n_ && max_return_ == other.max_return_ &&
           max_seen_ == other.max_seen_ && proportion_ == other.proportion_ &&
           rows_equal(other);
  }

 private:
  bool rows_equal(const BasicQTable& other) const {
    if (rows_.size() != other.rows_.size()) return false;
    auto a = rows_.begin();
    auto b = other.rows_.begin();
    for (; a != rows_.end(); ++a, ++b)
      if (a->first != b->first || a->second.q != b->second.q ||
          a->second.visits != b->second.visits)
        return false;
    return true;
  }

  void check_action(int a) const {
    if (a < 0 || a >= n_) throw std::invalid_argument("action out of range");
  }

  void blend(const Key& s, int a, double target, double alpha) {
    check_action(a);
    Row& r = row(s);
    const double a_t =
        alpha < 0 ? 1.0 / (1.0 + r.visits[a]) : alpha;
    if (a_t <= 0 || a_t > 1) throw std::invalid_argument("alpha in (0,1]");
    r.q[a] = (1.0 - a_t) * r.q[a] + a_t * target;
    ++r.visits[a];
  }

  int n_;
  std::map<Key, Row> rows_;
  std::vector<double> max_return_;
  std::vector<bool> max_seen_;
  std::vector<double> proportion_;
};

// Per-state action distributions; unseen states are uniform.
template <typename Key>
class BasicPolicyTable {
 public:
  explicit BasicPolicyTable(int n_actions = kDefaultActions) : n_(n_actions) {
    if (n_actions < 1) throw std::invalid_argument("need >= 1 action");
  }

  [[nodiscard]] int actions() const { return n_; }

  [[nodiscard]] std::vector<double> probs(const Key& s) const {
    auto it = rows_.find(s);
    if (it != rows_.end()) return it->second;
    return std::vector<double>(n_, 1.0 / n_);
  }

  void set_row(const Key& s, std::vector<double> row) {
    if (static_cast<int>(row.size()) != n_)
      throw std::invalid_argument("row size mismatch");
    rows_[s] = std::move(row);
  }

  // Shifts probability toward the table's best action: +a_f on the argmax,
  // -a_f/(n-1) elsewhere, clamped at zero and renormalized.
  void improve(const Key& s, const BasicQTable<Key>& q, double a_f) {
    if (a_f <= 0 || a_f >= 1) throw std::invalid_argument("a_f in (0,1)");
    if (q.actions() != n_) throw std::invalid_argument("action count mismatch");
    std::vector<double> row = probs(s);
    const int best = q.argmax(s);
    for (int a = 0; a < n_; ++a)
      row[a] += (a == best) ? a_f : -a_f / (n_ - 1);
    double sum = 0;
    for (double& p : row) {
      p = std::max(p, 0.0);
      sum += p;
    }
    for (double& p : row) p /= sum;
    rows_[s] = std::move(row);
  }

  // Samples from (1-eps) * blend + eps * uniform, where blend mixes the
  // policy row with an optional tilt distribution.
  [[nodiscard]] int select_action(const Key& s, double epsilon, Rng& rng,
                                  std::span<const double> tilt = {},
                                  double tilt_weight = 0.5) const {
    if (epsilon < 0 || epsilon > 1)
      throw std::invalid_argument("epsilon in [0,1]");
    std::vector<double> dist = probs(s);
    if (!tilt.empty()) {
      if (static_cast<int>(tilt.size()) != n_)
        throw std::invalid_argument("tilt size mismatch");
      for (int a = 0; a < n_; ++a)
        dist[a] = (1.0 - tilt_weight) * dist[a] + tilt_weight * tilt[a];
    }
    for (int a = 0; a < n_; ++a)
      dist[a] = (1.0 - epsilon) * dist[a] + epsilon / n_;
    return rng.sample(dist);
  }

  [[nodiscard]] const std::map<Key, std::vector<double>>& rows() const {
    return rows_;
  }

  bool operator==(const BasicPolicyTable& other) const {
    return n_ == other.n_ && rows_ == other.rows_;
  }

 private:
  int n_;
  std::map<Key, std::vector<double>> rows_;
};

// Empirical transition counts and reward sums keyed by (state, action).
template <typename Key>
class BasicTransitionLog {
 public:
  explicit BasicTransitionLog(int n_actions = kDefaultActions) : n_(n_actions) {}

  void record(const Key& s, int a, const Key& next, double reward) {
    if (a < 0 || a >= n_) throw std::invalid_argument("action out of range");
    auto& stats = stats_[{s, a}];
    ++stats.next_counts[next];
    stats.reward_sum += reward;
    ++stats.count;
  }

  // P(s' | s, a) as observed frequencies; rows sum to 1.
  [[nodiscard]] std::vector<std::pair<Key, double>> empirical_transition(
      const Key& s, int a) const {
    const auto* stats = find(s, a);
    std::vector<std::pair<Key, double>> out;
    out.reserve(stats->next_counts.size());
    for (const auto& [next, count] : stats->next_counts)
      out.emplace_back(next, static_cast<double>(count) / stats->count);
    return out;
  }

  [[nodiscard]] double empirical_reward(const Key& s, int a) const {
    const auto* stats = find(s, a);
    return stats->reward_sum / static_cast<double>(stats->count);
  }

  [[nodiscard]] long observations(const Key& s, int a) const {
    auto it = stats_.find({s, a});
    return it == stats_.end() ? 0 : it->second.count;
  }

 private:
  struct PairStats {
    std::map<Key, long> next_counts;
    double reward_sum = 0.0;
    long count = 0;
  };

  const PairStats* find(const Key& s, int a) const {
    auto it = stats_.find({s, a});
    if (it == stats_.end() || it->second.count == 0)
      throw UnvisitedPair(key_to_string(s), a);
    return &it->second;
  }

  int n_;
  std::map<std::pair<Key, int>, PairStats> stats_;
};

using QTable = BasicQTable<StateKey>;
using PolicyTable = BasicPolicyTable<StateKey>;
using TransitionLog = BasicTransitionLog<StateKey>;

// --- checkpointing ---------------------------------------------------------
//
// Structured text with sorted keys; doubles round-trip bit-exactly through
// the JSON shortest-representation encoding.

template <typename Key>
nlohmann::ordered_json checkpoint_to_json(const BasicQTable<Key>& q,
                                          const BasicPolicyTable<Key>& policy) {
  nlohmann::ordered_json j;
  j["actions"] = q.actions();
  auto& qrows = j["q"] = nlohmann::ordered_json::object();
  for (const auto& [key, row] : q.rows()) {
    nlohmann::ordered_json entry;
    entry["q"] = row.q;
    entry["visits"] = row.visits;
    qrows[key_to_string(key)] = std::move(entry);
  }
  auto& trackers = j["trackers"] = nlohmann::ordered_json::array();
  for (int a = 0; a < q.actions(); ++a) {
    nlohmann::ordered_json t;
    t["seen"] = q.max_return_known(a);
    t["max_return"] = q.max_return_known(a) ? q.max_return_seen(a) : 0.0;
    t["proportion"] = q.proportion_estimate(a);
    trackers.push_back(std::move(t));
  }
  auto& prows = j["policy"] = nlohmann::ordered_json::object();
  for (const auto& [key, row] : policy.rows())
    prows[key_to_string(key)] = row;
  return j;
}

template <typename Key>
void checkpoint_from_json(const nlohmann::json& j, BasicQTable<Key>& q,
                          BasicPolicyTable<Key>& policy) {
  const int actions = j.at("actions").get<int>();
  q = BasicQTable<Key>(actions);
  policy = BasicPolicyTable<Key>(actions);
  for (const auto& [text, entry] : j.at("q").items()) {
    Key key{};
    key_from_string(text, key);
    auto& row = q.row(key);
    row.q = entry.at("q").template get<std::vector<double>>();
    row.visits = entry.at("visits").template get<std::vector<int>>();
    if (static_cast<int>(row.q.size()) != actions ||
        static_cast<int>(row.visits.size()) != actions)
      throw std::invalid_argument("checkpoint row size mismatch");
  }
  const auto& trackers = j.at("trackers");
  for (int a = 0; a < actions; ++a) {
    const auto& t = trackers.at(a);
    q.set_tracker(a, t.at("seen").get<bool>(),
                  t.at("max_return").get<double>(),
                  t.at("proportion").get<double>());
  }
  for (const auto& [text, row] : j.at("policy").items()) {
    Key key{};
    key_from_string(text, key);
    policy.set_row(key, row.template get<std::vector<double>>());
  }
}

template <typename Key>
std::string save_checkpoint(const BasicQTable<Key>& q,
                            const BasicPolicyTable<Key>& policy) {
  return checkpoint_to_json(q, policy).dump(1);
}

template <typename Key>
void load_checkpoint(const std::string& text, BasicQTable<Key>& q,
                     BasicPolicyTable<Key>& policy) {
  checkpoint_from_json(nlohmann::json::parse(text), q, policy);
}

}  // namespace tsplab::rl
