#pragma once

// Cooperative game engine: characteristic functions over agent coalitions,
// marginal contributions, exact Shapley values, and the ratio transform that
// turns an allocation into a probability weighting.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsplab::game {

inline constexpr int kActionCount = 8;

// Exact enumeration over 2^n coalitions; beyond this the table itself is the
// bottleneck, not the solver.
inline constexpr int kMaxExactAgents = 12;

// Bitmask over agent slots 0..n-1.
using Coalition = std::uint32_t;

struct AgentNotInCoalition : std::invalid_argument {
  explicit AgentNotInCoalition(int agent)
      : std::invalid_argument("agent slot " + std::to_string(agent) +
                              " is not a member of the coalition") {}
};

struct SizeOutOfRange : std::invalid_argument {
  SizeOutOfRange(int size, int n_agents)
      : std::invalid_argument("coalition size " + std::to_string(size) +
                              " outside [0, " + std::to_string(n_agents - 1) +
                              "]") {}
};

enum class AgentRole { PriorityVehicle, PrivateVehicle };

struct AgentSet {
  std::vector<int> ids;
  std::vector<AgentRole> roles;  // parallel to ids

  [[nodiscard]] int size() const { return static_cast<int>(ids.size()); }

  void validate() const {
    if (ids.size() < 2) throw std::invalid_argument("agent set needs n >= 2");
    if (roles.size() != ids.size())
      throw std::invalid_argument("roles must parallel ids");
    auto sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw std::invalid_argument("agent ids must be unique");
  }
};

// v : 2^I -> R with v(empty) = 0, total over all subsets (unset entries are 0).
class CharacteristicFunction {
 public:
  explicit CharacteristicFunction(int n_agents) : n_(n_agents) {
    if (n_agents < 1 || n_agents > kMaxExactAgents)
      throw std::invalid_argument("agent count outside [1, " +
                                  std::to_string(kMaxExactAgents) + "]");
    values_.assign(std::size_t{1} << n_, 0.0);
  }

  [[nodiscard]] int agents() const { return n_; }
  [[nodiscard]] Coalition grand() const {
    return static_cast<Coalition>((std::uint64_t{1} << n_) - 1);
  }

  [[nodiscard]] double value(Coalition s) const {
    check(s);
    return values_[s];
  }

  void set_value(Coalition s, double v) {
    check(s);
    if (s == 0 && v != 0.0)
      throw std::invalid_argument("v(empty) must be 0");
    values_[s] = v;
  }

 private:
  void check(Coalition s) const {
    if (s > grand()) throw std::invalid_argument("coalition outside 2^n");
  }

  int n_;
  std::vector<double> values_;
};

// v(S) - v(S \ {agent}); the agent must be a member of S.
inline double marginal_contribution(const CharacteristicFunction& v,
                                    Coalition s, int agent) {
  const Coalition bit = Coalition{1} << agent;
  if (agent < 0 || agent >= v.agents() || !(s & bit))
    throw AgentNotInCoalition(agent);
  return v.value(s) - v.value(s & ~bit);
}

// |S|! (n - |S| - 1)! / n! for a coalition S that excludes the agent.
inline double shapley_weight(int coalition_size, int n_agents) {
  if (coalition_size < 0 || coalition_size > n_agents - 1)
    throw SizeOutOfRange(coalition_size, n_agents);
  double w = 1.0;
  // |S|!/n! times (n-|S|-1)!, evaluated without large factorials.
  for (int k = coalition_size + 1; k <= n_agents; ++k) w /= k;
  for (int k = 2; k <= n_agents - coalition_size - 1; ++k) w *= k;
  return w;
}

// Sum over coalitions S not containing the agent of
// weight(|S|) * (v(S + agent) - v(S)).
inline double shapley_value(const CharacteristicFunction& v, int agent) {
  if (agent < 0 || agent >= v.agents())
    throw std::invalid_argument("agent slot out of range");
  const Coalition bit = Coalition{1} << agent;
  const Coalition grand = v.grand();
  double phi = 0.0;
  for (Coalition s = 0; s <= grand; ++s) {
    if (s & bit) continue;
    const double w = shapley_weight(std::popcount(s), v.agents());
    phi += w * (v.value(s | bit) - v.value(s));
  }
  return phi;
}

// Allocation-to-probability transform. Non-negative allocations normalize
// directly; any negative entry shifts the whole vector by -min + epsilon
// first. An all-equal (degenerate) allocation falls back to uniform.
inline std::vector<double> shapley_ratios(const std::vector<double>& values,
                                          double epsilon = 1e-6) {
  const std::size_t n = values.size();
  if (n == 0) throw std::invalid_argument("empty allocation");
  const double min_v = *std::min_element(values.begin(), values.end());
  std::vector<double> shifted(n);
  for (std::size_t i = 0; i < n; ++i)
    shifted[i] = (min_v < 0.0) ? values[i] - min_v + epsilon : values[i];
  const double sum = std::accumulate(shifted.begin(), shifted.end(), 0.0);
  if (!(sum > 0.0)) return std::vector<double>(n, 1.0 / static_cast<double>(n));
  for (double& x : shifted) x /= sum;
  return shifted;
}

struct ShapleyAllocation {
  std::vector<double> values;  // phi per agent slot
  std::vector<double> ratios;  // probability weighting of the values
};

inline ShapleyAllocation solve_allocation(const CharacteristicFunction& v) {
  ShapleyAllocation out;
  out.values.resize(v.agents());
  for (int i = 0; i < v.agents(); ++i) out.values[i] = shapley_value(v, i);
  out.ratios = shapley_ratios(out.values);
  return out;
}

// Expected payoff of an agent: the sum of v over subsets of the grand
// coalition. The restricted variant keeps only coalitions containing the
// agent.
inline double expected_payoff(const CharacteristicFunction& v, int agent,
                              bool only_coalitions_with_agent = false) {
  if (agent < 0 || agent >= v.agents())
    throw std::invalid_argument("agent slot out of range");
  const Coalition bit = Coalition{1} << agent;
  double total = 0.0;
  for (Coalition s = 0; s <= v.grand(); ++s) {
    if (only_coalitions_with_agent && !(s & bit)) continue;
    total += v.value(s);
  }
  return total;
}

// Joint payoff table over the eight signal actions. entries[m][n] is the
// owner's payoff when the priority agent plays m and the private agent
// plays n.
struct PayoffMatrix {
  std::array<std::array<double, kActionCount>, kActionCount> entries{};
  int owner = 0;
};

// Two-player coalition game over the eight actions. Slot 0 is the priority
// agent with value row q_i, slot 1 the private agent with q_j; both rows are
// combined with the joint payoff tables. Singletons receive their maximin
// security level, the grand coalition the best joint sum.
inline CharacteristicFunction build_characteristic_fn(
    std::span<const double> q_i, std::span<const double> q_j,
    const PayoffMatrix& r_i = {}, const PayoffMatrix& r_j = {}) {
  if (q_i.size() != kActionCount || q_j.size() != kActionCount)
    throw std::invalid_argument("value rows must cover all 8 actions");

  double v_i = -std::numeric_limits<double>::infinity();
  double v_j = -std::numeric_limits<double>::infinity();
  double v_ij = -std::numeric_limits<double>::infinity();
  for (int m = 0; m < kActionCount; ++m) {
    double row_min = std::numeric_limits<double>::infinity();
    for (int n = 0; n < kActionCount; ++n)
      row_min = std::min(row_min, q_i[m] + r_i.entries[m][n]);
    v_i = std::max(v_i, row_min);
  }
  for (int n = 0; n < kActionCount; ++n) {
    double col_min = std::numeric_limits<double>::infinity();
    for (int m = 0; m < kActionCount; ++m)
      col_min = std::min(col_min, q_j[n] + r_j.entries[m][n]);
    v_j = std::max(v_j, col_min);
  }
  for (int m = 0; m < kActionCount; ++m)
    for (int n = 0; n < kActionCount; ++n)
      v_ij = std::max(v_ij, q_i[m] + q_j[n] + r_i.entries[m][n] +
                                r_j.entries[m][n]);

  CharacteristicFunction v(2);
  v.set_value(0b01, v_i);
  v.set_value(0b10, v_j);
  v.set_value(0b11, v_ij);
  return v;
}

}  // namespace tsplab::game
