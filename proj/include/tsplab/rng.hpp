#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace tsplab {

// Seeded generator with hand-rolled draws so that sequences do not depend on
// the standard library's distribution implementations.
struct Rng {
  std::mt19937_64 gen;

  explicit Rng(std::uint64_t seed = 0) : gen(seed) {}

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("uniform_int needs n > 0");
    const int k = static_cast<int>(uniform() * n);
    return k < n ? k : n - 1;
  }

  // Knuth's product method; fine for the small per-step means used here.
  int poisson(double mean) {
    if (mean < 0) throw std::invalid_argument("poisson needs mean >= 0");
    if (mean == 0) return 0;
    const double limit = std::exp(-mean);
    int k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

  // Categorical draw by CDF walk; weights need not be normalized.
  int sample(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0)) throw std::invalid_argument("sample needs positive mass");
    double u = uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }
};

}  // namespace tsplab
