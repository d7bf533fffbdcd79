#pragma once

#include <cmath>
#include <stdexcept>

#include "deskagent/rng.hpp"

namespace deskagent::bench {

struct Reliability {
  double analytic = 0.0;
  double monte_carlo = 0.0;
};

// Probability that k independent checks, each passing with p, all pass: p^k exactly,
// and the fraction of `trials` simulated chains in which every check passed.
inline Reliability compound_reliability(double p, std::size_t k, std::size_t trials, std::uint64_t seed = 0) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("p must lie in [0,1]");
  Reliability r;
  r.analytic = std::pow(p, static_cast<double>(k));
  if (trials == 0) return r;
  Rng rng(seed);
  std::size_t ok = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    bool all = true;
    for (std::size_t i = 0; i < k; ++i) all = rng.bernoulli(p) && all;
    ok += all;
  }
  r.monte_carlo = static_cast<double>(ok) / static_cast<double>(trials);
  return r;
}

}  // namespace deskagent::bench
