#pragma once

#include <string>
#include <vector>

namespace gdpo {

// Retention coefficients of the categorical forward chain, 1-indexed by
// timestep: alpha(t) is the per-step retention, alpha_bar(t) the cumulative
// product. alpha_bar(0) == 1 by convention.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(std::vector<double> alpha, std::vector<double> alpha_bar);

  int T() const { return static_cast<int>(alpha_.size()); }
  double alpha(int t) const;      // t in [1, T]
  double alpha_bar(int t) const;  // t in [0, T]

 private:
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
};

// kinds: "cosine" (default elsewhere), "linear"
NoiseSchedule make_schedule(int T, const std::string& kind);

// Q = alpha * I + (1 - alpha) * 11^T / k; row-stochastic, symmetric, doubly
// stochastic by construction.
struct TransitionMatrix {
  int dim = 0;
  double alpha = 1.0;

  TransitionMatrix(int k, double a) : dim(k), alpha(a) {}
  double at(int i, int j) const {
    return (i == j ? alpha : 0.0) + (1.0 - alpha) / dim;
  }
  std::vector<double> dense() const;  // row-major k*k
};

// q(x_t = j | x_0): closed-form marginal row of x0 * Qbar_t
std::vector<double> q_t_given_0(int x0, int t, const NoiseSchedule& sched,
                                int k);

// q(x_{t-1} = j | x_t, x_0) for t in [2, T]; throws a numeric error if the
// pairing has zero probability under the schedule
std::vector<double> q_posterior(int xt, int x0, int t,
                                const NoiseSchedule& sched, int k);

// Mixture weights over candidate clean categories c for a fixed observed
// transition: w[c] = q(x_{t-1} = prev | x_t = xt, x_0 = c). At t == 1 this is
// the point mass [c == prev], matching the convention that the final reverse
// step samples the clean prediction directly.
std::vector<double> posterior_weights(int xt, int prev, int t,
                                      const NoiseSchedule& sched, int k);

}  // namespace gdpo
