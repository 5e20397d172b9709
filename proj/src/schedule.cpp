#include "schedule.hpp"

#include <cmath>

#include "error.hpp"

namespace gdpo {

NoiseSchedule::NoiseSchedule(std::vector<double> alpha,
                             std::vector<double> alpha_bar)
    : alpha_(std::move(alpha)), alpha_bar_(std::move(alpha_bar)) {
  if (alpha_.size() != alpha_bar_.size())
    throw_invalid("schedule vectors must have equal length");
}

double NoiseSchedule::alpha(int t) const {
  if (t < 1 || t > T()) throw_invalid("schedule step out of range");
  return alpha_[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  if (t < 1 || t > T()) throw_invalid("schedule step out of range");
  return alpha_bar_[static_cast<size_t>(t - 1)];
}

NoiseSchedule make_schedule(int T, const std::string& kind) {
  if (T < 1) throw_invalid("schedule needs T >= 1");
  std::vector<double> alpha(static_cast<size_t>(T));
  std::vector<double> alpha_bar(static_cast<size_t>(T));
  if (kind == "cosine") {
    constexpr double s = 0.008;
    constexpr double half_pi = 1.5707963267948966;
    auto f = [&](int t) {
      const double u = (static_cast<double>(t) / T + s) / (1.0 + s) * half_pi;
      const double c = std::cos(u);
      return c * c;
    };
    // normalized by f(0) so alpha_bar(0) == 1 and the per-step alphas are
    // monotone nonincreasing from the very first step
    const double f0 = f(0);
    double prev = 1.0;
    for (int t = 1; t <= T; ++t) {
      double ab = std::min(1.0, std::max(0.0, f(t) / f0));
      alpha_bar[static_cast<size_t>(t - 1)] = ab;
      alpha[static_cast<size_t>(t - 1)] = (t == 1) ? ab : ab / prev;
      prev = ab;
    }
  } else if (kind == "linear") {
    double ab = 1.0;
    for (int t = 1; t <= T; ++t) {
      const double a = 1.0 - static_cast<double>(t) / T;
      ab *= a;
      alpha[static_cast<size_t>(t - 1)] = a;
      alpha_bar[static_cast<size_t>(t - 1)] = ab;
    }
  } else {
    throw_config("unknown schedule kind '" + kind +
                 "' (expected cosine or linear)");
  }
  return NoiseSchedule(std::move(alpha), std::move(alpha_bar));
}

std::vector<double> TransitionMatrix::dense() const {
  std::vector<double> m(static_cast<size_t>(dim) * dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j)
      m[static_cast<size_t>(i) * dim + j] = at(i, j);
  return m;
}

std::vector<double> q_t_given_0(int x0, int t, const NoiseSchedule& sched,
                                int k) {
  if (t < 1 || t > sched.T()) throw_invalid("q_t_given_0: t out of range");
  if (x0 < 0 || x0 >= k) throw_invalid("q_t_given_0: category out of range");
  const double ab = sched.alpha_bar(t);
  std::vector<double> p(static_cast<size_t>(k), (1.0 - ab) / k);
  p[static_cast<size_t>(x0)] += ab;
  return p;
}

std::vector<double> q_posterior(int xt, int x0, int t,
                                const NoiseSchedule& sched, int k) {
  if (t < 2 || t > sched.T()) throw_invalid("q_posterior: t out of range");
  if (xt < 0 || xt >= k || x0 < 0 || x0 >= k)
    throw_invalid("q_posterior: category out of range");
  const double a_t = sched.alpha(t);
  const double ab_prev = sched.alpha_bar(t - 1);
  const double ab_t = sched.alpha_bar(t);
  const double denom = (xt == x0 ? ab_t : 0.0) + (1.0 - ab_t) / k;
  if (denom <= 0.0)
    throw_numeric("q_posterior: zero-probability (x_t, x_0) pairing at t=" +
                  std::to_string(t));
  std::vector<double> p(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) {
    const double step = (j == xt ? a_t : 0.0) + (1.0 - a_t) / k;
    const double marg = (j == x0 ? ab_prev : 0.0) + (1.0 - ab_prev) / k;
    p[static_cast<size_t>(j)] = step * marg / denom;
  }
  return p;
}

std::vector<double> posterior_weights(int xt, int prev, int t,
                                      const NoiseSchedule& sched, int k) {
  std::vector<double> w(static_cast<size_t>(k), 0.0);
  if (t == 1) {
    w[static_cast<size_t>(prev)] = 1.0;
    return w;
  }
  for (int c = 0; c < k; ++c)
    w[static_cast<size_t>(c)] = q_posterior(xt, c, t, sched, k)[
        static_cast<size_t>(prev)];
  return w;
}

}  // namespace gdpo
