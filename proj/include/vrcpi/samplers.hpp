#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "vrcpi/errors.hpp"
#include "vrcpi/mdp.hpp"
#include "vrcpi/rng.hpp"

namespace vrcpi {

/// Rollout output (s_t, Q_hat): Q_hat is zero except at the exploratory action.
struct QSample {
  std::size_t state;
  std::size_t action;
  double ret;
  Vector q_hat;
  std::size_t episode_len;
};

/// Rollout output (s, s', H_hat): H_hat is A x A, zero except at (a1, a2).
struct HSample {
  std::size_t state_1;
  std::size_t state_2;
  std::size_t action_1;
  std::size_t action_2;
  double ret;
  ScoreMatrix h_hat;
  std::size_t episode_len;
};

struct EpisodeBudget {
  std::uint64_t episodes_used = 0;
  std::uint64_t steps_used = 0;
  std::size_t safety_cap = 0;

  void record(std::size_t steps) {
    ++episodes_used;
    steps_used += steps;
  }
};

/// Per-phase step cap ceil(200 / (1 - gamma)).
inline std::size_t safety_cap(double discount) {
  // the small offset keeps 200/0.1 from rounding up to 2001
  return static_cast<std::size_t>(std::ceil(200.0 / (1.0 - discount) - 1e-9));
}

namespace detail {

inline void check_sampler_inputs(const TabularMdp& mdp, const Policy& pi, const Vector& start) {
  if (pi.num_states() != mdp.num_states() || pi.num_actions() != mdp.num_actions())
    throw InvalidInput("sampler: policy shape does not match the MDP");
  if (static_cast<std::size_t>(start.size()) != mdp.num_states())
    throw InvalidInput("sampler: start distribution size does not match the MDP");
}

inline std::size_t step(const TabularMdp& mdp, std::size_t s, std::size_t a, Rng& rng) {
  return rng.categorical(mdp.next_row(s, a));
}

/// Follows pi from s, stopping with probability 1 - gamma before each move.
inline std::size_t walk(const TabularMdp& mdp, const Policy& pi, std::size_t s, Rng& rng,
                        std::size_t cap, std::size_t& flips) {
  const double stop = 1.0 - mdp.discount();
  for (std::size_t n = 0;; ++n) {
    if (n == cap) throw TruncationError("sampler: phase exceeded its safety cap", flips);
    ++flips;
    if (rng.uniform() < stop) return s;
    s = step(mdp, s, rng.categorical(pi.row(s)), rng);
  }
}

/// Return of a rollout that starts with (s, a) and then follows pi, scaled by
/// 1/(1-gamma) and read at the geometric stopping time.
inline double stopped_return(const TabularMdp& mdp, const Policy& pi, std::size_t s,
                             std::size_t a, Rng& rng, std::size_t cap, std::size_t& flips) {
  const double stop = 1.0 - mdp.discount();
  for (std::size_t n = 0;; ++n) {
    if (n == cap) throw TruncationError("sampler: phase exceeded its safety cap", flips);
    ++flips;
    if (rng.uniform() < stop) return mdp.reward(s, a) / stop;
    s = step(mdp, s, a, rng);
    a = rng.categorical(pi.row(s));
  }
}

}  // namespace detail

/// One Q-sampler episode: s ~ d^pi_start and E[Q_hat | s] = Q^pi(s, .).
inline QSample q_sample(const TabularMdp& mdp, const Policy& pi, const Vector& start, Rng& rng) {
  detail::check_sampler_inputs(mdp, pi, start);
  const std::size_t cap = safety_cap(mdp.discount());
  const std::size_t A = mdp.num_actions();
  std::size_t flips = 0;
  const std::size_t s = detail::walk(mdp, pi, rng.categorical(start), rng, cap, flips);
  const std::size_t a = rng.uniform_index(A);
  const double ret = detail::stopped_return(mdp, pi, s, a, rng, cap, flips);
  Vector q = Vector::Zero(static_cast<Eigen::Index>(A));
  q(static_cast<Eigen::Index>(a)) = static_cast<double>(A) * ret;
  return {s, a, ret, std::move(q), flips};
}

/// One H-sampler episode: s ~ d^pi_start and E[H_hat pi'(s') | s] = F^pi(s, . | pi').
inline HSample h_sample(const TabularMdp& mdp, const Policy& pi, const Vector& start, Rng& rng) {
  detail::check_sampler_inputs(mdp, pi, start);
  const std::size_t cap = safety_cap(mdp.discount());
  const std::size_t A = mdp.num_actions();
  std::size_t flips = 0;
  const std::size_t s1 = detail::walk(mdp, pi, rng.categorical(start), rng, cap, flips);
  const std::size_t a1 = rng.uniform_index(A);
  const std::size_t s2 = detail::walk(mdp, pi, detail::step(mdp, s1, a1, rng), rng, cap, flips);
  const std::size_t a2 = rng.uniform_index(A);
  const double ret = detail::stopped_return(mdp, pi, s2, a2, rng, cap, flips);
  ScoreMatrix h = ScoreMatrix::Zero(static_cast<Eigen::Index>(A), static_cast<Eigen::Index>(A));
  h(static_cast<Eigen::Index>(a1), static_cast<Eigen::Index>(a2)) =
      static_cast<double>(A) * static_cast<double>(A) * ret;
  return {s1, s2, a1, a2, ret, std::move(h), flips};
}

/// Hard support bounds that hold for every sample.
inline void check_sample_bounds(const QSample& q, std::size_t A, double discount) {
  const double bound = static_cast<double>(A) / (1.0 - discount);
  if (!(q.q_hat.cwiseAbs().sum() <= bound * (1.0 + 1e-12)))
    throw InvariantViolation("Q-sample l1 norm above A/(1-gamma)");
}

inline void check_sample_bounds(const HSample& h, std::size_t A, double discount) {
  const double a = static_cast<double>(A);
  const double bound = a * a / (1.0 - discount);
  if (!(h.h_hat.cwiseAbs().sum() <= bound * (1.0 + 1e-12)))
    throw InvariantViolation("H-sample entry sum above A^2/(1-gamma)");
}

struct EpisodeLengths {
  double mean_q;
  double mean_h;
};

/// Empirical mean episode lengths of both samplers over n runs each, started from mu.
inline EpisodeLengths expected_lengths_check(const TabularMdp& mdp, const Policy& pi,
                                             std::size_t n, Rng& rng) {
  if (n < 1) throw InvalidInput("expected_lengths_check: need n >= 1");
  double q_total = 0.0;
  double h_total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    q_total += static_cast<double>(q_sample(mdp, pi, mdp.mu(), rng).episode_len);
    h_total += static_cast<double>(h_sample(mdp, pi, mdp.mu(), rng).episode_len);
  }
  return {q_total / static_cast<double>(n), h_total / static_cast<double>(n)};
}

}  // namespace vrcpi
