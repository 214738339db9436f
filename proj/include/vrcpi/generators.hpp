#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "vrcpi/errors.hpp"
#include "vrcpi/mdp.hpp"
#include "vrcpi/rng.hpp"

namespace vrcpi {

/// Policy with independent Dirichlet(1) rows.
inline Policy random_policy(std::size_t S, std::size_t A, Rng& rng) {
  ScoreMatrix m(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(A));
  for (std::size_t s = 0; s < S; ++s) {
    const auto w = dirichlet_uniform(rng, A);
    for (std::size_t a = 0; a < A; ++a) m(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) = w[a];
    m.row(static_cast<Eigen::Index>(s)) /= m.row(static_cast<Eigen::Index>(s)).sum();
  }
  return Policy(std::move(m));
}

/**
 * Random MDP: every (s, a) row is supported on max(1, round(sparsity * S))
 * distinct next states with Dirichlet(1) weights; rewards are U[0, 1];
 * rho and mu are uniform.
 */
inline TabularMdp gen_random_mdp(std::size_t S, std::size_t A, double gamma, double sparsity,
                                 std::uint64_t seed) {
  if (S < 1 || A < 1) throw InvalidInput("gen_random_mdp: need S, A >= 1");
  if (!(sparsity > 0.0 && sparsity <= 1.0)) throw InvalidInput("gen_random_mdp: sparsity must lie in (0, 1]");
  Rng rng(tagged_seed(seed, StreamTag::kGenerator));
  const auto support = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(sparsity * static_cast<double>(S))), 1, S);
  const auto Si = static_cast<Eigen::Index>(S);
  const auto Ai = static_cast<Eigen::Index>(A);
  Eigen::MatrixXd trans = Eigen::MatrixXd::Zero(Si * Ai, Si);
  std::vector<std::size_t> states(S);
  for (Eigen::Index row = 0; row < Si * Ai; ++row) {
    std::iota(states.begin(), states.end(), std::size_t{0});
    // partial Fisher-Yates: the first `support` slots are a uniform subset
    for (std::size_t i = 0; i < support; ++i)
      std::swap(states[i], states[i + rng.uniform_index(S - i)]);
    const auto w = dirichlet_uniform(rng, support);
    for (std::size_t i = 0; i < support; ++i) trans(row, static_cast<Eigen::Index>(states[i])) = w[i];
    trans.row(row) /= trans.row(row).sum();
  }
  ScoreMatrix reward(Si, Ai);
  for (Eigen::Index s = 0; s < Si; ++s)
    for (Eigen::Index a = 0; a < Ai; ++a) reward(s, a) = rng.uniform();
  const Vector uniform = Vector::Constant(Si, 1.0 / static_cast<double>(S));
  return TabularMdp(std::move(trans), std::move(reward), gamma, uniform, uniform);
}

/**
 * Chain of L states. Action 0 moves left deterministically; action 1 moves
 * right with probability 1 - slip and left with probability slip (clamped at
 * the ends). Reward 1 for any action in the last state, 0 elsewhere.
 * rho is a point mass at state 0 and mu is uniform.
 */
inline TabularMdp gen_chain_mdp(std::size_t L, double gamma, double slip = 0.0) {
  if (L < 2) throw InvalidInput("gen_chain_mdp: length must be at least 2");
  if (!(slip >= 0.0 && slip <= 0.5)) throw InvalidInput("gen_chain_mdp: slip must lie in [0, 0.5]");
  const auto n = static_cast<Eigen::Index>(L);
  Eigen::MatrixXd trans = Eigen::MatrixXd::Zero(2 * n, n);
  ScoreMatrix reward = ScoreMatrix::Zero(n, 2);
  for (Eigen::Index s = 0; s < n; ++s) {
    const Eigen::Index left = std::max<Eigen::Index>(s - 1, 0);
    const Eigen::Index right = std::min<Eigen::Index>(s + 1, n - 1);
    trans(2 * s, left) = 1.0;
    trans(2 * s + 1, right) += 1.0 - slip;
    trans(2 * s + 1, left) += slip;
  }
  reward.row(n - 1).setOnes();
  Vector rho = Vector::Zero(n);
  rho(0) = 1.0;
  return TabularMdp(std::move(trans), std::move(reward), gamma, std::move(rho),
                    Vector::Constant(n, 1.0 / static_cast<double>(L)));
}

}  // namespace vrcpi
