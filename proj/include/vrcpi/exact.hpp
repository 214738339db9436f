#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "vrcpi/errors.hpp"
#include "vrcpi/mdp.hpp"
#include "vrcpi/rng.hpp"

namespace vrcpi {

/// Value, Q-values, visitation and gradient of one policy from one start distribution.
struct ExactDerivatives {
  double value;
  ScoreMatrix q_values;
  Vector visitation;
  ScoreMatrix visitation_sa;
  ScoreMatrix gradient;
};

namespace detail {

inline void check_policy_shape(const TabularMdp& mdp, const ScoreMatrix& pi) {
  if (static_cast<std::size_t>(pi.rows()) != mdp.num_states() ||
      static_cast<std::size_t>(pi.cols()) != mdp.num_actions())
    throw InvalidInput("policy shape does not match the MDP");
}

inline void check_start(const TabularMdp& mdp, const Vector& start) {
  if (static_cast<std::size_t>(start.size()) != mdp.num_states())
    throw InvalidInput("start distribution size does not match the MDP");
}

/**
 * Everything that depends on the policy alone: P^pi, r^pi, the factorized
 * I - gamma P^pi, V^pi and Q^pi. Works for any S x A matrix, not only
 * row-stochastic ones, so finite-difference tests can leave the simplex.
 */
class Evaluation {
 public:
  Evaluation(const TabularMdp& mdp, const ScoreMatrix& pi) : mdp_(&mdp), pi_(pi) {
    check_policy_shape(mdp, pi);
    const auto S = static_cast<Eigen::Index>(mdp.num_states());
    const auto A = static_cast<Eigen::Index>(mdp.num_actions());
    const double g = mdp.discount();
    p_pi_ = Eigen::MatrixXd::Zero(S, S);
    Vector r_pi = Vector::Zero(S);
    for (Eigen::Index s = 0; s < S; ++s)
      for (Eigen::Index a = 0; a < A; ++a) {
        const double w = pi(s, a);
        if (w == 0.0) continue;
        p_pi_.row(s) += w * mdp.transitions().row(s * A + a);
        r_pi(s) += w * mdp.reward()(s, a);
      }
    const Eigen::MatrixXd m = Eigen::MatrixXd::Identity(S, S) - g * p_pi_;
    lu_.compute(m);
    lu_t_.compute(m.transpose());
    v_ = lu_.solve(r_pi);
    if (!v_.allFinite()) throw InternalError("policy evaluation produced non-finite values");
    const Vector next = mdp.transitions() * v_;
    q_.resize(S, A);
    for (Eigen::Index s = 0; s < S; ++s)
      for (Eigen::Index a = 0; a < A; ++a) q_(s, a) = mdp.reward()(s, a) + g * next(s * A + a);

    // Q has to be a fixed point of its own Bellman operator
    const Vector v_from_q = (q_.array() * pi.array()).rowwise().sum();
    const Vector next_q = mdp.transitions() * v_from_q;
    double residual = 0.0;
    for (Eigen::Index s = 0; s < S; ++s)
      for (Eigen::Index a = 0; a < A; ++a)
        residual = std::max(residual,
                            std::abs(q_(s, a) - mdp.reward()(s, a) - g * next_q(s * A + a)));
    const double scale = std::max(1.0, v_.cwiseAbs().maxCoeff());
    if (residual > 1e-9 * scale) throw InternalError("linear solve failed the Bellman residual check");
  }

  const Vector& values() const { return v_; }
  const ScoreMatrix& q() const { return q_; }
  const Eigen::MatrixXd& p_pi() const { return p_pi_; }

  /// (1-gamma) (I - gamma P^pi^T)^{-1} start.
  Vector visitation(const Vector& start) const {
    check_start(*mdp_, start);
    return (1.0 - mdp_->discount()) * lu_t_.solve(start);
  }

  /// s -> E_{s'' ~ d^pi_s}[g(s'')].
  Vector discounted_average(const Vector& g) const {
    return (1.0 - mdp_->discount()) * lu_.solve(g);
  }

  /// F(s, a | x) = E_{s' ~ P(.|s,a)} E_{s'' ~ d^pi_{s'}} [Q(s'', .)^T x(s'')].
  ScoreMatrix future_advantage(const ScoreMatrix& x) const {
    check_policy_shape(*mdp_, x);
    const Vector g = (q_.array() * x.array()).rowwise().sum();
    const Vector w = discounted_average(g);
    const Vector flat = mdp_->transitions() * w;
    const auto S = q_.rows();
    const auto A = q_.cols();
    ScoreMatrix f(S, A);
    for (Eigen::Index s = 0; s < S; ++s)
      for (Eigen::Index a = 0; a < A; ++a) f(s, a) = flat(s * A + a);
    return f;
  }

 private:
  const TabularMdp* mdp_;
  ScoreMatrix pi_;
  Eigen::MatrixXd p_pi_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_t_;
  Vector v_;
  ScoreMatrix q_;
};

}  // namespace detail

inline ScoreMatrix solve_q(const TabularMdp& mdp, const Policy& pi) {
  return detail::Evaluation(mdp, pi.matrix()).q();
}

/// Per-state values V^pi(s).
inline Vector state_values(const TabularMdp& mdp, const ScoreMatrix& pi) {
  return detail::Evaluation(mdp, pi).values();
}
inline Vector state_values(const TabularMdp& mdp, const Policy& pi) {
  return state_values(mdp, pi.matrix());
}

/// V^pi_start = start^T V^pi.
inline double value(const TabularMdp& mdp, const ScoreMatrix& pi, const Vector& start) {
  detail::check_start(mdp, start);
  return start.dot(state_values(mdp, pi));
}
inline double value(const TabularMdp& mdp, const Policy& pi, const Vector& start) {
  return value(mdp, pi.matrix(), start);
}

struct Visitation {
  Vector state;
  ScoreMatrix state_action;
};

inline Visitation visitation(const TabularMdp& mdp, const Policy& pi, const Vector& start) {
  const detail::Evaluation ev(mdp, pi.matrix());
  Vector d = ev.visitation(start);
  ScoreMatrix sa = pi.matrix().array().colwise() * d.array();
  return {std::move(d), std::move(sa)};
}

/// grad(s, a) = d^pi_start(s) Q^pi(s, a) / (1 - gamma).
inline ScoreMatrix gradient(const TabularMdp& mdp, const ScoreMatrix& pi, const Vector& start) {
  const detail::Evaluation ev(mdp, pi);
  const Vector d = ev.visitation(start);
  return (ev.q().array().colwise() * d.array()) / (1.0 - mdp.discount());
}
inline ScoreMatrix gradient(const TabularMdp& mdp, const Policy& pi, const Vector& start) {
  return gradient(mdp, pi.matrix(), start);
}

inline ExactDerivatives exact_derivatives(const TabularMdp& mdp, const Policy& pi,
                                          const Vector& start) {
  const detail::Evaluation ev(mdp, pi.matrix());
  ExactDerivatives out;
  out.visitation = ev.visitation(start);
  out.value = start.dot(ev.values());
  out.q_values = ev.q();
  out.visitation_sa = pi.matrix().array().colwise() * out.visitation.array();
  out.gradient = (ev.q().array().colwise() * out.visitation.array()) / (1.0 - mdp.discount());
  return out;
}

/// The whole S x A table of F^pi(., . | pi').
inline ScoreMatrix future_advantage_matrix(const TabularMdp& mdp, const Policy& pi,
                                           const ScoreMatrix& pi_prime) {
  return detail::Evaluation(mdp, pi.matrix()).future_advantage(pi_prime);
}

inline double future_advantage(const TabularMdp& mdp, const Policy& pi, std::size_t s,
                               std::size_t a, const Policy& pi_prime) {
  if (s >= mdp.num_states() || a >= mdp.num_actions())
    throw InvalidInput("future_advantage: state or action out of range");
  return future_advantage_matrix(mdp, pi, pi_prime.matrix())(static_cast<Eigen::Index>(s),
                                                             static_cast<Eigen::Index>(a));
}

/**
 * Second directional derivative of V^pi_start along directions x and y:
 * gamma/(1-gamma)^2 E_{s ~ d^pi}[F(s,.|x)^T y(s) + F(s,.|y)^T x(s)].
 * Directions may be arbitrary S x A matrices.
 */
inline double hessian_bilinear(const TabularMdp& mdp, const ScoreMatrix& pi, const Vector& start,
                               const ScoreMatrix& x, const ScoreMatrix& y) {
  const double g = mdp.discount();
  if (g == 0.0) return 0.0;
  const detail::Evaluation ev(mdp, pi);
  detail::check_policy_shape(mdp, x);
  detail::check_policy_shape(mdp, y);
  const Vector d = ev.visitation(start);
  const ScoreMatrix fx = ev.future_advantage(x);
  const ScoreMatrix fy = ev.future_advantage(y);
  const Vector per_state = (fx.array() * y.array() + fy.array() * x.array()).rowwise().sum();
  return g / ((1.0 - g) * (1.0 - g)) * d.dot(per_state);
}
inline double hessian_bilinear(const TabularMdp& mdp, const Policy& pi, const Vector& start,
                               const Policy& pi1, const Policy& pi2) {
  return hessian_bilinear(mdp, pi.matrix(), start, pi1.matrix(), pi2.matrix());
}

struct LocalGap {
  double gap;
  Policy maximizer;
  std::optional<std::size_t> index;
};

/// max over class members of <grad V^pi_start, pi' - pi>.
inline LocalGap local_gap(const TabularMdp& mdp, const Policy& pi, const Vector& start,
                          const PolicyClass& cls) {
  const ScoreMatrix g = gradient(mdp, pi, start);
  auto best = cls.best_response(g);
  return {best.objective - inner(g, pi.matrix()), std::move(best.policy), best.index};
}

struct OptimalSolution {
  /// V* under rho.
  double value;
  Vector state_values;
  Policy policy;
  std::size_t iterations;
};

/// Value iteration to a 1e-12 sup-norm residual, then greedy extraction and an
/// exact evaluation of the extracted policy.
inline OptimalSolution optimal_value(const TabularMdp& mdp) {
  const auto S = static_cast<Eigen::Index>(mdp.num_states());
  const auto A = static_cast<Eigen::Index>(mdp.num_actions());
  const double g = mdp.discount();
  Vector v = Vector::Zero(S);
  std::size_t it = 0;
  const std::size_t max_iter = 10'000'000;
  for (; it < max_iter; ++it) {
    const Vector next = mdp.transitions() * v;
    Vector nv(S);
    for (Eigen::Index s = 0; s < S; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (Eigen::Index a = 0; a < A; ++a)
        best = std::max(best, mdp.reward()(s, a) + g * next(s * A + a));
      nv(s) = best;
    }
    const double delta = (nv - v).cwiseAbs().maxCoeff();
    v = std::move(nv);
    if (delta <= 1e-12) break;
  }
  if (it == max_iter) throw InternalError("value iteration did not converge");

  const Vector next = mdp.transitions() * v;
  std::vector<std::size_t> actions(static_cast<std::size_t>(S));
  for (Eigen::Index s = 0; s < S; ++s) {
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < A; ++a)
      if (mdp.reward()(s, a) + g * next(s * A + a) > mdp.reward()(s, best) + g * next(s * A + best))
        best = a;
    actions[static_cast<std::size_t>(s)] = static_cast<std::size_t>(best);
  }
  Policy pi = Policy::deterministic(actions, static_cast<std::size_t>(A));
  Vector exact = state_values(mdp, pi);
  return {mdp.rho().dot(exact), std::move(exact), std::move(pi), it + 1};
}

/// sup-norm Bellman optimality residual of a value vector.
inline double bellman_optimality_residual(const TabularMdp& mdp, const Vector& v) {
  const auto S = static_cast<Eigen::Index>(mdp.num_states());
  const auto A = static_cast<Eigen::Index>(mdp.num_actions());
  const Vector next = mdp.transitions() * v;
  double res = 0.0;
  for (Eigen::Index s = 0; s < S; ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < A; ++a)
      best = std::max(best, mdp.reward()(s, a) + mdp.discount() * next(s * A + a));
    res = std::max(res, std::abs(best - v(s)));
  }
  return res;
}

/// Probabilities at or below this are treated as exact zeros in ratios.
inline constexpr double kRatioZero = 1e-15;

struct RatioBound {
  double value = 0.0;
  bool infinite = false;
};

/// max_s num(s) / den(s), with 0/0 = 0 and positive/0 = infinity.
inline RatioBound sup_ratio(const Vector& num, const Vector& den) {
  RatioBound out;
  for (Eigen::Index s = 0; s < num.size(); ++s) {
    if (num(s) <= kRatioZero) continue;
    if (den(s) <= kRatioZero) {
      out.infinite = true;
      out.value = std::numeric_limits<double>::infinity();
      continue;
    }
    if (!out.infinite) out.value = std::max(out.value, num(s) / den(s));
  }
  return out;
}

/// Candidate points of CH(class): members (all of them when there are at most
/// `member_cap`, otherwise a seeded sample) plus `n_mixtures` Dirichlet mixtures.
inline std::vector<Policy> hull_candidates(const PolicyClass& cls, std::size_t n_mixtures,
                                           std::uint64_t seed, std::size_t member_cap = 4096) {
  Rng rng(tagged_seed(seed, StreamTag::kMixtures));
  const auto n = cls.size();
  auto draw_member = [&]() {
    if (n) return cls.member(rng.uniform_index(*n));
    std::vector<std::size_t> acts(cls.num_states());
    for (auto& a : acts) a = rng.uniform_index(cls.num_actions());
    return Policy::deterministic(acts, cls.num_actions());
  };
  std::vector<Policy> out;
  if (n && *n <= member_cap) {
    for (std::size_t i = 0; i < *n; ++i) out.push_back(cls.member(i));
  } else {
    for (std::size_t i = 0; i < member_cap; ++i) out.push_back(draw_member());
  }
  const std::size_t k = n ? std::min<std::size_t>(*n, 4) : 4;
  for (std::size_t m = 0; m < n_mixtures; ++m) {
    const auto w = dirichlet_uniform(rng, k);
    ScoreMatrix acc = ScoreMatrix::Zero(static_cast<Eigen::Index>(cls.num_states()),
                                        static_cast<Eigen::Index>(cls.num_actions()));
    for (std::size_t j = 0; j < k; ++j) acc += w[j] * draw_member().matrix();
    // rows can drift off the simplex by an ulp or two; project back onto it
    for (Eigen::Index s = 0; s < acc.rows(); ++s) acc.row(s) /= acc.row(s).sum();
    out.emplace_back(std::move(acc));
  }
  return out;
}

struct MismatchCoefficients {
  /// max_s d^{pi*}_rho(s) / mu(s).
  double d_inf;
  bool d_inf_infinite;
  /// max over hull candidates of max_s d^{pi*}_rho(s) / d^pi_rho(s).
  double c_inf;
  bool c_inf_infinite;
  std::size_t candidates;
};

inline MismatchCoefficients mismatch_coefficients(const TabularMdp& mdp, const PolicyClass& cls,
                                                  std::size_t n_mixtures = 256,
                                                  std::uint64_t seed = 0) {
  const auto opt = optimal_value(mdp);
  const Vector d_star = visitation(mdp, opt.policy, mdp.rho()).state;
  const auto d_ratio = sup_ratio(d_star, mdp.mu());
  RatioBound c;
  const auto cands = hull_candidates(cls, n_mixtures, seed);
  for (const auto& pi : cands) {
    const auto r = sup_ratio(d_star, visitation(mdp, pi, mdp.rho()).state);
    if (r.infinite) {
      c = r;
      break;
    }
    c.value = std::max(c.value, r.value);
  }
  return {d_ratio.value, d_ratio.infinite, c.value, c.infinite, cands.size()};
}

/**
 * Policy completeness: max over hull candidates pi of
 * min over members pi* of E_{s ~ d^pi_start}[max_a Q^pi(s,a) - Q^pi(s,.)^T pi*(s)].
 */
inline double policy_completeness(const TabularMdp& mdp, const PolicyClass& cls,
                                  const Vector& start, std::size_t n_mixtures,
                                  std::uint64_t seed = 0) {
  double worst = 0.0;
  for (const auto& pi : hull_candidates(cls, n_mixtures, seed)) {
    const detail::Evaluation ev(mdp, pi.matrix());
    const Vector d = ev.visitation(start);
    const ScoreMatrix& q = ev.q();
    const Vector qmax = q.rowwise().maxCoeff();
    double inner_min;
    if (cls.is_all_deterministic()) {
      // the greedy member is in the class, and the minimum decomposes by state
      inner_min = 0.0;
      for (Eigen::Index s = 0; s < q.rows(); ++s)
        inner_min += d(s) * (qmax(s) - q.row(s).maxCoeff());
    } else {
      inner_min = std::numeric_limits<double>::infinity();
      for (const auto& member : cls.explicit_list()) {
        const Vector follow = (q.array() * member.matrix().array()).rowwise().sum();
        inner_min = std::min(inner_min, d.dot(qmax - follow));
      }
    }
    worst = std::max(worst, inner_min);
  }
  return worst;
}

}  // namespace vrcpi
