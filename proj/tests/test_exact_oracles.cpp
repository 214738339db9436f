#include <gtest/gtest.h>

#include <cmath>

#include "vrcpi/exact.hpp"
#include "vrcpi/generators.hpp"
#include "vrcpi/verify.hpp"

using namespace vrcpi;

namespace {

/// One state, two actions, r = (1, 0).
TabularMdp one_state(double gamma) {
  Eigen::MatrixXd t(2, 1);
  t << 1.0, 1.0;
  ScoreMatrix r(1, 2);
  r << 1.0, 0.0;
  return TabularMdp(t, r, gamma, Vector::Ones(1));
}

TabularMdp with_reward(const TabularMdp& m, const ScoreMatrix& r) {
  return TabularMdp(m.transitions(), r, m.discount(), m.rho(), m.mu());
}

/// Q by repeated application of the policy Bellman operator.
ScoreMatrix q_by_iteration(const TabularMdp& mdp, const Policy& pi, int iters) {
  const auto S = static_cast<Eigen::Index>(mdp.num_states());
  const auto A = static_cast<Eigen::Index>(mdp.num_actions());
  ScoreMatrix q = ScoreMatrix::Zero(S, A);
  for (int k = 0; k < iters; ++k) {
    const Vector v = (q.array() * pi.matrix().array()).rowwise().sum();
    const Vector next = mdp.transitions() * v;
    for (Eigen::Index s = 0; s < S; ++s)
      for (Eigen::Index a = 0; a < A; ++a) q(s, a) = mdp.reward()(s, a) + mdp.discount() * next(s * A + a);
  }
  return q;
}

Eigen::MatrixXd p_pi(const TabularMdp& mdp, const Policy& pi) {
  const auto S = static_cast<Eigen::Index>(mdp.num_states());
  const auto A = static_cast<Eigen::Index>(mdp.num_actions());
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(S, S);
  for (Eigen::Index s = 0; s < S; ++s)
    for (Eigen::Index a = 0; a < A; ++a) p.row(s) += pi.matrix()(s, a) * mdp.transitions().row(s * A + a);
  return p;
}

}  // namespace

TEST(SolveQ, OneStateExample) {
  const auto q = solve_q(one_state(0.5), Policy::deterministic({0}, 2));
  EXPECT_NEAR(q(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(q(0, 1), 1.0, 1e-12);
}

TEST(SolveQ, ZeroDiscountGivesReward) {
  const auto mdp = gen_random_mdp(4, 3, 0.0, 1.0, 3);
  Rng rng(1);
  EXPECT_EQ(solve_q(mdp, random_policy(4, 3, rng)), mdp.reward());
}

TEST(SolveQ, MatchesIteratedBellmanOperator) {
  Rng rng(2);
  for (int i = 0; i < 5; ++i) {
    const auto mdp = gen_random_mdp(5, 3, 0.9, 0.6, 10 + i);
    const auto pi = random_policy(5, 3, rng);
    const ScoreMatrix q = solve_q(mdp, pi);
    EXPECT_LE((q - q_by_iteration(mdp, pi, 10000)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_GE(q.minCoeff(), 0.0);
    EXPECT_LE(q.maxCoeff(), 1.0 / (1.0 - 0.9) + 1e-9);
  }
}

TEST(Visitation, ZeroDiscountReturnsStart) {
  const auto mdp = gen_random_mdp(4, 2, 0.0, 1.0, 4);
  Rng rng(3);
  const Vector start = Vector::Map(dirichlet_uniform(rng, 4).data(), 4);
  const auto pi = random_policy(4, 2, rng);
  const auto v = visitation(mdp, pi, start);
  EXPECT_LE((v.state - start).cwiseAbs().maxCoeff(), 1e-15);
  for (Eigen::Index s = 0; s < 4; ++s)
    for (Eigen::Index a = 0; a < 2; ++a)
      EXPECT_DOUBLE_EQ(v.state_action(s, a), v.state(s) * pi.matrix()(s, a));
}

TEST(Visitation, OneState) {
  const auto v = visitation(one_state(0.7), Policy::uniform(1, 2), Vector::Ones(1));
  EXPECT_NEAR(v.state(0), 1.0, 1e-12);
}

TEST(Visitation, MatchesTruncatedSeries) {
  Rng rng(4);
  for (int i = 0; i < 5; ++i) {
    const auto mdp = gen_random_mdp(4, 3, 0.9, 0.5, 20 + i);
    const auto pi = random_policy(4, 3, rng);
    const Eigen::MatrixXd pt = p_pi(mdp, pi).transpose();
    Vector term = mdp.mu(), series = Vector::Zero(4);
    for (int t = 0; t <= 200; ++t) {
      series += (1.0 - 0.9) * std::pow(0.9, t) * term;
      term = pt * term;
    }
    const auto d = visitation(mdp, pi, mdp.mu()).state;
    EXPECT_LE((d - series).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_NEAR(d.sum(), 1.0, 1e-10);
    EXPECT_GE(d.minCoeff(), 0.0);
  }
}

TEST(Gradient, OneStateExample) {
  const auto g = gradient(one_state(0.5), Policy::deterministic({0}, 2), Vector::Ones(1));
  EXPECT_NEAR(g(0, 0), 4.0, 1e-12);
  EXPECT_NEAR(g(0, 1), 2.0, 1e-12);
  // the same numbers from finite differences along simplex tangents
  const auto mdp = one_state(0.5);
  ScoreMatrix pi(1, 2);
  pi << 1.0, 0.0;
  ScoreMatrix e0(1, 2), e1(1, 2);
  e0 << 1.0, 0.0;
  e1 << 0.0, 1.0;
  EXPECT_NEAR(value_fd(mdp, pi, e1 - e0, Vector::Ones(1), 1e-5), 2.0 - 4.0, 1e-6);
}

TEST(Gradient, ConstantRewardGivesKnownInnerProduct) {
  Rng rng(5);
  const auto base = gen_random_mdp(5, 3, 0.8, 1.0, 6);
  const auto mdp = with_reward(base, ScoreMatrix::Constant(5, 3, 0.3));
  for (int i = 0; i < 10; ++i) {
    const auto pi = random_policy(5, 3, rng);
    EXPECT_NEAR(inner(gradient(mdp, pi, mdp.mu()), pi.matrix()), 0.3 / (0.2 * 0.2), 1e-10);
  }
}

TEST(Gradient, EntrywiseVisitationTimesQ) {
  Rng rng(6);
  const auto mdp = gen_random_mdp(4, 2, 0.9, 1.0, 7);
  const auto pi = random_policy(4, 2, rng);
  const auto ex = exact_derivatives(mdp, pi, mdp.mu());
  for (Eigen::Index s = 0; s < 4; ++s)
    for (Eigen::Index a = 0; a < 2; ++a)
      EXPECT_NEAR(ex.gradient(s, a), ex.visitation(s) * ex.q_values(s, a) / 0.1, 1e-12);
  EXPECT_LE(norm_1inf(ex.gradient), 1.0 / (0.1 * 0.1) + 1e-9);
}

TEST(Gradient, MatchesFiniteDifferences) {
  Rng rng(7);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t S = 2 + rng.uniform_index(5), A = 2 + rng.uniform_index(3);
    const double gamma = i % 2 ? 0.9 : 0.5;
    const auto mdp = gen_random_mdp(S, A, gamma, 1.0, 1000 + i);
    const auto pi = random_policy(S, A, rng);
    const ScoreMatrix dir = random_policy(S, A, rng).matrix() - pi.matrix();
    const double exact = inner(gradient(mdp, pi, mdp.mu()), dir);
    const double fd = value_fd(mdp, pi.matrix(), dir, mdp.mu(), 1e-5);
    worst = std::max(worst, std::abs(exact - fd) / std::max(std::abs(exact), 1e-3));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(FutureAdvantage, OneStateIsQTimesPolicy) {
  const auto mdp = one_state(0.6);
  const auto pi = Policy::uniform(1, 2);
  ScoreMatrix pp(1, 2);
  pp << 0.3, 0.7;
  const auto q = solve_q(mdp, pi);
  const double expect = q(0, 0) * 0.3 + q(0, 1) * 0.7;
  EXPECT_NEAR(future_advantage(mdp, pi, 0, 0, Policy(pp)), expect, 1e-12);
  EXPECT_NEAR(future_advantage(mdp, pi, 0, 1, Policy(pp)), expect, 1e-12);
}

TEST(FutureAdvantage, SamePolicyAveragesValues) {
  Rng rng(8);
  const auto mdp = gen_random_mdp(4, 3, 0.85, 0.7, 9);
  const auto pi = random_policy(4, 3, rng);
  const Vector v = state_values(mdp, pi);
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t a = 0; a < 3; ++a) {
      Vector expect = Vector::Zero(4);
      double total = 0.0;
      for (std::size_t n = 0; n < 4; ++n) {
        Vector e = Vector::Zero(4);
        e(static_cast<Eigen::Index>(n)) = 1.0;
        total += mdp.prob(n, s, a) * visitation(mdp, pi, e).state.dot(v);
      }
      EXPECT_NEAR(future_advantage(mdp, pi, s, a, pi), total, 1e-10);
    }
}

TEST(FutureAdvantage, ZeroRewardAndLinearity) {
  Rng rng(9);
  const auto base = gen_random_mdp(3, 2, 0.7, 1.0, 10);
  const auto zero = with_reward(base, ScoreMatrix::Zero(3, 2));
  const auto pi = random_policy(3, 2, rng), p1 = random_policy(3, 2, rng), p2 = random_policy(3, 2, rng);
  EXPECT_EQ(future_advantage_matrix(zero, pi, p1.matrix()).cwiseAbs().maxCoeff(), 0.0);
  const ScoreMatrix lhs = future_advantage_matrix(base, pi, mix_policies(p1, p2, 0.3).matrix());
  const ScoreMatrix rhs = 0.7 * future_advantage_matrix(base, pi, p1.matrix()) +
                          0.3 * future_advantage_matrix(base, pi, p2.matrix());
  EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Hessian, ZeroDiscountIsZero) {
  Rng rng(10);
  const auto mdp = gen_random_mdp(3, 2, 0.0, 1.0, 11);
  EXPECT_EQ(hessian_bilinear(mdp, random_policy(3, 2, rng), mdp.mu(), random_policy(3, 2, rng),
                             random_policy(3, 2, rng)),
            0.0);
}

TEST(Hessian, SymmetricAndMatchesGradientDifferences) {
  Rng rng(11);
  double worst = 0.0;
  for (int i = 0; i < 30; ++i) {
    const std::size_t S = 2 + rng.uniform_index(5), A = 2 + rng.uniform_index(3);
    const auto mdp = gen_random_mdp(S, A, i % 2 ? 0.9 : 0.5, 1.0, 2000 + i);
    const auto pi = random_policy(S, A, rng);
    const auto p1 = random_policy(S, A, rng), p2 = random_policy(S, A, rng);
    const double h12 = hessian_bilinear(mdp, pi, mdp.mu(), p1, p2);
    const double h21 = hessian_bilinear(mdp, pi, mdp.mu(), p2, p1);
    EXPECT_NEAR(h12, h21, 1e-12 * std::max(1.0, std::abs(h12)));
    const ScoreMatrix x = p1.matrix() - pi.matrix(), y = p2.matrix();
    const double exact = hessian_bilinear(mdp, pi.matrix(), mdp.mu(), x, y);
    const double fd = gradient_fd(mdp, pi.matrix(), x, y, mdp.mu(), 1e-5);
    worst = std::max(worst, std::abs(exact - fd) / std::max(std::abs(exact), 1e-3));
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Hessian, BilinearInDirections) {
  Rng rng(12);
  const auto mdp = gen_random_mdp(4, 3, 0.8, 1.0, 12);
  const auto pi = random_policy(4, 3, rng);
  const ScoreMatrix x1 = ScoreMatrix::Random(4, 3), x2 = ScoreMatrix::Random(4, 3), y = ScoreMatrix::Random(4, 3);
  const double lhs = hessian_bilinear(mdp, pi.matrix(), mdp.mu(), 2.0 * x1 - x2, y);
  const double rhs = 2.0 * hessian_bilinear(mdp, pi.matrix(), mdp.mu(), x1, y) -
                     hessian_bilinear(mdp, pi.matrix(), mdp.mu(), x2, y);
  EXPECT_NEAR(lhs, rhs, 1e-9 * std::max(1.0, std::abs(lhs)));
}

TEST(LocalGap, OneStateUniformPolicy) {
  const auto mdp = one_state(0.5);
  const auto pi = Policy::uniform(1, 2);
  const auto cls = PolicyClass::explicit_members({Policy::deterministic({0}, 2), Policy::deterministic({1}, 2)});
  const auto g = gradient(mdp, pi, Vector::Ones(1));
  const double expect = std::max(g(0, 0), g(0, 1)) - 0.5 * (g(0, 0) + g(0, 1));
  const auto lg = local_gap(mdp, pi, Vector::Ones(1), cls);
  EXPECT_NEAR(lg.gap, expect, 1e-12);
  EXPECT_EQ(lg.maximizer, Policy::deterministic({0}, 2));
  EXPECT_GT(lg.gap, 0.0);
}

TEST(LocalGap, SingletonContainingPolicyIsZero) {
  const auto mdp = gen_random_mdp(3, 2, 0.9, 1.0, 13);
  const auto p = Policy::deterministic({1, 0, 1}, 2);
  EXPECT_NEAR(local_gap(mdp, p, mdp.mu(), PolicyClass::explicit_members({p})).gap, 0.0, 1e-12);
}

TEST(LocalGap, ZeroRewardIsZero) {
  Rng rng(14);
  const auto mdp = with_reward(gen_random_mdp(3, 2, 0.9, 1.0, 14), ScoreMatrix::Zero(3, 2));
  EXPECT_EQ(local_gap(mdp, random_policy(3, 2, rng), mdp.mu(), PolicyClass::all_deterministic(3, 2)).gap, 0.0);
}

TEST(OptimalValue, OneState) {
  const auto opt = optimal_value(one_state(0.5));
  EXPECT_NEAR(opt.value, 2.0, 1e-12);
  EXPECT_EQ(opt.policy, Policy::deterministic({0}, 2));
}

TEST(OptimalValue, ZeroReward) {
  const auto mdp = with_reward(gen_random_mdp(3, 2, 0.9, 1.0, 15), ScoreMatrix::Zero(3, 2));
  EXPECT_EQ(optimal_value(mdp).value, 0.0);
}

TEST(OptimalValue, DominatesRandomPolicies) {
  Rng rng(16);
  const auto mdp = gen_random_mdp(5, 3, 0.9, 0.6, 16);
  const auto opt = optimal_value(mdp);
  EXPECT_LE(bellman_optimality_residual(mdp, opt.state_values), 1e-10);
  for (int i = 0; i < 100; ++i) {
    const Vector v = state_values(mdp, random_policy(5, 3, rng));
    EXPECT_LE((v - opt.state_values).maxCoeff(), 1e-10);
  }
}

TEST(Mismatch, OneState) {
  const auto mdp = one_state(0.5);
  const auto mc = mismatch_coefficients(mdp, PolicyClass::all_deterministic(1, 2), 16);
  EXPECT_NEAR(mc.d_inf, 1.0, 1e-12);
  EXPECT_NEAR(mc.c_inf, 1.0, 1e-12);
  EXPECT_FALSE(mc.d_inf_infinite);
}

TEST(Mismatch, ZeroResetMassIsInfinite) {
  const auto chain = gen_chain_mdp(3, 0.9);
  Vector mu(3);
  mu << 1.0, 0.0, 0.0;
  const auto mc = mismatch_coefficients(chain.with_mu(mu), PolicyClass::all_deterministic(3, 2), 8);
  EXPECT_TRUE(mc.d_inf_infinite);
  EXPECT_TRUE(std::isinf(mc.d_inf));
  // member 0 never leaves state 0 from rho, so C_inf is infinite too
  EXPECT_TRUE(mc.c_inf_infinite);
}

TEST(Mismatch, PointMassUnderUniformReset) {
  // action 0 stays put, action 1 moves right; the only reward is at state 0
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(6, 3);
  for (int s = 0; s < 3; ++s) {
    t(2 * s, s) = 1.0;
    t(2 * s + 1, std::min(s + 1, 2)) = 1.0;
  }
  ScoreMatrix r = ScoreMatrix::Zero(3, 2);
  r(0, 0) = 1.0;
  Vector rho = Vector::Zero(3);
  rho(0) = 1.0;
  const TabularMdp mdp(t, r, 0.9, rho, Vector::Constant(3, 1.0 / 3.0));
  const auto mc = mismatch_coefficients(mdp, PolicyClass::all_deterministic(3, 2), 0);
  EXPECT_NEAR(mc.d_inf, 3.0, 1e-12);
}

TEST(Mismatch, ChainDinfAtMostLength) {
  const auto mc = mismatch_coefficients(gen_chain_mdp(5, 0.9), PolicyClass::all_deterministic(5, 2), 0);
  EXPECT_LE(mc.d_inf, 5.0 + 1e-9);
}

TEST(Completeness, AllDeterministicIsExactlyZero) {
  const auto mdp = gen_random_mdp(4, 3, 0.9, 1.0, 17);
  EXPECT_EQ(policy_completeness(mdp, PolicyClass::all_deterministic(4, 3), mdp.rho(), 64, 3), 0.0);
}

TEST(Completeness, SingletonIsNonnegative) {
  Rng rng(18);
  const auto mdp = gen_random_mdp(4, 2, 0.9, 1.0, 18);
  const auto pi = random_policy(4, 2, rng);
  const double e = policy_completeness(mdp, PolicyClass::explicit_members({pi}), mdp.rho(), 0);
  const auto ex = exact_derivatives(mdp, pi, mdp.rho());
  const Vector gapv = ex.q_values.rowwise().maxCoeff() - (ex.q_values.array() * pi.matrix().array()).rowwise().sum().matrix();
  EXPECT_GE(e, 0.0);
  EXPECT_NEAR(e, ex.visitation.dot(gapv), 1e-12);
}

TEST(Completeness, TwoMemberClassMatchesBruteForce) {
  const auto mdp = gen_random_mdp(4, 3, 0.8, 1.0, 19);
  const auto p = Policy::deterministic({0, 1, 2, 0}, 3), q = Policy::deterministic({2, 2, 1, 1}, 3);
  const std::vector<Policy> members{p, q};
  double expect = 0.0;
  for (const auto& pi : members) {
    const auto ex = exact_derivatives(mdp, pi, mdp.rho());
    double best = std::numeric_limits<double>::infinity();
    for (const auto& star : members) {
      double total = 0.0;
      for (Eigen::Index s = 0; s < 4; ++s)
        total += ex.visitation(s) * (ex.q_values.row(s).maxCoeff() - ex.q_values.row(s).dot(star.matrix().row(s)));
      best = std::min(best, total);
    }
    expect = std::max(expect, best);
  }
  EXPECT_NEAR(policy_completeness(mdp, PolicyClass::explicit_members(members), mdp.rho(), 0), expect, 1e-12);
}

TEST(Smoothness, QuadraticBoundHolds) {
  Rng rng(20);
  for (double gamma : {0.5, 0.9}) {
    const auto mdp = gen_random_mdp(4, 3, gamma, 1.0, 21);
    const double L = 2.0 * gamma / std::pow(1.0 - gamma, 3);
    for (int i = 0; i < 500; ++i) {
      const auto p = random_policy(4, 3, rng), q = random_policy(4, 3, rng);
      const double lhs = std::abs(value(mdp, q, mdp.mu()) - value(mdp, p, mdp.mu()) -
                                  inner(gradient(mdp, p, mdp.mu()), q.matrix() - p.matrix()));
      const double d = norm_inf1(q.matrix() - p.matrix());
      EXPECT_LE(lhs, L * d * d);
    }
  }
}

TEST(Smoothness, GradientDifferenceBound) {
  Rng rng(22);
  const auto mdp = gen_random_mdp(4, 2, 0.9, 1.0, 23);
  const double L = 2.0 * 0.9 / std::pow(0.1, 3);
  for (int i = 0; i < 300; ++i) {
    const auto pi = random_policy(4, 2, rng), p1 = random_policy(4, 2, rng), p2 = random_policy(4, 2, rng);
    const double lhs = inner(gradient(mdp, p1, mdp.mu()) - gradient(mdp, p2, mdp.mu()), pi.matrix());
    EXPECT_LE(lhs, L * norm_inf1(p1.matrix() - p2.matrix()));
    EXPECT_LE(std::abs(inner(gradient(mdp, p1, mdp.mu()), pi.matrix())), 1.0 / (0.1 * 0.1) + 1e-9);
  }
}
