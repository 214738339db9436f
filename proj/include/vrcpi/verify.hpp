#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "vrcpi/cpi.hpp"
#include "vrcpi/exact.hpp"
#include "vrcpi/generators.hpp"
#include "vrcpi/planner.hpp"
#include "vrcpi/samplers.hpp"
#include "vrcpi/vrcpi.hpp"

namespace vrcpi {

/// Central difference of V along `dir`: (V(pi + h dir) - V(pi - h dir)) / 2h.
inline double value_fd(const TabularMdp& mdp, const ScoreMatrix& pi, const ScoreMatrix& dir,
                       const Vector& start, double h) {
  return (value(mdp, pi + h * dir, start) - value(mdp, pi - h * dir, start)) / (2.0 * h);
}

/// Central difference of <grad V, y> along x.
inline double gradient_fd(const TabularMdp& mdp, const ScoreMatrix& pi, const ScoreMatrix& x,
                          const ScoreMatrix& y, const Vector& start, double h) {
  return (inner(gradient(mdp, pi + h * x, start), y) - inner(gradient(mdp, pi - h * x, start), y)) /
         (2.0 * h);
}

struct CheckResult {
  std::string name;
  bool ok;
  std::string detail;
};

namespace detail {

inline std::string sci(double x) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << x;
  return os.str();
}

}  // namespace detail

/// Quick property checks behind `vrcpi verify`; each result is one line of output.
inline std::vector<CheckResult> run_verify_suite() {
  std::vector<CheckResult> out;
  Rng rng(20240601);

  {
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      ScoreMatrix y = ScoreMatrix::Random(4, 3);
      worst = std::max(worst, std::abs(inner(dual_witness_inf1(y), y) - norm_1inf(y)));
    }
    out.push_back({"dual witness attains ||y||_{1,inf}", worst == 0.0, "max error " + detail::sci(worst)});
  }

  {
    double worst_grad = 0.0, worst_hess = 0.0;
    for (int i = 0; i < 10; ++i) {
      const auto mdp = gen_random_mdp(3 + i % 3, 2 + i % 2, i % 2 ? 0.9 : 0.5, 1.0, 100 + i);
      const auto S = mdp.num_states(), A = mdp.num_actions();
      const Policy pi = random_policy(S, A, rng);
      const ScoreMatrix x = random_policy(S, A, rng).matrix() - pi.matrix();
      const ScoreMatrix y = random_policy(S, A, rng).matrix() - pi.matrix();
      const double exact = inner(gradient(mdp, pi, mdp.mu()), x);
      const double fd = value_fd(mdp, pi.matrix(), x, mdp.mu(), 1e-5);
      worst_grad = std::max(worst_grad, std::abs(exact - fd) / std::max(1.0, std::abs(exact)));
      const double hess = hessian_bilinear(mdp, pi.matrix(), mdp.mu(), x, y);
      const double hfd = gradient_fd(mdp, pi.matrix(), x, y, mdp.mu(), 1e-5);
      worst_hess = std::max(worst_hess, std::abs(hess - hfd) / std::max(1.0, std::abs(hess)));
    }
    out.push_back({"gradient matches finite differences", worst_grad <= 1e-5,
                   "max rel error " + detail::sci(worst_grad)});
    out.push_back({"Hessian form matches finite differences", worst_hess <= 1e-4,
                   "max rel error " + detail::sci(worst_hess)});
  }

  {
    std::size_t violations = 0;
    const auto mdp = gen_random_mdp(4, 3, 0.9, 1.0, 7);
    const double L = 2.0 * 0.9 / std::pow(0.1, 3);
    for (int i = 0; i < 200; ++i) {
      const Policy p = random_policy(4, 3, rng), q = random_policy(4, 3, rng);
      const double lhs = std::abs(value(mdp, q, mdp.mu()) - value(mdp, p, mdp.mu()) -
                                  inner(gradient(mdp, p, mdp.mu()), q.matrix() - p.matrix()));
      const double d = norm_inf1(q.matrix() - p.matrix());
      if (lhs > L * d * d) ++violations;
    }
    out.push_back({"smoothness bound 2g/(1-g)^3", violations == 0, std::to_string(violations) + " violations"});
  }

  {
    const auto mdp = gen_random_mdp(4, 2, 0.8, 1.0, 11);
    const Policy pi = random_policy(4, 2, rng);
    const Policy probe = random_policy(4, 2, rng);
    const std::size_t n = 40000;
    double sum = 0.0, sq = 0.0;
    std::size_t bound_violations = 0;
    for (std::size_t k = 0; k < n; ++k) {
      Rng r = substream(5, k);
      const QSample q = q_sample(mdp, pi, mdp.mu(), r);
      if (q.q_hat.cwiseAbs().sum() > 2.0 / 0.2 * (1 + 1e-12)) ++bound_violations;
      const double x = q.q_hat.dot(probe.row(q.state).transpose()) / 0.2;
      sum += x;
      sq += x * x;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sq / n - mean * mean) / n);
    const double truth = inner(gradient(mdp, pi, mdp.mu()), probe.matrix());
    out.push_back({"Q-sampler gradient form is unbiased", std::abs(mean - truth) <= 4.0 * se &&
                                                              bound_violations == 0,
                   "z = " + detail::sci((mean - truth) / se)});
  }

  {
    const auto mdp = gen_chain_mdp(5, 0.9);
    const auto cls = PolicyClass::all_deterministic(5, 2);
    VrcpiParams p;
    p.eta = 0.002;
    p.lambda = planner_lambda(p.eta, 2, 0.9);
    p.horizon = 200;
    RunOptions o;
    o.oracle_eval = false;
    try {
      const auto r = run(mdp, cls, mdp.mu(), p, 3, o);
      out.push_back({"dataset loss equals <v_t, pi> every round", r.max_vt_residual <= 1e-9,
                     "max residual " + detail::sci(r.max_vt_residual)});
    } catch (const InvariantViolation& e) {
      out.push_back({"dataset loss equals <v_t, pi> every round", false, e.what()});
    }
  }

  {
    bool ok = true;
    const auto local = plan_local(0.1, 0.1, 2, 0.9, std::log(8.0));
    for (const auto& c : check_local_conditions(local.params, 2, 0.9, std::log(8.0), 0.1, 0.1)) ok = ok && c.ok;
    const auto global = plan_global(0.2, 0.1, 2, 0.5, std::log(8.0), 2.0);
    for (const auto& c : check_global_conditions(global.params, 2, 0.5, std::log(8.0), 0.2, 0.1, 2.0))
      ok = ok && c.ok;
    out.push_back({"planner outputs pass the condition checks", ok,
                   "local T = " + std::to_string(local.params.horizon) +
                       ", global T = " + std::to_string(global.params.horizon)});
  }
  return out;
}

}  // namespace vrcpi
