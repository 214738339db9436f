#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "vrcpi/errors.hpp"

namespace vrcpi {

enum class ReturnOption { MinCertificateSecondHalf, FinalIterate };

inline const char* to_string(ReturnOption o) {
  return o == ReturnOption::FinalIterate ? "final_iterate" : "min_certificate_second_half";
}

inline ReturnOption return_option_from_string(const std::string& s) {
  if (s == "final_iterate") return ReturnOption::FinalIterate;
  if (s == "min_certificate_second_half") return ReturnOption::MinCertificateSecondHalf;
  throw InvalidInput("unknown return option '" + s + "'");
}

struct VrcpiParams {
  double eta = 0.0;
  double lambda = 0.0;
  std::uint64_t horizon = 0;
  double erm_tolerance = 0.0;
  /// Target accuracy and confidence; NaN for hand-picked parameters.
  double target_eps = std::numeric_limits<double>::quiet_NaN();
  double confidence = std::numeric_limits<double>::quiet_NaN();
  ReturnOption return_option = ReturnOption::MinCertificateSecondHalf;
  /// MinCertificateSecondHalf searches rounds t >= ceil(window_start * T).
  double window_start = 0.5;
};

/// Smallest decay that keeps ||v_t||_{1,inf} <= 2A/(1-gamma)^2 for step size eta.
inline double planner_lambda(double eta, std::size_t num_actions, double discount) {
  return 4.0 * eta * static_cast<double>(num_actions) * discount / (1.0 - discount);
}

/// Checks hand-picked parameters; the decay has to be at least planner_lambda.
inline void validate_params(const VrcpiParams& p, std::size_t num_actions, double discount) {
  if (!(p.eta > 0.0 && p.eta <= 1.0)) throw InvalidInput("params: eta must lie in (0, 1]");
  if (!(p.lambda > 0.0 && p.lambda <= 1.0)) throw InvalidInput("params: lambda must lie in (0, 1]");
  if (p.horizon < 1) throw InvalidInput("params: horizon must be at least 1");
  if (!(p.window_start >= 0.0 && p.window_start <= 1.0))
    throw InvalidInput("params: window_start must lie in [0, 1]");
  if (!(p.erm_tolerance >= 0.0)) throw InvalidInput("params: negative ERM tolerance");
  const double floor = planner_lambda(p.eta, num_actions, discount);
  if (p.lambda < floor * (1.0 - 1e-12))
    throw InvalidInput("params: lambda below 4*eta*A*gamma/(1-gamma) = " + std::to_string(floor));
}

struct PlanCondition {
  std::string name;
  double lhs;
  double rhs;
  bool ok;
};

struct PlanReport {
  VrcpiParams params;
  double eps_cover;
  double c_of_t;
  /// Global mode only: C_inf^2 log|Pi| A^3 / ((1-gamma)^5 eps^2).
  double scaling_reference = std::numeric_limits<double>::quiet_NaN();
  std::vector<PlanCondition> conditions;
};

namespace detail {

inline void check_plan_inputs(double eps, double delta, std::size_t A, double gamma,
                              double log_class_size) {
  if (!(eps > 0.0 && eps < 1.0)) throw InvalidInput("planner: eps must lie in (0, 1)");
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidInput("planner: delta must lie in (0, 1)");
  if (A < 1) throw InvalidInput("planner: need at least one action");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidInput("planner: invalid discount");
  if (!(log_class_size >= 0.0) || !std::isfinite(log_class_size))
    throw InvalidInput("planner: invalid class size");
  if (gamma == 0.0)
    throw InfeasiblePlan("planner: gamma = 0 makes lambda = 4*eta*A*gamma/(1-gamma) vanish");
}

/// 8 A^{3/2} sqrt(gamma log(2 T |Pi| / delta)) / (1-gamma)^{5/2}.
inline double c_of_t(double T, double A, double gamma, double log_class_size, double delta) {
  const double log_term = std::log(2.0) + std::log(T) + log_class_size - std::log(delta);
  return 8.0 * std::pow(A, 1.5) * std::sqrt(gamma * log_term) / std::pow(1.0 - gamma, 2.5);
}

inline constexpr int kGridPerDecade = 32;
inline constexpr int kMaxDoublings = 60;
inline constexpr int kMaxGridPoints = 32 * 40;

inline double grid_eta(double cap, int k) {
  return cap * std::pow(10.0, -static_cast<double>(k) / kGridPerDecade);
}

inline bool all_ok(const std::vector<PlanCondition>& cs) {
  for (const auto& c : cs)
    if (!c.ok) return false;
  return true;
}

}  // namespace detail

/**
 * Re-checks a local-mode plan: eta <= eps(1-g)^3/(40g);
 * eta T >= (1-g)/(2gA) log(1/(20 eps (1-g)^2));
 * 2/((1-g) eta T) + 5 C(T) sqrt(eta) <= 3 eps/10; plus lambda < 1 and
 * eta < (1-g)/(4Ag).
 */
inline std::vector<PlanCondition> check_local_conditions(const VrcpiParams& p, std::size_t num_actions,
                                                         double gamma, double log_class_size,
                                                         double eps, double delta) {
  const double A = static_cast<double>(num_actions);
  const double T = static_cast<double>(p.horizon);
  const double om = 1.0 - gamma;
  const double ct = detail::c_of_t(T, A, gamma, log_class_size, delta);
  return {
      {"eta_cap", p.eta, eps * om * om * om / (40.0 * gamma), p.eta <= eps * om * om * om / (40.0 * gamma)},
      {"eta_T_floor", p.eta * T, om / (2.0 * gamma * A) * std::log(1.0 / (20.0 * eps * om * om)),
       p.eta * T >= om / (2.0 * gamma * A) * std::log(1.0 / (20.0 * eps * om * om))},
      {"accuracy", 2.0 / (om * p.eta * T) + 5.0 * ct * std::sqrt(p.eta), 0.3 * eps,
       2.0 / (om * p.eta * T) + 5.0 * ct * std::sqrt(p.eta) <= 0.3 * eps},
      {"lambda_below_one", p.lambda, 1.0, p.lambda < 1.0},
      {"eta_below_variance_cap", p.eta, om / (4.0 * A * gamma), p.eta < om / (4.0 * A * gamma)},
  };
}

/**
 * Re-checks a global-mode plan: eta T >= 2 C_inf log(10/(eps(1-g)));
 * eta log(2T|Pi|/delta) <= eps^2 (1-g)^5 / (6400 A^3); eta <= eps(1-g)^3/(40 g C_inf);
 * plus lambda < 1 and eta < (1-g)/(4Ag).
 */
inline std::vector<PlanCondition> check_global_conditions(const VrcpiParams& p, std::size_t num_actions,
                                                          double gamma, double log_class_size,
                                                          double eps, double delta, double c_inf) {
  const double A = static_cast<double>(num_actions);
  const double T = static_cast<double>(p.horizon);
  const double om = 1.0 - gamma;
  const double log_term = std::log(2.0) + std::log(T) + log_class_size - std::log(delta);
  const double rhs2 = eps * eps * std::pow(om, 5) / (6400.0 * A * A * A);
  const double rhs3 = eps * om * om * om / (40.0 * gamma * c_inf);
  return {
      {"eta_T_floor", p.eta * T, 2.0 * c_inf * std::log(10.0 / (eps * om)),
       p.eta * T >= 2.0 * c_inf * std::log(10.0 / (eps * om))},
      {"concentration", p.eta * log_term, rhs2, p.eta * log_term <= rhs2},
      {"eta_cap", p.eta, rhs3, p.eta <= rhs3},
      {"lambda_below_one", p.lambda, 1.0, p.lambda < 1.0},
      {"eta_below_variance_cap", p.eta, om / (4.0 * A * gamma), p.eta < om / (4.0 * A * gamma)},
  };
}

/// Local-optimality plan: smallest T on a doubling grid from 8, then the largest
/// eta on a 32-per-decade grid below the caps that meets every condition.
inline PlanReport plan_local(double eps, double delta, std::size_t num_actions, double gamma,
                             double log_class_size) {
  detail::check_plan_inputs(eps, delta, num_actions, gamma, log_class_size);
  const double A = static_cast<double>(num_actions);
  const double om = 1.0 - gamma;
  const double cap = std::min(eps * om * om * om / (40.0 * gamma), om / (4.0 * A * gamma));
  std::string last_failure = "eta_T_floor";
  std::uint64_t T = 8;
  for (int d = 0; d <= detail::kMaxDoublings; ++d, T *= 2) {
    for (int k = 0; k < detail::kMaxGridPoints; ++k) {
      VrcpiParams p;
      p.eta = detail::grid_eta(cap, k);
      p.lambda = planner_lambda(p.eta, num_actions, gamma);
      p.horizon = T;
      const auto cs = check_local_conditions(p, num_actions, gamma, log_class_size, eps, delta);
      // smaller eta only makes the eta*T floor harder
      if (!cs[1].ok) {
        last_failure = cs[1].name;
        break;
      }
      if (!detail::all_ok(cs)) {
        for (const auto& c : cs)
          if (!c.ok) last_failure = c.name;
        continue;
      }
      p.erm_tolerance = eps * om * om / (60.0 * A);
      p.target_eps = eps;
      p.confidence = delta;
      p.return_option = ReturnOption::MinCertificateSecondHalf;
      return {p, eps * om * om / (80.0 * A),
              detail::c_of_t(static_cast<double>(T), A, gamma, log_class_size, delta),
              std::numeric_limits<double>::quiet_NaN(), cs};
    }
  }
  throw InfeasiblePlan("plan_local: no feasible (eta, T) on the search grid; last failing condition: " +
                       last_failure);
}

/// Global-optimality plan (final iterate) given a finite C_inf.
inline PlanReport plan_global(double eps, double delta, std::size_t num_actions, double gamma,
                              double log_class_size, double c_inf) {
  detail::check_plan_inputs(eps, delta, num_actions, gamma, log_class_size);
  if (!std::isfinite(c_inf))
    throw InfeasiblePlan("plan_global: C_inf is infinite; use plan_local with an exploratory mu");
  if (!(c_inf > 0.0)) throw InvalidInput("plan_global: C_inf must be positive");
  const double A = static_cast<double>(num_actions);
  const double om = 1.0 - gamma;
  const double cap = std::min(eps * om * om * om / (40.0 * gamma * c_inf), om / (4.0 * A * gamma));
  std::string last_failure = "eta_T_floor";
  std::uint64_t T = 8;
  for (int d = 0; d <= detail::kMaxDoublings; ++d, T *= 2) {
    for (int k = 0; k < detail::kMaxGridPoints; ++k) {
      VrcpiParams p;
      p.eta = detail::grid_eta(cap, k);
      p.lambda = planner_lambda(p.eta, num_actions, gamma);
      p.horizon = T;
      const auto cs = check_global_conditions(p, num_actions, gamma, log_class_size, eps, delta, c_inf);
      if (!cs[1].ok || !cs[2].ok || !cs[3].ok || !cs[4].ok) {
        for (const auto& c : cs)
          if (!c.ok) last_failure = c.name;
        continue;
      }
      // first eta meeting the upper bounds; smaller ones only shrink eta*T
      if (!cs[0].ok) {
        last_failure = cs[0].name;
        break;
      }
      p.erm_tolerance = eps * om * om / (20.0 * A * c_inf);
      p.target_eps = eps;
      p.confidence = delta;
      p.return_option = ReturnOption::FinalIterate;
      PlanReport r{p, eps * om * om / (80.0 * A),
                   detail::c_of_t(static_cast<double>(T), A, gamma, log_class_size, delta),
                   c_inf * c_inf * log_class_size * A * A * A / (std::pow(om, 5) * eps * eps), cs};
      return r;
    }
  }
  throw InfeasiblePlan("plan_global: no feasible (eta, T) on the search grid; last failing condition: " +
                       last_failure);
}

}  // namespace vrcpi
