#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "vrcpi/erm.hpp"
#include "vrcpi/errors.hpp"
#include "vrcpi/exact.hpp"
#include "vrcpi/mdp.hpp"
#include "vrcpi/planner.hpp"
#include "vrcpi/rng.hpp"
#include "vrcpi/samplers.hpp"

namespace vrcpi {

/// Explicit STORM-style estimate v_t, kept next to the dataset as a cross-check.
struct GradientEstimate {
  ScoreMatrix v;
};

struct IterationTrace {
  std::uint64_t t = 0;
  std::uint64_t episodes = 0;
  double a_hat = 0.0;
  std::optional<double> exact_gap;
  std::optional<double> value;
  double vt_norm_1inf = 0.0;
  /// max over probe policies of |dataset_loss - <v_t, pi>|, on cross-check rounds.
  std::optional<double> vt_residual;
  /// max over the class of |<v_t - grad V^{pi_t}, pi>|, on oracle rounds.
  std::optional<double> deviation;
};

struct RunOptions {
  /// Exact gap/value of pi_t every `checkpoint_stride` rounds (and at t = 1, T).
  bool oracle_eval = true;
  std::uint64_t checkpoint_stride = 10;
  /// Dataset/estimator cross-check every this many rounds (and at t = T); 0 disables it.
  std::uint64_t equivalence_stride = 1;
  std::size_t num_probes = 16;
  double equivalence_tol = 1e-9;
};

struct RunResult {
  Policy policy;
  std::uint64_t returned_round;
  std::vector<IterationTrace> trace;
  EpisodeBudget budget;
  GradientEstimate estimate;
  double max_vt_residual = 0.0;
  double max_vt_norm = 0.0;
};

/// Everything one round contributes to the dataset and the estimate.
struct RoundInputs {
  QSample q;
  HSample h;
  /// pi_t - pi_{t-1}.
  ScoreMatrix delta;
};

/// Coefficient gamma (1 - lambda) / (1 - gamma)^2 of the Hessian-correction tuples.
inline double correction_coefficient(double lambda, double gamma) {
  return gamma * (1.0 - lambda) / ((1.0 - gamma) * (1.0 - gamma));
}

/// The three tuples appended in a round:
/// (s, lambda/(1-g) Q_hat), (s1, c H_hat delta(s2)), (s2, c H_hat^T delta(s1)).
inline std::vector<LossSample> round_tuples(const RoundInputs& in, double lambda, double gamma) {
  const double c = correction_coefficient(lambda, gamma);
  const auto s1 = static_cast<Eigen::Index>(in.h.state_1);
  const auto s2 = static_cast<Eigen::Index>(in.h.state_2);
  std::vector<LossSample> out;
  out.push_back({in.q.state, lambda / (1.0 - gamma) * in.q.q_hat, 0});
  out.push_back({in.h.state_1, c * (in.h.h_hat * in.delta.row(s2).transpose()), 0});
  out.push_back({in.h.state_2, c * (in.h.h_hat.transpose() * in.delta.row(s1).transpose()), 0});
  return out;
}

/// v_t = (1 - lambda) v_{t-1} + the round's three row updates.
inline GradientEstimate track_estimator(const GradientEstimate& prev, const RoundInputs& in,
                                        double lambda, double gamma) {
  GradientEstimate next{(1.0 - lambda) * prev.v};
  const double c = correction_coefficient(lambda, gamma);
  const auto s = static_cast<Eigen::Index>(in.q.state);
  const auto s1 = static_cast<Eigen::Index>(in.h.state_1);
  const auto s2 = static_cast<Eigen::Index>(in.h.state_2);
  next.v.row(s) += lambda / (1.0 - gamma) * in.q.q_hat.transpose();
  // H_hat has a single nonzero entry, so each correction touches one action
  const auto a1 = static_cast<Eigen::Index>(in.h.action_1);
  const auto a2 = static_cast<Eigen::Index>(in.h.action_2);
  const double h = in.h.h_hat(a1, a2);
  next.v(s1, a1) += c * h * in.delta(s2, a2);
  next.v(s2, a2) += c * h * in.delta(s1, a1);
  return next;
}

/// max over members of |<x, pi>| for a linear functional x.
inline double class_abs_max(const PolicyClass& cls, const ScoreMatrix& x) {
  return std::max(cls.best_response(x).objective, cls.best_response(-x).objective);
}

/// max over the class of |<v_t - grad V^{pi_t}_start, pi>|.
inline double estimator_deviation(const TabularMdp& mdp, const PolicyClass& cls, const Vector& start,
                                  const Policy& pi_t, const ScoreMatrix& v) {
  return class_abs_max(cls, v - gradient(mdp, pi_t, start));
}

/// Random interior policies used to cross-check dataset and estimate.
inline std::vector<Policy> probe_policies(std::size_t S, std::size_t A, std::size_t n,
                                          std::uint64_t seed) {
  Rng rng(tagged_seed(seed, StreamTag::kProbes));
  std::vector<Policy> out;
  for (std::size_t i = 0; i < n; ++i) {
    ScoreMatrix m(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(A));
    for (std::size_t s = 0; s < S; ++s) {
      const auto w = dirichlet_uniform(rng, A);
      for (std::size_t a = 0; a < A; ++a)
        m(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) = w[a];
      m.row(static_cast<Eigen::Index>(s)) /= m.row(static_cast<Eigen::Index>(s)).sum();
    }
    out.emplace_back(std::move(m));
  }
  return out;
}

namespace detail {

inline bool is_checkpoint(std::uint64_t t, std::uint64_t T, std::uint64_t stride) {
  return t == 1 || t == T || (stride > 0 && t % stride == 0);
}

inline std::uint64_t window_first_round(double window_start, std::uint64_t T) {
  auto lo = static_cast<std::uint64_t>(std::ceil(window_start * static_cast<double>(T)));
  if (lo < 1) lo = 1;
  if (lo > T) lo = T;
  return lo;
}

/// Tracks the returned iterate for either return option.
class IterateSelector {
 public:
  IterateSelector(ReturnOption opt, double window_start, std::uint64_t T)
      : opt_(opt), lo_(window_first_round(window_start, T)), T_(T) {}

  void offer(std::uint64_t t, double a_hat, const Policy& pi) {
    if (opt_ == ReturnOption::FinalIterate) {
      if (t == T_) best_.emplace(t, a_hat, pi);
      return;
    }
    if (t < lo_) return;
    if (!best_ || a_hat < std::get<1>(*best_)) best_.emplace(t, a_hat, pi);
  }

  std::uint64_t round() const { return std::get<0>(*best_); }
  const Policy& policy() const { return std::get<2>(*best_); }

 private:
  ReturnOption opt_;
  std::uint64_t lo_;
  std::uint64_t T_;
  std::optional<std::tuple<std::uint64_t, double, Policy>> best_;
};

}  // namespace detail

/**
 * Variance-reduced conservative policy iteration.
 *
 * Round t uses episode slots 3(t-1) (Q-sampler at pi_t), 3(t-1)+1 (the mixing
 * weight b) and 3(t-1)+2 (H-sampler at (1-b) pi_t + b pi_{t-1}) of `seed`.
 * Every round charges three episodes to the budget: one for the Q-sampler and
 * two for the H-sampler, which strings two rollouts together.
 */
inline RunResult run(const TabularMdp& mdp, const PolicyClass& cls, const Vector& start,
                     const VrcpiParams& params, std::uint64_t seed, const RunOptions& opts = {}) {
  const std::size_t S = mdp.num_states();
  const std::size_t A = mdp.num_actions();
  const double gamma = mdp.discount();
  if (cls.num_states() != S || cls.num_actions() != A)
    throw InvalidInput("run: class shape does not match the MDP");
  detail::check_start(mdp, start);
  validate_distribution(start, "start distribution");
  validate_params(params, A, gamma);

  const double lambda = params.lambda;
  const double norm_bound = 2.0 * static_cast<double>(A) / ((1.0 - gamma) * (1.0 - gamma));
  const auto probes = probe_policies(S, A, opts.num_probes, seed);

  Policy pi_prev = cls.member(0);
  Policy pi = pi_prev;
  ErmDataset ds(S, A, lambda);
  GradientEstimate est{ScoreMatrix::Zero(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(A))};
  EpisodeBudget budget;
  budget.safety_cap = safety_cap(gamma);
  detail::IterateSelector select(params.return_option, params.window_start, params.horizon);
  RunResult out{pi, 0, {}, {}, {}, 0.0, 0.0};
  out.trace.reserve(static_cast<std::size_t>(params.horizon));

  for (std::uint64_t t = 1; t <= params.horizon; ++t) {
    const std::uint64_t slot = 3 * (t - 1);
    RoundInputs in;
    try {
      Rng rq = substream(seed, slot);
      in.q = q_sample(mdp, pi, start, rq);
      const double b = substream(seed, slot + 1).uniform();
      const Policy pi_bar = mix_policies(pi, pi_prev, b);
      Rng rh = substream(seed, slot + 2);
      in.h = h_sample(mdp, pi_bar, start, rh);
    } catch (const TruncationError& e) {
      throw TruncationError(std::string(e.what()) + " (round " + std::to_string(t) + ")",
                            e.steps_consumed());
    }
    check_sample_bounds(in.q, A, gamma);
    check_sample_bounds(in.h, A, gamma);
    budget.record(in.q.episode_len);
    budget.record(in.h.episode_len);
    ++budget.episodes_used;
    in.delta = pi.matrix() - pi_prev.matrix();

    ds.decay_and_append(lambda, round_tuples(in, lambda, gamma));
    est = track_estimator(est, in, lambda, gamma);

    IterationTrace row;
    row.t = t;
    row.episodes = budget.episodes_used;
    row.vt_norm_1inf = norm_1inf(est.v);
    out.max_vt_norm = std::max(out.max_vt_norm, row.vt_norm_1inf);
    if (row.vt_norm_1inf > norm_bound * (1.0 + 1e-12)) {
      std::ostringstream os;
      os.precision(17);
      os << "round " << t << ": ||v_t||_{1,inf} = " << row.vt_norm_1inf << " exceeds 2A/(1-gamma)^2 = "
         << norm_bound << " (eta=" << params.eta << ", lambda=" << lambda << ")";
      throw InvariantViolation(os.str());
    }

    const ScoreMatrix agg = ds.aggregate();
    const BestResponse br = cls.best_response(agg);
    const ScoreMatrix step_dir = br.policy.matrix() - pi.matrix();
    row.a_hat = inner(agg, step_dir);

    const bool cross_check = opts.equivalence_stride > 0 &&
                             (t % opts.equivalence_stride == 0 || t == params.horizon);
    if (cross_check) {
      double worst = 0.0;
      for (const auto& p : probes)
        worst = std::max(worst, std::abs(ds.loss(p.matrix()) - inner(est.v, p.matrix())));
      worst = std::max(worst, std::abs(row.a_hat - inner(est.v, step_dir)));
      row.vt_residual = worst;
      out.max_vt_residual = std::max(out.max_vt_residual, worst);
      if (worst > opts.equivalence_tol) {
        std::ostringstream os;
        os.precision(17);
        os << "round " << t << ": dataset loss and <v_t, pi> differ by " << worst;
        throw InvariantViolation(os.str());
      }
    }

    if (opts.oracle_eval && detail::is_checkpoint(t, params.horizon, opts.checkpoint_stride)) {
      const auto ex = exact_derivatives(mdp, pi, start);
      row.exact_gap = cls.best_response(ex.gradient).objective - inner(ex.gradient, pi.matrix());
      row.value = ex.value;
      row.deviation = class_abs_max(cls, est.v - ex.gradient);
    }
    out.trace.push_back(row);
    select.offer(t, row.a_hat, pi);

    Policy next = mix_policies(pi, br.policy, params.eta);
    pi_prev = std::move(pi);
    pi = std::move(next);
  }

  out.policy = select.policy();
  out.returned_round = select.round();
  out.budget = budget;
  out.estimate = std::move(est);
  return out;
}

}  // namespace vrcpi
