#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vrcpi/erm.hpp"
#include "vrcpi/exact.hpp"
#include "vrcpi/samplers.hpp"
#include "vrcpi/vrcpi.hpp"

namespace vrcpi {

struct CpiParams {
  double eta = 0.0;
  std::uint64_t horizon = 0;
  std::size_t batch_per_round = 3;
  ReturnOption return_option = ReturnOption::MinCertificateSecondHalf;
  double window_start = 0.5;
  /// Use the exact gradient instead of sampled tuples (no episodes are drawn).
  bool exact_gradient = false;
};

inline void validate_cpi_params(const CpiParams& p) {
  if (!(p.eta > 0.0 && p.eta <= 1.0)) throw InvalidInput("cpi params: eta must lie in (0, 1]");
  if (p.horizon < 1) throw InvalidInput("cpi params: horizon must be at least 1");
  if (p.batch_per_round < 1) throw InvalidInput("cpi params: batch must be at least 1");
  if (!(p.window_start >= 0.0 && p.window_start <= 1.0))
    throw InvalidInput("cpi params: window_start must lie in [0, 1]");
}

/// Fresh-batch dataset for one round: tuples (s, Q_hat / ((1-g) batch)).
inline ErmDataset cpi_round_dataset(const TabularMdp& mdp, const Policy& pi, const Vector& start,
                                    std::size_t batch, std::uint64_t seed, std::uint64_t first_slot,
                                    EpisodeBudget& budget) {
  const double w = 1.0 / ((1.0 - mdp.discount()) * static_cast<double>(batch));
  std::vector<LossSample> tuples;
  tuples.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    Rng rng = substream(seed, first_slot + i);
    const QSample q = q_sample(mdp, pi, start, rng);
    check_sample_bounds(q, mdp.num_actions(), mdp.discount());
    budget.record(q.episode_len);
    tuples.push_back({q.state, w * q.q_hat, 0});
  }
  ErmDataset ds(mdp.num_states(), mdp.num_actions(), 1.0);
  ds.decay_and_append(1.0, std::move(tuples));
  return ds;
}

/// Conservative policy iteration with a fresh gradient estimate every round.
/// Round t draws from episode slots (t-1)*batch ... t*batch - 1 of `seed`.
inline RunResult run_cpi(const TabularMdp& mdp, const PolicyClass& cls, const Vector& start,
                         const CpiParams& params, std::uint64_t seed, const RunOptions& opts = {}) {
  validate_cpi_params(params);
  if (cls.num_states() != mdp.num_states() || cls.num_actions() != mdp.num_actions())
    throw InvalidInput("run_cpi: class shape does not match the MDP");
  detail::check_start(mdp, start);
  validate_distribution(start, "start distribution");

  Policy pi = cls.member(0);
  EpisodeBudget budget;
  budget.safety_cap = safety_cap(mdp.discount());
  detail::IterateSelector select(params.return_option, params.window_start, params.horizon);
  RunResult out{pi, 0, {}, {}, {}, 0.0, 0.0};
  out.trace.reserve(static_cast<std::size_t>(params.horizon));

  for (std::uint64_t t = 1; t <= params.horizon; ++t) {
    ScoreMatrix agg;
    if (params.exact_gradient) {
      agg = gradient(mdp, pi, start);
    } else {
      try {
        agg = cpi_round_dataset(mdp, pi, start, params.batch_per_round, seed,
                                (t - 1) * params.batch_per_round, budget)
                  .aggregate();
      } catch (const TruncationError& e) {
        throw TruncationError(std::string(e.what()) + " (round " + std::to_string(t) + ")",
                              e.steps_consumed());
      }
    }
    const BestResponse br = cls.best_response(agg);

    IterationTrace row;
    row.t = t;
    row.episodes = budget.episodes_used;
    row.a_hat = inner(agg, br.policy.matrix() - pi.matrix());
    row.vt_norm_1inf = norm_1inf(agg);
    if (opts.oracle_eval && detail::is_checkpoint(t, params.horizon, opts.checkpoint_stride)) {
      const auto ex = exact_derivatives(mdp, pi, start);
      row.exact_gap = cls.best_response(ex.gradient).objective - inner(ex.gradient, pi.matrix());
      row.value = ex.value;
      row.deviation = class_abs_max(cls, agg - ex.gradient);
    }
    out.trace.push_back(row);
    select.offer(t, row.a_hat, pi);
    out.max_vt_norm = std::max(out.max_vt_norm, row.vt_norm_1inf);
    pi = mix_policies(pi, br.policy, params.eta);
  }

  out.policy = select.policy();
  out.returned_round = select.round();
  out.budget = budget;
  return out;
}

}  // namespace vrcpi
