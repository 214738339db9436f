#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <ostream>
#include <vector>

#include <json.hpp>

#include "vrcpi/errors.hpp"
#include "vrcpi/mdp.hpp"

namespace vrcpi {

/// (state, loss vector) pair; `decay_epoch` is the round it was appended in.
struct LossSample {
  std::size_t state;
  Vector loss;
  std::uint64_t decay_epoch = 0;
};

/**
 * Dataset of per-state linear losses with geometric decay.
 *
 * Decay is lazy: an entry appended in round e has effective loss
 * loss * (1 - lambda)^(round - e). Entries whose scale falls below 1e-300 are
 * dropped from the front, so stored_size() can trail size(); the total
 * dropped mass is below 1e-300 times the sum of their sup norms.
 */
class ErmDataset {
 public:
  static constexpr double kPruneScale = 1e-300;

  ErmDataset(std::size_t num_states, std::size_t num_actions, double lambda)
      : S_(num_states), A_(num_actions), lambda_(lambda) {
    if (num_states < 1 || num_actions < 1) throw InvalidInput("dataset: empty shape");
    check_lambda(lambda);
    agg_ = ScoreMatrix::Zero(static_cast<Eigen::Index>(S_), static_cast<Eigen::Index>(A_));
  }

  std::size_t num_states() const { return S_; }
  std::size_t num_actions() const { return A_; }
  double lambda() const { return lambda_; }
  std::uint64_t round() const { return round_; }
  /// Number of tuples ever appended (pruned ones included).
  std::uint64_t size() const { return appended_; }
  std::size_t stored_size() const { return entries_.size(); }
  const std::deque<LossSample>& entries() const { return entries_; }

  /// (1 - lambda)^(round - epoch).
  double scale(std::uint64_t epoch) const {
    const std::uint64_t k = round_ - epoch;
    if (k == 0) return 1.0;
    if (lambda_ == 1.0) return 0.0;
    return std::exp(static_cast<double>(k) * std::log1p(-lambda_));
  }

  Vector effective_loss(const LossSample& e) const { return scale(e.decay_epoch) * e.loss; }

  /// Starts a new round (decaying everything stored so far) and appends `tuples`.
  void decay_and_append(double lambda, std::vector<LossSample> tuples) {
    check_lambda(lambda);
    if (lambda != lambda_) throw InvalidInput("dataset: decay rate changed between rounds");
    for (const auto& t : tuples) {
      if (t.state >= S_) throw InvalidInput("dataset: state out of range");
      if (static_cast<std::size_t>(t.loss.size()) != A_) throw InvalidInput("dataset: loss length");
      if (!t.loss.allFinite()) throw InvalidInput("dataset: non-finite loss");
    }
    ++round_;
    while (!entries_.empty() && scale(entries_.front().decay_epoch) < kPruneScale)
      entries_.pop_front();
    agg_ *= 1.0 - lambda_;
    for (auto& t : tuples) {
      t.decay_epoch = round_;
      agg_.row(static_cast<Eigen::Index>(t.state)) += t.loss.transpose();
      entries_.push_back(std::move(t));
    }
    appended_ += tuples.size();
  }

  /// Sum of effective losses per state, as an S x A matrix, kept up to date
  /// round by round.
  const ScoreMatrix& aggregate() const { return agg_; }

  /// The same sum recomputed from the stored entries.
  ScoreMatrix recompute_aggregate() const {
    ScoreMatrix agg = ScoreMatrix::Zero(static_cast<Eigen::Index>(S_), static_cast<Eigen::Index>(A_));
    std::uint64_t epoch = round_ + 1;
    double sc = 0.0;
    for (const auto& e : entries_) {
      if (e.decay_epoch != epoch) {
        epoch = e.decay_epoch;
        sc = scale(epoch);
      }
      agg.row(static_cast<Eigen::Index>(e.state)) += sc * e.loss.transpose();
    }
    return agg;
  }

  /// Sum over entries of effective_loss^T pi(s).
  double loss(const ScoreMatrix& pi) const {
    if (static_cast<std::size_t>(pi.rows()) != S_ || static_cast<std::size_t>(pi.cols()) != A_)
      throw InvalidInput("dataset_loss: policy shape mismatch");
    double total = 0.0;
    for (const auto& e : entries_)
      total += scale(e.decay_epoch) * e.loss.dot(pi.row(static_cast<Eigen::Index>(e.state)).transpose());
    return total;
  }

  /// One JSON object per line with the effective loss materialized.
  void dump_jsonl(std::ostream& out) const {
    for (const auto& e : entries_) {
      nlohmann::json line;
      line["state"] = e.state;
      line["decay_epoch"] = e.decay_epoch;
      const Vector l = effective_loss(e);
      line["loss"] = std::vector<double>(l.data(), l.data() + l.size());
      out << line.dump() << '\n';
    }
  }

 private:
  static void check_lambda(double lambda) {
    if (!(lambda > 0.0 && lambda <= 1.0)) throw InvalidInput("dataset: lambda must lie in (0, 1]");
  }

  std::size_t S_;
  std::size_t A_;
  double lambda_;
  std::uint64_t round_ = 0;
  std::uint64_t appended_ = 0;
  std::deque<LossSample> entries_;
  ScoreMatrix agg_;
};

inline void decay_and_append(ErmDataset& ds, double lambda, std::vector<LossSample> tuples) {
  ds.decay_and_append(lambda, std::move(tuples));
}

inline double dataset_loss(const ErmDataset& ds, const Policy& pi) { return ds.loss(pi.matrix()); }

struct ErmResult {
  Policy policy;
  double objective;
  std::optional<std::size_t> member_index;
  /// epsilon_ERM * sum_i ||l_i||_inf: the slack the oracle is allowed.
  double allowed_slack;
};

/// Exact oracle: maximizes the dataset objective over the class (lowest index on ties).
inline ErmResult erm_solve(const ErmDataset& ds, const PolicyClass& cls, double tolerance = 0.0) {
  if (cls.num_states() != ds.num_states() || cls.num_actions() != ds.num_actions())
    throw InvalidInput("erm_solve: class shape does not match the dataset");
  if (!(tolerance >= 0.0)) throw InvalidInput("erm_solve: negative tolerance");
  double mass = 0.0;
  for (const auto& e : ds.entries()) mass += ds.scale(e.decay_epoch) * e.loss.cwiseAbs().maxCoeff();
  auto best = cls.best_response(ds.aggregate());
  return {std::move(best.policy), best.objective, best.index, tolerance * mass};
}

}  // namespace vrcpi
