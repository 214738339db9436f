#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vrcpi/errors.hpp"

namespace vrcpi {

/// Real S x A matrix: gradients, estimators, aggregated losses.
using ScoreMatrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Tolerance for every probability-simplex check. Nothing is renormalized.
inline constexpr double kProbTol = 1e-12;

inline void require_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw InvalidInput(std::string(what) + ": non-finite entry");
}

/// Frobenius inner product <X, Y> = sum_{s,a} X(s,a) Y(s,a).
inline double inner(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols())
    throw InvalidInput("inner: shape mismatch");
  // row sums first, in the same order norm_1inf reduces, so the dual witness is exact
  return (x.array() * y.array()).rowwise().sum().sum();
}

/// ||m||_{inf,1}: largest row l1 norm.
inline double norm_inf1(const ScoreMatrix& m) {
  require_finite(m, "norm_inf1");
  if (m.size() == 0) return 0.0;
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

/// ||m||_{1,inf}: sum of the rows' largest absolute entries.
inline double norm_1inf(const ScoreMatrix& m) {
  require_finite(m, "norm_1inf");
  if (m.size() == 0) return 0.0;
  return m.cwiseAbs().rowwise().maxCoeff().sum();
}

/**
 * Sign/argmax witness of the duality between ||.||_{inf,1} and ||.||_{1,inf}.
 *
 * Returns X with one entry of magnitude one per row, placed at the row's
 * largest |y| (lowest column on ties) with the sign of that entry, so that
 * ||X||_{inf,1} = 1 and <X, y> = ||y||_{1,inf}. Zero entries get sign +1.
 */
inline ScoreMatrix dual_witness_inf1(const ScoreMatrix& y) {
  require_finite(y, "dual_witness_inf1");
  ScoreMatrix x = ScoreMatrix::Zero(y.rows(), y.cols());
  for (Eigen::Index s = 0; s < y.rows(); ++s) {
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < y.cols(); ++a)
      if (std::abs(y(s, a)) > std::abs(y(s, best))) best = a;
    x(s, best) = y(s, best) < 0.0 ? -1.0 : 1.0;
  }
  return x;
}

/// Checks that `p` is a probability vector within kProbTol; `what` names it in errors.
inline void validate_distribution(const Vector& p, const std::string& what) {
  if (!p.allFinite()) throw InvalidInput(what + ": non-finite entry");
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p(i) < 0.0) {
      std::ostringstream os;
      os << what << ": negative probability at index " << i;
      throw StochasticityError(os.str());
    }
  if (std::abs(p.sum() - 1.0) > kProbTol) {
    std::ostringstream os;
    os.precision(17);
    os << what << ": sums to " << p.sum() << ", expected 1";
    throw StochasticityError(os.str());
  }
}

/**
 * A stochastic policy: an S x A row-stochastic matrix, i.e. a point in the
 * product of per-state action simplices. Immutable after construction.
 */
class Policy {
 public:
  explicit Policy(ScoreMatrix probs) : probs_(std::move(probs)) {
    if (probs_.rows() < 1 || probs_.cols() < 1) throw InvalidInput("policy: empty shape");
    for (Eigen::Index s = 0; s < probs_.rows(); ++s)
      validate_distribution(probs_.row(s).transpose(), "policy row " + std::to_string(s));
  }

  static Policy uniform(std::size_t num_states, std::size_t num_actions) {
    return Policy(ScoreMatrix::Constant(static_cast<Eigen::Index>(num_states),
                                        static_cast<Eigen::Index>(num_actions),
                                        1.0 / static_cast<double>(num_actions)));
  }

  /// Deterministic policy taking actions[s] in state s.
  static Policy deterministic(const std::vector<std::size_t>& actions, std::size_t num_actions) {
    ScoreMatrix m = ScoreMatrix::Zero(static_cast<Eigen::Index>(actions.size()),
                                      static_cast<Eigen::Index>(num_actions));
    for (std::size_t s = 0; s < actions.size(); ++s) {
      if (actions[s] >= num_actions) throw InvalidInput("deterministic policy: action out of range");
      m(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(actions[s])) = 1.0;
    }
    return Policy(std::move(m));
  }

  std::size_t num_states() const { return static_cast<std::size_t>(probs_.rows()); }
  std::size_t num_actions() const { return static_cast<std::size_t>(probs_.cols()); }
  const ScoreMatrix& matrix() const { return probs_; }
  double operator()(std::size_t s, std::size_t a) const {
    return probs_(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
  }
  auto row(std::size_t s) const { return probs_.row(static_cast<Eigen::Index>(s)); }

  friend bool operator==(const Policy& l, const Policy& r) {
    return l.probs_.rows() == r.probs_.rows() && l.probs_.cols() == r.probs_.cols() &&
           l.probs_ == r.probs_;
  }

 private:
  ScoreMatrix probs_;
};

/// (1 - w) p + w q.
inline Policy mix_policies(const Policy& p, const Policy& q, double w) {
  if (!(w >= 0.0 && w <= 1.0)) throw InvalidInput("mix_policies: weight outside [0, 1]");
  if (p.num_states() != q.num_states() || p.num_actions() != q.num_actions())
    throw InvalidInput("mix_policies: shape mismatch");
  if (w == 0.0) return p;
  if (w == 1.0) return q;
  return Policy((1.0 - w) * p.matrix() + w * q.matrix());
}

/**
 * Finite discounted MDP with dense transitions.
 *
 * Transition probabilities are stored with one row per state-action pair,
 * row s*A + a holding P(. | s, a); the serialized form keeps the next-state
 * index outermost (see io.hpp).
 */
class TabularMdp {
 public:
  /// `transitions` has shape (S*A) x S; `reward` is S x A.
  TabularMdp(Eigen::MatrixXd transitions, ScoreMatrix reward, double discount, Vector rho,
             std::optional<Vector> mu = std::nullopt)
      : trans_(std::move(transitions)),
        reward_(std::move(reward)),
        discount_(discount),
        rho_(std::move(rho)),
        mu_(mu ? std::move(*mu) : rho_) {
    validate();
  }

  std::size_t num_states() const { return static_cast<std::size_t>(reward_.rows()); }
  std::size_t num_actions() const { return static_cast<std::size_t>(reward_.cols()); }
  double discount() const { return discount_; }
  const ScoreMatrix& reward() const { return reward_; }
  double reward(std::size_t s, std::size_t a) const {
    return reward_(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
  }
  const Vector& rho() const { return rho_; }
  const Vector& mu() const { return mu_; }
  const Eigen::MatrixXd& transitions() const { return trans_; }

  /// P(next | s, a).
  double prob(std::size_t next, std::size_t s, std::size_t a) const {
    return trans_(row_index(s, a), static_cast<Eigen::Index>(next));
  }
  /// Row view of P(. | s, a).
  auto next_row(std::size_t s, std::size_t a) const { return trans_.row(row_index(s, a)); }

  Eigen::Index row_index(std::size_t s, std::size_t a) const {
    return static_cast<Eigen::Index>(s * num_actions() + a);
  }

  /// Same MDP with a different reset distribution.
  TabularMdp with_mu(Vector mu) const { return TabularMdp(trans_, reward_, discount_, rho_, std::move(mu)); }

  friend bool operator==(const TabularMdp& l, const TabularMdp& r) {
    return l.discount_ == r.discount_ && l.reward_.rows() == r.reward_.rows() &&
           l.reward_.cols() == r.reward_.cols() && l.reward_ == r.reward_ && l.trans_ == r.trans_ &&
           l.rho_ == r.rho_ && l.mu_ == r.mu_;
  }

 private:
  void validate() const {
    const auto S = reward_.rows();
    const auto A = reward_.cols();
    if (S < 1 || A < 1) throw InvalidInput("mdp: need at least one state and one action");
    if (trans_.rows() != S * A || trans_.cols() != S)
      throw InvalidInput("mdp: transition shape does not match S x A");
    if (!(discount_ >= 0.0 && discount_ < 1.0))
      throw InvalidInput("mdp: invalid discount, need 0 <= gamma < 1");
    if (!reward_.allFinite()) throw InvalidInput("mdp: non-finite reward");
    for (Eigen::Index s = 0; s < S; ++s)
      for (Eigen::Index a = 0; a < A; ++a) {
        const double r = reward_(s, a);
        if (r < 0.0 || r > 1.0) {
          std::ostringstream os;
          os << "mdp: reward(" << s << "," << a << ") outside [0, 1]";
          throw InvalidInput(os.str());
        }
        const auto row = trans_.row(s * A + a);
        if (!row.allFinite() || row.minCoeff() < 0.0 || std::abs(row.sum() - 1.0) > kProbTol) {
          std::ostringstream os;
          os.precision(17);
          os << "mdp: transition row (s=" << s << ", a=" << a << ") is not a distribution (sum "
             << row.sum() << ")";
          throw StochasticityError(os.str());
        }
      }
    if (rho_.size() != S || mu_.size() != S) throw InvalidInput("mdp: start distribution size");
    validate_distribution(rho_, "rho");
    validate_distribution(mu_, "mu");
  }

  Eigen::MatrixXd trans_;
  ScoreMatrix reward_;
  double discount_;
  Vector rho_;
  Vector mu_;
};

/// Best class member for a linear objective <score, pi>.
struct BestResponse {
  Policy policy;
  double objective;
  /// Position in the class ordering; empty when it does not fit in size_t.
  std::optional<std::size_t> index;
};

/**
 * A finite policy class.
 *
 * Either an explicit ordered list of distinct policies, or the implicit class
 * of all A^S deterministic policies. Member i of the implicit class takes
 * action digit_s(i) in state s, where digits are base-A with state 0 least
 * significant; member 0 always plays action 0. Linear objectives over the
 * implicit class decompose per state.
 */
class PolicyClass {
 public:
  static PolicyClass explicit_members(std::vector<Policy> members) {
    if (members.empty()) throw InvalidInput("policy class: empty");
    const auto S = members.front().num_states();
    const auto A = members.front().num_actions();
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (members[i].num_states() != S || members[i].num_actions() != A)
        throw InvalidInput("policy class: member shape mismatch");
      for (std::size_t j = 0; j < i; ++j)
        if (members[i] == members[j])
          throw InvalidInput("policy class: duplicate members " + std::to_string(j) + " and " +
                             std::to_string(i));
    }
    PolicyClass c(S, A, false);
    c.members_ = std::move(members);
    return c;
  }

  static PolicyClass all_deterministic(std::size_t num_states, std::size_t num_actions) {
    if (num_states < 1 || num_actions < 1) throw InvalidInput("policy class: empty shape");
    return PolicyClass(num_states, num_actions, true);
  }

  bool is_all_deterministic() const { return all_det_; }
  std::size_t num_states() const { return S_; }
  std::size_t num_actions() const { return A_; }

  /// log |class|; finite even when the count overflows.
  double log_size() const {
    return all_det_ ? static_cast<double>(S_) * std::log(static_cast<double>(A_))
                    : std::log(static_cast<double>(members_.size()));
  }

  /// Number of members when it fits in size_t.
  std::optional<std::size_t> size() const {
    if (!all_det_) return members_.size();
    std::size_t n = 1;
    for (std::size_t s = 0; s < S_; ++s) {
      if (n > std::numeric_limits<std::size_t>::max() / A_) return std::nullopt;
      n *= A_;
    }
    return n;
  }

  Policy member(std::size_t i) const {
    if (!all_det_) {
      if (i >= members_.size()) throw InvalidInput("policy class: member index out of range");
      return members_[i];
    }
    if (auto n = size(); n && i >= *n) throw InvalidInput("policy class: member index out of range");
    std::vector<std::size_t> actions(S_);
    for (std::size_t s = 0; s < S_; ++s) {
      actions[s] = i % A_;
      i /= A_;
    }
    return Policy::deterministic(actions, A_);
  }

  const std::vector<Policy>& explicit_list() const { return members_; }

  /// argmax over members of <score, pi>; ties go to the lowest member index.
  BestResponse best_response(const ScoreMatrix& score) const {
    if (static_cast<std::size_t>(score.rows()) != S_ || static_cast<std::size_t>(score.cols()) != A_)
      throw InvalidInput("best_response: score shape mismatch");
    if (all_det_) {
      std::vector<std::size_t> actions(S_);
      double total = 0.0;
      for (std::size_t s = 0; s < S_; ++s) {
        const auto r = static_cast<Eigen::Index>(s);
        std::size_t best = 0;
        for (std::size_t a = 1; a < A_; ++a)
          if (score(r, static_cast<Eigen::Index>(a)) > score(r, static_cast<Eigen::Index>(best)))
            best = a;
        actions[s] = best;
        total += score(r, static_cast<Eigen::Index>(best));
      }
      std::optional<std::size_t> index;
      if (size()) {
        std::size_t idx = 0;
        for (std::size_t s = S_; s-- > 0;) idx = idx * A_ + actions[s];
        index = idx;
      }
      return {Policy::deterministic(actions, A_), total, index};
    }
    std::size_t best = 0;
    double best_val = inner(score, members_[0].matrix());
    for (std::size_t i = 1; i < members_.size(); ++i) {
      const double v = inner(score, members_[i].matrix());
      if (v > best_val) {
        best_val = v;
        best = i;
      }
    }
    return {members_[best], best_val, best};
  }

 private:
  PolicyClass(std::size_t S, std::size_t A, bool all_det) : S_(S), A_(A), all_det_(all_det) {}

  std::size_t S_;
  std::size_t A_;
  bool all_det_;
  std::vector<Policy> members_;
};

}  // namespace vrcpi
