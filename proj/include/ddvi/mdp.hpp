#pragma once

// Finite discounted MDPs, policy-induced Markov chains, Bellman operators and
// the exact reference solvers every convergence test compares against.

#include <ddvi/error.hpp>
#include <ddvi/types.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ddvi {

inline constexpr double kStochasticTolerance = 1e-12;

/// Largest state count accepted by the dense direct solvers.
inline constexpr Index kDefaultDenseCap = 5000;

/// Relative gap below which two action values count as tied; ties resolve to
/// the lowest action index so every greedy step in the library agrees.
inline constexpr double kGreedyTieTolerance = 1e-12;

namespace detail {

inline void check_distribution(const Eigen::Ref<const Vector>& row, const std::string& what) {
  double sum = 0.0;
  for (Index i = 0; i < row.size(); ++i) {
    if (!std::isfinite(row[i]) || row[i] < 0.0) {
      throw InvalidArgument(what + ": entries must be finite and non-negative");
    }
    sum += row[i];
  }
  if (std::abs(sum - 1.0) > kStochasticTolerance) {
    throw InvalidArgument(what + ": row sums to " + std::to_string(sum) + ", expected 1");
  }
}

inline void check_discount(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw InvalidArgument("discount must lie in [0, 1), got " + std::to_string(gamma));
  }
}

}  // namespace detail

/// Finite MDP with transition tensor P(x'|x,a), expected rewards r(x,a) and a
/// discount factor. Transitions are stored one n×n matrix per action.
class TabularMdp {
 public:
  TabularMdp(std::vector<Matrix> transitions, Matrix reward, double discount)
      : transitions_(std::move(transitions)), reward_(std::move(reward)), discount_(discount) {
    if (transitions_.empty()) throw InvalidArgument("MDP needs at least one action");
    const Index n = transitions_.front().rows();
    if (n == 0) throw InvalidArgument("MDP needs at least one state");
    if (reward_.rows() != n || reward_.cols() != static_cast<Index>(transitions_.size())) {
      throw DimensionError("reward must be n_states × n_actions");
    }
    for (std::size_t a = 0; a < transitions_.size(); ++a) {
      const Matrix& p = transitions_[a];
      if (p.rows() != n || p.cols() != n) throw DimensionError("transition blocks must be n × n");
      for (Index x = 0; x < n; ++x) {
        detail::check_distribution(p.row(x).transpose(),
                                   "P(.|" + std::to_string(x) + "," + std::to_string(a) + ")");
      }
    }
    if (!reward_.allFinite()) throw InvalidArgument("rewards must be finite");
    detail::check_discount(discount_);
  }

  Index num_states() const { return transitions_.front().rows(); }
  Index num_actions() const { return static_cast<Index>(transitions_.size()); }

  double transition(Index x, Index a, Index next) const { return transitions_[a](x, next); }
  /// Row-stochastic n×n matrix P(·|·,a).
  const Matrix& transitions(Index a) const { return transitions_[a]; }

  double reward(Index x, Index a) const { return reward_(x, a); }
  const Matrix& rewards() const { return reward_; }

  double discount() const { return discount_; }

 private:
  std::vector<Matrix> transitions_;
  Matrix reward_;
  double discount_;
};

/// Stochastic policy π(a|x), one distribution per state.
class Policy {
 public:
  explicit Policy(Matrix probabilities) : probs_(std::move(probabilities)) {
    for (Index x = 0; x < probs_.rows(); ++x) {
      detail::check_distribution(probs_.row(x).transpose(), "π(.|" + std::to_string(x) + ")");
    }
  }

  static Policy deterministic(const std::vector<int>& actions, Index num_actions) {
    Matrix probs = Matrix::Zero(static_cast<Index>(actions.size()), num_actions);
    for (std::size_t x = 0; x < actions.size(); ++x) {
      if (actions[x] < 0 || actions[x] >= num_actions) {
        throw InvalidArgument("action index out of range at state " + std::to_string(x));
      }
      probs(static_cast<Index>(x), actions[x]) = 1.0;
    }
    Policy p(std::move(probs));
    p.actions_ = actions;
    return p;
  }

  Index num_states() const { return probs_.rows(); }
  Index num_actions() const { return probs_.cols(); }
  double prob(Index x, Index a) const { return probs_(x, a); }
  const Matrix& probabilities() const { return probs_; }

  bool is_deterministic() const { return actions_.has_value(); }
  /// Action list for deterministic policies; empty optional otherwise.
  const std::optional<std::vector<int>>& actions() const { return actions_; }

 private:
  Matrix probs_;
  std::optional<std::vector<int>> actions_;
};

/// Markov reward process obtained by fixing a policy: P^π and r^π.
struct PolicyInducedChain {
  Matrix p_pi;
  Vector r_pi;

  Index size() const { return r_pi.size(); }
};

inline void check_chain(const PolicyInducedChain& chain) {
  const Index n = chain.r_pi.size();
  if (chain.p_pi.rows() != n || chain.p_pi.cols() != n) {
    throw DimensionError("chain transition matrix must be n × n with n = |r_pi|");
  }
  for (Index x = 0; x < n; ++x) {
    detail::check_distribution(chain.p_pi.row(x).transpose(), "P^π row " + std::to_string(x));
  }
}

/// P^π(x,x') = Σ_a π(a|x) P(x'|x,a) and r^π(x) = Σ_a π(a|x) r(x,a).
inline PolicyInducedChain induce_chain(const TabularMdp& mdp, const Policy& policy) {
  const Index n = mdp.num_states();
  if (policy.num_states() != n || policy.num_actions() != mdp.num_actions()) {
    throw DimensionError("policy shape does not match the MDP");
  }
  PolicyInducedChain chain{Matrix::Zero(n, n), Vector::Zero(n)};
  for (Index a = 0; a < mdp.num_actions(); ++a) {
    for (Index x = 0; x < n; ++x) {
      const double w = policy.prob(x, a);
      if (w == 0.0) continue;
      chain.p_pi.row(x) += w * mdp.transitions(a).row(x);
      chain.r_pi[x] += w * mdp.reward(x, a);
    }
  }
  return chain;
}

/// T^π v = r^π + γ P^π v.
inline ValueVector bellman_pe_apply(const PolicyInducedChain& chain, double gamma,
                                    const ValueVector& v) {
  if (v.size() != chain.size()) throw DimensionError("value vector length mismatch");
  Vector pv = chain.p_pi * v;
  return chain.r_pi + gamma * pv;
}

/// Result of one Bellman optimality backup: values and greedy actions.
struct GreedyStep {
  ValueVector values;
  std::vector<int> actions;

  Policy policy(Index num_actions) const { return Policy::deterministic(actions, num_actions); }
};

/// Per-state action values Q(x,a) = r(x,a) + γ Σ P(x'|x,a) v(x').
inline Matrix action_values(const TabularMdp& mdp, double gamma, const ValueVector& v) {
  if (v.size() != mdp.num_states()) throw DimensionError("value vector length mismatch");
  Matrix q(mdp.num_states(), mdp.num_actions());
  for (Index a = 0; a < mdp.num_actions(); ++a) {
    Vector pv = mdp.transitions(a) * v;
    q.col(a) = mdp.rewards().col(a) + gamma * pv;
  }
  return q;
}

/// Lowest action index whose value is within the tie tolerance of the row max.
inline GreedyStep greedy_from_action_values(const Matrix& q) {
  GreedyStep out{Vector(q.rows()), std::vector<int>(static_cast<std::size_t>(q.rows()))};
  for (Index x = 0; x < q.rows(); ++x) {
    const double best = q.row(x).maxCoeff();
    const double slack = kGreedyTieTolerance * std::max(1.0, std::abs(best));
    int chosen = 0;
    for (Index a = 0; a < q.cols(); ++a) {
      if (q(x, a) >= best - slack) {
        chosen = static_cast<int>(a);
        break;
      }
    }
    out.values[x] = best;
    out.actions[static_cast<std::size_t>(x)] = chosen;
  }
  return out;
}

/// T* v together with the greedy policy (lowest-index ties).
inline GreedyStep bellman_opt_apply(const TabularMdp& mdp, double gamma, const ValueVector& v) {
  return greedy_from_action_values(action_values(mdp, gamma, v));
}

/// Solves (I − γP^π)V = r^π with a partial-pivoted LU factorization.
inline ValueVector exact_value_pe(const PolicyInducedChain& chain, double gamma,
                                  Index dense_cap = kDefaultDenseCap) {
  detail::check_discount(gamma);
  const Index n = chain.size();
  if (chain.p_pi.rows() != n || chain.p_pi.cols() != n) throw DimensionError("chain shape mismatch");
  if (n > dense_cap) throw InvalidArgument("state count exceeds the dense solver cap");
  Matrix a = Matrix::Identity(n, n) - gamma * chain.p_pi;
  Eigen::PartialPivLU<Matrix> lu(a);
  Vector v = lu.solve(chain.r_pi);
  const double residual = (a * v - chain.r_pi).norm();
  if (!v.allFinite() || residual > 1e-10 * chain.r_pi.norm()) {
    throw NumericalError("internal error: (I - γP) solve failed, residual " +
                         std::to_string(residual));
  }
  return v;
}

struct ControlSolution {
  ValueVector values;
  std::vector<int> actions;
  int iterations = 0;
};

/// Policy iteration to exact convergence; stops when the greedy policy repeats.
inline ControlSolution exact_value_control(const TabularMdp& mdp, double gamma,
                                           int max_iterations = 10000) {
  detail::check_discount(gamma);
  GreedyStep step = bellman_opt_apply(mdp, gamma, Vector::Zero(mdp.num_states()));
  std::vector<int> actions = step.actions;
  for (int it = 1; it <= max_iterations; ++it) {
    const Policy policy = Policy::deterministic(actions, mdp.num_actions());
    Vector v = exact_value_pe(induce_chain(mdp, policy), gamma);
    GreedyStep next = bellman_opt_apply(mdp, gamma, v);
    if (next.actions == actions) return {std::move(v), std::move(actions), it};
    actions = std::move(next.actions);
  }
  throw NumericalError("policy iteration did not terminate");
}

/// ‖v − v_ref‖₁ / ‖v_ref‖₁.
inline double normalized_error(const ValueVector& v, const ValueVector& v_ref) {
  if (v.size() != v_ref.size()) throw DimensionError("value vector length mismatch");
  const double denom = v_ref.lpNorm<1>();
  if (denom == 0.0) throw InvalidArgument("reference value has zero L1 norm");
  return (v - v_ref).lpNorm<1>() / denom;
}

}  // namespace ddvi
