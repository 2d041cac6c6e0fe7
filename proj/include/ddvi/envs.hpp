#pragma once

// Benchmark environments: Maze, Cliffwalk, Chain Walk and seeded Garnet MDPs,
// each paired with the policy evaluated in the experiments.

#include <ddvi/error.hpp>
#include <ddvi/mdp.hpp>
#include <ddvi/rng.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace ddvi::envs {

struct Environment {
  std::string id;
  TabularMdp mdp;
  Policy policy;
};

inline constexpr double kDefaultDiscount = 0.99;

// Grid worlds: UP = 0, RIGHT = 1, DOWN = 2, LEFT = 3.
enum GridAction : int { kUp = 0, kRight = 1, kDown = 2, kLeft = 3 };

namespace detail {

struct Grid {
  int rows;
  int cols;
  std::set<std::pair<int, int>> walls;  // blocked passages, stored as (min, max) state ids

  int state(int r, int c) const { return r * cols + c; }

  /// Cell reached by moving in `dir` from `x`; boundary and wall hits stay put.
  int move(int x, int dir) const {
    static constexpr std::array<int, 4> kDr{-1, 0, 1, 0};
    static constexpr std::array<int, 4> kDc{0, 1, 0, -1};
    const int r = x / cols + kDr[static_cast<std::size_t>(dir)];
    const int c = x % cols + kDc[static_cast<std::size_t>(dir)];
    if (r < 0 || r >= rows || c < 0 || c >= cols) return x;
    const int y = state(r, c);
    if (walls.count({std::min(x, y), std::max(x, y)}) != 0) return x;
    return y;
  }

  /// 90% intended direction, remaining 10% spread over the other three.
  std::vector<Matrix> noisy_transitions() const {
    const int n = rows * cols;
    std::vector<Matrix> p(4, Matrix::Zero(n, n));
    for (int a = 0; a < 4; ++a) {
      for (int x = 0; x < n; ++x) {
        for (int dir = 0; dir < 4; ++dir) {
          const double w = dir == a ? 0.9 : 0.1 / 3.0;
          p[static_cast<std::size_t>(a)](x, move(x, dir)) += w;
        }
      }
    }
    return p;
  }
};

/// Sorted cut points in (0,1) turned into a random probability vector of length k.
inline std::vector<double> random_simplex_point(Rng& rng, int k) {
  std::vector<double> cuts(static_cast<std::size_t>(k - 1));
  for (double& c : cuts) c = rng.uniform01();
  std::sort(cuts.begin(), cuts.end());
  std::vector<double> out(static_cast<std::size_t>(k));
  double prev = 0.0;
  for (int i = 0; i < k - 1; ++i) {
    out[static_cast<std::size_t>(i)] = cuts[static_cast<std::size_t>(i)] - prev;
    prev = cuts[static_cast<std::size_t>(i)];
  }
  out[static_cast<std::size_t>(k - 1)] = 1.0 - prev;
  return out;
}

/// First `k` entries of a seeded partial Fisher–Yates shuffle of 0..n-1.
inline std::vector<int> sample_without_replacement(Rng& rng, int n, int k) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(i) +
                   static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

}  // namespace detail

/// Blocked passages of the 5×5 maze as (state, state) pairs, row-major ids.
/// The 24 open passages that remain form a spanning tree of the grid.
inline const std::vector<std::pair<int, int>>& maze_walls() {
  static const std::vector<std::pair<int, int>> kWalls{
      {3, 8},   {5, 6},   {5, 10},  {6, 7},   {7, 12},  {8, 9},   {8, 13},  {10, 11},
      {13, 14}, {13, 18}, {14, 19}, {16, 17}, {17, 22}, {18, 23}, {20, 21}, {21, 22}};
  return kWalls;
}

inline constexpr int kMazeGoal = 20;

/// Policy evaluated by the planning experiments on the maze.
inline std::vector<int> maze_ddvi_actions() {
  return {2, 2, 3, 0, 3, 0, 2, 1, 3, 2, 2, 2, 3, 3, 1, 0, 3, 0, 3, 3, 2, 2, 1, 1, 0};
}

/// Policy evaluated by the sample-based experiments on the maze.
inline std::vector<int> maze_ddtd_actions() {
  return {2, 2, 3, 0, 3, 0, 2, 1, 3, 2, 2, 2, 3, 3, 1, 0, 3, 0, 3, 3, 3, 3, 1, 1, 0};
}

/// 5×5 maze: goal in the bottom-left corner pays +10, every other state −1.
inline Environment build_maze(double discount = kDefaultDiscount) {
  detail::Grid grid{5, 5, {}};
  for (const auto& [a, b] : maze_walls()) grid.walls.insert({std::min(a, b), std::max(a, b)});
  Matrix reward = Matrix::Constant(25, 4, -1.0);
  reward.row(kMazeGoal).setConstant(10.0);
  TabularMdp mdp(grid.noisy_transitions(), std::move(reward), discount);
  return {"maze", std::move(mdp), Policy::deterministic(maze_ddvi_actions(), 4)};
}

inline Policy maze_ddtd_policy() { return Policy::deterministic(maze_ddtd_actions(), 4); }

inline constexpr int kCliffGoal = 6;

inline bool cliffwalk_terminal(int x) { return x >= 1 && x <= 6; }

/// 3×7 cliff walk. Entering the top-right goal pays +10, entering the rest of
/// the top row (the cliff) pays −10, any other move −1. Top-row states other
/// than the start are absorbing with zero reward. The evaluation policy is the
/// optimal policy for the given discount.
inline Environment build_cliffwalk(double discount = kDefaultDiscount) {
  detail::Grid grid{3, 7, {}};
  const int n = 21;
  std::vector<Matrix> p = grid.noisy_transitions();
  auto entry_reward = [](int y) {
    if (y == kCliffGoal) return 10.0;
    if (cliffwalk_terminal(y)) return -10.0;
    return -1.0;
  };
  Matrix reward = Matrix::Zero(n, 4);
  for (int a = 0; a < 4; ++a) {
    Matrix& pa = p[static_cast<std::size_t>(a)];
    for (int x = 0; x < n; ++x) {
      if (cliffwalk_terminal(x)) {
        pa.row(x).setZero();
        pa(x, x) = 1.0;
        continue;
      }
      double r = 0.0;
      for (int y = 0; y < n; ++y) r += pa(x, y) * entry_reward(y);
      reward(x, a) = r;
    }
  }
  TabularMdp mdp(std::move(p), std::move(reward), discount);
  ControlSolution best = exact_value_control(mdp, discount);
  Policy policy = Policy::deterministic(best.actions, 4);
  return {"cliffwalk", std::move(mdp), std::move(policy)};
}

// Chain walk: RIGHT = 0, LEFT = 1.
inline constexpr int kChainStates = 50;
inline constexpr int kChainGoal = 39;
inline constexpr int kChainPenalty = 10;

inline std::vector<int> chainwalk_actions() {
  return {0, 1, 1, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1,
          1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 1, 0, 1, 1};
}

/// 50-state circular chain: the move succeeds w.p. 0.7, stays w.p. 0.1 and
/// reverses w.p. 0.2. State 39 pays +1, state 10 pays −1.
inline Environment build_chainwalk(double discount = kDefaultDiscount) {
  const int n = kChainStates;
  std::vector<Matrix> p(2, Matrix::Zero(n, n));
  for (int a = 0; a < 2; ++a) {
    const int step = a == 0 ? 1 : -1;
    for (int x = 0; x < n; ++x) {
      Matrix& pa = p[static_cast<std::size_t>(a)];
      pa(x, (x + step + n) % n) += 0.7;
      pa(x, x) += 0.1;
      pa(x, (x - step + n) % n) += 0.2;
    }
  }
  Matrix reward = Matrix::Zero(n, 2);
  reward.row(kChainGoal).setConstant(1.0);
  reward.row(kChainPenalty).setConstant(-1.0);
  TabularMdp mdp(std::move(p), std::move(reward), discount);
  return {"chainwalk", std::move(mdp), Policy::deterministic(chainwalk_actions(), 2)};
}

struct GarnetParams {
  int n_states = 50;
  int n_actions = 4;
  int branching = 2;       ///< possible next states per (x, a)
  int reward_states = 5;   ///< states carrying a Uniform(0,1) reward
  std::uint64_t seed = 0;
};

inline void validate(const GarnetParams& p) {
  if (p.n_states < 1) throw InvalidArgument("garnet: n_states must be positive");
  if (p.n_actions < 1) throw InvalidArgument("garnet: n_actions must be positive");
  if (p.branching < 1 || p.branching > p.n_states) {
    throw InvalidArgument("garnet: branching must lie in [1, n_states]");
  }
  if (p.reward_states < 0 || p.reward_states > p.n_states) {
    throw InvalidArgument("garnet: reward_states must lie in [0, n_states]");
  }
}

/// Random Garnet MDP. Each (x, a) reaches `branching` distinct states with
/// probabilities given by sorted uniform cut points; `reward_states` states
/// get a state-dependent Uniform(0,1) reward. The evaluation policy is a
/// random stochastic policy drawn the same way. Deterministic in the seed.
inline Environment build_garnet(const GarnetParams& params, double discount = kDefaultDiscount) {
  validate(params);
  Rng rng(params.seed);
  const int n = params.n_states;
  const int m = params.n_actions;
  std::vector<Matrix> p(static_cast<std::size_t>(m), Matrix::Zero(n, n));
  for (int x = 0; x < n; ++x) {
    for (int a = 0; a < m; ++a) {
      const std::vector<int> next = detail::sample_without_replacement(rng, n, params.branching);
      const std::vector<double> probs = detail::random_simplex_point(rng, params.branching);
      for (std::size_t i = 0; i < next.size(); ++i) p[static_cast<std::size_t>(a)](x, next[i]) = probs[i];
    }
  }
  Matrix reward = Matrix::Zero(n, m);
  for (int x : detail::sample_without_replacement(rng, n, params.reward_states)) {
    reward.row(x).setConstant(rng.uniform01());
  }
  Matrix pi(n, m);
  for (int x = 0; x < n; ++x) {
    const std::vector<double> probs = detail::random_simplex_point(rng, m);
    for (int a = 0; a < m; ++a) pi(x, a) = probs[static_cast<std::size_t>(a)];
  }
  TabularMdp mdp(std::move(p), std::move(reward), discount);
  return {"garnet", std::move(mdp), Policy(std::move(pi))};
}

/// Builds an environment by id: "maze", "cliffwalk", "chainwalk" or "garnet".
inline Environment make_environment(const std::string& id, const GarnetParams& garnet = {},
                                    double discount = kDefaultDiscount) {
  if (id == "maze") return build_maze(discount);
  if (id == "cliffwalk") return build_cliffwalk(discount);
  if (id == "chainwalk") return build_chainwalk(discount);
  if (id == "garnet") return build_garnet(garnet, discount);
  throw InvalidArgument("unknown environment id '" + id + "'");
}

}  // namespace ddvi::envs
