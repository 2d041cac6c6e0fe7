#include <ddvi/envs.hpp>
#include <ddvi/mdp.hpp>

#include <gtest/gtest.h>

#include <Eigen/LU>

using namespace ddvi;

namespace {

TabularMdp one_state_two_actions(double gamma = 0.9) {
  Matrix r(1, 2);
  r << 1.0, 2.0;
  return TabularMdp({Matrix::Ones(1, 1), Matrix::Ones(1, 1)}, r, gamma);
}

PolicyInducedChain half_half_chain() {
  PolicyInducedChain c{Matrix(2, 2), Vector(2)};
  c.p_pi << 0.5, 0.5, 0.5, 0.5;
  c.r_pi << 1.0, 0.0;
  return c;
}

}  // namespace

TEST(Mdp, RejectsNonStochasticRows) {
  Matrix p(2, 2);
  p << 0.5, 0.6, 0.0, 1.0;
  EXPECT_THROW(TabularMdp({p}, Matrix::Zero(2, 1), 0.9), InvalidArgument);
}

TEST(Mdp, RejectsDiscountOutsideUnitInterval) {
  EXPECT_THROW(TabularMdp({Matrix::Identity(2, 2)}, Matrix::Zero(2, 1), 1.0), InvalidArgument);
  EXPECT_THROW(TabularMdp({Matrix::Identity(2, 2)}, Matrix::Zero(2, 1), -0.1), InvalidArgument);
}

TEST(Mdp, RejectsRewardShapeMismatch) {
  EXPECT_THROW(TabularMdp({Matrix::Identity(2, 2)}, Matrix::Zero(3, 1), 0.9), DimensionError);
}

TEST(InduceChain, DeterministicPolicySelectsRows) {
  const auto env = envs::build_garnet({}, 0.9);
  std::vector<int> actions(50, 2);
  const auto chain = induce_chain(env.mdp, Policy::deterministic(actions, 4));
  EXPECT_EQ(chain.p_pi, env.mdp.transitions(2));
  EXPECT_EQ(chain.r_pi, env.mdp.rewards().col(2));
}

TEST(InduceChain, UniformPolicyAveragesRewards) {
  const auto chain = induce_chain(one_state_two_actions(), Policy(Matrix::Constant(1, 2, 0.5)));
  EXPECT_DOUBLE_EQ(chain.r_pi[0], 1.5);
}

TEST(InduceChain, ChainWalkRowsUseMoveProbabilities) {
  const auto env = envs::build_chainwalk();
  const auto chain = induce_chain(env.mdp, env.policy);
  const auto actions = envs::chainwalk_actions();
  for (int x = 0; x < 50; ++x) {
    const int step = actions[static_cast<std::size_t>(x)] == 0 ? 1 : -1;
    EXPECT_DOUBLE_EQ(chain.p_pi(x, (x + step + 50) % 50), 0.7);
    EXPECT_DOUBLE_EQ(chain.p_pi(x, x), 0.1);
    EXPECT_DOUBLE_EQ(chain.p_pi(x, (x - step + 50) % 50), 0.2);
  }
}

TEST(BellmanPe, ZeroValueGivesReward) {
  const auto c = half_half_chain();
  EXPECT_EQ(bellman_pe_apply(c, 0.9, Vector::Zero(2)), c.r_pi);
}

TEST(BellmanPe, ZeroDiscountGivesReward) {
  const auto c = half_half_chain();
  EXPECT_EQ(bellman_pe_apply(c, 0.0, Vector::Constant(2, 7.0)), c.r_pi);
}

TEST(BellmanPe, FixedPointOfTwoStateChain) {
  Vector v(2);
  v << 5.5, 4.5;
  const Vector tv = bellman_pe_apply(half_half_chain(), 0.9, v);
  EXPECT_NEAR(tv[0], 5.5, 1e-12);
  EXPECT_NEAR(tv[1], 4.5, 1e-12);
}

TEST(BellmanOpt, ZeroValuePicksBestReward) {
  const auto step = bellman_opt_apply(one_state_two_actions(), 0.9, Vector::Zero(1));
  EXPECT_DOUBLE_EQ(step.values[0], 2.0);
  EXPECT_EQ(step.actions[0], 1);
}

TEST(BellmanOpt, TiesGoToLowestAction) {
  Matrix r = Matrix::Ones(1, 2);
  const TabularMdp mdp({Matrix::Ones(1, 1), Matrix::Ones(1, 1)}, r, 0.5);
  EXPECT_EQ(bellman_opt_apply(mdp, 0.5, Vector::Zero(1)).actions[0], 0);
}

TEST(BellmanOpt, FixedPointOfOneStateMdp) {
  const auto step = bellman_opt_apply(one_state_two_actions(), 0.9, Vector::Constant(1, 20.0));
  EXPECT_NEAR(step.values[0], 20.0, 1e-12);
  EXPECT_EQ(step.actions[0], 1);
}

TEST(ExactValuePe, ZeroDiscountIsReward) {
  const auto c = half_half_chain();
  EXPECT_EQ(exact_value_pe(c, 0.0), c.r_pi);
}

TEST(ExactValuePe, AbsorbingChainIsGeometricSeries) {
  PolicyInducedChain c{Matrix::Identity(3, 3), Vector(3)};
  c.r_pi << 1.0, -2.0, 0.5;
  const Vector v = exact_value_pe(c, 0.8);
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(v[i], c.r_pi[i] / 0.2, 1e-12);
}

TEST(ExactValuePe, TwoStateChain) {
  const Vector v = exact_value_pe(half_half_chain(), 0.9);
  EXPECT_NEAR(v[0], 5.5, 1e-12);
  EXPECT_NEAR(v[1], 4.5, 1e-12);
}

TEST(ExactValuePe, MatchesIndependentLuSolveOnGarnet) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    envs::GarnetParams p;
    p.seed = seed;
    const auto env = envs::build_garnet(p, 0.95);
    const auto c = induce_chain(env.mdp, env.policy);
    const Matrix a = Matrix::Identity(c.size(), c.size()) - 0.95 * c.p_pi;
    const Vector oracle = a.fullPivLu().solve(c.r_pi);
    EXPECT_LE((exact_value_pe(c, 0.95) - oracle).lpNorm<Eigen::Infinity>(), 1e-10);
  }
}

TEST(ExactValueControl, OneStateMdp) {
  const auto sol = exact_value_control(one_state_two_actions(), 0.9);
  EXPECT_NEAR(sol.values[0], 20.0, 1e-12);
  EXPECT_EQ(sol.actions[0], 1);
}

TEST(ExactValueControl, ZeroRewardsGiveZeroValue) {
  const TabularMdp mdp({Matrix::Identity(3, 3), Matrix::Constant(3, 3, 1.0 / 3.0)}, Matrix::Zero(3, 2), 0.9);
  EXPECT_EQ(exact_value_control(mdp, 0.9).values, Vector::Zero(3));
}

TEST(ExactValueControl, ChainWalkPolicyIsGreedyForItsValue) {
  const auto env = envs::build_chainwalk();
  const auto sol = exact_value_control(env.mdp, 0.99);
  EXPECT_EQ(bellman_opt_apply(env.mdp, 0.99, sol.values).actions, sol.actions);
  const Vector tv = bellman_opt_apply(env.mdp, 0.99, sol.values).values;
  EXPECT_LE((tv - sol.values).lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(NormalizedError, Examples) {
  const Vector a = Vector::Constant(2, 2.0);
  EXPECT_EQ(normalized_error(a, a), 0.0);
  EXPECT_DOUBLE_EQ(normalized_error(Vector::Ones(2), a), 0.5);
  EXPECT_DOUBLE_EQ(normalized_error(Vector::Zero(2), a), 1.0);
}

TEST(Envs, Sizes) {
  const auto maze = envs::build_maze();
  EXPECT_EQ(maze.mdp.num_states(), 25);
  EXPECT_EQ(maze.mdp.num_actions(), 4);
  EXPECT_EQ(envs::build_cliffwalk().mdp.num_states(), 21);
  EXPECT_EQ(envs::build_chainwalk().mdp.num_states(), 50);
}

TEST(Envs, ChainWalkRewards) {
  const auto env = envs::build_chainwalk();
  for (Index x = 0; x < 50; ++x) {
    const double expected = x == 39 ? 1.0 : (x == 10 ? -1.0 : 0.0);
    for (Index a = 0; a < 2; ++a) EXPECT_EQ(env.mdp.reward(x, a), expected);
  }
}

TEST(Envs, CliffwalkGoalEntryReward) {
  const auto env = envs::build_cliffwalk();
  // From the cell below the goal, "up" enters the goal w.p. 0.9; the three
  // other directions land on ordinary cells at -1 each.
  EXPECT_NEAR(env.mdp.reward(13, envs::kUp), 0.9 * 10.0 - 0.1, 1e-12);
  EXPECT_DOUBLE_EQ(env.mdp.transition(envs::kCliffGoal, 0, envs::kCliffGoal), 1.0);
  EXPECT_EQ(env.mdp.reward(envs::kCliffGoal, 0), 0.0);
}

TEST(Envs, GarnetIsDeterministicInSeed) {
  envs::GarnetParams p;
  p.seed = 42;
  const auto a = envs::build_garnet(p);
  const auto b = envs::build_garnet(p);
  for (Index k = 0; k < a.mdp.num_actions(); ++k) EXPECT_EQ(a.mdp.transitions(k), b.mdp.transitions(k));
  EXPECT_EQ(a.mdp.rewards(), b.mdp.rewards());
  EXPECT_EQ(a.policy.probabilities(), b.policy.probabilities());
}

TEST(Envs, GarnetBranchingAndRewards) {
  envs::GarnetParams p;
  p.n_states = 30;
  p.branching = 3;
  p.reward_states = 4;
  const auto env = envs::build_garnet(p);
  for (Index a = 0; a < env.mdp.num_actions(); ++a) {
    for (Index x = 0; x < 30; ++x) {
      int support = 0;
      for (Index y = 0; y < 30; ++y) support += env.mdp.transition(x, a, y) > 0.0 ? 1 : 0;
      EXPECT_EQ(support, 3);
    }
  }
  int rewarded = 0;
  for (Index x = 0; x < 30; ++x) rewarded += env.mdp.reward(x, 0) != 0.0 ? 1 : 0;
  EXPECT_EQ(rewarded, 4);
}

TEST(Envs, GarnetValidation) {
  envs::GarnetParams p;
  p.branching = 0;
  EXPECT_THROW(envs::build_garnet(p), InvalidArgument);
  EXPECT_THROW(envs::make_environment("nope"), InvalidArgument);
}
