#include <ddvi/envs.hpp>
#include <ddvi/td.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <memory>

using namespace ddvi;

namespace {

PolicyInducedChain flip_chain() {
  PolicyInducedChain c{Matrix(2, 2), Vector(2)};
  c.p_pi << 0, 1, 1, 0;
  c.r_pi << 1, 0;
  return c;
}

double median(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  return 0.5 * (x[(x.size() - 1) / 2] + x[x.size() / 2]);
}

}  // namespace

TEST(Sampler, SameSeedSameStream) {
  const auto env = envs::build_maze();
  const TransitionSampler s(env.mdp, env.policy);
  Rng a(17), b(17);
  for (int i = 0; i < 1000; ++i) {
    const auto x = s.sample(a);
    const auto y = s.sample(b);
    EXPECT_EQ(x.x, y.x);
    EXPECT_EQ(x.a, y.a);
    EXPECT_EQ(x.next, y.next);
    EXPECT_EQ(x.r, y.r);
  }
}

TEST(Sampler, EmpiricalFrequenciesMatchKernel) {
  const auto env = envs::build_chainwalk();
  const TransitionSampler s(env.mdp, env.policy);
  const auto chain = s.chain();
  Rng rng(1);
  Matrix counts = Matrix::Zero(50, 50);
  Vector visits = Vector::Zero(50);
  for (int i = 0; i < 200000; ++i) {
    const auto t = s.sample(rng);
    counts(t.x, t.next) += 1.0;
    visits[t.x] += 1.0;
  }
  for (Index x = 0; x < 50; ++x) {
    EXPECT_LE((counts.row(x) / visits[x] - chain.p_pi.row(x)).cwiseAbs().maxCoeff(), 0.05);
  }
}

TEST(SmoothModel, Examples) {
  Vector row(3);
  row << 0.8, 0.2, 0.0;
  EXPECT_EQ(smooth_model(row, 0.0).p, row);
  const Vector uni = smooth_model(row, 1.0).p;
  EXPECT_DOUBLE_EQ(uni[0], 0.5);
  EXPECT_DOUBLE_EQ(uni[1], 0.5);
  EXPECT_EQ(uni[2], 0.0);
  const Vector half = smooth_model(row, 0.5).p;
  EXPECT_NEAR(half[0], 0.65, 1e-15);
  EXPECT_NEAR(half[1], 0.35, 1e-15);
  EXPECT_EQ(half[2], 0.0);
}

TEST(SmoothModel, UnvisitedRowIsUniformAndFlagged) {
  const auto r = smooth_model(Vector::Zero(4), 0.3);
  EXPECT_TRUE(r.unvisited);
  EXPECT_EQ(r.p, Vector::Constant(4, 0.25));
  EXPECT_THROW(smooth_model(Vector::Zero(4), 1.5), InvalidArgument);
}

TEST(EmpiricalModel, CountsAndMeans) {
  EmpiricalModel m(2, 1);
  m.observe({0, 0, 1.0, 1});
  m.observe({0, 0, 3.0, 0});
  m.observe({0, 0, 2.0, 1});
  EXPECT_EQ(m.visits(0, 0), 3.0);
  EXPECT_FALSE(m.visited(1, 0));
  EXPECT_NEAR(m.mle_row(0, 0)[1], 2.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(m.mean_reward(0, 0), 2.0);
  const auto sc = m.smoothed_chain(Policy(Matrix::Ones(2, 1)), 0.0);
  EXPECT_EQ(sc.unvisited_pairs, 1);
  EXPECT_EQ(sc.chain.p_pi.row(1), Vector::Constant(2, 0.5).transpose());
}

TEST(StepSchedule, ParseAndSteps) {
  EXPECT_EQ(StepSchedule::parse("visit").step(10, 4), 0.25);
  EXPECT_EQ(StepSchedule::parse("const:0.3").step(10, 4), 0.3);
  EXPECT_DOUBLE_EQ(StepSchedule::parse("harmonic:50").step(99, 1), 0.5);
  EXPECT_EQ(StepSchedule::parse("harmonic:50").step(1, 1), 1.0);
  EXPECT_THROW(StepSchedule::parse("const:-1"), InvalidArgument);
  EXPECT_THROW(StepSchedule::parse("cosine:1"), InvalidArgument);
  EXPECT_THROW(StepSchedule::parse("const:1x"), InvalidArgument);
}

TEST(StepsizeBound, Examples) {
  const std::vector<Complex> eigs{{1.0, 0.0}, {0.5, 0.0}, {-0.3, 0.0}};
  EXPECT_NEAR(ddtd_stepsize_lower_bound(eigs, 1, 0.9, 3), 3.0 / 1.1, 1e-12);
  EXPECT_DOUBLE_EQ(ddtd_stepsize_lower_bound(eigs, 1, 0.0, 3), 1.5);
  EXPECT_NEAR(ddtd_stepsize_lower_bound(eigs, 2, 0.9, 3), 3.0 / (2.0 * 1.27), 1e-12);
}

TEST(RunTd, ZeroBudgetKeepsStart) {
  const auto s = TransitionSampler::from_chain(flip_chain(), 0.9);
  SampleRunOptions o;
  o.gamma = 0.9;
  o.v0 = Vector::Constant(2, 3.0);
  EXPECT_EQ(run_td(s, o).final_v, *o.v0);
}

TEST(RunTd, ZeroDiscountVisitScheduleIsRunningMean) {
  envs::GarnetParams g;
  g.n_states = 5;
  g.reward_states = 5;
  const auto env = envs::build_garnet(g, 0.5);
  const TransitionSampler s(env.mdp, env.policy);
  SampleRunOptions o;
  o.gamma = 0.0;
  o.budget = 5000;
  o.seed = 3;
  const Vector v = run_td(s, o).final_v;
  // Rewards are state-only in Garnet, so the running mean is exact.
  for (Index x = 0; x < 5; ++x) EXPECT_NEAR(v[x], env.mdp.reward(x, 0), 1e-12);
}

TEST(RunTd, ChainWalkErrorHalvesOverBudget) {
  const auto env = envs::build_chainwalk(0.99);
  const TransitionSampler s(env.mdp, env.policy);
  const Vector vpi = exact_value_pe(s.chain(), 0.99);
  std::vector<double> ratio;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SampleRunOptions o;
    o.budget = 200000;
    o.seed = seed;
    o.oracle = vpi;
    o.stride = 20000;
    const auto t = run_td(s, o);
    ratio.push_back(t.records.back().norm_err_l1 / t.records.front().norm_err_l1);
  }
  EXPECT_LT(median(ratio), 0.5);
}

TEST(RunDdtd, HandTracedStep) {
  // One sample from state 0 of the flip chain with E = 𝟏·[0.5, 0.5], η = 1,
  // α = 1, γ = 0.9: W(0) = r + γV(1) − γ(EV)(0) = 1 from W = V = 0, then
  // V = (I − 0.9E)⁻¹[1, 0] = [5.5, 4.5].
  const auto s = TransitionSampler::from_chain(flip_chain(), 0.9);
  const auto e = std::make_shared<const DeflationMatrix>(build_wielandt_rank1(Vector::Constant(2, 0.5)));
  std::uint64_t seed = 0;
  for (;; ++seed) {
    Rng rng(seed);
    if (s.sample(rng).x == 0) break;
  }
  SampleRunOptions o;
  o.gamma = 0.9;
  o.schedule = StepSchedule::constant(1.0);
  o.budget = 1;
  o.seed = seed;
  DdtdOptions d;
  d.s = 1;
  d.fixed_e = e;
  const auto t = run_ddtd(s, o, d);
  EXPECT_NEAR(t.final_v[0], 5.5, 1e-12);
  EXPECT_NEAR(t.final_v[1], 4.5, 1e-12);
  EXPECT_NEAR((*t.final_w)[0], 1.0, 1e-12);
  EXPECT_NEAR((*t.final_w)[1], 0.0, 1e-12);
}

TEST(RunDdtd, ZeroRankReducesToTdBitwise) {
  const auto env = envs::build_maze(0.99);
  const TransitionSampler s(env.mdp, env.policy);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SampleRunOptions o;
    o.budget = 10000;
    o.seed = seed;
    o.schedule = StepSchedule::constant(0.3);
    DdtdOptions d;
    d.s = 0;
    const auto a = run_td(s, o);
    const auto b = run_ddtd(s, o, d);
    EXPECT_TRUE((a.final_v.array() == b.final_v.array()).all());
  }
}

TEST(RunDdtd, WAndVStayConsistentAcrossRebuilds) {
  const auto env = envs::build_maze(0.99);
  const Policy policy = envs::maze_ddtd_policy();
  const TransitionSampler s(env.mdp, policy);
  SampleRunOptions o;
  o.budget = 3000;
  o.seed = 4;
  o.schedule = StepSchedule::constant(0.07);
  DdtdOptions d;
  d.s = 2;
  d.alpha = 0.9;
  d.theta = 0.3;
  // Budget a multiple of K: the last sample triggers a rebuild and W reset.
  const auto t = run_ddtd(s, o, d);
  ASSERT_TRUE(t.final_w.has_value());
  EXPECT_TRUE(t.final_v.allFinite());
  EXPECT_TRUE(t.final_w->allFinite());
}

TEST(RunDdtd, DeterministicForSeed) {
  const auto env = envs::build_maze(0.99);
  const TransitionSampler s(env.mdp, envs::maze_ddtd_policy());
  SampleRunOptions o;
  o.budget = 2000;
  o.seed = 8;
  o.schedule = StepSchedule::constant(0.07);
  DdtdOptions d;
  d.s = 3;
  d.alpha = 0.9;
  d.theta = 0.3;
  const auto a = run_ddtd(s, o, d);
  const auto b = run_ddtd(s, o, d);
  EXPECT_TRUE((a.final_v.array() == b.final_v.array()).all());
  EXPECT_EQ(a.events, b.events);
}

TEST(RunDyna, ZeroBudgetUsesUniformModel) {
  const auto env = envs::build_chainwalk(0.9);
  const TransitionSampler s(env.mdp, env.policy);
  SampleRunOptions o;
  o.gamma = 0.9;
  DynaOptions d;
  const auto t = run_dyna(s, o, d);
  EXPECT_FALSE(t.events.empty());
  // Uniform model and zero rewards give the zero value.
  EXPECT_LE(t.final_v.lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(RunDyna, PlateauMatchesClosedForm) {
  const auto env = envs::build_maze(0.99);
  const Policy policy = envs::maze_ddtd_policy();
  const TransitionSampler s(env.mdp, policy);
  const Vector vpi = exact_value_pe(s.chain(), 0.99);
  SampleRunOptions o;
  o.budget = 200000;
  o.seed = 2;
  o.oracle = vpi;
  o.stride = o.budget;
  DynaOptions d;
  d.theta = 0.5;
  const auto t = run_dyna(s, o, d);
  EXPECT_NEAR(t.records.back().norm_err_l1, dyna_plateau_error(env.mdp, policy, 0.99, 0.5), 0.05);
}

TEST(RunDyna, NoSmoothingIsConsistent) {
  const auto env = envs::build_chainwalk(0.9);
  const TransitionSampler s(env.mdp, env.policy);
  const Vector vpi = exact_value_pe(s.chain(), 0.9);
  SampleRunOptions o;
  o.gamma = 0.9;
  o.budget = 200000;
  o.oracle = vpi;
  o.stride = o.budget;
  DynaOptions d;
  d.theta = 0.0;
  EXPECT_LT(run_dyna(s, o, d).records.back().norm_err_l1, 0.05);
  EXPECT_NEAR(dyna_plateau_error(env.mdp, env.policy, 0.9, 0.0), 0.0, 1e-12);
}
