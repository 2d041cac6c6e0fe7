#include <ddvi/envs.hpp>
#include <ddvi/solvers.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace ddvi;

namespace {

PolicyInducedChain half_half_chain() {
  PolicyInducedChain c{Matrix(2, 2), Vector(2)};
  c.p_pi << 0.5, 0.5, 0.5, 0.5;
  c.r_pi << 1.0, 0.0;
  return c;
}

struct Fixture {
  envs::Environment env;
  PolicyInducedChain chain;
  Vector vpi;
};

Fixture chainwalk(double gamma = 0.99) {
  auto env = envs::build_chainwalk(gamma);
  auto chain = induce_chain(env.mdp, env.policy);
  Vector vpi = exact_value_pe(chain, gamma);
  return {std::move(env), std::move(chain), std::move(vpi)};
}

}  // namespace

TEST(ViPe, StartAtFixedPointStopsImmediately) {
  const auto f = chainwalk();
  const auto t = vi_pe(f.chain, 0.99, f.vpi, StopRule::until(1e-12, 100, f.vpi));
  ASSERT_EQ(t.records.size(), 1u);
  EXPECT_EQ(t.records[0].norm_err_l1, 0.0);
  EXPECT_TRUE(t.reached_target);
}

TEST(ViPe, ZeroDiscountConvergesInOneStep) {
  const auto c = half_half_chain();
  const auto t = vi_pe(c, 0.0, Vector::Zero(2), StopRule::fixed(1));
  EXPECT_EQ(t.final_v, c.r_pi);
}

TEST(ViPe, ChainWalkTailRateIsGamma) {
  const auto f = chainwalk();
  const auto t = vi_pe(f.chain, 0.99, Vector::Zero(50), StopRule::fixed(3000, f.vpi));
  EXPECT_NEAR(empirical_rate(t), 0.99, 0.005);
}

TEST(ViPe, FixedPointOnTargetStop) {
  const auto f = chainwalk();
  const auto t = vi_pe(f.chain, 0.99, Vector::Zero(50), StopRule::until(1e-6, 100000, f.vpi));
  EXPECT_TRUE(t.reached_target);
  EXPECT_LE(normalized_error(t.final_v, f.vpi), 1e-6);
}

TEST(Ddvi, EmptyDeflationReducesToViBitwise) {
  const auto f = chainwalk();
  const Vector v0 = Vector::Zero(50);
  const auto a = vi_pe(f.chain, 0.99, v0, StopRule::fixed(300, f.vpi));
  const auto b = ddvi::ddvi(f.chain, 0.99, DeflationMatrix(50), 1.0, v0, StopRule::fixed(300, f.vpi));
  EXPECT_TRUE((a.final_v.array() == b.final_v.array()).all());
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].norm_err_l1, b.records[i].norm_err_l1);
}

TEST(Ddvi, RankOneOnTwoStateChainIsExactAfterOneStep) {
  const auto c = half_half_chain();
  const auto e = build_wielandt_rank1(Vector::Constant(2, 0.5));
  const auto t = ddvi::ddvi(c, 0.9, e, 1.0, Vector::Zero(2), StopRule::fixed(1));
  EXPECT_NEAR(t.final_v[0], 5.5, 1e-12);
  EXPECT_NEAR(t.final_v[1], 4.5, 1e-12);
}

TEST(Ddvi, IterateStaysConsistentWithW) {
  const auto f = chainwalk();
  const auto e = build_schur(f.chain.p_pi, 3, 100, 0, SchurMode::exact);
  const double alpha = 0.9;
  const auto t = ddvi::ddvi(f.chain, 0.99, e, alpha, Vector::Zero(50), StopRule::fixed(50));
  const Vector w = t.final_v - alpha * 0.99 * apply_E(e, t.final_v);
  EXPECT_LE((w - *t.final_w).lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(Ddvi, GarnetRankThreeTailRate) {
  envs::GarnetParams g;
  g.seed = 11;
  const auto env = envs::build_garnet(g, 0.99);
  const auto chain = induce_chain(env.mdp, env.policy);
  const Vector vpi = exact_value_pe(chain, 0.99);
  const auto eigs = dense_spectrum(chain.p_pi).eigenvalues;
  const auto e = build_conjugate_adjusted(
      [&](int r) { return build_schur(chain.p_pi, r, 100, 0, SchurMode::exact); }, 3);
  const auto t = ddvi::ddvi(chain, 0.99, e, 1.0, Vector::Zero(50), StopRule::until(1e-12, 5000, vpi));
  EXPECT_NEAR(empirical_rate(t), 0.99 * std::abs(eigs[static_cast<std::size_t>(e.rank())]), 0.05);
}

TEST(Ddvi, RejectsBadAlpha) {
  const auto c = half_half_chain();
  EXPECT_THROW(ddvi::ddvi(c, 0.9, DeflationMatrix(2), 0.0, Vector::Zero(2), StopRule::fixed(1)), InvalidArgument);
  EXPECT_THROW(ddvi::ddvi(c, 0.9, DeflationMatrix(2), 1.5, Vector::Zero(2), StopRule::fixed(1)), InvalidArgument);
}

TEST(TheoreticalRate, Examples) {
  const std::vector<Complex> eigs{{1.0, 0.0}, {0.5, 0.0}};
  EXPECT_DOUBLE_EQ(theoretical_rate(1.0, 0.9, eigs, 1), 0.45);
  EXPECT_NEAR(theoretical_rate(0.99, 0.99, eigs, 1), 0.01 / 0.0199, 1e-12);
  EXPECT_EQ(theoretical_rate(1.0, 0.0, eigs, 1), 0.0);
}

TEST(ViControl, ConvergesToPolicyIterationValue) {
  const auto env = envs::build_chainwalk(0.9);
  const auto star = exact_value_control(env.mdp, 0.9);
  const auto t = vi_control(env.mdp, 0.9, Vector::Zero(50), StopRule::until(1e-10, 10000, star.values));
  EXPECT_TRUE(t.reached_target);
  EXPECT_EQ(t.greedy_policies.back(), star.actions);
}

TEST(DdviControlRank1, OneStateExample) {
  Matrix r(1, 2);
  r << 1.0, 2.0;
  const TabularMdp mdp({Matrix::Ones(1, 1), Matrix::Ones(1, 1)}, r, 0.9);
  const auto t = ddvi_control_rank1(mdp, 0.9, Vector::Ones(1), Vector::Zero(1), StopRule::fixed(1));
  EXPECT_NEAR((*t.final_w)[0], 2.0, 1e-12);
  EXPECT_NEAR(t.final_v[0], 20.0, 1e-12);
}

TEST(DdviControlRank1, BoundHoldsForSmallDiscount) {
  const double gamma = 0.1;
  envs::GarnetParams g;
  g.seed = 5;
  const auto env = envs::build_garnet(g, gamma);
  const auto star = exact_value_control(env.mdp, gamma);
  const Vector uniform = Vector::Constant(50, 1.0 / 50.0);
  const auto t = ddvi_control_rank1(env.mdp, gamma, uniform, Vector::Zero(50), StopRule::fixed(30, star.values));
  const double e0 = star.values.lpNorm<Eigen::Infinity>();
  for (const TraceRecord& rec : t.records) {
    EXPECT_LE(rec.sup_err, 2.0 / (1.0 - gamma) * std::pow(gamma, static_cast<double>(rec.iteration)) * e0 + 1e-14);
  }
}

TEST(AutoPi, DisabledUpgradeMatchesRankOneDdvi) {
  const auto f = chainwalk();
  AutoOptions o;
  o.C = 1000;
  const auto a = ddvi_autopi(f.chain, 0.99, o, Vector::Zero(50), StopRule::fixed(200, f.vpi));
  EXPECT_TRUE(a.upgrade_iterations.empty());
  const auto e = build_wielandt_rank1(Vector::Constant(50, 1.0 / 50.0));
  const auto b = ddvi::ddvi(f.chain, 0.99, e, 0.99, Vector::Zero(50), StopRule::fixed(200, f.vpi));
  EXPECT_LE((a.final_v - b.final_v).lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(AutoQr, DisabledUpgradeMatchesRankOneDdvi) {
  const auto f = chainwalk();
  AutoOptions o;
  o.C = 1000;
  const auto a = ddvi_autoqr(f.chain, 0.99, o, Vector::Zero(50), StopRule::fixed(200, f.vpi));
  EXPECT_TRUE(a.upgrade_iterations.empty());
  const double q = 1.0 / std::sqrt(50.0);
  const DeflationMatrix e(DeflationKind::schur, Matrix::Constant(50, 1, q), Matrix::Ones(1, 1),
                          Matrix::Constant(50, 1, q));
  const auto b = ddvi::ddvi(f.chain, 0.99, e, 0.99, Vector::Zero(50), StopRule::fixed(200, f.vpi));
  EXPECT_LE((a.final_v - b.final_v).lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(AutoPi, RecoversSecondEigenvalueOnChainWalk) {
  const auto f = chainwalk();
  AutoOptions o;
  o.max_rank = 2;
  const auto t = ddvi_autopi(f.chain, 0.99, o, Vector::Zero(50), StopRule::fixed(1000, f.vpi));
  ASSERT_FALSE(t.recovered_eigenvalues.empty());
  const double lambda2 = dense_spectrum(f.chain.p_pi).eigenvalues[1].real();
  EXPECT_NEAR(t.recovered_eigenvalues.front(), lambda2, 1e-3);
}

TEST(AutoQr, PostUpgradeRateNotWorseOnMaze) {
  const auto env = envs::build_maze(0.99);
  const auto chain = induce_chain(env.mdp, env.policy);
  const Vector vpi = exact_value_pe(chain, 0.99);
  AutoOptions o;
  o.max_rank = 2;
  const auto t = ddvi_autoqr(chain, 0.99, o, Vector::Zero(25), StopRule::fixed(3000, vpi));
  ASSERT_FALSE(t.upgrade_iterations.empty());
  const std::int64_t at = t.upgrade_iterations.front();
  const double pre = empirical_rate_between(t, 0, at + 1);
  const double post = empirical_rate_between(t, at, 1 << 30, 0.5);
  EXPECT_LE(post, pre + 0.01);
}

TEST(DdviQr, ZeroRankIsVi) {
  const auto f = chainwalk();
  DdviQrOptions o;
  o.s = 0;
  o.alpha = 1.0;
  const auto a = ddvi_qr(f.chain, 0.99, o, Vector::Zero(50), StopRule::fixed(100, f.vpi));
  const auto b = vi_pe(f.chain, 0.99, Vector::Zero(50), StopRule::fixed(100, f.vpi));
  EXPECT_TRUE((a.final_v.array() == b.final_v.array()).all());
  EXPECT_EQ(a.meta.build_cost, 0);
}

TEST(DdviQr, CostIndexShiftedByBuildCost) {
  const auto f = chainwalk();
  DdviQrOptions o;
  o.s = 2;
  o.m = 100;
  const auto t = ddvi_qr(f.chain, 0.99, o, Vector::Zero(50), StopRule::fixed(10, f.vpi));
  EXPECT_EQ(t.meta.build_cost, 200);
  EXPECT_EQ(t.records.front().cost_index, 200);
}

TEST(DdviQr, ConvergedTraceMeetsTarget) {
  const auto f = chainwalk();
  DdviQrOptions o;
  o.s = 3;
  const auto t = ddvi_qr(f.chain, 0.99, o, Vector::Zero(50), StopRule::until(1e-8, 3000, f.vpi));
  ASSERT_TRUE(t.reached_target);
  EXPECT_LE(normalized_error(t.final_v, f.vpi), 1e-8);
}

TEST(EmpiricalRate, Examples) {
  EXPECT_NEAR(empirical_rate({1.0, 0.5, 0.25, 0.125}, 1.0, 2), 0.5, 1e-12);
  EXPECT_NEAR(empirical_rate({0.3, 0.3, 0.3, 0.3}, 1.0, 2), 1.0, 1e-12);
  EXPECT_THROW(empirical_rate({1.0, 0.5}, 1.0, 10), InvalidArgument);
}
