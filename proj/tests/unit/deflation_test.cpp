#include <ddvi/deflation.hpp>
#include <ddvi/envs.hpp>
#include <ddvi/rng.hpp>

#include <gtest/gtest.h>

#include <Eigen/LU>

using namespace ddvi;

namespace {

Matrix half_half() {
  Matrix p(2, 2);
  p << 0.5, 0.5, 0.5, 0.5;
  return p;
}

Matrix three_cycle() {
  Matrix p = Matrix::Zero(3, 3);
  p(0, 1) = p(1, 2) = p(2, 0) = 1.0;
  return p;
}

Matrix garnet_chain(std::uint64_t seed, int n = 50) {
  envs::GarnetParams g;
  g.seed = seed;
  g.n_states = n;
  const auto env = envs::build_garnet(g);
  return induce_chain(env.mdp, env.policy).p_pi;
}

Vector random_vector(Rng& rng, Index n) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

}  // namespace

TEST(Wielandt, OuterProduct) {
  const Vector v = Vector::Constant(2, 0.5);
  EXPECT_LE((build_wielandt_rank1(v).assemble() - half_half()).norm(), 1e-15);
}

TEST(Wielandt, RemovesPerronEigenvalue) {
  Vector v(2);
  v << 1.0, 0.0;
  const auto e = build_wielandt_rank1(v);
  const auto r = verify_deflation(half_half(), e);
  EXPECT_NEAR(r.rho_deflated, 0.0, 1e-12);
}

TEST(Wielandt, RejectsNonDistribution) {
  Vector v(2);
  v << 0.6, 0.5;
  EXPECT_THROW(build_wielandt_rank1(v), InvalidArgument);
}

TEST(Hotelling, SymmetricChainUsesStationaryVector) {
  const auto e = build_hotelling(half_half(), 1);
  const Vector u = e.u().col(0) / e.u()(0, 0);
  const Vector v = e.v().col(0) * e.u()(0, 0);
  EXPECT_NEAR(u[1], 1.0, 1e-12);
  EXPECT_NEAR(v[0], 0.5, 1e-12);
  EXPECT_NEAR(v[1], 0.5, 1e-12);
  EXPECT_LE((half_half() - e.assemble()).norm(), 1e-12);
}

TEST(Hotelling, ThreeCycleSplitSuggestsNextRank) {
  try {
    build_hotelling(three_cycle(), 2);
    FAIL() << "expected a conjugate split";
  } catch (const ConjugateSplitError& e) {
    EXPECT_EQ(e.suggested_rank(), 3);
  }
  const auto e = build_conjugate_adjusted([](int r) { return build_hotelling(three_cycle(), r); }, 2);
  EXPECT_EQ(e.rank(), 3);
  EXPECT_EQ(e.requested_rank, 2);
}

TEST(Hotelling, FullRankLeavesZeroResidual) {
  Matrix p(3, 3);
  p << 0.6, 0.3, 0.1, 0.2, 0.7, 0.1, 0.1, 0.2, 0.7;
  const auto e = build_hotelling(p, 3);
  EXPECT_LE((p - e.assemble()).norm(), 1e-10);
}

TEST(Schur, SymmetricExample) {
  Matrix a(2, 2);
  a << 2, 1, 1, 2;
  for (const SchurMode mode : {SchurMode::iterative, SchurMode::exact}) {
    const auto e = build_schur(a, 1, 100, 0, mode);
    Matrix expected(2, 2);
    expected << 1.5, 1.5, 1.5, 1.5;
    EXPECT_LE((e.assemble() - expected).norm(), 1e-10);
    const auto r = verify_deflation(a, e);
    EXPECT_NEAR(r.rho_deflated, 1.0, 1e-10);
  }
}

TEST(Schur, FullRankIsNilpotent) {
  // Eigenvalues of a perturbed nilpotent matrix move by about eps^(1/n), so
  // check the matrix power instead of the spectral radius.
  const Matrix p = garnet_chain(3, 8);
  const auto e = build_conjugate_adjusted(
      [&](int r) { return build_schur(p, r, 100, 0, SchurMode::exact); }, 8);
  Matrix d = p - e.assemble();
  Matrix power = Matrix::Identity(8, 8);
  for (int i = 0; i < 8; ++i) power = power * d;
  EXPECT_LE(power.norm(), 1e-10);
}

TEST(Schur, RecoversPerronEigenvalue) {
  const Matrix p = garnet_chain(1);
  const auto e = build_schur(p, 1, 100, 0);
  EXPECT_NEAR(e.eigenvalues()[0].real(), 1.0, 1e-8);
}

TEST(Schur, IterativeMatchesExactOnGarnet) {
  const Matrix p = garnet_chain(6);
  const auto exact = build_schur(p, 1, 100, 0, SchurMode::exact);
  const auto iter = build_schur(p, 1, 200, 0, SchurMode::iterative);
  EXPECT_NEAR(iter.eigenvalues()[0].real(), exact.eigenvalues()[0].real(), 1e-10);
  ASSERT_TRUE(iter.subspace_iterate.has_value());
  EXPECT_EQ(iter.subspace_iterate->cols(), 2);
}

TEST(Deflation, PropertyOverKindsAndRanks) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix p = garnet_chain(seed);
    for (int s : {1, 2, 3, 5}) {
      const auto h = build_conjugate_adjusted([&](int r) { return build_hotelling(p, r); }, s);
      const auto sc =
          build_conjugate_adjusted([&](int r) { return build_schur(p, r, 100, seed, SchurMode::exact); }, s);
      EXPECT_TRUE(verify_deflation(p, h).pass) << "hotelling seed " << seed << " s " << s;
      EXPECT_TRUE(verify_deflation(p, sc).pass) << "schur seed " << seed << " s " << s;
      EXPECT_LE(verify_deflation(p, h).max_imag, 1e-10);
    }
  }
}

TEST(Deflation, WrongVectorsAreFlagged) {
  // Biorthogonal factors taken from a different chain deflate the wrong
  // subspace. Rank 1 would not do: any 𝟏vᵀ removes the Perron eigenvalue.
  const Matrix p = garnet_chain(2);
  const Matrix q = garnet_chain(3);
  const auto other = build_conjugate_adjusted([&](int r) { return build_hotelling(q, r); }, 2);
  const auto own = build_conjugate_adjusted([&](int r) { return build_hotelling(p, r); }, other.rank());
  EXPECT_TRUE(verify_deflation(p, own).pass);
  EXPECT_FALSE(verify_deflation(p, other).pass);
}

TEST(Deflation, EmptyKeepsPerronRadius) {
  const Matrix p = garnet_chain(4);
  const auto r = verify_deflation(p, DeflationMatrix(p.rows()));
  EXPECT_NEAR(r.rho_deflated, 1.0, 1e-10);
}

TEST(Deflation, NonBiorthogonalFactorsRejected) {
  EXPECT_THROW(DeflationMatrix(DeflationKind::hotelling, Matrix::Ones(2, 1), Matrix::Ones(1, 1), Matrix::Ones(2, 1)),
               NumericalError);
}

TEST(ApplyE, Examples) {
  const auto e = build_wielandt_rank1(Vector::Constant(2, 0.5));
  Vector x(2);
  x << 1.0, 0.0;
  const Vector ex = apply_E(e, x);
  EXPECT_DOUBLE_EQ(ex[0], 0.5);
  EXPECT_DOUBLE_EQ(ex[1], 0.5);
  EXPECT_EQ(apply_E(DeflationMatrix(2), x), Vector::Zero(2));
}

TEST(ApplyE, ComplexTermsAgreeWithRealFactors) {
  Rng rng(1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix p = garnet_chain(seed);
    const auto e = build_conjugate_adjusted([&](int r) { return build_hotelling(p, r); }, 4);
    const Vector x = random_vector(rng, p.rows());
    const ComplexVector via_terms = e.assemble_from_terms() * x.cast<Complex>();
    EXPECT_LE(via_terms.imag().cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((via_terms.real() - apply_E(e, x)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Resolvent, Examples) {
  const auto e = build_wielandt_rank1(Vector::Constant(2, 0.5));
  Vector w(2);
  w << 1.0, 0.0;
  EXPECT_EQ(apply_resolvent(e, 0.0, w), w);
  EXPECT_EQ(apply_resolvent(DeflationMatrix(2), 0.9, w), w);
  const Vector v = apply_resolvent(e, 0.9, w);
  EXPECT_NEAR(v[0], 5.5, 1e-12);
  EXPECT_NEAR(v[1], 4.5, 1e-12);
}

TEST(Resolvent, MatchesDirectSolveAndComplexClosedForm) {
  Rng rng(7);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix p = garnet_chain(seed, 20);
    const auto e = build_conjugate_adjusted([&](int r) { return build_hotelling(p, r); }, 3);
    const double c = 0.95;
    const Vector w = random_vector(rng, p.rows());
    const Vector closed = apply_resolvent(e, c, w);
    const Matrix a = Matrix::Identity(p.rows(), p.rows()) - c * e.assemble();
    EXPECT_LE((closed - a.partialPivLu().solve(w)).lpNorm<Eigen::Infinity>(), 1e-9);
    // I + Σ cλ/(1 − cλ) u v† w over complex terms.
    ComplexVector series = w.cast<Complex>();
    for (const DeflationTerm& t : e.terms()) {
      series += (c * t.lambda / (1.0 - c * t.lambda)) * t.u * t.v.dot(w.cast<Complex>());
    }
    EXPECT_LE((series.real() - closed).lpNorm<Eigen::Infinity>(), 1e-9);
    EXPECT_LE(series.imag().lpNorm<Eigen::Infinity>(), 1e-9);
  }
}

TEST(Resolvent, NearSingularThrows) {
  const auto e = build_wielandt_rank1(Vector::Constant(2, 0.5));
  EXPECT_THROW(Resolvent(e, 1.0), NumericalError);
}

TEST(DeflatedApply, Examples) {
  PolicyInducedChain c{half_half(), Vector::Zero(2)};
  Vector x(2);
  x << 3.0, -1.0;
  EXPECT_EQ(deflated_apply(c, DeflationMatrix(2), x), c.p_pi * x);
  const auto e = build_wielandt_rank1(Vector::Constant(2, 0.5));
  EXPECT_LE(deflated_apply(c, e, x).norm(), 1e-15);
  EXPECT_LE(deflated_apply(c, e, Vector::Ones(2)).norm(), 1e-15);
}
