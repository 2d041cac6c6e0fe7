#pragma once

// Rank-s deflation matrices E_s (Hotelling, Wielandt rank-1, Schur), their
// action, the closed-form resolvent (I − cE)⁻¹ and a dense verifier for the
// deflation spectral-radius property.
//
// E is stored in real factored form E = U·M·Vᵀ with VᵀU = I. M is block
// diagonal: 1×1 blocks carry real eigenvalues, 2×2 blocks carry a conjugate
// pair. For a pair λ = μ + iν with right/left vectors u = a + ib, v = c + id
// (u†v = 1), U gets columns [a, b], V gets [2c, 2d] and the block is
// [[μ, ν], [−ν, μ]], which reproduces λuv† + λ̄ūv̄† exactly in real arithmetic.

#include <ddvi/error.hpp>
#include <ddvi/mdp.hpp>
#include <ddvi/spectra.hpp>
#include <ddvi/types.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ddvi {

enum class DeflationKind { hotelling, wielandt, schur };

inline std::string to_string(DeflationKind kind) {
  switch (kind) {
    case DeflationKind::hotelling: return "hotelling";
    case DeflationKind::wielandt: return "wielandt";
    case DeflationKind::schur: return "schur";
  }
  return "unknown";
}

inline DeflationKind parse_deflation_kind(const std::string& s) {
  if (s == "hotelling") return DeflationKind::hotelling;
  if (s == "wielandt" || s == "wielandt-rank1") return DeflationKind::wielandt;
  if (s == "schur") return DeflationKind::schur;
  throw InvalidArgument("unknown deflation kind '" + s + "'");
}

/// One complex term λ·u·v† of E.
struct DeflationTerm {
  Complex lambda;
  ComplexVector u;
  ComplexVector v;
};

inline constexpr double kBiorthogonalityTolerance = 1e-8;
inline constexpr double kResolventSingularity = 1e-10;

class DeflationMatrix {
 public:
  /// Empty deflation (s = 0) on n states.
  explicit DeflationMatrix(Index n, DeflationKind kind = DeflationKind::schur)
      : kind_(kind), u_(n, 0), m_(0, 0), v_(n, 0) {}

  /// E = u·m·vᵀ. `m` must be block diagonal with 1×1 and 2×2 blocks and
  /// vᵀu = I within the biorthogonality tolerance.
  DeflationMatrix(DeflationKind kind, Matrix u, Matrix m, Matrix v)
      : kind_(kind), u_(std::move(u)), m_(std::move(m)), v_(std::move(v)) {
    const Index s = u_.cols();
    if (v_.rows() != u_.rows() || v_.cols() != s || m_.rows() != s || m_.cols() != s) {
      throw DimensionError("deflation factors have inconsistent shapes");
    }
    if (!u_.allFinite() || !v_.allFinite() || !m_.allFinite()) {
      throw NumericalError("deflation factors contain non-finite entries");
    }
    const double err = (v_.transpose() * u_ - Matrix::Identity(s, s)).cwiseAbs().maxCoeff();
    if (s > 0 && err > kBiorthogonalityTolerance) {
      throw NumericalError("deflation factors are not biorthogonal (max |VᵀU − I| = " +
                           std::to_string(err) + ")");
    }
    blocks_ = block_layout(m_);
  }

  DeflationKind kind() const { return kind_; }
  Index size() const { return u_.rows(); }
  int rank() const { return static_cast<int>(u_.cols()); }
  bool empty() const { return u_.cols() == 0; }

  const Matrix& u() const { return u_; }
  const Matrix& m() const { return m_; }
  const Matrix& v() const { return v_; }

  /// Deflated eigenvalues, one per term, in block order.
  std::vector<Complex> eigenvalues() const {
    std::vector<Complex> out;
    for (const auto& [i, size] : blocks_) {
      if (size == 1) {
        out.emplace_back(m_(i, i), 0.0);
      } else {
        const auto [l1, l2] = detail::eig2x2(m_(i, i), m_(i, i + 1), m_(i + 1, i), m_(i + 1, i + 1));
        out.push_back(l1);
        out.push_back(l2);
      }
    }
    return out;
  }

  /// Complex terms (λᵢ, uᵢ, vᵢ) with E = Σ λᵢ uᵢ vᵢ†.
  std::vector<DeflationTerm> terms() const {
    std::vector<DeflationTerm> out;
    for (const auto& [i, size] : blocks_) {
      if (size == 1) {
        out.push_back({Complex(m_(i, i), 0.0), u_.col(i).cast<Complex>(), v_.col(i).cast<Complex>()});
        continue;
      }
      // Diagonalize the 2×2 block B = X·Λ·X⁻¹; then U_b·B·V_bᵀ = Σ λ_j (U_b x_j)(row_j(X⁻¹)·V_bᵀ).
      const Matrix b = m_.block(i, i, 2, 2);
      const auto [l1, l2] = detail::eig2x2(b(0, 0), b(0, 1), b(1, 0), b(1, 1));
      ComplexMatrix x(2, 2);
      for (int j = 0; j < 2; ++j) {
        const Complex l = j == 0 ? l1 : l2;
        Complex e0 = b(0, 1), e1 = l - b(0, 0);
        if (std::abs(e0) + std::abs(e1) == 0.0) {
          e0 = l - b(1, 1);
          e1 = b(1, 0);
        }
        x(0, j) = e0;
        x(1, j) = e1;
      }
      const ComplexMatrix xinv = x.inverse();
      const ComplexMatrix ub = u_.middleCols(i, 2).cast<Complex>() * x;
      const ComplexMatrix vb_rows = xinv * v_.middleCols(i, 2).transpose().cast<Complex>();
      for (int j = 0; j < 2; ++j) {
        out.push_back({j == 0 ? l1 : l2, ub.col(j), vb_rows.row(j).adjoint()});
      }
    }
    return out;
  }

  /// Dense real n×n matrix U·M·Vᵀ.
  Matrix assemble() const { return u_ * m_ * v_.transpose(); }

  /// Σ λᵢ uᵢ vᵢ† summed in complex arithmetic from the terms.
  ComplexMatrix assemble_from_terms() const {
    ComplexMatrix out = ComplexMatrix::Zero(size(), size());
    for (const DeflationTerm& t : terms()) out += t.lambda * t.u * t.v.adjoint();
    return out;
  }

  /// Diagnostics attached by the builders.
  std::optional<bool> separated;         ///< Schur: subspace resolved and |λ_s| > |λ_{s+1}|
  std::optional<Complex> next_estimate;  ///< Schur: λ_{s+1} estimate
  int requested_rank = 0;                ///< rank asked for before conjugate adjustment
  std::optional<Matrix> subspace_iterate;  ///< iterative Schur: guarded iterate, reusable as a warm start

 private:
  static std::vector<std::pair<Index, Index>> block_layout(const Matrix& m) {
    std::vector<std::pair<Index, Index>> blocks;
    const Index s = m.rows();
    for (Index i = 0; i < s;) {
      if (i + 1 < s && (m(i + 1, i) != 0.0 || m(i, i + 1) != 0.0)) {
        blocks.emplace_back(i, 2);
        i += 2;
      } else {
        blocks.emplace_back(i, 1);
        i += 1;
      }
    }
    return blocks;
  }

  DeflationKind kind_;
  Matrix u_;
  Matrix m_;
  Matrix v_;
  std::vector<std::pair<Index, Index>> blocks_;
};

// ---------------------------------------------------------------------------
// Actions

/// E·x.
inline Vector apply_E(const DeflationMatrix& e, const Vector& x) {
  if (x.size() != e.size()) throw DimensionError("apply_E: vector length mismatch");
  if (e.empty()) return Vector::Zero(x.size());
  const Vector vx = e.v().transpose() * x;
  const Vector mvx = e.m() * vx;
  return e.u() * mvx;
}

/// (I − c·E)⁻¹ prepared for repeated application:
/// (I − cUMVᵀ)⁻¹ = I + U·[(I − cM)⁻¹cM]·Vᵀ since VᵀU = I.
class Resolvent {
 public:
  Resolvent(const DeflationMatrix& e, double c) : e_(&e) {
    const Index s = e.rank();
    if (s == 0) return;
    for (const Complex& l : e.eigenvalues()) {
      if (std::abs(1.0 - c * l) < kResolventSingularity) {
        throw NumericalError("resolvent is near-singular: |1 − c·λ| < 1e-10");
      }
    }
    const Matrix cm = c * e.m();
    const Matrix a = Matrix::Identity(s, s) - cm;
    coeff_ = a.partialPivLu().solve(cm);
  }

  Vector apply(const Vector& w) const {
    if (w.size() != e_->size()) throw DimensionError("apply_resolvent: vector length mismatch");
    if (e_->empty()) return w;
    const Vector vw = e_->v().transpose() * w;
    const Vector cvw = coeff_ * vw;
    const Vector ucvw = e_->u() * cvw;
    return w + ucvw;
  }

 private:
  const DeflationMatrix* e_;
  Matrix coeff_;
};

/// (I − ag·E)⁻¹·w in closed form.
inline Vector apply_resolvent(const DeflationMatrix& e, double ag, const Vector& w) {
  return Resolvent(e, ag).apply(w);
}

/// (P^π − E)·x.
inline Vector deflated_apply(const PolicyInducedChain& chain, const DeflationMatrix& e,
                             const Vector& x) {
  if (x.size() != chain.size() || e.size() != chain.size()) {
    throw DimensionError("deflated_apply: dimension mismatch");
  }
  Vector px = chain.p_pi * x;
  if (e.empty()) return px;
  return px - apply_E(e, x);
}

// ---------------------------------------------------------------------------
// Builders

namespace detail {

inline void check_square(const Matrix& p, int s, const char* who) {
  if (p.rows() != p.cols()) throw DimensionError(std::string(who) + ": matrix must be square");
  if (s < 0 || s > p.rows()) throw InvalidArgument(std::string(who) + ": need 0 <= s <= n");
}

/// Throws when the top-s slice of a sorted spectrum ends inside a conjugate pair.
inline void check_conjugate_closed(const std::vector<Complex>& sorted, int s) {
  if (s <= 0 || static_cast<std::size_t>(s) >= sorted.size()) return;
  const Complex last = sorted[static_cast<std::size_t>(s - 1)];
  const Complex next = sorted[static_cast<std::size_t>(s)];
  if (last.imag() > 0.0 && std::abs(next - std::conj(last)) <= 1e-8 * std::max(1.0, std::abs(last))) {
    throw ConjugateSplitError("rank " + std::to_string(s) + " splits a conjugate eigenvalue pair", s + 1);
  }
}

/// Block diagonal part (1×1 and 2×2 blocks) of a quasi-triangular matrix.
inline Matrix block_diagonal_part(const Matrix& t) {
  Matrix out = Matrix::Zero(t.rows(), t.cols());
  for (const auto& [i, size] : quasi_triangular_blocks(t)) {
    out.block(i, i, size, size) = t.block(i, i, size, size);
  }
  return out;
}

}  // namespace detail

/// E₁ = 𝟏vᵀ for a probability vector v. Removes the eigenvalue 1 of any
/// row-stochastic matrix.
inline DeflationMatrix build_wielandt_rank1(const Vector& v) {
  detail::check_distribution(v, "wielandt v");
  const Index n = v.size();
  DeflationMatrix e(DeflationKind::wielandt, Matrix::Ones(n, 1), Matrix::Ones(1, 1), v);
  e.requested_rank = 1;
  return e;
}

/// Σ λᵢ uᵢ vᵢ† from right eigenvectors of P and of Pᵀ, scaled so uᵢ†vⱼ = δᵢⱼ.
inline DeflationMatrix build_hotelling(const Matrix& p, int s) {
  detail::check_square(p, s, "build_hotelling");
  const Index n = p.rows();
  DeflationMatrix empty(n, DeflationKind::hotelling);
  if (s == 0) return empty;
  const std::vector<Complex> eigs = dense_spectrum(p).eigenvalues;
  detail::check_conjugate_closed(eigs, s);

  const Matrix pt = p.transpose();
  Matrix u(n, s), m = Matrix::Zero(s, s), v(n, s);
  for (int i = 0; i < s;) {
    const Complex l = eigs[static_cast<std::size_t>(i)];
    const ComplexVector right = inverse_iteration(p, l);
    const ComplexVector left = inverse_iteration(pt, std::conj(l));
    const Complex overlap = right.dot(left);  // u†y
    if (std::abs(overlap) < kBiorthogonalityTolerance) {
      throw NumericalError("build_hotelling: eigenvalue " + std::to_string(i + 1) +
                           " is defective or nearly so (|u†v| < 1e-8); use Schur deflation");
    }
    const ComplexVector scaled = left / overlap;  // v with v†u = 1
    if (l.imag() == 0.0) {
      u.col(i) = right.real();
      v.col(i) = scaled.real();
      m(i, i) = l.real();
      i += 1;
    } else {
      u.col(i) = right.real();
      u.col(i + 1) = right.imag();
      v.col(i) = 2.0 * scaled.real();
      v.col(i + 1) = 2.0 * scaled.imag();
      m(i, i) = l.real();
      m(i, i + 1) = l.imag();
      m(i + 1, i) = -l.imag();
      m(i + 1, i + 1) = l.real();
      i += 2;
    }
  }
  const double err = (v.transpose() * u - Matrix::Identity(s, s)).cwiseAbs().maxCoeff();
  if (err > kBiorthogonalityTolerance) {
    throw NumericalError("build_hotelling: biorthogonalization failed (repeated or near-defective "
                         "eigenvalues); use Schur deflation");
  }
  DeflationMatrix e(DeflationKind::hotelling, std::move(u), std::move(m), std::move(v));
  e.requested_rank = s;
  return e;
}

enum class SchurMode {
  iterative,  ///< orthogonal_iteration with m rounds
  exact,      ///< invariant subspace from the dense spectrum (oracle)
};

/// Σ λᵢ uᵢ uᵢᵀ over orthonormal Schur vectors (2×2 blocks for complex pairs).
inline DeflationMatrix build_schur(const Matrix& p, int s, int m = kDefaultQrRounds,
                                   std::uint64_t seed = 0, SchurMode mode = SchurMode::iterative,
                                   const Matrix* warm_start = nullptr) {
  detail::check_square(p, s, "build_schur");
  const Index n = p.rows();
  if (s == 0) return DeflationMatrix(n, DeflationKind::schur);

  Matrix basis;
  Matrix t;
  std::optional<bool> separated;
  std::optional<Complex> next;
  Matrix iterate;
  if (mode == SchurMode::iterative) {
    SchurBasis sb = orthogonal_iteration(p, s, m, seed, warm_start);
    if (sb.conjugate_split) {
      throw ConjugateSplitError("rank " + std::to_string(s) + " splits a conjugate eigenvalue pair", s + 1);
    }
    basis = std::move(sb.u);
    t = std::move(sb.h);
    separated = sb.separated;
    next = sb.next_estimate;
    iterate = std::move(sb.iterate);
  } else {
    const std::vector<Complex> eigs = dense_spectrum(p).eigenvalues;
    detail::check_conjugate_closed(eigs, s);
    Matrix z(n, s);
    for (int i = 0; i < s;) {
      const Complex l = eigs[static_cast<std::size_t>(i)];
      const ComplexVector x = inverse_iteration(p, l);
      z.col(i) = x.real();
      if (l.imag() == 0.0) {
        i += 1;
      } else {
        z.col(i + 1) = x.imag();
        i += 2;
      }
    }
    const Matrix q = qr_factorize(z).q;
    const RealSchurForm ritz = real_schur(q.transpose() * p * q, true);
    basis = q * ritz.q;
    t = ritz.t;
    if (static_cast<std::size_t>(s) < eigs.size()) {
      next = eigs[static_cast<std::size_t>(s)];
      separated = std::abs(eigs[static_cast<std::size_t>(s - 1)]) - std::abs(*next) > kSeparationTolerance;
    } else {
      separated = true;
    }
  }
  Matrix u = basis;
  DeflationMatrix e(DeflationKind::schur, std::move(basis), detail::block_diagonal_part(t), std::move(u));
  e.separated = separated;
  e.next_estimate = next;
  e.requested_rank = s;
  if (iterate.size() > 0) e.subspace_iterate = std::move(iterate);
  return e;
}

/// Builds with the given rank, bumping it by one when it would split a
/// conjugate pair.
template <class Build>
DeflationMatrix build_conjugate_adjusted(Build&& build, int s) {
  try {
    return build(s);
  } catch (const ConjugateSplitError& err) {
    DeflationMatrix e = build(err.suggested_rank());
    e.requested_rank = s;
    return e;
  }
}

// ---------------------------------------------------------------------------
// Verification

struct DeflationReport {
  int rank = 0;
  double rho_deflated = 0.0;  ///< ρ(P − E)
  double lambda_next = 0.0;   ///< |λ_{s+1}(P)|, 0 when s = n
  double difference = 0.0;
  bool tail_matched = false;
  double max_imag = 0.0;      ///< largest |Im| entry of Σ λᵢuᵢvᵢ†
  bool pass = false;
};

inline constexpr double kDeflationTolerance = 1e-6;

/// Compares the dense spectra of P and P − E: ρ(P − E) against |λ_{s+1}|, and
/// each surviving eigenvalue λ_{s+1..n} of P against a distinct eigenvalue of
/// P − E (greedy nearest match within 1e-6).
inline DeflationReport verify_deflation(const Matrix& p, const DeflationMatrix& e,
                                        double tol = kDeflationTolerance) {
  if (p.rows() != p.cols() || e.size() != p.rows()) throw DimensionError("verify_deflation: shape mismatch");
  DeflationReport r;
  r.rank = e.rank();
  const std::vector<Complex> eigs = dense_spectrum(p).eigenvalues;
  const std::vector<Complex> deflated = dense_spectrum(p - e.assemble()).eigenvalues;
  const auto s = static_cast<std::size_t>(e.rank());
  r.rho_deflated = deflated.empty() ? 0.0 : std::abs(deflated.front());
  r.lambda_next = s < eigs.size() ? std::abs(eigs[s]) : 0.0;
  r.difference = std::abs(r.rho_deflated - r.lambda_next);

  std::vector<bool> used(deflated.size(), false);
  r.tail_matched = true;
  for (std::size_t j = s; j < eigs.size(); ++j) {
    std::size_t best = deflated.size();
    double best_dist = tol;
    for (std::size_t k = 0; k < deflated.size(); ++k) {
      if (used[k]) continue;
      const double d = std::abs(deflated[k] - eigs[j]);
      if (d <= best_dist) {
        best_dist = d;
        best = k;
      }
    }
    if (best == deflated.size()) {
      r.tail_matched = false;
      break;
    }
    used[best] = true;
  }
  if (!e.empty()) r.max_imag = e.assemble_from_terms().imag().cwiseAbs().maxCoeff();
  r.pass = r.difference <= tol && r.tail_matched;
  return r;
}

}  // namespace ddvi
