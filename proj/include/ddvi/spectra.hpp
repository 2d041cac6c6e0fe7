#pragma once

// Eigenvalue machinery for dense real matrices: power iteration, thin QR,
// orthogonal (QR) iteration, a Hessenberg + Francis double-shift real Schur
// decomposition, eigenvalue ordering and inverse iteration.
//
// Everything runs in real arithmetic; complex-conjugate eigenvalue pairs
// surface as 2×2 diagonal blocks of quasi-triangular matrices.

#include <ddvi/error.hpp>
#include <ddvi/rng.hpp>
#include <ddvi/types.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ddvi {

inline constexpr double kSpectrumTieTolerance = 1e-12;
inline constexpr double kSeparationTolerance = 1e-6;
inline constexpr int kDefaultQrRounds = 100;

// ---------------------------------------------------------------------------
// Power iteration

struct PowerResult {
  double lambda = 0.0;  ///< Rayleigh estimate bᵀAb
  Vector u;
  bool converged = false;
  bool zero_matrix = false;  ///< A·b vanished
  int iterations = 0;
};

/// b ← A·b / ‖A·b‖₂ until successive iterates agree to `tol` in sup norm.
/// `apply` maps a vector to A times that vector.
template <class Apply>
PowerResult power_iteration(Apply&& apply, const Vector& b0, int max_iter = -1, double tol = 1e-10) {
  const double norm0 = b0.norm();
  if (!(norm0 > 0.0)) throw InvalidArgument("power iteration needs a nonzero start vector");
  if (max_iter < 0) max_iter = 10 * static_cast<int>(b0.size());
  PowerResult out;
  Vector b = b0 / norm0;
  out.u = b;
  for (int it = 1; it <= max_iter; ++it) {
    const Vector ab = apply(b);
    const double nrm = ab.norm();
    out.iterations = it;
    if (nrm == 0.0) {
      out.lambda = 0.0;
      out.zero_matrix = true;
      return out;
    }
    out.lambda = b.dot(ab);
    Vector next = ab / nrm;
    const double diff = (next - b).lpNorm<Eigen::Infinity>();
    b = std::move(next);
    out.u = b;
    if (diff < tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Thin QR

struct QrResult {
  Matrix q;  ///< n×k, orthonormal columns
  Matrix r;  ///< k×k upper triangular, non-negative diagonal
};

/// z = q·r for a full-column-rank n×k matrix (k ≤ n).
inline QrResult qr_factorize(const Matrix& z) {
  const Index n = z.rows();
  const Index k = z.cols();
  if (k > n) throw DimensionError("qr_factorize needs rows >= cols");
  Eigen::HouseholderQR<Matrix> qr(z);
  QrResult out;
  out.q = qr.householderQ() * Matrix::Identity(n, k);
  out.r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  const double scale = std::max(1.0, z.cwiseAbs().maxCoeff());
  for (Index i = 0; i < k; ++i) {
    if (out.r(i, i) < 0.0) {
      out.r.row(i) *= -1.0;
      out.q.col(i) *= -1.0;
    }
    if (out.r(i, i) < 1e-12 * scale) {
      throw NumericalError("qr_factorize: rank deficient (|r_" + std::to_string(i) + "," +
                           std::to_string(i) + "| below 1e-12)");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Real Schur decomposition

struct RealSchurForm {
  Matrix t;  ///< quasi upper triangular; 2×2 blocks only for complex pairs
  Matrix q;  ///< orthogonal, a = q t qᵀ (empty when not requested)
};

namespace detail {

/// Householder vector v and β with (I − βvvᵀ)x = αe₁.
inline double householder(Eigen::Ref<Vector> v) {
  const double norm = v.norm();
  if (norm == 0.0) return 0.0;
  const double alpha = v[0] > 0.0 ? -norm : norm;
  v[0] -= alpha;
  const double vv = v.squaredNorm();
  return vv == 0.0 ? 0.0 : 2.0 / vv;
}

/// Reflector acting on rows [k, k+len) over columns [c0, c1) of h.
inline void reflect_rows(Matrix& h, const Vector& v, double beta, Index k, Index c0, Index c1) {
  for (Index j = c0; j < c1; ++j) {
    double dot = 0.0;
    for (Index i = 0; i < v.size(); ++i) dot += v[i] * h(k + i, j);
    dot *= beta;
    for (Index i = 0; i < v.size(); ++i) h(k + i, j) -= dot * v[i];
  }
}

/// Reflector acting on columns [k, k+len) over rows [r0, r1) of h.
inline void reflect_cols(Matrix& h, const Vector& v, double beta, Index k, Index r0, Index r1) {
  for (Index i = r0; i < r1; ++i) {
    double dot = 0.0;
    for (Index j = 0; j < v.size(); ++j) dot += h(i, k + j) * v[j];
    dot *= beta;
    for (Index j = 0; j < v.size(); ++j) h(i, k + j) -= dot * v[j];
  }
}

inline void hessenberg_reduce(Matrix& h, Matrix* q) {
  const Index n = h.rows();
  for (Index k = 0; k + 2 < n; ++k) {
    Vector v = h.col(k).segment(k + 1, n - k - 1);
    if (v.tail(v.size() - 1).squaredNorm() == 0.0) continue;
    const double beta = householder(v);
    if (beta == 0.0) continue;
    reflect_rows(h, v, beta, k + 1, k, n);
    reflect_cols(h, v, beta, k + 1, 0, n);
    if (q != nullptr) reflect_cols(*q, v, beta, k + 1, 0, n);
    for (Index i = k + 2; i < n; ++i) h(i, k) = 0.0;
  }
}

/// Eigenvalues of [[a, b], [c, d]].
inline std::pair<Complex, Complex> eig2x2(double a, double b, double c, double d) {
  const double p = 0.5 * (a - d);
  const double disc = p * p + b * c;
  if (disc >= 0.0) {
    const double root = std::sqrt(disc);
    const double z = p + std::copysign(root, p);
    if (z == 0.0) return {Complex(d, 0.0), Complex(d, 0.0)};
    const double l1 = d + z;
    const double l2 = d - b * c / z;
    return {Complex(l1, 0.0), Complex(l2, 0.0)};
  }
  const double re = 0.5 * (a + d);
  const double im = std::sqrt(-disc);
  return {Complex(re, im), Complex(re, -im)};
}

/// Rotates a converged 2×2 block at rows/cols (i, i+1) into upper triangular
/// form when its eigenvalues are real.
inline void standardize_block(Matrix& t, Matrix* q, Index i) {
  const Index n = t.rows();
  const double a = t(i, i), b = t(i, i + 1), c = t(i + 1, i), d = t(i + 1, i + 1);
  if (c == 0.0) return;
  const auto [l1, l2] = eig2x2(a, b, c, d);
  if (l1.imag() != 0.0) return;
  const double lambda = l1.real();
  // Eigenvector for lambda: pick the better-conditioned of the two formulas.
  double x = b, y = lambda - a;
  if (std::hypot(lambda - d, c) > std::hypot(x, y)) {
    x = lambda - d;
    y = c;
  }
  const double r = std::hypot(x, y);
  if (r == 0.0) return;
  const double cs = x / r, sn = y / r;
  for (Index j = 0; j < n; ++j) {  // rows i, i+1 ← Gᵀ·rows
    const double u = t(i, j), w = t(i + 1, j);
    t(i, j) = cs * u + sn * w;
    t(i + 1, j) = -sn * u + cs * w;
  }
  for (Index k = 0; k < n; ++k) {  // cols i, i+1 ← cols·G
    const double u = t(k, i), w = t(k, i + 1);
    t(k, i) = cs * u + sn * w;
    t(k, i + 1) = -sn * u + cs * w;
  }
  if (q != nullptr) {
    for (Index k = 0; k < q->rows(); ++k) {
      const double u = (*q)(k, i), w = (*q)(k, i + 1);
      (*q)(k, i) = cs * u + sn * w;
      (*q)(k, i + 1) = -sn * u + cs * w;
    }
  }
  t(i + 1, i) = 0.0;
}

}  // namespace detail

/// a = q·t·qᵀ via Householder Hessenberg reduction followed by Francis
/// double-shift QR sweeps with standard deflation.
inline RealSchurForm real_schur(const Matrix& a, bool want_q = true) {
  if (a.rows() != a.cols()) throw DimensionError("real_schur needs a square matrix");
  if (!a.allFinite()) throw InvalidArgument("real_schur: matrix has non-finite entries");
  const Index n = a.rows();
  RealSchurForm out;
  out.t = a;
  Matrix* q = nullptr;
  if (want_q) {
    out.q = Matrix::Identity(n, n);
    q = &out.q;
  }
  Matrix& h = out.t;
  detail::hessenberg_reduce(h, q);
  const double eps = std::numeric_limits<double>::epsilon();
  const double hnorm = std::max(h.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  const int max_total = 100 * static_cast<int>(std::max<Index>(n, 1));
  int total = 0;
  int iter = 0;
  // Tight clusters stall on rounding noise; after max_total sweeps accept
  // subdiagonals below sqrt(eps) * |H| and allow one more budget.
  double floor = 0.0;
  Index p = n - 1;
  while (p > 0) {
    Index l = p;
    while (l > 0) {
      double scale = std::abs(h(l - 1, l - 1)) + std::abs(h(l, l));
      if (scale == 0.0) scale = hnorm;
      if (std::abs(h(l, l - 1)) <= std::max(eps * scale, floor)) {
        h(l, l - 1) = 0.0;
        break;
      }
      --l;
    }
    if (l == p) {
      --p;
      iter = 0;
      continue;
    }
    if (l == p - 1) {
      detail::standardize_block(h, q, p - 1);
      p -= 2;
      iter = 0;
      continue;
    }
    if (++total > max_total) {
      if (floor > 0.0) throw NumericalError("real_schur: QR iteration did not converge");
      floor = std::sqrt(eps) * hnorm;
      total = 0;
      continue;
    }
    ++iter;
    double s, t;
    if (iter % 10 == 0) {
      const double w = std::abs(h(p, p - 1)) + std::abs(h(p - 1, p - 2));
      s = 1.5 * w;
      t = w * w;
    } else {
      s = h(p - 1, p - 1) + h(p, p);
      t = h(p - 1, p - 1) * h(p, p) - h(p - 1, p) * h(p, p - 1);
    }
    double x = h(l, l) * h(l, l) + h(l, l + 1) * h(l + 1, l) - s * h(l, l) + t;
    double y = h(l + 1, l) * (h(l, l) + h(l + 1, l + 1) - s);
    double z = h(l + 1, l) * h(l + 2, l + 1);
    Vector v3(3);
    for (Index k = l; k + 2 <= p; ++k) {
      v3 << x, y, z;
      const double beta = detail::householder(v3);
      if (beta != 0.0) {
        const Index c0 = std::max(l, k - 1);
        detail::reflect_rows(h, v3, beta, k, c0, n);
        detail::reflect_cols(h, v3, beta, k, 0, std::min(k + 4, p + 1));
        if (q != nullptr) detail::reflect_cols(*q, v3, beta, k, 0, n);
      }
      if (k > l) {
        h(k + 1, k - 1) = 0.0;
        h(k + 2, k - 1) = 0.0;
      }
      x = h(k + 1, k);
      y = h(k + 2, k);
      if (k + 3 <= p) z = h(k + 3, k);
    }
    Vector v2(2);
    v2 << x, y;
    const double beta = detail::householder(v2);
    if (beta != 0.0) {
      detail::reflect_rows(h, v2, beta, p - 1, p - 2, n);
      detail::reflect_cols(h, v2, beta, p - 1, 0, p + 1);
      if (q != nullptr) detail::reflect_cols(*q, v2, beta, p - 1, 0, n);
    }
    h(p, p - 2) = 0.0;
  }
  return out;
}

/// Diagonal block layout of a quasi-triangular matrix: (offset, size) pairs.
inline std::vector<std::pair<Index, Index>> quasi_triangular_blocks(const Matrix& t) {
  std::vector<std::pair<Index, Index>> blocks;
  const Index n = t.rows();
  for (Index i = 0; i < n;) {
    if (i + 1 < n && t(i + 1, i) != 0.0) {
      blocks.emplace_back(i, 2);
      i += 2;
    } else {
      blocks.emplace_back(i, 1);
      i += 1;
    }
  }
  return blocks;
}

/// Eigenvalues read off the diagonal blocks, in block order.
inline std::vector<Complex> quasi_triangular_eigenvalues(const Matrix& t) {
  std::vector<Complex> out;
  out.reserve(static_cast<std::size_t>(t.rows()));
  for (const auto& [i, size] : quasi_triangular_blocks(t)) {
    if (size == 1) {
      out.emplace_back(t(i, i), 0.0);
    } else {
      const auto [l1, l2] = detail::eig2x2(t(i, i), t(i, i + 1), t(i + 1, i), t(i + 1, i + 1));
      out.push_back(l1.imag() >= 0.0 ? l1 : l2);
      out.push_back(l1.imag() >= 0.0 ? l2 : l1);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ordering

/// Descending modulus; equal moduli (within 1e-12 relative) ordered by
/// descending real part, then descending imaginary part, which places the
/// positive-imaginary member of a conjugate pair first.
inline std::vector<Complex> sort_spectrum(std::vector<Complex> eigs) {
  std::stable_sort(eigs.begin(), eigs.end(),
                   [](const Complex& a, const Complex& b) { return std::abs(a) > std::abs(b); });
  std::size_t start = 0;
  while (start < eigs.size()) {
    const double lead = std::abs(eigs[start]);
    std::size_t end = start + 1;
    while (end < eigs.size() &&
           lead - std::abs(eigs[end]) <= kSpectrumTieTolerance * std::max(1.0, lead)) {
      ++end;
    }
    std::stable_sort(eigs.begin() + static_cast<std::ptrdiff_t>(start),
                     eigs.begin() + static_cast<std::ptrdiff_t>(end),
                     [](const Complex& a, const Complex& b) {
                       if (a.real() != b.real()) return a.real() > b.real();
                       return a.imag() > b.imag();
                     });
    start = end;
  }
  return eigs;
}

struct SpectrumReport {
  std::vector<Complex> eigenvalues;  ///< sorted by sort_spectrum
  std::string ordering = "modulus-desc,re-desc,im-desc";
  std::optional<Matrix> basis;
  /// tied[i]: |λ_i| − |λ_{i+1}| below the separation tolerance.
  std::vector<bool> tied;

  double spectral_radius() const { return eigenvalues.empty() ? 0.0 : std::abs(eigenvalues.front()); }
};

inline std::vector<bool> separation_flags(const std::vector<Complex>& sorted,
                                          double tol = kSeparationTolerance) {
  std::vector<bool> tied;
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
    tied.push_back(std::abs(sorted[i]) - std::abs(sorted[i + 1]) < tol);
  }
  return tied;
}

namespace detail {

/// Smallest-singular-value proxy of (A − λI) from two inverse-iteration solves.
inline double shifted_singularity(const Matrix& a, Complex lambda) {
  const Index n = a.rows();
  ComplexMatrix shifted = a.cast<Complex>();
  shifted.diagonal().array() -= lambda;
  Eigen::PartialPivLU<ComplexMatrix> lu(shifted);
  // A random start: the all-ones vector is orthogonal to most left
  // eigenvectors of a stochastic matrix.
  Rng rng(0x5bd1e995ULL);
  ComplexVector x(n);
  for (Index i = 0; i < n; ++i) x[i] = Complex(rng.normal(), rng.normal());
  x.normalize();
  double nx = 0.0;
  for (int step = 0; step < 2; ++step) {
    x = lu.solve(x);
    nx = x.norm();
    if (!std::isfinite(nx) || nx == 0.0) return 0.0;
    x /= nx;
  }
  return 1.0 / nx;
}

}  // namespace detail

struct DenseSpectrumOptions {
  Index cap = 5000;
  bool verify_residuals = false;
};

/// Full eigenvalue set of a dense square matrix, sorted.
inline SpectrumReport dense_spectrum(const Matrix& a, const DenseSpectrumOptions& opts = {}) {
  if (a.rows() != a.cols()) throw DimensionError("dense_spectrum needs a square matrix");
  if (a.rows() > opts.cap) throw InvalidArgument("dense_spectrum: matrix exceeds size cap");
  SpectrumReport report;
  if (a.rows() == 0) return report;
  const RealSchurForm schur = real_schur(a, false);
  report.eigenvalues = sort_spectrum(quasi_triangular_eigenvalues(schur.t));
  report.tied = separation_flags(report.eigenvalues);
  if (opts.verify_residuals) {
    const double scale = std::max(1.0, a.cwiseAbs().rowwise().sum().maxCoeff());
    for (const Complex& l : report.eigenvalues) {
      if (detail::shifted_singularity(a, l) > 1e-6 * scale) {
        throw NumericalError("dense_spectrum: eigenvalue residual check failed");
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Orthogonal iteration

struct SchurBasis {
  Matrix u;  ///< n×s orthonormal basis of the dominant invariant subspace estimate
  Matrix h;  ///< s×s quasi-triangular projection uᵀAu
  std::vector<Complex> eigen_estimates;  ///< eigenvalues of h, sorted
  std::optional<Complex> next_estimate;  ///< λ_{s+1} from the guard column
  bool conjugate_split = false;  ///< λ_s and λ_{s+1} form a conjugate pair
  bool separated = true;         ///< |λ_s| > |λ_{s+1}| detected and subspace resolved
  double residual = 0.0;         ///< ‖A·u − u·h‖_F / ‖A·u‖_F
  double orthogonality_error = 0.0;  ///< max over rounds of ‖UᵀU − I‖_max
  int rounds = 0;
  Matrix iterate;  ///< final n×(s+1) orthonormal iterate, guard column included
};

/// Residual above which the leading subspace is reported as unresolved.
inline constexpr double kSubspaceResidualTolerance = 1e-2;

/// `m` rounds of Z ← A·U, U·R ← QR(Z) from a seeded random orthonormal start
/// (or `warm_start`), followed by Rayleigh–Ritz on the leading s columns.
/// One guard column beyond s estimates λ_{s+1}. `apply` maps an n×k block to
/// A times that block.
template <class ApplyBlock>
SchurBasis orthogonal_iteration(ApplyBlock&& apply, Index n, int s, int m, std::uint64_t seed,
                                const Matrix* warm_start = nullptr) {
  if (s < 1 || s > n) throw InvalidArgument("orthogonal_iteration: need 1 <= s <= n");
  if (m < 1) throw InvalidArgument("orthogonal_iteration: need m >= 1");
  const Index k = std::min<Index>(s + 1, n);
  Matrix start(n, k);
  Rng rng(seed);
  for (Index j = 0; j < k; ++j) {
    for (Index i = 0; i < n; ++i) start(i, j) = rng.normal();
  }
  if (warm_start != nullptr && warm_start->rows() == n) {
    const Index keep = std::min(warm_start->cols(), k);
    start.leftCols(keep) = warm_start->leftCols(keep);
  }
  SchurBasis out;
  Matrix u = qr_factorize(start).q;
  for (int round = 0; round < m; ++round) {
    u = qr_factorize(apply(u)).q;
    const double err = (u.transpose() * u - Matrix::Identity(k, k)).cwiseAbs().maxCoeff();
    out.orthogonality_error = std::max(out.orthogonality_error, err);
  }
  out.rounds = m;
  out.iterate = u;

  const Matrix au = apply(u);
  const Matrix h_full = u.transpose() * au;
  const std::vector<Complex> all = sort_spectrum(quasi_triangular_eigenvalues(real_schur(h_full, false).t));
  const auto ss = static_cast<std::size_t>(s);
  if (k > s) {
    out.next_estimate = all[ss];
    out.conjugate_split = all[ss - 1].imag() > 0.0 &&
                          std::abs(all[ss] - std::conj(all[ss - 1])) <= 1e-8 * std::max(1.0, std::abs(all[ss]));
  }

  const Matrix us = u.leftCols(s);
  const Matrix aus = au.leftCols(s);
  const RealSchurForm ritz = real_schur(us.transpose() * aus, true);
  out.u = us * ritz.q;
  out.h = ritz.t;
  out.eigen_estimates = sort_spectrum(quasi_triangular_eigenvalues(out.h));
  const Matrix a_u = aus * ritz.q;
  const double denom = std::max(a_u.norm(), std::numeric_limits<double>::min());
  out.residual = (a_u - out.u * out.h).norm() / denom;

  bool gap = true;
  if (out.next_estimate) {
    const double top = std::abs(out.eigen_estimates.back());
    gap = top - std::abs(*out.next_estimate) > kSeparationTolerance * std::max(top, 1e-300);
  }
  out.separated = !out.conjugate_split && gap && out.residual <= kSubspaceResidualTolerance;
  return out;
}

inline SchurBasis orthogonal_iteration(const Matrix& a, int s, int m = kDefaultQrRounds,
                                       std::uint64_t seed = 0, const Matrix* warm_start = nullptr) {
  if (a.rows() != a.cols()) throw DimensionError("orthogonal_iteration needs a square matrix");
  return orthogonal_iteration([&a](const Matrix& u) -> Matrix { return a * u; }, a.rows(), s, m,
                              seed, warm_start);
}

// ---------------------------------------------------------------------------
// Inverse iteration

/// Right eigenvector of `a` for the (approximate) eigenvalue `lambda`.
/// Unit 2-norm, phase fixed so the largest-magnitude entry is real positive.
inline ComplexVector inverse_iteration(const Matrix& a, Complex lambda, int steps = 3,
                                       double tol = 1e-10) {
  const Index n = a.rows();
  const double scale = std::max(1.0, std::abs(lambda));
  const Complex shift = lambda + Complex(1e-10 * scale, 0.0);
  ComplexMatrix shifted = a.cast<Complex>();
  shifted.diagonal().array() -= shift;
  Eigen::PartialPivLU<ComplexMatrix> lu(shifted);
  Rng rng(0x9e3779b97f4a7c15ULL);
  ComplexVector x(n);
  for (Index i = 0; i < n; ++i) x[i] = Complex(1.0 + 0.1 * rng.uniform01(), 0.1 * rng.uniform01());
  x.normalize();
  const double anorm = std::max(1.0, a.cwiseAbs().rowwise().sum().maxCoeff());
  double residual = std::numeric_limits<double>::infinity();
  for (int it = 0; it < std::max(steps, 1) + 7; ++it) {
    x = lu.solve(x);
    const double nx = x.norm();
    if (!std::isfinite(nx) || nx == 0.0) throw NumericalError("inverse_iteration: solve broke down");
    x /= nx;
    residual = (a.cast<Complex>() * x - lambda * x).norm();
    if (it + 1 >= steps && residual <= tol * anorm) break;
  }
  if (residual > tol * anorm * 1e3) {
    throw NumericalError("inverse_iteration: eigenvector residual " + std::to_string(residual));
  }
  Index big = 0;
  x.cwiseAbs().maxCoeff(&big);
  x *= std::conj(x[big]) / std::abs(x[big]);
  x[big] = Complex(x[big].real(), 0.0);
  return x;
}

}  // namespace ddvi
