#pragma once

// Planning iterations: value iteration, DDVI for general α, rank-1 DDVI for
// control, AutoPI / AutoQR (rank grown from W-iterate differences), rank-s
// DDVI with QR iteration, and theoretical / empirical contraction rates.

#include <ddvi/deflation.hpp>
#include <ddvi/error.hpp>
#include <ddvi/mdp.hpp>
#include <ddvi/spectra.hpp>
#include <ddvi/trace.hpp>
#include <ddvi/types.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ddvi {

namespace detail {

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw InvalidArgument("alpha must lie in (0, 1], got " + std::to_string(alpha));
  }
}

inline TraceRecorder::Operator pe_operator(const PolicyInducedChain& chain, double gamma) {
  return [&chain, gamma](const ValueVector& v) { return bellman_pe_apply(chain, gamma, v); };
}

inline TraceRecorder::Operator opt_operator(const TabularMdp& mdp, double gamma) {
  return [&mdp, gamma](const ValueVector& v) { return bellman_opt_apply(mdp, gamma, v).values; };
}

/// W = ((1 − α)V + αr) + αγ·d, elementwise in a fixed order so that α = 1
/// with d = P·V reproduces r + γ·P·V bit for bit.
inline Vector relaxed_update(const Vector& v, const Vector& r, const Vector& d, double alpha, double gamma) {
  const double keep = 1.0 - alpha;
  const double ag = alpha * gamma;
  Vector w(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    const double base = keep * v[i] + alpha * r[i];
    w[i] = base + ag * d[i];
  }
  return w;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Policy evaluation

/// V^{k+1} = T^π V^k.
inline SolveTrace vi_pe(const PolicyInducedChain& chain, double gamma, const ValueVector& v0,
                        const StopRule& stop) {
  detail::check_discount(gamma);
  if (v0.size() != chain.size()) throw DimensionError("vi_pe: v0 length mismatch");
  SolveTrace trace;
  trace.meta.algorithm = "vi";
  TraceRecorder rec(stop, detail::pe_operator(chain, gamma), trace);
  ValueVector v = v0;
  for (std::int64_t k = 0; !rec.observe(k, v); ++k) v = bellman_pe_apply(chain, gamma, v);
  trace.final_v = std::move(v);
  return trace;
}

/// W^{k+1} = (1 − α)V^k + αr + αγ(P − E)V^k,  V^{k+1} = (I − αγE)⁻¹W^{k+1}.
inline SolveTrace ddvi(const PolicyInducedChain& chain, double gamma, const DeflationMatrix& e,
                       double alpha, const ValueVector& v0, const StopRule& stop) {
  detail::check_discount(gamma);
  detail::check_alpha(alpha);
  if (v0.size() != chain.size() || e.size() != chain.size()) throw DimensionError("ddvi: dimension mismatch");
  SolveTrace trace;
  trace.meta.algorithm = "ddvi";
  trace.meta.rank = e.rank();
  trace.meta.alpha = alpha;
  const double ag = alpha * gamma;
  const Resolvent resolvent(e, ag);
  TraceRecorder rec(stop, detail::pe_operator(chain, gamma), trace);
  ValueVector v = v0;
  Vector w = e.empty() ? v0 : Vector(v0 - ag * apply_E(e, v0));
  for (std::int64_t k = 0; !rec.observe(k, v); ++k) {
    w = detail::relaxed_update(v, chain.r_pi, deflated_apply(chain, e, v), alpha, gamma);
    v = resolvent.apply(w);
  }
  trace.final_v = std::move(v);
  trace.final_w = std::move(w);
  return trace;
}

/// Asymptotic rate max{ |1−α| / |1−αγλᵢ| (i ≤ s), |1 − α + αγλⱼ| (j > s) } for
/// a spectrum sorted by sort_spectrum.
inline double theoretical_rate(double alpha, double gamma, const std::vector<Complex>& spectrum, int s) {
  if (s < 0 || static_cast<std::size_t>(s) > spectrum.size()) {
    throw InvalidArgument("theoretical_rate: need 0 <= s <= n");
  }
  double rate = 0.0;
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    const Complex l = spectrum[i];
    const double term = static_cast<int>(i) < s ? std::abs(1.0 - alpha) / std::abs(1.0 - alpha * gamma * l)
                                                : std::abs(1.0 - alpha + alpha * gamma * l);
    rate = std::max(rate, term);
  }
  return rate;
}

// ---------------------------------------------------------------------------
// Control

/// V^{k+1} = T*V^k with the greedy policy of each step recorded.
inline SolveTrace vi_control(const TabularMdp& mdp, double gamma, const ValueVector& v0, const StopRule& stop) {
  detail::check_discount(gamma);
  if (v0.size() != mdp.num_states()) throw DimensionError("vi_control: v0 length mismatch");
  SolveTrace trace;
  trace.meta.algorithm = "vi-control";
  TraceRecorder rec(stop, detail::opt_operator(mdp, gamma), trace);
  ValueVector v = v0;
  for (std::int64_t k = 0; !rec.observe(k, v); ++k) {
    GreedyStep step = bellman_opt_apply(mdp, gamma, v);
    trace.greedy_policies.push_back(std::move(step.actions));
    v = std::move(step.values);
  }
  trace.final_v = std::move(v);
  return trace;
}

/// Rank-1 DDVI for control with E = 𝟏vᵀ:
/// W^{k+1} = max_π{r^π + γP^πW^k} − γ(vᵀW^k)𝟏 and V^k = W^k + γ/(1−γ)(vᵀW^k)𝟏.
inline SolveTrace ddvi_control_rank1(const TabularMdp& mdp, double gamma, const Vector& v,
                                     const ValueVector& w0, const StopRule& stop) {
  detail::check_discount(gamma);
  detail::check_distribution(v, "ddvi_control_rank1 v");
  const Index n = mdp.num_states();
  if (v.size() != n || w0.size() != n) throw DimensionError("ddvi_control_rank1: dimension mismatch");
  SolveTrace trace;
  trace.meta.algorithm = "ddvi-control-r1";
  trace.meta.rank = 1;
  TraceRecorder rec(stop, detail::opt_operator(mdp, gamma), trace);
  const double lift = gamma / (1.0 - gamma);
  auto value_of = [&](const Vector& w) -> ValueVector {
    return (w.array() + lift * v.dot(w)).matrix();
  };
  Vector w = w0;
  ValueVector val = value_of(w);
  for (std::int64_t k = 0; !rec.observe(k, val); ++k) {
    GreedyStep step = bellman_opt_apply(mdp, gamma, w);
    trace.greedy_policies.push_back(std::move(step.actions));
    const double shift = gamma * v.dot(w);
    w = (step.values.array() - shift).matrix();
    val = value_of(w);
  }
  trace.final_v = std::move(val);
  trace.final_w = std::move(w);
  return trace;
}

// ---------------------------------------------------------------------------
// AutoPI / AutoQR

struct AutoOptions {
  /// α used at rank s is alpha_schedule[min(s, size) − 1].
  std::vector<double> alpha_schedule{0.99};
  int C = 10;
  double epsilon = 1e-4;
  int max_rank = 10;
  /// AutoPI rank-1 left vector (probability vector); uniform when empty.
  std::optional<Vector> v1;

  double alpha_for(int s) const {
    if (alpha_schedule.empty()) throw InvalidArgument("alpha_schedule must not be empty");
    const std::size_t i = std::min(static_cast<std::size_t>(std::max(s, 1)), alpha_schedule.size()) - 1;
    return alpha_schedule[i];
  }

  void validate() const {
    if (C < 2) throw InvalidArgument("AutoPI/AutoQR need C >= 2");
    if (!(epsilon > 0.0)) throw InvalidArgument("AutoPI/AutoQR need epsilon > 0");
    if (max_rank < 1) throw InvalidArgument("max_rank must be >= 1");
    for (double a : alpha_schedule) detail::check_alpha(a);
  }
};

inline constexpr double kEigenvalueCollision = 1e-8;
inline constexpr double kGramSchmidtFloor = 1e-10;

namespace detail {

enum class AutoVariant { power, qr };

struct AutoBasis {
  Matrix u;                     // n×s
  std::vector<double> lambdas;  // λ₁ = 1 first
  Matrix v;                     // n×s, VᵀU = I (power) or V = U (qr)

  DeflationMatrix deflation(AutoVariant variant) const {
    const auto s = static_cast<Index>(lambdas.size());
    Matrix m = Matrix::Zero(s, s);
    for (Index i = 0; i < s; ++i) m(i, i) = lambdas[static_cast<std::size_t>(i)];
    return DeflationMatrix(variant == AutoVariant::power ? DeflationKind::wielandt : DeflationKind::schur,
                           u, m, v);
  }
};

/// Attempts the rank upgrade from two consecutive W differences. Returns an
/// empty optional (and a reason) when the upgrade has to be abandoned.
inline std::optional<AutoBasis> try_upgrade(const AutoBasis& basis, AutoVariant variant, const Vector& w_prev,
                                            const Vector& w_next, double alpha, double gamma, double& lambda_out,
                                            std::string& reason) {
  const double lambda_rq = w_prev.dot(w_next) / w_prev.squaredNorm();
  const double lambda = (lambda_rq - 1.0 + alpha) / (alpha * gamma);
  lambda_out = lambda;
  // λ′ is a real Rayleigh quotient, so λ is always real here; a complex
  // λ_{s+1} keeps the difference direction from settling and never triggers.
  for (double li : basis.lambdas) {
    if (std::abs(li - lambda) < kEigenvalueCollision) {
      reason = "recovered eigenvalue " + std::to_string(lambda) + " collides with a deflated one";
      return std::nullopt;
    }
  }
  const Index n = basis.u.rows();
  const Index s = basis.u.cols();
  Vector u_new;
  if (variant == AutoVariant::power) {
    u_new = w_next;
    for (Index i = 0; i < s; ++i) {
      const double li = basis.lambdas[static_cast<std::size_t>(i)];
      const double sigma = alpha * li * (1.0 - gamma * li) / (1.0 - alpha * gamma * li);
      u_new -= sigma * basis.v.col(i).dot(w_next) / (li - lambda) * basis.u.col(i);
    }
    const double nrm = u_new.norm();
    if (!(nrm > 0.0) || !std::isfinite(nrm)) {
      reason = "recovered eigenvector vanished";
      return std::nullopt;
    }
    u_new /= nrm;
  } else {
    u_new = w_next;
    for (Index i = 0; i < s; ++i) u_new -= basis.u.col(i).dot(w_next) * basis.u.col(i);
    const double nrm = u_new.norm();
    if (nrm < kGramSchmidtFloor * std::max(1.0, w_next.norm())) {
      reason = "Gram-Schmidt residual below 1e-10";
      return std::nullopt;
    }
    u_new /= nrm;
  }
  AutoBasis out;
  out.u.resize(n, s + 1);
  out.u.leftCols(s) = basis.u;
  out.u.col(s) = u_new;
  out.lambdas = basis.lambdas;
  out.lambdas.push_back(lambda);
  if (variant == AutoVariant::power) {
    const Matrix gram = out.u.transpose() * out.u;
    Eigen::FullPivLU<Matrix> lu(gram);
    lu.setThreshold(1e-12);
    if (!lu.isInvertible()) {
      reason = "recovered eigenvector lies in the span of the deflated ones";
      return std::nullopt;
    }
    out.v = out.u * lu.inverse();
  } else {
    out.v = out.u;
  }
  return out;
}

inline SolveTrace run_auto(const PolicyInducedChain& chain, double gamma, const AutoOptions& opts,
                           AutoVariant variant, const ValueVector& v0, const StopRule& stop) {
  detail::check_discount(gamma);
  opts.validate();
  const Index n = chain.size();
  if (v0.size() != n) throw DimensionError("auto DDVI: v0 length mismatch");
  SolveTrace trace;
  trace.meta.algorithm = variant == AutoVariant::power ? "autopi" : "autoqr";
  TraceRecorder rec(stop, pe_operator(chain, gamma), trace);

  AutoBasis basis;
  if (variant == AutoVariant::power) {
    basis.u = Matrix::Ones(n, 1);
    basis.v = opts.v1 ? Matrix(*opts.v1) : Matrix(Matrix::Constant(n, 1, 1.0 / static_cast<double>(n)));
    if (opts.v1) {
      if (opts.v1->size() != n) throw DimensionError("AutoPI v1 length mismatch");
      check_distribution(*opts.v1, "AutoPI v1");
    }
  } else {
    basis.u = Matrix::Constant(n, 1, 1.0 / std::sqrt(static_cast<double>(n)));
    basis.v = basis.u;
  }
  basis.lambdas = {1.0};

  int s = 1;
  double alpha = opts.alpha_for(s);
  DeflationMatrix e = basis.deflation(variant);
  auto resolvent = std::make_unique<Resolvent>(e, alpha * gamma);
  ValueVector v = v0;
  Vector w = v - alpha * gamma * apply_E(e, v);
  std::optional<Vector> d_prev;  // w^k
  std::optional<Vector> d_last;  // w^{k+1}
  bool stable = false;
  bool zero_noted = false;
  int c = 0;
  std::int64_t k = 0;
  const int rank_cap = static_cast<int>(std::min<Index>(opts.max_rank, n));

  bool done = rec.observe(k, v);
  while (!done) {
    if (s < rank_cap && c >= opts.C && stable && d_prev && d_last) {
      double lambda = 0.0;
      std::string reason;
      std::optional<AutoBasis> next =
          try_upgrade(basis, variant, *d_prev, *d_last, alpha, gamma, lambda, reason);
      if (next) {
        basis = std::move(*next);
        s += 1;
        alpha = opts.alpha_for(s);
        e = basis.deflation(variant);
        resolvent = std::make_unique<Resolvent>(e, alpha * gamma);
        w = v - alpha * gamma * apply_E(e, v);
        trace.upgrade_iterations.push_back(k);
        trace.recovered_eigenvalues.push_back(lambda);
        trace.events.push_back("iteration " + std::to_string(k) + ": rank " + std::to_string(s) +
                               ", lambda " + std::to_string(lambda));
      } else {
        trace.events.push_back("iteration " + std::to_string(k) + ": upgrade aborted, " + reason);
      }
      c = 0;
      stable = false;
      d_prev.reset();
      d_last.reset();
      continue;
    }
    Vector w_next = relaxed_update(v, chain.r_pi, deflated_apply(chain, e, v), alpha, gamma);
    v = resolvent->apply(w_next);
    Vector diff = w_next - w;
    w = std::move(w_next);
    ++k;
    ++c;
    const double dn = diff.norm();
    if (dn <= 1e-12 * std::max(1.0, w.norm())) {
      if (!zero_noted) {
        trace.events.push_back("iteration " + std::to_string(k) + ": W difference vanished, upgrade suppressed");
        zero_noted = true;
      }
      stable = false;
      d_prev.reset();
      d_last.reset();
    } else {
      d_prev = std::move(d_last);
      d_last = std::move(diff);
      if (d_prev) {
        const Vector a = *d_last / d_last->norm();
        const Vector b = *d_prev / d_prev->norm();
        stable = (a - b).lpNorm<Eigen::Infinity>() < opts.epsilon;
      }
    }
    done = rec.observe(k, v);
  }
  trace.meta.rank = s;
  trace.meta.alpha = alpha;
  trace.final_v = std::move(v);
  trace.final_w = std::move(w);
  return trace;
}

}  // namespace detail

/// DDVI with automatic power iteration: starts from E₁ = 𝟏v₁ᵀ and adds one
/// right eigenvector each time the W differences settle.
inline SolveTrace ddvi_autopi(const PolicyInducedChain& chain, double gamma, const AutoOptions& opts,
                              const ValueVector& v0, const StopRule& stop) {
  return detail::run_auto(chain, gamma, opts, detail::AutoVariant::power, v0, stop);
}

/// DDVI with automatic QR iteration: as AutoPI, but the new direction is
/// Gram–Schmidt-orthonormalized against the current Schur basis.
inline SolveTrace ddvi_autoqr(const PolicyInducedChain& chain, double gamma, const AutoOptions& opts,
                              const ValueVector& v0, const StopRule& stop) {
  return detail::run_auto(chain, gamma, opts, detail::AutoVariant::qr, v0, stop);
}

// ---------------------------------------------------------------------------
// Rank-s DDVI with QR iteration

struct DdviQrOptions {
  int s = 1;
  double alpha = 0.99;
  int m = kDefaultQrRounds;
  std::uint64_t seed = 0;
  SchurMode mode = SchurMode::iterative;
};

/// Builds the Schur deflation E_s with m rounds of orthogonal iteration, then
/// runs DDVI. Ranks that split a conjugate pair are raised by one.
inline SolveTrace ddvi_qr(const PolicyInducedChain& chain, double gamma, const DdviQrOptions& opts,
                          const ValueVector& v0, const StopRule& stop) {
  if (opts.s < 0) throw InvalidArgument("ddvi_qr: s must be >= 0");
  std::vector<std::string> events;
  const auto build_start = std::chrono::steady_clock::now();
  DeflationMatrix e(chain.size(), DeflationKind::schur);
  if (opts.s > 0) {
    e = build_conjugate_adjusted(
        [&](int r) { return build_schur(chain.p_pi, r, opts.m, opts.seed, opts.mode); }, opts.s);
    if (e.rank() != opts.s) {
      events.push_back("rank raised from " + std::to_string(opts.s) + " to " + std::to_string(e.rank()) +
                       " to keep a conjugate pair together");
    }
    if (e.separated && !*e.separated) {
      events.push_back("warning: |lambda_s| and |lambda_{s+1}| not separated after QR iteration");
    }
  }
  const double build_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - build_start).count();
  const std::int64_t build_cost =
      opts.mode == SchurMode::iterative ? static_cast<std::int64_t>(opts.m) * e.rank() : 0;
  // ddvi() knows nothing about the E build, so the cost index is shifted here.
  SolveTrace trace = ddvi(chain, gamma, e, opts.alpha, v0, stop);
  trace.meta.algorithm = opts.s == 0 ? "vi" : "ddvi-qr";
  trace.meta.seed = opts.seed;
  trace.meta.qr_rounds = opts.m;
  trace.meta.build_cost = build_cost;
  trace.meta.build_seconds = build_seconds;
  for (TraceRecord& r : trace.records) r.cost_index = r.iteration + build_cost;
  trace.events.insert(trace.events.begin(), events.begin(), events.end());
  return trace;
}

// ---------------------------------------------------------------------------
// Empirical rate

inline constexpr double kErrorFloor = 1e-13;

/// exp of the least-squares slope of log(error) against iteration over the
/// final `tail_fraction` of the points above the error floor.
inline double empirical_rate(const std::vector<double>& iterations, const std::vector<double>& errors,
                             double tail_fraction = 0.5, std::size_t min_points = 10) {
  if (iterations.size() != errors.size()) throw DimensionError("empirical_rate: length mismatch");
  if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) {
    throw InvalidArgument("empirical_rate: tail_fraction must lie in (0, 1]");
  }
  std::size_t usable = 0;
  while (usable < errors.size() && errors[usable] > kErrorFloor) ++usable;
  const auto tail = static_cast<std::size_t>(std::ceil(tail_fraction * static_cast<double>(usable)));
  if (tail < std::max<std::size_t>(min_points, 2)) {
    throw InvalidArgument("empirical_rate: only " + std::to_string(tail) + " tail points above 1e-13");
  }
  const std::size_t first = usable - tail;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = first; i < usable; ++i) {
    mx += iterations[i];
    my += std::log(errors[i]);
  }
  mx /= static_cast<double>(tail);
  my /= static_cast<double>(tail);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = first; i < usable; ++i) {
    const double dx = iterations[i] - mx;
    sxy += dx * (std::log(errors[i]) - my);
    sxx += dx * dx;
  }
  return std::exp(sxy / sxx);
}

/// Rate over consecutive iterations 0, 1, 2, ...
inline double empirical_rate(const std::vector<double>& errors, double tail_fraction = 0.5,
                             std::size_t min_points = 10) {
  std::vector<double> x(errors.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  return empirical_rate(x, errors, tail_fraction, min_points);
}

inline double empirical_rate(const SolveTrace& trace, double tail_fraction = 0.5, std::size_t min_points = 10) {
  std::vector<double> x, y;
  for (const TraceRecord& r : trace.records) {
    x.push_back(static_cast<double>(r.iteration));
    y.push_back(r.norm_err_l1);
  }
  return empirical_rate(x, y, tail_fraction, min_points);
}

/// Rate fitted on the records with first <= iteration < last.
inline double empirical_rate_between(const SolveTrace& trace, std::int64_t first, std::int64_t last,
                                     double tail_fraction = 1.0, std::size_t min_points = 10) {
  std::vector<double> x, y;
  for (const TraceRecord& r : trace.records) {
    if (r.iteration < first || r.iteration >= last) continue;
    x.push_back(static_cast<double>(r.iteration));
    y.push_back(r.norm_err_l1);
  }
  return empirical_rate(x, y, tail_fraction, min_points);
}

}  // namespace ddvi
