#pragma once

// Sample-based policy evaluation: uniform-state transition sampler, TD(0),
// rank-s DDTD with a periodically rebuilt Schur deflation, the Dyna baseline,
// the θ-smoothed empirical model and step-size schedules.

#include <ddvi/deflation.hpp>
#include <ddvi/error.hpp>
#include <ddvi/mdp.hpp>
#include <ddvi/rng.hpp>
#include <ddvi/solvers.hpp>
#include <ddvi/spectra.hpp>
#include <ddvi/trace.hpp>
#include <ddvi/types.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ddvi {

// ---------------------------------------------------------------------------
// Sampling

struct TransitionSample {
  Index x = 0;
  Index a = 0;
  double r = 0.0;
  Index next = 0;
};

/// Draws X ~ Unif(states), A ~ π(·|X), X' ~ P(·|X, A) and R = r(X, A).
/// Draws happen in that order, so a seed fixes the whole sample stream.
class TransitionSampler {
 public:
  TransitionSampler(const TabularMdp& mdp, const Policy& policy)
      : mdp_(std::make_shared<TabularMdp>(mdp)), policy_(std::make_shared<Policy>(policy)) {
    if (policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions()) {
      throw DimensionError("sampler: policy shape does not match the MDP");
    }
    build_tables();
  }

  /// Sampler over a Markov reward process, viewed as a one-action MDP.
  static TransitionSampler from_chain(const PolicyInducedChain& chain, double gamma) {
    check_chain(chain);
    TabularMdp mdp({chain.p_pi}, Matrix(chain.r_pi), gamma);
    return TransitionSampler(mdp, Policy(Matrix::Ones(chain.size(), 1)));
  }

  Index num_states() const { return mdp_->num_states(); }
  Index num_actions() const { return mdp_->num_actions(); }
  const TabularMdp& mdp() const { return *mdp_; }
  const Policy& policy() const { return *policy_; }
  PolicyInducedChain chain() const { return induce_chain(*mdp_, *policy_); }

  TransitionSample sample(Rng& rng) const {
    TransitionSample out;
    out.x = static_cast<Index>(rng.below(static_cast<std::uint64_t>(num_states())));
    out.a = draw(policy_cdf_[static_cast<std::size_t>(out.x)], rng.uniform01());
    out.next = draw(transition_cdf_[static_cast<std::size_t>(out.x * num_actions() + out.a)], rng.uniform01());
    out.r = mdp_->reward(out.x, out.a);
    return out;
  }

 private:
  static std::vector<double> cdf(const Eigen::Ref<const Vector>& p) {
    std::vector<double> c(static_cast<std::size_t>(p.size()));
    double acc = 0.0;
    for (Index i = 0; i < p.size(); ++i) {
      acc += p[i];
      c[static_cast<std::size_t>(i)] = acc;
    }
    return c;
  }

  /// First index whose cumulative mass exceeds u; rounding slack at the top
  /// falls to the last index with positive mass.
  static Index draw(const std::vector<double>& c, double u) {
    const auto it = std::upper_bound(c.begin(), c.end(), u);
    if (it != c.end()) return static_cast<Index>(it - c.begin());
    std::size_t i = c.size() - 1;
    while (i > 0 && c[i] == c[i - 1]) --i;
    return static_cast<Index>(i);
  }

  void build_tables() {
    const Index n = num_states();
    const Index m = num_actions();
    policy_cdf_.clear();
    transition_cdf_.clear();
    for (Index x = 0; x < n; ++x) {
      policy_cdf_.push_back(cdf(policy_->probabilities().row(x).transpose()));
      for (Index a = 0; a < m; ++a) transition_cdf_.push_back(cdf(mdp_->transitions(a).row(x).transpose()));
    }
  }

  std::shared_ptr<const TabularMdp> mdp_;
  std::shared_ptr<const Policy> policy_;
  std::vector<std::vector<double>> policy_cdf_;
  std::vector<std::vector<double>> transition_cdf_;
};

// ---------------------------------------------------------------------------
// Empirical model

struct SmoothedRow {
  Vector p;
  bool unvisited = false;
};

/// (1 − θ)·row + θ·Uniform(support(row)). An all-zero row (no visits) maps
/// to the uniform distribution over every state and is flagged.
inline SmoothedRow smooth_model(const Vector& mle_row, double theta) {
  if (!(theta >= 0.0 && theta <= 1.0)) throw InvalidArgument("theta must lie in [0, 1]");
  const Index n = mle_row.size();
  if (n == 0) throw InvalidArgument("smooth_model: empty row");
  SmoothedRow out;
  Index support = 0;
  for (Index i = 0; i < n; ++i) support += mle_row[i] > 0.0 ? 1 : 0;
  if (support == 0) {
    out.p = Vector::Constant(n, 1.0 / static_cast<double>(n));
    out.unvisited = true;
    return out;
  }
  detail::check_distribution(mle_row, "smooth_model row");
  const double share = theta / static_cast<double>(support);
  out.p = Vector::Zero(n);
  for (Index i = 0; i < n; ++i) {
    if (mle_row[i] > 0.0) out.p[i] = (1.0 - theta) * mle_row[i] + share;
  }
  return out;
}

/// Visit counts per (x, a, x') and reward sums per (x, a).
class EmpiricalModel {
 public:
  EmpiricalModel(Index n_states, Index n_actions)
      : counts_(static_cast<std::size_t>(n_actions), Matrix::Zero(n_states, n_states)),
        visits_(Matrix::Zero(n_states, n_actions)),
        reward_sum_(Matrix::Zero(n_states, n_actions)) {}

  void observe(const TransitionSample& t) {
    counts_[static_cast<std::size_t>(t.a)](t.x, t.next) += 1.0;
    visits_(t.x, t.a) += 1.0;
    reward_sum_(t.x, t.a) += t.r;
  }

  Index num_states() const { return visits_.rows(); }
  Index num_actions() const { return visits_.cols(); }
  double visits(Index x, Index a) const { return visits_(x, a); }
  bool visited(Index x, Index a) const { return visits_(x, a) > 0.0; }

  /// Maximum-likelihood next-state distribution; all zeros when unvisited.
  Vector mle_row(Index x, Index a) const {
    const double c = visits_(x, a);
    if (c == 0.0) return Vector::Zero(num_states());
    Vector row = counts_[static_cast<std::size_t>(a)].row(x).transpose() / c;
    return row;
  }

  /// Empirical mean reward; 0 when unvisited.
  double mean_reward(Index x, Index a) const {
    const double c = visits_(x, a);
    return c == 0.0 ? 0.0 : reward_sum_(x, a) / c;
  }

  struct SmoothedChain {
    PolicyInducedChain chain;
    Index unvisited_pairs = 0;
  };

  /// π-chain of the θ-smoothed model with empirical mean rewards.
  SmoothedChain smoothed_chain(const Policy& policy, double theta) const {
    const Index n = num_states();
    SmoothedChain out{{Matrix::Zero(n, n), Vector::Zero(n)}, 0};
    for (Index x = 0; x < n; ++x) {
      for (Index a = 0; a < num_actions(); ++a) {
        const double w = policy.prob(x, a);
        const SmoothedRow row = smooth_model(mle_row(x, a), theta);
        if (row.unvisited) ++out.unvisited_pairs;
        if (w == 0.0) continue;
        out.chain.p_pi.row(x) += w * row.p.transpose();
        out.chain.r_pi[x] += w * mean_reward(x, a);
      }
    }
    return out;
  }

 private:
  std::vector<Matrix> counts_;
  Matrix visits_;
  Matrix reward_sum_;
};

// ---------------------------------------------------------------------------
// Step sizes

/// "visit" → 1/N_k(x); "harmonic:C" → min(1, C/(k+1)); "const:eta" → η.
/// The harmonic step is capped at 1: C/(k+1) exceeds 1 for k < C − 1 and a
/// coordinate step above 1 overshoots its target.
struct StepSchedule {
  enum class Kind { visit_count, harmonic, constant };
  Kind kind = Kind::visit_count;
  double param = 0.0;

  static StepSchedule visit() { return {Kind::visit_count, 0.0}; }
  static StepSchedule harmonic(double c) { return validated({Kind::harmonic, c}); }
  static StepSchedule constant(double eta) { return validated({Kind::constant, eta}); }

  static StepSchedule parse(const std::string& text) {
    if (text == "visit") return visit();
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw InvalidArgument("unknown step schedule '" + text + "'");
    const std::string head = text.substr(0, colon);
    double value = 0.0;
    try {
      std::size_t used = 0;
      value = std::stod(text.substr(colon + 1), &used);
      if (used != text.size() - colon - 1) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw InvalidArgument("bad number in step schedule '" + text + "'");
    }
    if (head == "harmonic") return harmonic(value);
    if (head == "const") return constant(value);
    throw InvalidArgument("unknown step schedule '" + text + "'");
  }

  std::string to_string() const;

  /// Step for sample k (1-based) landing on a state visited `visits` times
  /// so far, this visit included.
  double step(std::int64_t k, std::int64_t visits) const {
    switch (kind) {
      case Kind::visit_count: return 1.0 / static_cast<double>(std::max<std::int64_t>(visits, 1));
      case Kind::harmonic: return std::min(1.0, param / static_cast<double>(k + 1));
      case Kind::constant: return param;
    }
    return 0.0;
  }

 private:
  static StepSchedule validated(StepSchedule s) {
    if (!(s.param > 0.0) || !std::isfinite(s.param)) throw InvalidArgument("step-size parameter must be positive");
    return s;
  }
};

inline std::string StepSchedule::to_string() const {
  switch (kind) {
    case Kind::visit_count: return "visit";
    case Kind::harmonic: return "harmonic:" + std::to_string(param);
    case Kind::constant: return "const:" + std::to_string(param);
  }
  return "";
}

/// n / (2·min_{j>s} Re(1 − γλ_j)) over a sorted spectrum.
inline double ddtd_stepsize_lower_bound(const std::vector<Complex>& spectrum, int s, double gamma, Index n) {
  if (s < 0 || static_cast<std::size_t>(s) >= spectrum.size()) {
    throw InvalidArgument("ddtd_stepsize_lower_bound: need 0 <= s < n");
  }
  double lam = std::numeric_limits<double>::infinity();
  for (std::size_t j = static_cast<std::size_t>(s); j < spectrum.size(); ++j) {
    lam = std::min(lam, 1.0 - gamma * spectrum[j].real());
  }
  return static_cast<double>(n) / (2.0 * lam);
}

// ---------------------------------------------------------------------------
// Runs

struct SampleRunOptions {
  double gamma = 0.99;
  StepSchedule schedule = StepSchedule::visit();
  std::int64_t budget = 0;  ///< number of samples
  std::uint64_t seed = 0;
  std::int64_t stride = 100;  ///< trace every `stride` samples (and at the end)
  std::optional<ValueVector> v0;
  std::optional<ValueVector> oracle;  ///< V^π for normalized errors
};

namespace detail {

inline void check_sample_options(const SampleRunOptions& o, Index n) {
  check_discount(o.gamma);
  if (o.budget < 0) throw InvalidArgument("budget must be >= 0");
  if (o.stride < 1) throw InvalidArgument("stride must be >= 1");
  if (o.v0 && o.v0->size() != n) throw DimensionError("v0 length mismatch");
  if (o.oracle && o.oracle->size() != n) throw DimensionError("oracle length mismatch");
}

inline StopRule sample_stop(const SampleRunOptions& o) {
  StopRule r;
  r.budget = static_cast<int>(std::min<std::int64_t>(o.budget, std::numeric_limits<int>::max()));
  r.reference = o.oracle;
  return r;
}

inline bool record_now(std::int64_t k, const SampleRunOptions& o) { return k % o.stride == 0 || k == o.budget; }

/// Records samples 0, stride, 2·stride, ... and the final one.
class SampleTracer {
 public:
  SampleTracer(const SampleRunOptions& o, const PolicyInducedChain& chain, SolveTrace& trace)
      : opts_(o),
        rec_(sample_stop(o),
             [&chain, gamma = o.gamma](const ValueVector& v) { return bellman_pe_apply(chain, gamma, v); }, trace) {}

  void maybe_record(std::int64_t k, const ValueVector& v) {
    if (record_now(k, opts_)) rec_.observe(k, v);
  }

 private:
  const SampleRunOptions& opts_;
  TraceRecorder rec_;
};

}  // namespace detail

/// TD(0): V(X_k) += η_k(X_k)·[R_k + γV(X'_k) − V(X_k)].
inline SolveTrace run_td(const TransitionSampler& sampler, const SampleRunOptions& opts) {
  const Index n = sampler.num_states();
  detail::check_sample_options(opts, n);
  const PolicyInducedChain chain = sampler.chain();
  SolveTrace trace;
  trace.meta.algorithm = "td";
  trace.meta.seed = opts.seed;
  detail::SampleTracer tracer(opts, chain, trace);
  Rng rng(opts.seed);
  ValueVector v = opts.v0 ? *opts.v0 : Vector::Zero(n);
  std::vector<std::int64_t> visits(static_cast<std::size_t>(n), 0);
  tracer.maybe_record(0, v);
  for (std::int64_t k = 1; k <= opts.budget; ++k) {
    const TransitionSample t = sampler.sample(rng);
    const std::int64_t nx = ++visits[static_cast<std::size_t>(t.x)];
    const double eta = opts.schedule.step(k, nx);
    v[t.x] += eta * ((t.r + opts.gamma * v[t.next]) - v[t.x]);
    tracer.maybe_record(k, v);
  }
  trace.final_v = std::move(v);
  return trace;
}

struct DdtdOptions {
  int s = 1;
  double alpha = 1.0;
  std::int64_t model_period = 10;  ///< K
  double theta = 0.0;
  int qr_rounds = kDefaultQrRounds;
  /// Fixed deflation (e.g. from the true model); disables model rebuilds.
  std::shared_ptr<const DeflationMatrix> fixed_e;
};

/// Rank-s DDTD. Every K samples E_s is rebuilt by orthogonal iteration on
/// the θ-smoothed model chain, warm-started from the previous iterate so the
/// rounds accumulate across periods, and W
/// is reset to (I − αγE_s)V. Each sample updates one coordinate:
/// W(X) += η[αR + αγV(X') − αγ(E_sV)(X) + (1 − α)V(X) − W(X)], then
/// V = (I − αγE_s)⁻¹W.
inline SolveTrace run_ddtd(const TransitionSampler& sampler, const SampleRunOptions& opts,
                           const DdtdOptions& ddtd) {
  const Index n = sampler.num_states();
  detail::check_sample_options(opts, n);
  detail::check_alpha(ddtd.alpha);
  if (ddtd.s < 0 || ddtd.s > n) throw InvalidArgument("ddtd: need 0 <= s <= n");
  if (ddtd.model_period < 1) throw InvalidArgument("ddtd: model period K must be >= 1");
  if (!(ddtd.theta >= 0.0 && ddtd.theta <= 1.0)) throw InvalidArgument("ddtd: theta must lie in [0, 1]");
  if (ddtd.fixed_e && ddtd.fixed_e->size() != n) throw DimensionError("ddtd: fixed E size mismatch");

  const PolicyInducedChain chain = sampler.chain();
  SolveTrace trace;
  trace.meta.algorithm = "ddtd";
  trace.meta.seed = opts.seed;
  trace.meta.alpha = ddtd.alpha;
  trace.meta.qr_rounds = ddtd.qr_rounds;
  detail::SampleTracer tracer(opts, chain, trace);
  Rng rng(opts.seed);
  EmpiricalModel model(n, sampler.num_actions());

  const double alpha = ddtd.alpha;
  const double gamma = opts.gamma;
  const double ag = alpha * gamma;
  const double keep = 1.0 - alpha;
  auto e = std::make_shared<const DeflationMatrix>(ddtd.fixed_e ? *ddtd.fixed_e : DeflationMatrix(n));
  auto resolvent = std::make_unique<Resolvent>(*e, ag);
  ValueVector v = opts.v0 ? *opts.v0 : Vector::Zero(n);
  Vector w = e->empty() ? v : Vector(v - ag * apply_E(*e, v));
  v = resolvent->apply(w);
  Vector ev = apply_E(*e, v);
  std::vector<std::int64_t> visits(static_cast<std::size_t>(n), 0);
  std::uint64_t builds = 0;
  std::optional<Matrix> warm;

  tracer.maybe_record(0, v);
  for (std::int64_t k = 1; k <= opts.budget; ++k) {
    const TransitionSample t = sampler.sample(rng);
    model.observe(t);
    const std::int64_t nx = ++visits[static_cast<std::size_t>(t.x)];
    const double eta = opts.schedule.step(k, nx);
    const double target = (alpha * t.r + ag * v[t.next]) - ag * ev[t.x];
    w[t.x] += eta * ((target + keep * v[t.x]) - w[t.x]);
    v = resolvent->apply(w);
    if (!e->empty()) ev = apply_E(*e, v);

    if (ddtd.s > 0 && !ddtd.fixed_e && k % ddtd.model_period == 0) {
      const PolicyInducedChain approx = model.smoothed_chain(sampler.policy(), ddtd.theta).chain;
      try {
        auto next = std::make_shared<const DeflationMatrix>(
            build_schur(approx.p_pi, ddtd.s, ddtd.qr_rounds, opts.seed + 0x9e3779b97f4a7c15ULL * ++builds,
                        SchurMode::iterative, warm ? &*warm : nullptr));
        warm = next->subspace_iterate;
        if (next->separated && !*next->separated) {
          trace.events.push_back("sample " + std::to_string(k) + ": E not separated, previous E kept");
        } else {
          e = std::move(next);
          resolvent = std::make_unique<Resolvent>(*e, ag);
          w = v - ag * apply_E(*e, v);
          v = resolvent->apply(w);
          ev = apply_E(*e, v);
        }
      } catch (const NumericalError& err) {
        trace.events.push_back("sample " + std::to_string(k) + ": E build failed (" + err.what() +
                               "), previous E kept");
      }
    }
    tracer.maybe_record(k, v);
  }
  trace.meta.rank = e->rank();
  trace.final_v = std::move(v);
  trace.final_w = std::move(w);
  return trace;
}

struct DynaOptions {
  double theta = 0.0;
  std::int64_t model_period = 10;
};

/// Dyna: every K samples V = (I − γP̂^π)⁻¹r̂^π on the θ-smoothed empirical
/// model. Before the first solve V = V0.
inline SolveTrace run_dyna(const TransitionSampler& sampler, const SampleRunOptions& opts, const DynaOptions& dyna) {
  const Index n = sampler.num_states();
  detail::check_sample_options(opts, n);
  if (dyna.model_period < 1) throw InvalidArgument("dyna: model period must be >= 1");
  if (!(dyna.theta >= 0.0 && dyna.theta <= 1.0)) throw InvalidArgument("dyna: theta must lie in [0, 1]");
  const PolicyInducedChain chain = sampler.chain();
  SolveTrace trace;
  trace.meta.algorithm = "dyna";
  trace.meta.seed = opts.seed;
  detail::SampleTracer tracer(opts, chain, trace);
  Rng rng(opts.seed);
  EmpiricalModel model(n, sampler.num_actions());
  ValueVector v = opts.v0 ? *opts.v0 : Vector::Zero(n);
  if (opts.budget == 0) {
    const auto sm = model.smoothed_chain(sampler.policy(), dyna.theta);
    v = exact_value_pe(sm.chain, opts.gamma);
    trace.events.push_back("no samples: all " + std::to_string(sm.unvisited_pairs) +
                           " state-action pairs unvisited, uniform model");
  }
  tracer.maybe_record(0, v);
  for (std::int64_t k = 1; k <= opts.budget; ++k) {
    model.observe(sampler.sample(rng));
    if (k % dyna.model_period == 0) {
      v = exact_value_pe(model.smoothed_chain(sampler.policy(), dyna.theta).chain, opts.gamma);
    }
    tracer.maybe_record(k, v);
  }
  trace.final_v = std::move(v);
  return trace;
}

/// Value of the θ-smoothed true model: the limit Dyna approaches once every
/// (x, a) support has been observed and the counts have converged.
inline ValueVector dyna_plateau_value(const TabularMdp& mdp, const Policy& policy, double gamma, double theta) {
  const Index n = mdp.num_states();
  PolicyInducedChain chain{Matrix::Zero(n, n), Vector::Zero(n)};
  for (Index x = 0; x < n; ++x) {
    for (Index a = 0; a < mdp.num_actions(); ++a) {
      const double w = policy.prob(x, a);
      if (w == 0.0) continue;
      chain.p_pi.row(x) += w * smooth_model(mdp.transitions(a).row(x).transpose(), theta).p.transpose();
      chain.r_pi[x] += w * mdp.reward(x, a);
    }
  }
  return exact_value_pe(chain, gamma);
}

/// Normalized error of the Dyna plateau against V^π.
inline double dyna_plateau_error(const TabularMdp& mdp, const Policy& policy, double gamma, double theta) {
  const ValueVector v_pi = exact_value_pe(induce_chain(mdp, policy), gamma);
  return normalized_error(dyna_plateau_value(mdp, policy, gamma, theta), v_pi);
}

}  // namespace ddvi
