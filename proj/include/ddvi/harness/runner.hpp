#pragma once

// Experiment orchestration: one trace per (algorithm, seed) on a worker pool,
// per-algorithm summaries, cost-shifted reporting, state-count / horizon
// sweeps and deflation verification grids.

#include <ddvi/deflation.hpp>
#include <ddvi/envs.hpp>
#include <ddvi/error.hpp>
#include <ddvi/harness/config.hpp>
#include <ddvi/harness/csv.hpp>
#include <ddvi/mdp.hpp>
#include <ddvi/solvers.hpp>
#include <ddvi/spectra.hpp>
#include <ddvi/td.hpp>
#include <ddvi/trace.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace ddvi::harness {

// ---------------------------------------------------------------------------
// Cost shift

enum class BuildCost {
  precomputed,  ///< E built by m rounds of QR iteration before iterating
  in_loop,      ///< AutoPI / AutoQR: E grown inside the iteration loop
};

/// cost_index = iteration + m·s for precomputed builds, + 0 otherwise.
inline SolveTrace cost_shift(SolveTrace trace, int m, int s, BuildCost mode) {
  const std::int64_t shift = mode == BuildCost::precomputed ? static_cast<std::int64_t>(m) * s : 0;
  trace.meta.build_cost = shift;
  for (TraceRecord& r : trace.records) r.cost_index = r.iteration + shift;
  return trace;
}

// ---------------------------------------------------------------------------
// Single runs

/// Environment for a run seed. Garnet instances are drawn per seed
/// (generator seed = env.seed + run seed); the fixed environments ignore it.
inline envs::Environment make_env(const EnvSpec& env_spec, double gamma, std::uint64_t run_seed) {
  envs::GarnetParams g = env_spec.garnet;
  g.seed = env_spec.garnet.seed + run_seed;
  envs::Environment env = envs::make_environment(env_spec.id, g, gamma);
  if (env_spec.policy == "ddtd") env.policy = envs::maze_ddtd_policy();
  return env;
}

inline StopRule make_stop(const StopSpec& s, std::optional<ValueVector> reference) {
  auto narrow = [](std::int64_t x) {
    if (x > std::numeric_limits<int>::max()) throw ConfigError("stop", "iteration count too large");
    return static_cast<int>(x);
  };
  StopRule r;
  if (s.budget) r.budget = narrow(*s.budget);
  if (s.target) r.target_error = *s.target;
  if (s.max_iterations) r.max_iterations = narrow(*s.max_iterations);
  r.reference = std::move(reference);
  return r;
}

inline SampleRunOptions sample_options(const ExperimentConfig& c, const AlgorithmSpec& a, std::uint64_t seed,
                                       const ValueVector& oracle) {
  SampleRunOptions o;
  o.gamma = c.gamma;
  o.schedule = StepSchedule::parse(a.schedule);
  o.budget = *c.stop.budget;
  o.seed = seed;
  o.stride = c.stride;
  o.oracle = oracle;
  return o;
}

/// Keeps every stride-th record plus the last one.
inline void thin_records(SolveTrace& trace, std::int64_t stride) {
  if (stride <= 1 || trace.records.empty()) return;
  std::vector<TraceRecord> kept;
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    if (trace.records[i].iteration % stride == 0 || i + 1 == trace.records.size()) kept.push_back(trace.records[i]);
  }
  trace.records = std::move(kept);
}

/// Runs one algorithm on one seed. Errors are measured against the exact
/// solution (V^π, or V* for the control algorithms).
inline SolveTrace run_single(const ExperimentConfig& c, const AlgorithmSpec& a, std::uint64_t seed) {
  const envs::Environment env = make_env(c.env, c.gamma, seed);
  const double gamma = c.gamma;
  const Index n = env.mdp.num_states();
  const ValueVector zero = Vector::Zero(n);
  SolveTrace trace;

  if (a.id == "vi-control" || a.id == "ddvi-control-r1") {
    const ValueVector v_star = exact_value_control(env.mdp, gamma).values;
    const StopRule stop = make_stop(c.stop, v_star);
    trace = a.id == "vi-control"
                ? vi_control(env.mdp, gamma, zero, stop)
                : ddvi_control_rank1(env.mdp, gamma, Vector::Constant(n, 1.0 / static_cast<double>(n)), zero, stop);
  } else if (is_sample_algorithm(a.id)) {
    const TransitionSampler sampler(env.mdp, env.policy);
    const ValueVector v_pi = exact_value_pe(sampler.chain(), gamma);
    const SampleRunOptions o = sample_options(c, a, seed, v_pi);
    if (a.id == "td") {
      trace = run_td(sampler, o);
    } else if (a.id == "ddtd") {
      DdtdOptions d;
      d.s = a.rank;
      d.alpha = a.alpha;
      d.model_period = a.K;
      d.theta = a.theta;
      d.qr_rounds = a.m;
      trace = run_ddtd(sampler, o, d);
    } else {
      trace = run_dyna(sampler, o, DynaOptions{a.theta, a.K});
    }
  } else {
    const PolicyInducedChain chain = induce_chain(env.mdp, env.policy);
    const ValueVector v_pi = exact_value_pe(chain, gamma);
    const StopRule stop = make_stop(c.stop, v_pi);
    if (a.id == "vi") {
      trace = vi_pe(chain, gamma, zero, stop);
    } else if (a.id == "ddvi") {
      DeflationMatrix e(n);
      if (a.deflation == DeflationKind::wielandt) {
        e = build_wielandt_rank1(Vector::Constant(n, 1.0 / static_cast<double>(n)));
      } else if (a.deflation == DeflationKind::hotelling) {
        e = build_conjugate_adjusted([&](int r) { return build_hotelling(chain.p_pi, r); }, a.rank);
      } else {
        e = build_conjugate_adjusted(
            [&](int r) { return build_schur(chain.p_pi, r, a.m, seed, SchurMode::exact); }, a.rank);
      }
      trace = ddvi::ddvi(chain, gamma, e, a.alpha, zero, stop);
    } else if (a.id == "ddvi-qr") {
      trace = ddvi_qr(chain, gamma, DdviQrOptions{a.rank, a.alpha, a.m, seed, a.mode}, zero, stop);
    } else {
      AutoOptions o;
      o.alpha_schedule = a.alpha_schedule.empty() ? std::vector<double>{a.alpha} : a.alpha_schedule;
      o.C = a.C;
      o.epsilon = a.epsilon;
      o.max_rank = a.max_rank;
      trace = a.id == "autopi" ? ddvi_autopi(chain, gamma, o, zero, stop) : ddvi_autoqr(chain, gamma, o, zero, stop);
      trace = cost_shift(std::move(trace), 0, 0, BuildCost::in_loop);
    }
    thin_records(trace, c.stride);
  }
  trace.meta.algorithm = a.id;
  trace.meta.env = c.env.id;
  trace.meta.seed = seed;
  return trace;
}

// ---------------------------------------------------------------------------
// Configs

struct RunOutcome {
  std::string label;
  std::uint64_t seed = 0;
  bool completed = false;
  std::string failure;  ///< NumericalError message when not completed
  SolveTrace trace;
  std::optional<double> rate_fit;
};

struct ConfigReport {
  std::vector<RunOutcome> runs;
  std::vector<SummaryRow> summary;
  bool any_failed() const {
    return std::any_of(runs.begin(), runs.end(), [](const RunOutcome& r) { return !r.completed; });
  }
};

/// Calls task(i) for i in [0, count) on up to `workers` threads. The first
/// non-numerical exception is rethrown once all workers have stopped.
inline void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& task) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        task(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = count;
      }
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), count);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

inline std::optional<double> fit_rate(const SolveTrace& trace) {
  try {
    return empirical_rate(trace);
  } catch (const InvalidArgument&) {
    return std::nullopt;
  }
}

inline double mean_of(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double standard_error(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double m = mean_of(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1)) / std::sqrt(static_cast<double>(x.size()));
}

/// Aggregates over completed runs only; runs that never reached the target
/// are censored and left out of iters_to_target.
inline SummaryRow summarize(const AlgorithmSpec& a, const std::string& env, const std::vector<const RunOutcome*>& runs,
                            std::optional<double> target) {
  SummaryRow row;
  row.algo = a.label();
  row.env = env;
  row.param = a.param();
  std::vector<double> errs, iters, rates;
  for (const RunOutcome* r : runs) {
    if (!r->completed || r->trace.records.empty()) continue;
    errs.push_back(r->trace.records.back().norm_err_l1);
    row.cost_shift = r->trace.meta.build_cost;
    if (target) {
      if (const auto it = r->trace.iterations_to(*target)) iters.push_back(static_cast<double>(*it));
    }
    if (r->rate_fit) rates.push_back(*r->rate_fit);
  }
  row.seed_count = static_cast<int>(errs.size());
  if (!errs.empty()) {
    row.mean_err = mean_of(errs);
    row.stderr_err = standard_error(errs);
  } else {
    row.mean_err = std::numeric_limits<double>::quiet_NaN();
    row.stderr_err = std::numeric_limits<double>::quiet_NaN();
  }
  if (!iters.empty()) row.iters_to_target = mean_of(iters);
  if (!rates.empty()) row.rate_fit = mean_of(rates);
  return row;
}

inline std::string trace_file_name(const RunOutcome& r) {
  return r.label + "_seed" + std::to_string(r.seed) + ".csv";
}

/// Executes every (algorithm × seed) run. With `c.out` set, writes one trace
/// CSV per completed run and summary.csv, each atomically.
inline ConfigReport run_config(const ExperimentConfig& c) {
  ConfigReport report;
  for (const AlgorithmSpec& a : c.algorithms) {
    for (std::uint64_t seed : c.seeds) report.runs.push_back({a.label(), seed, false, "", {}, std::nullopt});
  }
  const std::size_t n_seeds = c.seeds.size();
  parallel_for(report.runs.size(), c.workers, [&](std::size_t i) {
    RunOutcome& out = report.runs[i];
    const AlgorithmSpec& a = c.algorithms[i / n_seeds];
    try {
      out.trace = run_single(c, a, out.seed);
      out.completed = true;
      if (!is_sample_algorithm(a.id)) out.rate_fit = fit_rate(out.trace);
    } catch (const NumericalError& e) {
      out.failure = e.what();
    } catch (const InvalidArgument& e) {
      throw ConfigError("algorithms[" + std::to_string(i / n_seeds) + "]", e.what());
    } catch (const DimensionError& e) {
      throw ConfigError("algorithms[" + std::to_string(i / n_seeds) + "]", e.what());
    }
  });
  for (std::size_t k = 0; k < c.algorithms.size(); ++k) {
    std::vector<const RunOutcome*> runs;
    for (std::size_t j = 0; j < n_seeds; ++j) runs.push_back(&report.runs[k * n_seeds + j]);
    report.summary.push_back(summarize(c.algorithms[k], c.env.id, runs, c.stop.target));
  }
  if (!c.out.empty()) {
    const std::filesystem::path dir(c.out);
    for (const RunOutcome& r : report.runs) {
      if (r.completed) write_atomic(dir / trace_file_name(r), trace_csv(r.trace));
    }
    write_atomic(dir / "summary.csv", summary_csv(report.summary));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Sweeps

inline constexpr const char* kSweepHeader =
    "algo,axis,value,gamma,seed_count,censored,iters_to_target,wallclock_to_target,cost_shift";

struct SweepRow {
  std::string algo;
  std::string axis;
  double value = 0.0;
  double gamma = 0.0;
  int seed_count = 0;  ///< runs that reached the target
  int censored = 0;    ///< runs that did not
  std::optional<double> iters_to_target;
  std::optional<double> wallclock_to_target;
  std::int64_t cost_shift = 0;
};

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = std::string(kSweepHeader) + "\n";
  for (const SweepRow& r : rows) {
    out += r.algo + "," + r.axis + "," + format_double(r.value) + "," + format_double(r.gamma) + "," +
           std::to_string(r.seed_count) + "," + std::to_string(r.censored) + "," +
           (r.iters_to_target ? format_double(*r.iters_to_target) : "") + "," +
           (r.wallclock_to_target ? format_double(*r.wallclock_to_target) : "") + "," +
           format_int(r.cost_shift) + "\n";
  }
  return out;
}

/// For each sweep value and algorithm: mean iterations (and seconds, E
/// build included) to reach stop.target over the seeds that reached it.
/// Horizon h sets γ = 1 − 1/h; n_states resizes the Garnet.
inline std::vector<SweepRow> sweep(const ExperimentConfig& base, const SweepSpec& sweep_spec) {
  if (!base.stop.target) throw ConfigError("stop.target", "sweeps need a target error");
  std::vector<SweepRow> rows;
  for (double value : sweep_spec.values) {
    ExperimentConfig c = base;
    c.out.clear();
    c.stride = 1;
    if (sweep_spec.axis == "horizon") {
      c.gamma = 1.0 - 1.0 / value;
    } else {
      c.env.garnet.n_states = static_cast<int>(value);
      c.env.garnet.reward_states = std::min(c.env.garnet.reward_states, c.env.garnet.n_states);
      c.env.garnet.branching = std::min(c.env.garnet.branching, c.env.garnet.n_states);
    }
    const ConfigReport report = run_config(c);
    for (std::size_t k = 0; k < c.algorithms.size(); ++k) {
      SweepRow row;
      row.algo = c.algorithms[k].label();
      row.axis = sweep_spec.axis;
      row.value = value;
      row.gamma = c.gamma;
      std::vector<double> iters, secs;
      for (std::size_t j = 0; j < c.seeds.size(); ++j) {
        const RunOutcome& r = report.runs[k * c.seeds.size() + j];
        const auto it = r.completed ? r.trace.iterations_to(*c.stop.target) : std::nullopt;
        if (!it) {
          ++row.censored;
          continue;
        }
        row.cost_shift = r.trace.meta.build_cost;
        iters.push_back(static_cast<double>(*it));
        for (const TraceRecord& rec : r.trace.records) {
          if (rec.iteration == *it) secs.push_back(rec.wallclock_s + r.trace.meta.build_seconds);
        }
      }
      row.seed_count = static_cast<int>(iters.size());
      if (!iters.empty()) {
        row.iters_to_target = mean_of(iters);
        row.wallclock_to_target = mean_of(secs);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Spectrum and verification

inline constexpr const char* kSpectrumHeader = "index,re,im,modulus";

inline std::string spectrum_csv(const std::vector<Complex>& eigenvalues) {
  std::string out = std::string(kSpectrumHeader) + "\n";
  for (std::size_t i = 0; i < eigenvalues.size(); ++i) {
    out += std::to_string(i + 1) + "," + format_double(eigenvalues[i].real()) + "," +
           format_double(eigenvalues[i].imag()) + "," + format_double(std::abs(eigenvalues[i])) + "\n";
  }
  return out;
}

inline constexpr const char* kVerifyHeader = "env,seed,kind,requested_rank,rank,rho_deflated,lambda_next,difference,tail_matched,pass";

struct VerifyRow {
  std::string env;
  std::uint64_t seed = 0;
  DeflationKind kind = DeflationKind::schur;
  int requested_rank = 0;
  DeflationReport report;
};

/// Builds E for every (seed, kind, rank) cell and checks it with
/// verify_deflation. Wielandt contributes rank 1 only.
inline std::vector<VerifyRow> run_verify(const ExperimentConfig& c) {
  const VerifySpec grid = c.verify ? *c.verify : VerifySpec{};
  std::vector<VerifyRow> rows;
  for (std::uint64_t seed : c.seeds) {
    const envs::Environment env = make_env(c.env, c.gamma, seed);
    const PolicyInducedChain chain = induce_chain(env.mdp, env.policy);
    const Index n = chain.size();
    for (DeflationKind kind : grid.kinds) {
      for (int s : grid.ranks) {
        if (kind == DeflationKind::wielandt && s != 1) continue;
        if (s > n) throw ConfigError("verify.ranks", "rank exceeds the state count");
        DeflationMatrix e(n);
        if (kind == DeflationKind::wielandt) {
          e = build_wielandt_rank1(Vector::Constant(n, 1.0 / static_cast<double>(n)));
        } else if (kind == DeflationKind::hotelling) {
          e = build_conjugate_adjusted([&](int r) { return build_hotelling(chain.p_pi, r); }, s);
        } else {
          e = build_conjugate_adjusted(
              [&](int r) { return build_schur(chain.p_pi, r, kDefaultQrRounds, seed, grid.mode); }, s);
        }
        rows.push_back({c.env.id, seed, kind, s, verify_deflation(chain.p_pi, e, grid.tolerance)});
      }
    }
  }
  return rows;
}

inline std::string verify_csv(const std::vector<VerifyRow>& rows) {
  std::string out = std::string(kVerifyHeader) + "\n";
  for (const VerifyRow& r : rows) {
    out += r.env + "," + std::to_string(r.seed) + "," + to_string(r.kind) + "," + std::to_string(r.requested_rank) +
           "," + std::to_string(r.report.rank) + "," + format_double(r.report.rho_deflated) + "," +
           format_double(r.report.lambda_next) + "," + format_double(r.report.difference) + "," +
           (r.report.tail_matched ? "1" : "0") + "," + (r.report.pass ? "PASS" : "FAIL") + "\n";
  }
  return out;
}

}  // namespace ddvi::harness
