#pragma once

// Stop rules and per-iteration solve traces shared by the planning and
// sample-based algorithms.

#include <ddvi/error.hpp>
#include <ddvi/mdp.hpp>
#include <ddvi/types.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ddvi {

/// Safety cap applied when a stop rule only names a target error.
inline constexpr int kDefaultIterationCap = 1000000;

/// When to stop iterating. `budget` runs exactly that many iterations and
/// ignores the target; otherwise the run ends at `target_error` or at
/// `max_iterations`, whichever comes first. Errors are measured against
/// `reference` when present, else by the Bellman residual ‖TV − V‖.
struct StopRule {
  std::optional<int> max_iterations;
  std::optional<double> target_error;
  std::optional<int> budget;
  std::optional<ValueVector> reference;

  static StopRule fixed(int iterations, std::optional<ValueVector> ref = std::nullopt) {
    StopRule r;
    r.budget = iterations;
    r.reference = std::move(ref);
    return r;
  }

  static StopRule until(double target, int max_iterations, std::optional<ValueVector> ref = std::nullopt) {
    StopRule r;
    r.target_error = target;
    r.max_iterations = max_iterations;
    r.reference = std::move(ref);
    return r;
  }

  void validate() const {
    if (!max_iterations && !target_error && !budget) {
      throw InvalidArgument("stop rule needs max_iterations, target_error or budget");
    }
    if (max_iterations && *max_iterations < 0) throw InvalidArgument("max_iterations must be >= 0");
    if (budget && *budget < 0) throw InvalidArgument("budget must be >= 0");
    if (target_error && !(*target_error >= 0.0)) throw InvalidArgument("target_error must be >= 0");
  }

  int iteration_limit() const {
    if (budget) return *budget;
    if (max_iterations) return *max_iterations;
    return kDefaultIterationCap;
  }
};

struct TraceRecord {
  std::int64_t iteration = 0;
  std::int64_t cost_index = 0;  ///< iteration + up-front E-build cost
  double norm_err_l1 = 0.0;
  double sup_err = 0.0;
  double wallclock_s = 0.0;
};

struct TraceMeta {
  std::string algorithm;
  std::string env;
  int rank = 0;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  int qr_rounds = 0;             ///< m
  std::int64_t build_cost = 0;   ///< m·s, in units of one VI iteration
  double build_seconds = 0.0;    ///< wall-clock spent building E before iterating
};

struct SolveTrace {
  std::vector<TraceRecord> records;
  ValueVector final_v;
  std::optional<ValueVector> final_w;
  TraceMeta meta;
  bool reached_target = false;

  /// Free-form notes: conjugate-rank adjustments, aborted upgrades, ...
  std::vector<std::string> events;
  /// AutoPI/AutoQR: iteration at which each rank upgrade happened and the
  /// eigenvalue it recovered.
  std::vector<std::int64_t> upgrade_iterations;
  std::vector<double> recovered_eigenvalues;
  /// Control solvers: greedy action per state used at each iteration.
  std::vector<std::vector<int>> greedy_policies;

  std::vector<double> errors() const {
    std::vector<double> out;
    out.reserve(records.size());
    for (const TraceRecord& r : records) out.push_back(r.norm_err_l1);
    return out;
  }

  /// First recorded iteration whose error is at or below `target`.
  std::optional<std::int64_t> iterations_to(double target) const {
    for (const TraceRecord& r : records) {
      if (r.norm_err_l1 <= target) return r.iteration;
    }
    return std::nullopt;
  }

  std::optional<std::int64_t> cost_to(double target) const {
    for (const TraceRecord& r : records) {
      if (r.norm_err_l1 <= target) return r.cost_index;
    }
    return std::nullopt;
  }
};

/// Records trace rows and applies a stop rule. `apply_t` maps V to TV and is
/// used only when the rule has no reference value.
class TraceRecorder {
 public:
  using Operator = std::function<ValueVector(const ValueVector&)>;

  TraceRecorder(const StopRule& rule, Operator apply_t, SolveTrace& trace)
      : rule_(rule), apply_t_(std::move(apply_t)), trace_(trace), start_(Clock::now()) {
    rule_.validate();
    if (rule_.reference && rule_.reference->lpNorm<1>() == 0.0) {
      throw InvalidArgument("stop rule reference has zero L1 norm");
    }
  }

  /// Records iteration k with value v; returns true once the run should stop.
  bool observe(std::int64_t k, const ValueVector& v) {
    TraceRecord rec;
    rec.iteration = k;
    rec.cost_index = k + trace_.meta.build_cost;
    if (rule_.reference) {
      const Vector diff = v - *rule_.reference;
      rec.norm_err_l1 = diff.lpNorm<1>() / rule_.reference->lpNorm<1>();
      rec.sup_err = diff.lpNorm<Eigen::Infinity>();
    } else {
      const Vector diff = apply_t_(v) - v;
      rec.norm_err_l1 = diff.lpNorm<1>() / std::max(v.lpNorm<1>(), 1e-300);
      rec.sup_err = diff.lpNorm<Eigen::Infinity>();
    }
    rec.wallclock_s = std::chrono::duration<double>(Clock::now() - start_).count();
    trace_.records.push_back(rec);
    if (rule_.budget) return k >= *rule_.budget;
    if (rule_.target_error && rec.norm_err_l1 <= *rule_.target_error) {
      trace_.reached_target = true;
      return true;
    }
    return k >= rule_.iteration_limit();
  }

  const StopRule& rule() const { return rule_; }

 private:
  using Clock = std::chrono::steady_clock;

  StopRule rule_;
  Operator apply_t_;
  SolveTrace& trace_;
  Clock::time_point start_;
};

}  // namespace ddvi
