#pragma once

// JSON experiment configuration. Every object is read strictly: unknown keys
// and wrong types raise ConfigError naming the field path (e.g.
// "algorithms[1].rank").

#include <ddvi/deflation.hpp>
#include <ddvi/envs.hpp>
#include <ddvi/error.hpp>
#include <ddvi/spectra.hpp>
#include <ddvi/td.hpp>

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace ddvi::harness {

using Json = nlohmann::json;

inline const std::vector<std::string>& planning_algorithms() {
  static const std::vector<std::string> ids{"vi", "ddvi", "ddvi-qr", "autopi", "autoqr", "vi-control",
                                            "ddvi-control-r1"};
  return ids;
}

inline const std::vector<std::string>& sample_algorithms() {
  static const std::vector<std::string> ids{"td", "ddtd", "dyna"};
  return ids;
}

inline bool is_sample_algorithm(const std::string& id) {
  for (const std::string& s : sample_algorithms()) {
    if (s == id) return true;
  }
  return false;
}

struct EnvSpec {
  std::string id = "chainwalk";
  envs::GarnetParams garnet;
  /// "default" or "ddtd" (the Maze's second evaluation policy).
  std::string policy = "default";
};

struct AlgorithmSpec {
  std::string id = "vi";
  int rank = 0;
  double alpha = 1.0;
  int m = kDefaultQrRounds;
  SchurMode mode = SchurMode::iterative;
  DeflationKind deflation = DeflationKind::schur;
  // AutoPI / AutoQR
  int C = 10;
  double epsilon = 1e-4;
  int max_rank = 10;
  std::vector<double> alpha_schedule;
  // Sample-based
  std::string schedule = "visit";
  double theta = 0.0;
  std::int64_t K = 10;

  /// Short parameter string for summaries, e.g. "rank=2;alpha=0.99".
  std::string param() const;
  /// Label unique within a config: id plus rank when ranked.
  std::string label() const { return rank > 0 && id != "ddvi-control-r1" ? id + "-r" + std::to_string(rank) : id; }
};

struct StopSpec {
  std::optional<std::int64_t> budget;
  std::optional<double> target;
  std::optional<std::int64_t> max_iterations;
};

struct SweepSpec {
  std::string axis;  ///< "n_states" or "horizon"
  std::vector<double> values;
};

struct VerifySpec {
  std::vector<DeflationKind> kinds{DeflationKind::hotelling, DeflationKind::wielandt, DeflationKind::schur};
  std::vector<int> ranks{1, 2, 3, 5};
  double tolerance = kDeflationTolerance;
  SchurMode mode = SchurMode::exact;
};

struct ExperimentConfig {
  EnvSpec env;
  double gamma = 0.99;
  std::vector<AlgorithmSpec> algorithms;
  StopSpec stop;
  std::vector<std::uint64_t> seeds{0};
  std::string out;
  std::int64_t stride = 1;
  std::optional<SweepSpec> sweep;
  std::optional<VerifySpec> verify;
  int workers = 1;
};

inline std::string AlgorithmSpec::param() const {
  std::ostringstream s;
  s << "rank=" << rank << ";alpha=" << alpha;
  if (id == "ddvi-qr") s << ";m=" << m << ";mode=" << (mode == SchurMode::exact ? "exact" : "iterative");
  if (id == "ddvi") s << ";kind=" << to_string(deflation);
  if (id == "autopi" || id == "autoqr") s << ";C=" << C << ";eps=" << epsilon << ";max_rank=" << max_rank;
  if (id == "td" || id == "ddtd") s << ";schedule=" << schedule;
  if (id == "ddtd" || id == "dyna") s << ";theta=" << theta << ";K=" << K;
  if (id == "ddtd") s << ";m=" << m;
  return s.str();
}

/// "a..b" (inclusive) or a single integer.
inline std::vector<std::uint64_t> parse_seed_range(const std::string& text, const std::string& path = "seeds") {
  auto to_u64 = [&](const std::string& s) -> std::uint64_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError(path, "expected 'a..b' with non-negative integers, got '" + text + "'");
    }
    return std::stoull(s);
  };
  const auto dots = text.find("..");
  if (dots == std::string::npos) return {to_u64(text)};
  const std::uint64_t a = to_u64(text.substr(0, dots));
  const std::uint64_t b = to_u64(text.substr(dots + 2));
  if (b < a) throw ConfigError(path, "empty seed range '" + text + "'");
  if (b - a >= 100000) throw ConfigError(path, "seed range too large");
  std::vector<std::uint64_t> out;
  for (std::uint64_t s = a; s <= b; ++s) out.push_back(s);
  return out;
}

namespace detail {

/// Strict view of one JSON object: reads fields by name and rejects the
/// keys that were never read.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const Json* get(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  void read(const std::string& key, T& out) {
    const Json* v = get(key);
    if (v == nullptr) return;
    out = convert<T>(*v, field(key));
  }

  template <class T>
  void read(const std::string& key, std::optional<T>& out) {
    const Json* v = get(key);
    if (v == nullptr || v->is_null()) return;
    out = convert<T>(*v, field(key));
  }

  template <class T>
  static T convert(const Json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
          throw ConfigError(path, "expected a non-negative integer");
        }
      }
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path, "expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path, "expected a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array()) throw ConfigError(path, "expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], path + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (seen_.count(it.key()) == 0) throw ConfigError(field(it.key()), "unknown key");
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline SchurMode parse_mode(const std::string& s, const std::string& path) {
  if (s == "iterative") return SchurMode::iterative;
  if (s == "exact") return SchurMode::exact;
  throw ConfigError(path, "expected 'iterative' or 'exact', got '" + s + "'");
}

inline DeflationKind parse_kind(const std::string& s, const std::string& path) {
  try {
    return parse_deflation_kind(s);
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
}

inline EnvSpec parse_env(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  EnvSpec e;
  r.read("id", e.id);
  if (e.id != "maze" && e.id != "cliffwalk" && e.id != "chainwalk" && e.id != "garnet") {
    throw ConfigError(r.field("id"), "unknown environment '" + e.id + "'");
  }
  r.read("n_states", e.garnet.n_states);
  r.read("n_actions", e.garnet.n_actions);
  r.read("branching", e.garnet.branching);
  r.read("reward_states", e.garnet.reward_states);
  r.read("seed", e.garnet.seed);
  r.read("policy", e.policy);
  if (e.policy != "default" && e.policy != "ddtd") {
    throw ConfigError(r.field("policy"), "expected 'default' or 'ddtd'");
  }
  if (e.policy == "ddtd" && e.id != "maze") throw ConfigError(r.field("policy"), "'ddtd' policy exists only for maze");
  if (e.id != "garnet") {
    for (const char* k : {"n_states", "n_actions", "branching", "reward_states", "seed"}) {
      if (r.has(k)) throw ConfigError(r.field(k), "only garnet takes generator parameters");
    }
  }
  try {
    envs::validate(e.garnet);
  } catch (const Error& err) {
    throw ConfigError(path, err.what());
  }
  r.finish();
  return e;
}

inline AlgorithmSpec parse_algorithm(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  AlgorithmSpec a;
  r.read("id", a.id);
  bool known = is_sample_algorithm(a.id);
  for (const std::string& s : planning_algorithms()) known = known || s == a.id;
  if (!known) throw ConfigError(r.field("id"), "unknown algorithm '" + a.id + "'");
  if (a.id == "ddvi-qr" || a.id == "ddtd") a.alpha = 0.99;
  r.read("rank", a.rank);
  r.read("alpha", a.alpha);
  r.read("m", a.m);
  std::string mode = "iterative";
  r.read("mode", mode);
  a.mode = parse_mode(mode, r.field("mode"));
  std::string kind = "schur";
  r.read("deflation", kind);
  a.deflation = parse_kind(kind, r.field("deflation"));
  r.read("C", a.C);
  r.read("epsilon", a.epsilon);
  r.read("max_rank", a.max_rank);
  r.read("alpha_schedule", a.alpha_schedule);
  r.read("schedule", a.schedule);
  r.read("theta", a.theta);
  r.read("K", a.K);
  r.finish();

  if (a.rank < 0) throw ConfigError(r.field("rank"), "must be >= 0");
  if (!(a.alpha > 0.0 && a.alpha <= 1.0)) throw ConfigError(r.field("alpha"), "must lie in (0, 1]");
  if (a.m < 1) throw ConfigError(r.field("m"), "must be >= 1");
  if (a.C < 2) throw ConfigError(r.field("C"), "must be >= 2");
  if (!(a.epsilon > 0.0)) throw ConfigError(r.field("epsilon"), "must be > 0");
  if (a.max_rank < 1) throw ConfigError(r.field("max_rank"), "must be >= 1");
  for (std::size_t i = 0; i < a.alpha_schedule.size(); ++i) {
    const double x = a.alpha_schedule[i];
    if (!(x > 0.0 && x <= 1.0)) throw ConfigError(r.field("alpha_schedule") + "[" + std::to_string(i) + "]", "must lie in (0, 1]");
  }
  if (!(a.theta >= 0.0 && a.theta <= 1.0)) throw ConfigError(r.field("theta"), "must lie in [0, 1]");
  if (a.K < 1) throw ConfigError(r.field("K"), "must be >= 1");
  try {
    StepSchedule::parse(a.schedule);
  } catch (const Error& e) {
    throw ConfigError(r.field("schedule"), e.what());
  }
  if (a.id == "ddvi" && a.rank == 0 && a.deflation != DeflationKind::schur) {
    throw ConfigError(r.field("rank"), "non-Schur deflation needs rank >= 1");
  }
  if (a.id == "ddvi" && a.deflation == DeflationKind::wielandt && a.rank > 1) {
    throw ConfigError(r.field("rank"), "wielandt deflation is rank 1");
  }
  return a;
}

inline StopSpec parse_stop(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  StopSpec s;
  r.read("budget", s.budget);
  r.read("target", s.target);
  r.read("max_iterations", s.max_iterations);
  r.finish();
  if (!s.budget && !s.target && !s.max_iterations) throw ConfigError(path, "needs budget, target or max_iterations");
  if (s.budget && *s.budget < 0) throw ConfigError(r.field("budget"), "must be >= 0");
  if (s.max_iterations && *s.max_iterations < 0) throw ConfigError(r.field("max_iterations"), "must be >= 0");
  if (s.target && !(*s.target > 0.0)) throw ConfigError(r.field("target"), "must be > 0");
  return s;
}

inline SweepSpec parse_sweep(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  SweepSpec s;
  r.read("axis", s.axis);
  r.read("values", s.values);
  r.finish();
  if (s.axis != "n_states" && s.axis != "horizon") {
    throw ConfigError(r.field("axis"), "expected 'n_states' or 'horizon'");
  }
  if (s.values.empty()) throw ConfigError(r.field("values"), "must not be empty");
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const double v = s.values[i];
    const std::string p = r.field("values") + "[" + std::to_string(i) + "]";
    if (s.axis == "horizon" && !(v > 1.0)) throw ConfigError(p, "horizon must exceed 1");
    if (s.axis == "n_states" && !(v >= 1.0 && v == std::floor(v))) throw ConfigError(p, "must be a positive integer");
  }
  return s;
}

inline VerifySpec parse_verify(const Json& j, const std::string& path) {
  ObjectReader r(j, path);
  VerifySpec v;
  std::vector<std::string> kinds;
  r.read("kinds", kinds);
  if (r.has("kinds")) {
    v.kinds.clear();
    for (std::size_t i = 0; i < kinds.size(); ++i) {
      v.kinds.push_back(parse_kind(kinds[i], r.field("kinds") + "[" + std::to_string(i) + "]"));
    }
  }
  r.read("ranks", v.ranks);
  r.read("tolerance", v.tolerance);
  std::string mode = "exact";
  r.read("mode", mode);
  v.mode = parse_mode(mode, r.field("mode"));
  r.finish();
  for (std::size_t i = 0; i < v.ranks.size(); ++i) {
    if (v.ranks[i] < 1) throw ConfigError(r.field("ranks") + "[" + std::to_string(i) + "]", "must be >= 1");
  }
  if (!(v.tolerance > 0.0)) throw ConfigError(r.field("tolerance"), "must be > 0");
  return v;
}

}  // namespace detail

inline ExperimentConfig parse_config(const Json& j) {
  detail::ObjectReader r(j, "");
  ExperimentConfig c;
  if (const Json* env = r.get("env")) c.env = detail::parse_env(*env, "env");
  r.read("gamma", c.gamma);
  if (!(c.gamma >= 0.0 && c.gamma < 1.0)) throw ConfigError("gamma", "must lie in [0, 1)");
  if (const Json* algs = r.get("algorithms")) {
    if (!algs->is_array()) throw ConfigError("algorithms", "expected an array");
    for (std::size_t i = 0; i < algs->size(); ++i) {
      c.algorithms.push_back(detail::parse_algorithm((*algs)[i], "algorithms[" + std::to_string(i) + "]"));
    }
  }
  if (const Json* stop = r.get("stop")) c.stop = detail::parse_stop(*stop, "stop");
  if (const Json* seeds = r.get("seeds")) {
    if (seeds->is_string()) {
      c.seeds = parse_seed_range(seeds->get<std::string>());
    } else {
      c.seeds = detail::ObjectReader::convert<std::vector<std::uint64_t>>(*seeds, "seeds");
    }
    if (c.seeds.empty()) throw ConfigError("seeds", "must not be empty");
  }
  r.read("out", c.out);
  r.read("stride", c.stride);
  if (c.stride < 1) throw ConfigError("stride", "must be >= 1");
  r.read("workers", c.workers);
  if (c.workers < 1) throw ConfigError("workers", "must be >= 1");
  if (const Json* sw = r.get("sweep")) c.sweep = detail::parse_sweep(*sw, "sweep");
  if (const Json* v = r.get("verify")) c.verify = detail::parse_verify(*v, "verify");
  r.finish();

  if (c.algorithms.empty() && !c.verify) throw ConfigError("algorithms", "at least one algorithm is required");
  if (!c.algorithms.empty() && !c.stop.budget && !c.stop.target && !c.stop.max_iterations) {
    throw ConfigError("stop", "needs budget, target or max_iterations");
  }
  std::set<std::string> labels;
  for (std::size_t i = 0; i < c.algorithms.size(); ++i) {
    const AlgorithmSpec& a = c.algorithms[i];
    const std::string p = "algorithms[" + std::to_string(i) + "]";
    if (!labels.insert(a.label()).second) throw ConfigError(p, "duplicate algorithm '" + a.label() + "'");
    if (is_sample_algorithm(a.id) && !c.stop.budget) throw ConfigError("stop.budget", "sample-based runs need a budget");
    if ((a.id == "vi-control" || a.id == "ddvi-control-r1") && c.env.policy == "ddtd") {
      throw ConfigError(p + ".id", "control ignores the evaluation policy");
    }
  }
  if (c.sweep) {
    if (!c.stop.target) throw ConfigError("sweep", "sweeps need stop.target");
    if (c.sweep->axis == "n_states" && c.env.id != "garnet") {
      throw ConfigError("sweep.axis", "n_states sweeps need the garnet environment");
    }
  }
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError("", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace ddvi::harness
