// Command-line front end: solve, td, spectrum, verify and sweep.
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <ddvi/envs.hpp>
#include <ddvi/error.hpp>
#include <ddvi/harness/config.hpp>
#include <ddvi/harness/csv.hpp>
#include <ddvi/harness/runner.hpp>
#include <ddvi/mdp.hpp>
#include <ddvi/spectra.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using ddvi::harness::Json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct EnvFlags {
  std::string id = "chainwalk";
  std::string policy = "default";
  std::optional<int> n_states, n_actions, branching, reward_states;
  std::optional<std::uint64_t> garnet_seed;

  void add(CLI::App* app) {
    app->add_option("--env", id, "maze | cliffwalk | chainwalk | garnet");
    app->add_option("--policy", policy, "default | ddtd (maze only)");
    app->add_option("--n-states", n_states, "garnet state count");
    app->add_option("--n-actions", n_actions, "garnet action count");
    app->add_option("--branching", branching, "garnet branching factor");
    app->add_option("--reward-states", reward_states, "garnet rewarded states");
    app->add_option("--garnet-seed", garnet_seed, "garnet base seed");
  }

  Json to_json() const {
    Json j{{"id", id}, {"policy", policy}};
    if (n_states) j["n_states"] = *n_states;
    if (n_actions) j["n_actions"] = *n_actions;
    if (branching) j["branching"] = *branching;
    if (reward_states) j["reward_states"] = *reward_states;
    if (garnet_seed) j["seed"] = *garnet_seed;
    return j;
  }
};

struct Common {
  std::string config;
  std::string out;
  std::string seeds;
  double gamma = 0.99;
  int workers = 1;
  EnvFlags env;

  void add(CLI::App* app) {
    app->add_option("--config", config, "JSON experiment config");
    app->add_option("--out", out, "output directory (or file for spectrum)");
    app->add_option("--seeds", seeds, "seed range a..b (inclusive)");
    app->add_option("--gamma", gamma, "discount factor");
    app->add_option("--workers", workers, "parallel runs");
    env.add(app);
  }

  /// Config file when given, else the flags; --seeds and --out override.
  ddvi::harness::ExperimentConfig load(const std::function<Json()>& from_flags) const {
    Json j;
    if (!config.empty()) {
      std::ifstream in(config);
      if (!in) throw ddvi::ConfigError("", "cannot open config file '" + config + "'");
      std::stringstream ss;
      ss << in.rdbuf();
      try {
        j = Json::parse(ss.str());
      } catch (const Json::parse_error& e) {
        throw ddvi::ConfigError("", std::string("invalid JSON: ") + e.what());
      }
    } else {
      j = from_flags();
      j["env"] = env.to_json();
      j["gamma"] = gamma;
      j["workers"] = workers;
    }
    if (!seeds.empty()) j["seeds"] = seeds;
    if (!out.empty()) j["out"] = out;
    return ddvi::harness::parse_config(j);
  }
};

struct AlgoFlags {
  std::string algo = "vi";
  int rank = 0;
  std::optional<double> alpha;
  int m = ddvi::kDefaultQrRounds;
  std::string mode = "iterative";
  std::string deflation = "schur";
  int C = 10;
  double epsilon = 1e-4;
  int max_rank = 10;
  std::string schedule = "visit";
  double theta = 0.0;
  std::int64_t K = 10;
  std::optional<std::int64_t> budget, max_iterations;
  std::optional<double> target;
  std::int64_t stride = 1;

  Json to_json(bool sample) const {
    Json a{{"id", algo}, {"rank", rank}};
    if (alpha) a["alpha"] = *alpha;
    if (sample) {
      a["schedule"] = schedule;
      a["theta"] = theta;
      a["K"] = K;
      if (algo == "ddtd") a["m"] = m;
    } else {
      a["m"] = m;
      a["mode"] = mode;
      a["deflation"] = deflation;
      a["C"] = C;
      a["epsilon"] = epsilon;
      a["max_rank"] = max_rank;
    }
    Json stop = Json::object();
    if (budget) stop["budget"] = *budget;
    if (target) stop["target"] = *target;
    if (max_iterations) stop["max_iterations"] = *max_iterations;
    return Json{{"algorithms", Json::array({a})}, {"stop", stop}, {"stride", stride}};
  }
};

void print_summary(const ddvi::harness::ConfigReport& report) {
  std::cout << ddvi::harness::summary_csv(report.summary);
  for (const auto& r : report.runs) {
    if (!r.completed) std::cerr << "run " << r.label << " seed " << r.seed << " failed: " << r.failure << "\n";
    if (!r.trace.events.empty()) {
      std::cerr << r.label << " seed " << r.seed << ": " << r.trace.events.size() << " events, first: "
                << r.trace.events.front() << "\n";
    }
  }
}

int run_solve(const Common& common, const AlgoFlags& flags) {
  const auto config = common.load([&] { return flags.to_json(false); });
  const auto report = ddvi::harness::run_config(config);
  print_summary(report);
  return report.any_failed() ? kExitNumerical : kExitOk;
}

int run_spectrum(const Common& common, std::uint64_t seed) {
  const auto config = common.load([] { return Json{{"algorithms", Json::array({{{"id", "vi"}}})}, {"stop", {{"budget", 0}}}}; });
  const auto env = ddvi::harness::make_env(config.env, config.gamma, config.seeds.empty() ? seed : config.seeds.front());
  const ddvi::PolicyInducedChain chain = ddvi::induce_chain(env.mdp, env.policy);
  const std::string csv = ddvi::harness::spectrum_csv(ddvi::dense_spectrum(chain.p_pi).eigenvalues);
  if (!config.out.empty()) {
    ddvi::harness::write_atomic(config.out, csv);
  } else {
    std::cout << csv;
  }
  return kExitOk;
}

int run_verify(const Common& common, const std::vector<std::string>& kinds, const std::vector<int>& ranks,
               const std::string& mode) {
  const auto config = common.load([&] {
    return Json{{"verify", {{"kinds", kinds}, {"ranks", ranks}, {"mode", mode}}}};
  });
  const auto rows = ddvi::harness::run_verify(config);
  const std::string csv = ddvi::harness::verify_csv(rows);
  if (!config.out.empty()) ddvi::harness::write_atomic(std::filesystem::path(config.out) / "verify.csv", csv);
  std::cout << csv;
  for (const auto& r : rows) {
    if (!r.report.pass) return kExitNumerical;
  }
  return kExitOk;
}

int run_sweep(const Common& common) {
  const auto config = common.load([]() -> Json { throw ddvi::ConfigError("", "sweep needs --config"); });
  if (!config.sweep) throw ddvi::ConfigError("sweep", "missing sweep section");
  const auto rows = ddvi::harness::sweep(config, *config.sweep);
  const std::string csv = ddvi::harness::sweep_csv(rows);
  if (!config.out.empty()) ddvi::harness::write_atomic(std::filesystem::path(config.out) / "sweep.csv", csv);
  std::cout << csv;
  return kExitOk;
}

void add_stop_flags(CLI::App* app, AlgoFlags& f) {
  app->add_option("--budget", f.budget, "exact number of iterations / samples");
  app->add_option("--target", f.target, "stop at this normalized error");
  app->add_option("--max-iterations", f.max_iterations, "iteration cap");
  app->add_option("--stride", f.stride, "trace every n-th iteration / sample");
  app->add_option("--rank", f.rank, "deflation rank s");
  app->add_option("--alpha", f.alpha, "relaxation α in (0, 1]");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deflated dynamic programming experiments"};
  app.require_subcommand(1);

  Common solve_common, td_common, spec_common, verify_common, sweep_common;
  AlgoFlags solve_flags, td_flags;

  CLI::App* solve = app.add_subcommand("solve", "planning run (vi, ddvi, ddvi-qr, autopi, autoqr, vi-control, ddvi-control-r1)");
  solve_common.add(solve);
  solve->add_option("--algo", solve_flags.algo, "algorithm id");
  solve->add_option("--m", solve_flags.m, "QR iteration rounds");
  solve->add_option("--mode", solve_flags.mode, "iterative | exact");
  solve->add_option("--deflation", solve_flags.deflation, "ddvi: hotelling | wielandt | schur");
  solve->add_option("--C", solve_flags.C, "AutoPI/AutoQR window");
  solve->add_option("--epsilon", solve_flags.epsilon, "AutoPI/AutoQR threshold");
  solve->add_option("--max-rank", solve_flags.max_rank, "AutoPI/AutoQR rank cap");
  add_stop_flags(solve, solve_flags);

  CLI::App* td = app.add_subcommand("td", "sample-based run (td, ddtd, dyna)");
  td_common.add(td);
  td_flags.algo = "td";
  td->add_option("--algo", td_flags.algo, "td | ddtd | dyna");
  td->add_option("--schedule", td_flags.schedule, "visit | harmonic:C | const:eta");
  td->add_option("--theta", td_flags.theta, "model smoothing θ");
  td->add_option("--K", td_flags.K, "model update period");
  td->add_option("--m", td_flags.m, "QR rounds per rebuild");
  add_stop_flags(td, td_flags);

  std::uint64_t spectrum_seed = 0;
  CLI::App* spectrum = app.add_subcommand("spectrum", "ordered spectrum of P^π as CSV");
  spec_common.add(spectrum);
  spectrum->add_option("--seed", spectrum_seed, "garnet run seed");

  std::vector<std::string> kinds{"hotelling", "wielandt", "schur"};
  std::vector<int> ranks{1, 2, 3, 5};
  std::string verify_mode = "exact";
  CLI::App* verify = app.add_subcommand("verify", "deflation property check over a kind × rank grid");
  verify_common.add(verify);
  verify->add_option("--kinds", kinds, "deflation kinds");
  verify->add_option("--ranks", ranks, "ranks");
  verify->add_option("--mode", verify_mode, "Schur mode: exact | iterative");

  CLI::App* sweep = app.add_subcommand("sweep", "n_states / horizon sweep from a config");
  sweep_common.add(sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*solve) {
      if (ddvi::harness::is_sample_algorithm(solve_flags.algo)) {
        throw ddvi::ConfigError("algorithms[0].id", "use the td subcommand for sample-based algorithms");
      }
      return run_solve(solve_common, solve_flags);
    }
    if (*td) {
      const auto config = td_common.load([&] { return td_flags.to_json(true); });
      for (std::size_t i = 0; i < config.algorithms.size(); ++i) {
        if (!ddvi::harness::is_sample_algorithm(config.algorithms[i].id)) {
          throw ddvi::ConfigError("algorithms[" + std::to_string(i) + "].id", "td runs td, ddtd or dyna");
        }
      }
      const auto report = ddvi::harness::run_config(config);
      print_summary(report);
      return report.any_failed() ? kExitNumerical : kExitOk;
    }
    if (*spectrum) return run_spectrum(spec_common, spectrum_seed);
    if (*verify) return run_verify(verify_common, kinds, ranks, verify_mode);
    if (*sweep) return run_sweep(sweep_common);
  } catch (const ddvi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ddvi::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ddvi::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
