#pragma once

#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hetroute/achq.hpp"
#include "hetroute/config.hpp"
#include "hetroute/csv.hpp"
#include "hetroute/exact.hpp"
#include "hetroute/parallel.hpp"
#include "hetroute/policy.hpp"
#include "hetroute/simulate.hpp"
#include "hetroute/two_server.hpp"
#include "hetroute/version.hpp"

namespace hetroute {

/// Raised for malformed or inconsistent experiment specs; the CLI maps it
/// to exit status 2.
struct SpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentSpec {
  std::string kind;
  std::string out_dir;
  nlohmann::json body;
};

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds{"rvi",      "train",   "train-discounted",
                                              "simulate", "compare", "verify2",
                                              "sweep"};
  return kinds;
}

inline ExperimentSpec parse_experiment(const nlohmann::json& j) {
  if (!j.is_object()) throw SpecError("experiment spec must be a JSON object");
  if (!j.contains("kind")) throw SpecError("experiment spec needs a \"kind\"");
  ExperimentSpec spec;
  spec.kind = j.at("kind").get<std::string>();
  bool known = false;
  for (const auto& k : experiment_kinds()) known = known || k == spec.kind;
  if (!known) throw SpecError("unknown experiment kind: " + spec.kind);
  spec.out_dir = j.value("out", std::string("out"));
  spec.body = j;
  return spec;
}

inline ExperimentSpec load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot open spec file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("spec parse error: ") + e.what());
  }
  return parse_experiment(j);
}

namespace detail {

inline SystemConfig parse_system(const nlohmann::json& j) {
  try {
    return system_config_from_json(j);
  } catch (const std::exception& e) {
    throw SpecError(std::string("bad system config: ") + e.what());
  }
}

struct HyperSetup {
  double sigma = 1.0;
  ThetaInit theta_init = ThetaInit::Rsrt;
  std::optional<double> gamma;
  TrainOptions options;
};

inline HyperSetup parse_hyper(const nlohmann::json& j, const SystemConfig& config,
                              nlohmann::json& resolved) {
  HyperSetup h;
  try {
    h.sigma = j.value("sigma", 1.0);
    double alpha = j.value("alpha", 1e-3);
    double beta = j.value("beta", 1e-3);
    double zeta = j.value("zeta", 1e-2);
    std::string schedule = j.value("schedule", std::string("constant"));
    if (schedule == "constant") {
      h.options.schedules = Schedules{StepSchedule::constant(alpha), StepSchedule::constant(beta),
                                      StepSchedule::constant(zeta)};
    } else if (schedule == "decay") {
      h.options.schedules = Schedules{StepSchedule::decay(alpha, 3.0 / 5.0),
                                      StepSchedule::decay(beta, 2.0 / 5.0),
                                      StepSchedule::decay(zeta, 2.0 / 5.0)};
    } else {
      throw SpecError("schedule must be \"constant\" or \"decay\"");
    }
    h.options.projection_radius = j.value("radius", 0.0);
    if (h.options.projection_radius <= 0)
      h.options.projection_radius = default_projection_radius(config);
    if (!j.contains("horizon")) throw SpecError("hyperparameters need a horizon");
    h.options.horizon = j.at("horizon").get<long long>();
    h.options.seed = j.value("seed", std::uint64_t{1});
    h.options.log_interval = j.value("log_interval", 10'000LL);
    std::string init = j.value("theta_init", std::string("rsrt"));
    if (init == "rsrt")
      h.theta_init = ThetaInit::Rsrt;
    else if (init == "zero")
      h.theta_init = ThetaInit::Zero;
    else if (init == "random")
      h.theta_init = ThetaInit::Random;
    else
      throw SpecError("theta_init must be rsrt, zero or random");
    if (j.contains("gamma")) h.gamma = j.at("gamma").get<double>();
    h.options.pod_d = j.value("pod_d", 0);
    h.options.pod_mask_critic = j.value("pod_mask_critic", true);

    resolved = j;
    resolved["sigma"] = h.sigma;
    resolved["alpha"] = alpha;
    resolved["beta"] = beta;
    resolved["zeta"] = zeta;
    resolved["schedule"] = schedule;
    resolved["radius"] = h.options.projection_radius;
    resolved["seed"] = h.options.seed;
    resolved["log_interval"] = h.options.log_interval;
    resolved["theta_init"] = init;
  } catch (const SpecError&) {
    throw;
  } catch (const std::exception& e) {
    throw SpecError(std::string("bad hyperparameters: ") + e.what());
  }
  return h;
}

inline SoftThresholdParams trained_actor(const SystemConfig& config, const HyperSetup& hyper) {
  Rng init_rng(hyper.options.seed ^ 0x9e3779b97f4a7c15ULL);
  SoftThresholdParams actor0 = initial_actor(config, hyper.sigma, hyper.theta_init, &init_rng);
  TrainResult result = hyper.gamma ? train_discounted(config, actor0, hyper.options, *hyper.gamma)
                                   : train(config, actor0, hyper.options);
  return result.actor;
}

struct ResolvedPolicy {
  std::string name;
  std::function<Action(const State&, Rng&)> sampler;
};

/// Builds a reusable sampler from a policy spec. Training-based policies
/// (achq) are trained here, once, on the given system.
inline ResolvedPolicy resolve_policy(const nlohmann::json& j, const SystemConfig& config,
                                     nlohmann::json& resolved) {
  if (!j.is_object() || !j.contains("type")) throw SpecError("policy spec needs a \"type\"");
  std::string type = j.at("type").get<std::string>();
  ResolvedPolicy out;
  out.name = j.value("name", type);
  resolved = j;
  resolved["name"] = out.name;

  std::function<Action(const State&, Rng&)> base;
  if (type == "fas") {
    base = [config](const State& s, Rng&) { return fas_action(s, config); };
  } else if (type == "rsrt") {
    auto thresholds = rsrt_thresholds(config);
    base = [config, thresholds](const State& s, Rng&) {
      return hard_threshold_action(thresholds, s, config);
    };
  } else if (type == "hard") {
    auto thresholds = j.at("thresholds").get<std::vector<double>>();
    if (thresholds.size() != static_cast<std::size_t>(config.server_count()))
      throw SpecError("hard policy needs one threshold per server");
    base = [config, thresholds](const State& s, Rng&) {
      return hard_threshold_action(thresholds, s, config);
    };
  } else if (type == "soft") {
    SoftThresholdParams params = soft_params_from_json(j);
    if (params.thresholds.size() + 1 != static_cast<std::size_t>(config.server_count()))
      throw SpecError("soft policy needs k-1 thresholds");
    base = [config, params](const State& s, Rng& rng) {
      return sample(soft_threshold_dist(params, s, config), rng);
    };
  } else if (type == "rvi") {
    double tolerance = j.value("tolerance", 1e-9);
    resolved["tolerance"] = tolerance;
    RviResult rvi = relative_value_iteration(config, tolerance);
    StateSpace space(config);
    base = [config, space, actions = rvi.policy.actions](const State& s, Rng&) {
      return actions[space.index_of(s)];
    };
  } else if (type == "achq") {
    nlohmann::json resolved_hyper;
    HyperSetup hyper = parse_hyper(j.at("hyper"), config, resolved_hyper);
    resolved["hyper"] = resolved_hyper;
    SoftThresholdParams actor = trained_actor(config, hyper);
    resolved["trained_thresholds"] = actor.thresholds;
    base = [config, actor](const State& s, Rng& rng) {
      return sample(soft_threshold_dist(actor, s, config), rng);
    };
  } else {
    throw SpecError("unknown policy type: " + type);
  }

  int pod_d = j.value("pod_d", 0);
  if (pod_d > 0) {
    out.sampler = [base, pod_d, config](const State& s, Rng& rng) {
      return base(pod_restrict(s, pod_d, config, rng), rng);
    };
  } else {
    out.sampler = base;
  }
  return out;
}

inline void write_manifest(const std::filesystem::path& dir, const nlohmann::json& resolved) {
  nlohmann::json manifest{{"toolkit", "hetroute"},
                          {"version", kVersion},
                          {"generated_at_unix", static_cast<long long>(std::time(nullptr))},
                          {"spec", resolved}};
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
}

inline std::string label_of(const nlohmann::json& system, std::size_t index) {
  return system.value("label", std::string(1, static_cast<char>('a' + index)));
}

// kind: rvi ----------------------------------------------------------------

inline void run_rvi(const ExperimentSpec& spec, const std::filesystem::path& out,
                    nlohmann::json& resolved) {
  std::vector<nlohmann::json> systems;
  if (spec.body.contains("systems"))
    for (const auto& s : spec.body.at("systems")) systems.push_back(s);
  else if (spec.body.contains("system"))
    systems.push_back(spec.body.at("system"));
  else
    throw SpecError("rvi spec needs \"system\" or \"systems\"");

  double tolerance = spec.body.value("tolerance", 1e-9);
  resolved["tolerance"] = tolerance;

  CsvWriter summary((out / "summary.csv").string());
  summary.row({"config", "policy", "avg_jobs", "response_time", "rvi_iterations"});
  for (std::size_t i = 0; i < systems.size(); ++i) {
    SystemConfig config = parse_system(systems[i]);
    std::string label = label_of(systems[i], i);
    RviResult rvi = relative_value_iteration(config, tolerance);
    write_value_policy_csv((out / ("values_policy_" + label + ".csv")).string(), config,
                           rvi.values, rvi.policy);
    write_threshold_csv((out / ("thresholds_" + label + ".csv")).string(), config,
                        extract_thresholds(rvi.policy, config));

    double rvi_jobs = exact_average_cost(greedy_dist_policy(rvi.policy, config), config);
    double fas_jobs = exact_average_cost(
        [&config](const State& s) { return point_mass(fas_action(s, config)); }, config);
    auto rsrt = rsrt_thresholds(config);
    double rsrt_jobs = exact_average_cost(
        [&](const State& s) { return point_mass(hard_threshold_action(rsrt, s, config)); },
        config);
    summary.row({label, "rvi", csv_num(rvi_jobs), csv_num(expected_response_time(rvi_jobs, config)),
                 std::to_string(rvi.iterations)});
    summary.row({label, "fas", csv_num(fas_jobs), csv_num(expected_response_time(fas_jobs, config)),
                 ""});
    summary.row({label, "rsrt", csv_num(rsrt_jobs),
                 csv_num(expected_response_time(rsrt_jobs, config)), ""});
  }
}

// kind: train --------------------------------------------------------------

inline void run_train(const ExperimentSpec& spec, const std::filesystem::path& out,
                      nlohmann::json& resolved) {
  SystemConfig config = parse_system(spec.body.at("system"));
  nlohmann::json resolved_hyper;
  HyperSetup hyper = parse_hyper(spec.body.at("hyper"), config, resolved_hyper);
  resolved["hyper"] = resolved_hyper;
  if (spec.kind == "train-discounted" && !hyper.gamma)
    throw SpecError("train-discounted needs hyper.gamma");
  if (spec.kind == "train") hyper.gamma.reset();

  Rng init_rng(hyper.options.seed ^ 0x9e3779b97f4a7c15ULL);
  SoftThresholdParams actor0 = initial_actor(config, hyper.sigma, hyper.theta_init, &init_rng);
  TrainResult result = hyper.gamma
                           ? train_discounted(config, actor0, hyper.options, *hyper.gamma)
                           : train(config, actor0, hyper.options);

  write_train_record_csv((out / "train_record.csv").string(), result.record);
  nlohmann::json actor_json = result.actor;
  std::ofstream actor_out(out / "actor.json");
  actor_out << actor_json.dump(2) << '\n';
  resolved["final_thresholds"] = result.actor.thresholds;
}

// kind: simulate -----------------------------------------------------------

inline long long resolved_burn_in(const nlohmann::json& body, long long horizon) {
  return body.value("burn_in", horizon / 10);
}

inline void run_simulate(const ExperimentSpec& spec, const std::filesystem::path& out,
                         nlohmann::json& resolved, unsigned workers) {
  SystemConfig config = parse_system(spec.body.at("system"));
  long long horizon = spec.body.at("horizon").get<long long>();
  long long burn_in = resolved_burn_in(spec.body, horizon);
  auto seeds = spec.body.at("seeds").get<std::vector<std::uint64_t>>();
  if (seeds.empty()) throw SpecError("simulate needs at least one seed");
  nlohmann::json resolved_policy;
  ResolvedPolicy policy = resolve_policy(spec.body.at("policy"), config, resolved_policy);
  resolved["policy"] = resolved_policy;
  resolved["burn_in"] = burn_in;

  std::vector<TrajectoryStats> stats(seeds.size());
  parallel_for(
      seeds.size(),
      [&](std::size_t i) { stats[i] = simulate(policy.sampler, config, horizon, burn_in, seeds[i]); },
      workers);
  write_stats_csv((out / "stats.csv").string(), stats);
}

// kind: compare ------------------------------------------------------------

inline void run_compare(const ExperimentSpec& spec, const std::filesystem::path& out,
                        nlohmann::json& resolved, unsigned workers) {
  SystemConfig config = parse_system(spec.body.at("system"));
  long long horizon = spec.body.at("horizon").get<long long>();
  long long burn_in = resolved_burn_in(spec.body, horizon);
  auto seeds = spec.body.at("seeds").get<std::vector<std::uint64_t>>();
  if (seeds.empty()) throw SpecError("compare needs at least one seed");

  std::vector<ResolvedPolicy> policies;
  nlohmann::json resolved_policies = nlohmann::json::array();
  for (const auto& pj : spec.body.at("policies")) {
    nlohmann::json rp;
    policies.push_back(resolve_policy(pj, config, rp));
    resolved_policies.push_back(rp);
  }
  if (policies.empty()) throw SpecError("compare needs at least one policy");
  std::string reference = spec.body.value("reference", policies.front().name);
  resolved["policies"] = resolved_policies;
  resolved["reference"] = reference;
  resolved["burn_in"] = burn_in;

  // One simulation per (policy, seed), farmed to the pool, reduced in order.
  std::vector<double> samples(policies.size() * seeds.size());
  parallel_for(
      samples.size(),
      [&](std::size_t idx) {
        std::size_t p = idx / seeds.size();
        std::size_t s = idx % seeds.size();
        samples[idx] =
            simulate(policies[p].sampler, config, horizon, burn_in, seeds[s]).response_time;
      },
      workers);

  std::vector<ComparisonRow> rows;
  for (std::size_t p = 0; p < policies.size(); ++p) {
    double mean = 0;
    for (std::size_t s = 0; s < seeds.size(); ++s) mean += samples[p * seeds.size() + s];
    mean /= static_cast<double>(seeds.size());
    double se = 0;
    if (seeds.size() > 1) {
      double var = 0;
      for (std::size_t s = 0; s < seeds.size(); ++s) {
        double d = samples[p * seeds.size() + s] - mean;
        var += d * d;
      }
      var /= static_cast<double>(seeds.size() - 1);
      se = std::sqrt(var / static_cast<double>(seeds.size()));
    }
    rows.push_back(ComparisonRow{policies[p].name, static_cast<int>(seeds.size()), mean, se, 0});
  }
  const ComparisonRow* ref = nullptr;
  for (const auto& r : rows)
    if (r.policy_name == reference) ref = &r;
  if (!ref) throw SpecError("reference policy not found: " + reference);
  for (auto& r : rows)
    r.improvement_vs_reference_pct =
        100.0 * (ref->response_time_mean - r.response_time_mean) / ref->response_time_mean;
  write_comparison_csv((out / "comparison.csv").string(), rows);
}

// kind: verify2 ------------------------------------------------------------

inline void run_verify2(const ExperimentSpec& spec, const std::filesystem::path& out,
                        nlohmann::json& resolved) {
  auto rates = spec.body.at("service_rates").get<std::vector<double>>();
  if (rates.size() != 2) throw SpecError("verify2 needs exactly two service rates");
  int cap = spec.body.value("buffer_capacity", 100);
  auto loads = spec.body.value("loads", std::vector<double>{0.3, 0.4, 0.5});
  auto gammas = spec.body.value("gammas", std::vector<double>{0.9, 0.99, 0.999});
  auto sigmas = spec.body.value("sigmas", std::vector<double>{5, 10, 50});
  auto offsets = spec.body.value("theta_offsets", std::vector<double>{-2, -1, 0, 1, 2});
  double grid_step = spec.body.value("grid_step", 0.25);
  resolved["buffer_capacity"] = cap;
  resolved["loads"] = loads;
  resolved["gammas"] = gammas;
  resolved["sigmas"] = sigmas;
  resolved["theta_offsets"] = offsets;
  resolved["grid_step"] = grid_step;

  for (double rho : loads) {
    SystemConfig config = SystemConfig::with_load(rho, rates, cap);
    std::vector<VerifierRow> rows;
    for (double gamma : gammas) {
      DiscountedViResult opt = discounted_value_iteration(config, gamma, 1e-9);
      double theta_opt =
          canonical_server_threshold(extract_thresholds(opt.policy, config), 2);
      std::vector<double> grid = default_theta_grid(theta_opt, grid_step);
      for (double sigma : sigmas)
        for (double offset : offsets)
          rows.push_back(verify_point(config, gamma, sigma, theta_opt + offset, grid));
    }
    char name[64];
    std::snprintf(name, sizeof(name), "verify2_rho%g.csv", rho);
    write_verifier_csv((out / name).string(), rows);
  }
}

// kind: sweep ----------------------------------------------------------------

inline std::vector<double> linspace(double hi, double lo, int count) {
  std::vector<double> v(count);
  if (count == 1) {
    v[0] = hi;
    return v;
  }
  for (int i = 0; i < count; ++i)
    v[i] = hi + (lo - hi) * static_cast<double>(i) / static_cast<double>(count - 1);
  return v;
}

inline void run_sweep(const ExperimentSpec& spec, const std::filesystem::path& out,
                      nlohmann::json& resolved, unsigned workers) {
  std::string axis = spec.body.at("axis").get<std::string>();
  auto values = spec.body.at("values").get<std::vector<double>>();
  if (values.empty()) throw SpecError("sweep needs at least one axis value");
  const nlohmann::json& base = spec.body.at("base");
  int cap = base.value("buffer_capacity", 100);
  double load = base.value("load", 0.4);
  int k = base.value("num_servers", 8);
  double rate_max = base.value("rate_max", 100.0);
  double rate_min = base.value("rate_min", 1.0);
  long long eval_horizon = spec.body.value("eval_horizon", 10'000'000LL);
  long long eval_burn_in = spec.body.value("eval_burn_in", eval_horizon / 10);
  auto seeds = spec.body.value("seeds", std::vector<std::uint64_t>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  resolved["base"] = {{"buffer_capacity", cap}, {"load", load},      {"num_servers", k},
                      {"rate_max", rate_max},   {"rate_min", rate_min}};
  resolved["eval_horizon"] = eval_horizon;
  resolved["eval_burn_in"] = eval_burn_in;
  resolved["seeds"] = seeds;

  CsvWriter csv((out / "sweep.csv").string());
  csv.row({"axis", "axis_value", "policy_name", "seed_count", "response_time_mean",
           "response_time_se", "improvement_vs_reference_pct"});
  nlohmann::json failures = nlohmann::json::array();

  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    double value = values[vi];
    try {
      SystemConfig config = [&] {
        if (axis == "num_servers")
          return SystemConfig::with_load(load, linspace(rate_max, rate_min, static_cast<int>(value)),
                                         cap);
        if (axis == "load")
          return SystemConfig::with_load(value, linspace(rate_max, rate_min, k), cap);
        if (axis == "heterogeneity")  // value = mu_1 / mu_k spread ratio
          return SystemConfig::with_load(load, linspace(rate_max, rate_max / value, k), cap);
        if (axis == "pod_d") return SystemConfig::with_load(load, linspace(rate_max, rate_min, k), cap);
        throw SpecError("unknown sweep axis: " + axis);
      }();
      int pod_d = axis == "pod_d" ? static_cast<int>(value) : 0;

      nlohmann::json hyper_json = spec.body.value("hyper", nlohmann::json::object());
      if (!hyper_json.contains("horizon")) hyper_json["horizon"] = 10'000'000LL;
      hyper_json["seed"] = hyper_json.value("seed", std::uint64_t{1}) + vi;
      if (pod_d > 0) hyper_json["pod_d"] = pod_d;
      nlohmann::json resolved_hyper;
      HyperSetup hyper = parse_hyper(hyper_json, config, resolved_hyper);
      resolved["hyper_point_" + std::to_string(vi)] = resolved_hyper;
      SoftThresholdParams actor = trained_actor(config, hyper);

      std::vector<NamedPolicy> policies;
      policies.push_back(NamedPolicy{
          "achq", [config, actor](const State& s, Rng& rng) {
            return sample(soft_threshold_dist(actor, s, config), rng);
          }});
      policies.push_back(
          NamedPolicy{"fas", [config](const State& s, Rng&) { return fas_action(s, config); }});
      auto rsrt = rsrt_thresholds(config);
      policies.push_back(NamedPolicy{"rsrt", [config, rsrt](const State& s, Rng&) {
                                       return hard_threshold_action(rsrt, s, config);
                                     }});
      if (pod_d > 0)
        for (auto& p : policies) {
          auto inner = p.sampler;
          p.sampler = [inner, pod_d, config](const State& s, Rng& rng) {
            return inner(pod_restrict(s, pod_d, config, rng), rng);
          };
        }

      std::vector<double> samples(policies.size() * seeds.size());
      parallel_for(
          samples.size(),
          [&](std::size_t idx) {
            std::size_t p = idx / seeds.size();
            std::size_t s = idx % seeds.size();
            samples[idx] = simulate(policies[p].sampler, config, eval_horizon, eval_burn_in,
                                    seeds[s])
                               .response_time;
          },
          workers);

      std::vector<double> means(policies.size(), 0.0);
      std::vector<double> ses(policies.size(), 0.0);
      for (std::size_t p = 0; p < policies.size(); ++p) {
        for (std::size_t s = 0; s < seeds.size(); ++s) means[p] += samples[p * seeds.size() + s];
        means[p] /= static_cast<double>(seeds.size());
        if (seeds.size() > 1) {
          double var = 0;
          for (std::size_t s = 0; s < seeds.size(); ++s) {
            double d = samples[p * seeds.size() + s] - means[p];
            var += d * d;
          }
          ses[p] = std::sqrt(var / static_cast<double>(seeds.size() - 1) /
                             static_cast<double>(seeds.size()));
        }
      }
      double fas_mean = means[1];
      for (std::size_t p = 0; p < policies.size(); ++p)
        csv.row({axis, csv_num(value), policies[p].name, std::to_string(seeds.size()),
                 csv_num(means[p]), csv_num(ses[p]),
                 csv_num(100.0 * (fas_mean - means[p]) / fas_mean)});
    } catch (const std::exception& e) {
      std::cerr << "sweep point " << value << " failed: " << e.what() << '\n';
      failures.push_back({{"axis_value", value}, {"error", e.what()}});
    }
  }
  if (!failures.empty()) resolved["failures"] = failures;
}

}  // namespace detail

/// Executes a parsed spec, writing its artifacts and manifest under the
/// spec's output directory. Throws SpecError for spec-level problems and
/// other exceptions for runtime failures.
inline void run_experiment(const ExperimentSpec& spec, unsigned workers = worker_count()) {
  std::filesystem::path out(spec.out_dir);
  std::filesystem::create_directories(out);
  nlohmann::json resolved = spec.body;

  if (spec.kind == "rvi")
    detail::run_rvi(spec, out, resolved);
  else if (spec.kind == "train" || spec.kind == "train-discounted")
    detail::run_train(spec, out, resolved);
  else if (spec.kind == "simulate")
    detail::run_simulate(spec, out, resolved, workers);
  else if (spec.kind == "compare")
    detail::run_compare(spec, out, resolved, workers);
  else if (spec.kind == "verify2")
    detail::run_verify2(spec, out, resolved);
  else if (spec.kind == "sweep")
    detail::run_sweep(spec, out, resolved, workers);
  else
    throw SpecError("unknown experiment kind: " + spec.kind);

  detail::write_manifest(out, resolved);
}

}  // namespace hetroute
