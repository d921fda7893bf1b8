#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "hetroute/experiment.hpp"

using namespace hetroute;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  std::string cmd = std::string(HETROUTE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("hetroute_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  out << j.dump(2);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json tiny_system() {
  return {{"service_rates", {8.0, 2.0}}, {"load", 0.4}, {"buffer_capacity", 8}};
}

}  // namespace

TEST_CASE("experiment parsing rejects malformed specs") {
  CHECK_THROWS_AS(parse_experiment(nlohmann::json::array()), SpecError);
  CHECK_THROWS_AS(parse_experiment(nlohmann::json{{"out", "x"}}), SpecError);
  CHECK_THROWS_AS(parse_experiment(nlohmann::json{{"kind", "frobnicate"}}), SpecError);
  CHECK_THROWS_AS(load_experiment("/nonexistent/spec.json"), SpecError);
  ExperimentSpec ok = parse_experiment(nlohmann::json{{"kind", "rvi"}, {"out", "somewhere"}});
  CHECK(ok.kind == "rvi");
  CHECK(ok.out_dir == "somewhere");
}

TEST_CASE("cli exits 2 on spec problems and 0 on success") {
  fs::path dir = fresh_dir("exitcodes");
  CHECK(run_cli("rvi --config /does/not/exist.json") == 2);

  write_json(dir / "garbage.json", nlohmann::json{{"kind", "nonsense"}});
  CHECK(run_cli("rvi --config " + (dir / "garbage.json").string()) == 2);

  std::ofstream(dir / "notjson.json") << "{ definitely not json";
  CHECK(run_cli("rvi --config " + (dir / "notjson.json").string()) == 2);

  // kind/subcommand mismatch
  write_json(dir / "sim.json", nlohmann::json{{"kind", "simulate"}});
  CHECK(run_cli("rvi --config " + (dir / "sim.json").string()) == 2);

  nlohmann::json rvi_spec{{"kind", "rvi"},
                          {"system", tiny_system()},
                          {"tolerance", 1e-8},
                          {"out", (dir / "rvi_out").string()}};
  write_json(dir / "rvi.json", rvi_spec);
  CHECK(run_cli("rvi --config " + (dir / "rvi.json").string()) == 0);
  CHECK(fs::exists(dir / "rvi_out" / "summary.csv"));
  CHECK(fs::exists(dir / "rvi_out" / "values_policy_a.csv"));
  CHECK(fs::exists(dir / "rvi_out" / "thresholds_a.csv"));
  CHECK(fs::exists(dir / "rvi_out" / "manifest.json"));
}

TEST_CASE("rvi runs are byte-identical across reruns") {
  fs::path dir = fresh_dir("determinism");
  nlohmann::json spec{{"kind", "rvi"}, {"system", tiny_system()}, {"out", ""}};
  spec["out"] = (dir / "one").string();
  run_experiment(parse_experiment(spec));
  spec["out"] = (dir / "two").string();
  run_experiment(parse_experiment(spec));
  CHECK(slurp(dir / "one" / "summary.csv") == slurp(dir / "two" / "summary.csv"));
  CHECK(slurp(dir / "one" / "values_policy_a.csv") == slurp(dir / "two" / "values_policy_a.csv"));
}

TEST_CASE("train experiment writes a record and the final actor") {
  fs::path dir = fresh_dir("train");
  nlohmann::json spec{
      {"kind", "train"},
      {"system", tiny_system()},
      {"hyper",
       {{"sigma", 1.0}, {"horizon", 20000}, {"seed", 4}, {"log_interval", 5000}}},
      {"out", (dir / "out").string()}};
  run_experiment(parse_experiment(spec));
  CHECK(fs::exists(dir / "out" / "train_record.csv"));
  std::string record = slurp(dir / "out" / "train_record.csv");
  CHECK(record.starts_with("step,avg_cost_running,eta,theta_2,omega_norm"));
  nlohmann::json actor;
  std::ifstream(dir / "out" / "actor.json") >> actor;
  CHECK(actor.at("thresholds").size() == 1);

  // discounted variant needs gamma
  spec["kind"] = "train-discounted";
  CHECK_THROWS_AS(run_experiment(parse_experiment(spec)), SpecError);
  spec["hyper"]["gamma"] = 0.99;
  run_experiment(parse_experiment(spec));
}

TEST_CASE("simulate and compare experiments emit the pinned schemas") {
  fs::path dir = fresh_dir("simcmp");
  nlohmann::json sim{{"kind", "simulate"},
                     {"system", tiny_system()},
                     {"policy", {{"type", "fas"}}},
                     {"horizon", 50000},
                     {"seeds", {1, 2}},
                     {"out", (dir / "sim").string()}};
  run_experiment(parse_experiment(sim));
  std::string stats = slurp(dir / "sim" / "stats.csv");
  CHECK(stats.starts_with("seed,epochs,avg_jobs,response_time,ci_halfwidth"));

  nlohmann::json cmp{{"kind", "compare"},
                     {"system", tiny_system()},
                     {"policies",
                      {{{"type", "rvi"}}, {{"type", "fas"}}, {{"type", "rsrt"}}}},
                     {"reference", "fas"},
                     {"horizon", 50000},
                     {"seeds", {1, 2, 3}},
                     {"out", (dir / "cmp").string()}};
  run_experiment(parse_experiment(cmp));
  std::string table = slurp(dir / "cmp" / "comparison.csv");
  CHECK(table.starts_with(
      "policy_name,seed_count,response_time_mean,response_time_se,improvement_vs_reference_pct"));
  CHECK(table.find("rvi") != std::string::npos);

  // unknown policy type is a spec error
  nlohmann::json bad = cmp;
  bad["policies"][0]["type"] = "psychic";
  CHECK_THROWS_AS(run_experiment(parse_experiment(bad)), SpecError);
}

TEST_CASE("verify2 experiment writes one report per load") {
  fs::path dir = fresh_dir("verify2");
  nlohmann::json spec{{"kind", "verify2"},
                      {"service_rates", {8.0, 2.0}},
                      {"buffer_capacity", 15},
                      {"loads", {0.4}},
                      {"gammas", {0.95}},
                      {"sigmas", {10.0}},
                      {"theta_offsets", {0.0, 1.0}},
                      {"out", (dir / "out").string()}};
  run_experiment(parse_experiment(spec));
  std::string report = slurp(dir / "out" / "verify2_rho0.4.csv");
  CHECK(report.starts_with("gamma,sigma,theta_base,l_star,single_sign_change,unimodal,argmin"));
  // header plus one row per (gamma, sigma, offset)
  CHECK(std::count(report.begin(), report.end(), '\n') == 3);
}

TEST_CASE("sweep experiment emits rows per axis point and policy") {
  fs::path dir = fresh_dir("sweep");
  nlohmann::json spec{{"kind", "sweep"},
                      {"axis", "load"},
                      {"values", {0.3, 0.5}},
                      {"base",
                       {{"num_servers", 3},
                        {"rate_max", 9.0},
                        {"rate_min", 1.0},
                        {"buffer_capacity", 10},
                        {"load", 0.4}}},
                      {"hyper", {{"sigma", 1.0}, {"horizon", 20000}, {"seed", 2}}},
                      {"eval_horizon", 30000},
                      {"seeds", {1, 2}},
                      {"out", (dir / "out").string()}};
  run_experiment(parse_experiment(spec));
  std::string table = slurp(dir / "out" / "sweep.csv");
  CHECK(table.starts_with(
      "axis,axis_value,policy_name,seed_count,response_time_mean,response_time_se,"
      "improvement_vs_reference_pct"));
  CHECK(std::count(table.begin(), table.end(), '\n') == 1 + 2 * 3);
  CHECK(table.find("achq") != std::string::npos);

  // single-point pod sweep exercises the masked evaluation path
  nlohmann::json pod = spec;
  pod["axis"] = "pod_d";
  pod["values"] = {2};
  pod["out"] = (dir / "pod").string();
  run_experiment(parse_experiment(pod));
  CHECK(fs::exists(dir / "pod" / "sweep.csv"));
}

TEST_CASE("plot renders an svg from a csv") {
  fs::path dir = fresh_dir("plot");
  std::ofstream csv(dir / "data.csv");
  csv << "step,value,other\n1,2.0,1.0\n2,2.5,0.5\n3,2.25,0.75\n";
  csv.close();
  int code = run_cli("plot --in " + (dir / "data.csv").string() + " --x step --y value --y other --out " +
                     (dir / "chart.svg").string());
  CHECK(code == 0);
  std::string svg = slurp(dir / "chart.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);

  CHECK(run_cli("plot --in " + (dir / "data.csv").string() + " --x step --y missing --out " +
                (dir / "bad.svg").string()) == 1);
}
