#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>

#include "mcem/harness.hpp"

using namespace mcem;
using namespace mcem::harness;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "mcem_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json blood_em_config() {
  json config;
  config["model"] = {{"name", "blood"}};
  config["method"] = {{"name", "em"},
                      {"theta0", {1.0 / 3.0, 1.0 / 3.0}},
                      {"tol", 1e-8}};
  return config;
}

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value) {
      setenv(kWorkerEnvVar, value, 1);
    } else {
      unsetenv(kWorkerEnvVar);
    }
  }
  ~EnvGuard() { unsetenv(kWorkerEnvVar); }
};

}  // namespace

TEST_CASE("format_double round-trips doubles exactly") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.123456789, -0.0,
                   std::numeric_limits<double>::max()}) {
    std::string s = format_double(v);
    REQUIRE(std::strtod(s.c_str(), nullptr) == v);
  }
}

TEST_CASE("trajectory CSV round-trips, optionals and diagnostics included") {
  Trajectory trajectory;
  TrajectoryRecord a;
  a.iteration = 1;
  a.mc_size = 50;
  a.theta.values = Vector(2);
  a.theta.values << 1.0 / 3.0, 0.12798169;
  a.objective_increment = 0.0123456789012345678;
  a.diagnostics["rel_error"] = 0.25;
  a.diagnostics["escalated"] = 1.0;
  TrajectoryRecord b;
  b.iteration = 2;
  b.mc_size = 75;
  b.theta.values = Vector(2);
  b.theta.values << 0.299, 0.128;
  b.ci_lower = -1e-5;
  b.ci_upper = 3.5e-4;
  trajectory.records = {a, b};

  std::string text = write_trajectory_csv(trajectory, 2);
  Trajectory parsed = parse_trajectory_csv(text);
  REQUIRE(parsed.records.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& src = trajectory.records[k];
    const auto& dst = parsed.records[k];
    REQUIRE(dst.iteration == src.iteration);
    REQUIRE(dst.mc_size == src.mc_size);
    REQUIRE(dst.theta.values == src.theta.values);
    REQUIRE(dst.objective_increment == src.objective_increment);
    REQUIRE(dst.ci_lower == src.ci_lower);
    REQUIRE(dst.ci_upper == src.ci_upper);
    REQUIRE(dst.diagnostics == src.diagnostics);
  }

  REQUIRE_THROWS_AS(parse_trajectory_csv("not,a,header\n"), Error);
  REQUIRE_THROWS_AS(parse_trajectory_csv(trajectory_header(2) + "\n1,2,3\n"), Error);
}

TEST_CASE("config loading rejects malformed and unknown input by name") {
  fs::path dir = fresh_dir("configs");
  fs::path bad_json = dir / "bad.json";
  std::ofstream(bad_json) << "{ not json";
  REQUIRE_THROWS_AS(load_config(bad_json.string()), ConfigError);
  REQUIRE_THROWS_AS(load_config((dir / "missing.json").string()), ConfigError);

  fs::path unknown_key = dir / "unknown.json";
  std::ofstream(unknown_key) << R"({"model": {"name": "blood"}, "mehtod": {}})";
  try {
    load_config(unknown_key.string());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    REQUIRE(std::string(e.what()).find("mehtod") != std::string::npos);
    REQUIRE(std::string(e.what()).find("top-level") != std::string::npos);
  }
}

TEST_CASE("config field errors name the offending key") {
  json config = blood_em_config();
  config["method"]["tol"] = "loose";
  CliOptions opts;
  opts.out_dir = fresh_dir("bad_field").string();
  try {
    run_config(config, opts);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    REQUIRE(std::string(e.what()).find("tol") != std::string::npos);
  }

  config = blood_em_config();
  config["method"]["theta0"] = {0.2, 0.2, 0.2};
  REQUIRE_THROWS_AS(run_config(config, opts), ConfigError);
  config["method"]["theta0"] = {0.7, 0.4};
  REQUIRE_THROWS_AS(run_config(config, opts), ConfigError);
  config = blood_em_config();
  config["method"]["name"] = "gibbs";
  REQUIRE_THROWS_AS(run_config(config, opts), ConfigError);
  config = blood_em_config();
  config["sampler"] = {{"name", "slice"}};
  REQUIRE_THROWS_AS(run_config(config, opts), ConfigError);
}

TEST_CASE("a single run writes trajectory, summary, and metadata") {
  json config = blood_em_config();
  fs::path dir = fresh_dir("single_run");
  CliOptions opts;
  opts.out_dir = dir.string();
  opts.seed = 7;
  run_config(config, opts);

  REQUIRE(fs::exists(dir / "trajectory.csv"));
  REQUIRE(fs::exists(dir / "summary.json"));
  REQUIRE(fs::exists(dir / "metadata.json"));
  REQUIRE_FALSE(fs::exists(dir / "replicates.csv"));
  REQUIRE_FALSE(fs::exists(dir / "inference.json"));

  json summary = json::parse(slurp(dir / "summary.json"));
  auto final_theta = summary.at("final_theta").get<std::vector<double>>();
  REQUIRE_THAT(final_theta[0], Catch::Matchers::WithinAbs(0.299, 1e-3));
  REQUIRE_THAT(final_theta[1], Catch::Matchers::WithinAbs(0.128, 1e-3));
  REQUIRE(summary.at("termination_reason") == "converged");
  REQUIRE(summary.at("seed") == 7);
  REQUIRE(summary.at("total_mc_draws") == 0);

  json metadata = json::parse(slurp(dir / "metadata.json"));
  REQUIRE(metadata.at("config_hash") == config_hash(config));
  REQUIRE(metadata.at("format_version") == 1);

  Trajectory parsed = parse_trajectory_csv(slurp(dir / "trajectory.csv"));
  REQUIRE(parsed.records.size() == summary.at("iterations").get<std::size_t>());
}

TEST_CASE("inference output comes from a fresh sample at the final estimate") {
  json config = blood_em_config();
  config["inference"] = {{"enabled", true}, {"mc_size", 5000}};
  fs::path dir = fresh_dir("inference_run");
  CliOptions opts;
  opts.out_dir = dir.string();
  run_config(config, opts);
  json inference = json::parse(slurp(dir / "inference.json"));
  REQUIRE(inference.at("mc_size_used") == 5000);
  auto se = inference.at("std_errors").get<std::vector<double>>();
  REQUIRE_THAT(se[0], Catch::Matchers::WithinRel(0.062, 0.05));
  REQUIRE_THAT(se[1], Catch::Matchers::WithinRel(0.042, 0.05));
  auto info = inference.at("information").get<std::vector<std::vector<double>>>();
  REQUIRE_THAT(info[0][1], Catch::Matchers::WithinAbs(info[1][0], 1e-12));
}

TEST_CASE("replicated runs write per-seed directories and a replicate table") {
  json config;
  config["model"] = {{"name", "blood"}};
  config["method"] = {{"name", "wei-tanner"},
                      {"theta0", {1.0 / 3.0, 1.0 / 3.0}},
                      {"schedule", {{5, 20}}}};
  fs::path dir = fresh_dir("replicated");
  CliOptions opts;
  opts.out_dir = dir.string();
  opts.seed = 100;
  opts.replicates = 3;
  run_config(config, opts);

  for (std::uint64_t seed : {100, 101, 102}) {
    fs::path sub = dir / ("seed_" + std::to_string(seed));
    REQUIRE(fs::exists(sub / "trajectory.csv"));
    json summary = json::parse(slurp(sub / "summary.json"));
    REQUIRE(summary.at("seed") == seed);
    REQUIRE(summary.at("total_mc_draws") == 100);
  }
  std::string table = slurp(dir / "replicates.csv");
  REQUIRE(table.rfind("seed,theta_0,theta_1,iterations,total_mc_draws,"
                      "termination_reason\n", 0) == 0);
  REQUIRE(std::count(table.begin(), table.end(), '\n') == 4);
}

TEST_CASE("identical config and seed give byte-identical outputs") {
  json config;
  config["model"] = {{"name", "blood"}};
  config["method"] = {{"name", "booth-hobert"}, {"theta0", {1.0 / 3.0, 1.0 / 3.0}}};
  config["inference"] = {{"enabled", true}, {"mc_size", 2000}};

  auto run_into = [&](const std::string& name, const char* workers) {
    EnvGuard guard(workers);
    fs::path dir = fresh_dir(name);
    CliOptions opts;
    opts.out_dir = dir.string();
    opts.seed = 11;
    opts.replicates = 4;
    run_config(config, opts);
    return dir;
  };
  fs::path serial = run_into("det_serial", "1");
  fs::path parallel = run_into("det_parallel", "4");
  fs::path repeat = run_into("det_repeat", nullptr);

  for (std::uint64_t seed : {11, 12, 13, 14}) {
    std::string sub = "seed_" + std::to_string(seed);
    for (const char* file : {"trajectory.csv", "summary.json", "metadata.json",
                             "inference.json"}) {
      std::string a = slurp(serial / sub / file);
      REQUIRE(a == slurp(parallel / sub / file));
      REQUIRE(a == slurp(repeat / sub / file));
    }
  }
  REQUIRE(slurp(serial / "replicates.csv") == slurp(parallel / "replicates.csv"));
  REQUIRE(slurp(serial / "replicates.csv") == slurp(repeat / "replicates.csv"));
}

TEST_CASE("an invalid worker count is a config error") {
  EnvGuard guard("0");
  json config = blood_em_config();
  CliOptions opts;
  opts.out_dir = fresh_dir("bad_workers").string();
  REQUIRE_THROWS_AS(run_config(config, opts), ConfigError);
}

TEST_CASE("an engine failure still flushes a header-only trajectory") {
  json config;
  config["model"] = {{"name", "blood"}};
  config["method"] = {{"name", "chan-ledolter"}, {"pilot_iters", 3}};
  fs::path dir = fresh_dir("engine_failure");
  CliOptions opts;
  opts.out_dir = dir.string();
  REQUIRE_THROWS_AS(run_config(config, opts), InsufficientPilotError);
  REQUIRE(slurp(dir / "trajectory.csv") == trajectory_header(2) + "\n");
  REQUIRE_FALSE(fs::exists(dir / "summary.json"));
}

TEST_CASE("compare writes one row per method and seed plus aggregates") {
  json config;
  config["model"] = {{"name", "blood"}};
  config["methods"] = json::array({
      {{"name", "em"}, {"theta0", {1.0 / 3.0, 1.0 / 3.0}}},
      {{"name", "saem-delyon"},
       {"theta0", {1.0 / 3.0, 1.0 / 3.0}},
       {"mc_size", 10},
       {"iterations", 50},
       {"schedule", {{"kind", "power"}, {"gamma", 0.7}}}},
  });
  fs::path dir = fresh_dir("compare");
  CliOptions opts;
  opts.out_dir = dir.string();
  opts.seed = 3;
  opts.replicates = 2;
  compare_config(config, opts);

  std::string table = slurp(dir / "compare.csv");
  auto lines = split(table, '\n');
  REQUIRE(lines[0] ==
          "method,seed,theta_0,theta_1,dist_to_oracle,total_mc_draws,iterations");
  REQUIRE(lines.size() >= 5);  // header + 2 methods x 2 seeds

  // SAEM draw accounting: exactly 500 draws per run; EM uses none.
  for (std::size_t i = 1; i <= 4; ++i) {
    auto fields = split(lines[i], ',');
    REQUIRE(fields.size() == 7);
    if (fields[0] == "em") REQUIRE(fields[5] == "0");
    if (fields[0] == "saem-delyon") REQUIRE(fields[5] == "500");
  }

  std::string agg = slurp(dir / "compare_aggregate.csv");
  auto agg_lines = split(agg, '\n');
  REQUIRE(agg_lines[0] == "method,mean_dist,sd_dist,mean_draws");
  REQUIRE(agg_lines[1].rfind("em,", 0) == 0);
  REQUIRE(agg_lines[2].rfind("saem-delyon,", 0) == 0);
}

TEST_CASE("compare with the enumeration sampler degenerates to the oracle") {
  json config;
  config["model"] = {{"name", "blood"}};
  config["sampler"] = {{"name", "enumeration"}};
  config["methods"] = json::array({
      {{"name", "wei-tanner"},
       {"theta0", {1.0 / 3.0, 1.0 / 3.0}},
       {"schedule", {{60, 1}}}},
  });
  fs::path dir = fresh_dir("compare_oracle");
  CliOptions opts;
  opts.out_dir = dir.string();
  compare_config(config, opts);
  auto lines = split(slurp(dir / "compare.csv"), '\n');
  REQUIRE(lines.size() >= 2);
  auto fields = split(lines[1], ',');
  double dist = std::strtod(fields[4].c_str(), nullptr);
  REQUIRE(dist < 1e-9);

  // Methods must not carry their own model.
  config["methods"][0]["model"] = {{"name", "blood"}};
  REQUIRE_THROWS_AS(compare_config(config, opts), ConfigError);
  config["methods"] = json::array();
  config.erase("methods");
  REQUIRE_THROWS_AS(compare_config(config, opts), ConfigError);
}
