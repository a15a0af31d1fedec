#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcem/em.hpp"
#include "mcem/inference.hpp"
#include "mcem/mcem.hpp"
#include "mcem/mcml.hpp"
#include "mcem/models/blood.hpp"
#include "mcem/models/censored_normal.hpp"
#include "mcem/optim.hpp"
#include "mcem/saem.hpp"

namespace mcem::harness {

using nlohmann::json;

inline constexpr const char* kWorkerEnvVar = "MCEM_WORKERS";

// ---------------------------------------------------------------------------
// Trajectory tables
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string trajectory_header(int p) {
  std::string header = "iteration,mc_size";
  for (int j = 0; j < p; ++j) header += ",theta_" + std::to_string(j);
  header += ",objective_increment,ci_lower,ci_upper,diagnostics";
  return header;
}

// Diagnostics serialize as "key=value;key=value" so the row stays one line.
inline std::string write_trajectory_csv(const Trajectory& trajectory, int p) {
  std::string out = trajectory_header(p) + "\n";
  for (const auto& rec : trajectory.records) {
    out += std::to_string(rec.iteration) + "," + std::to_string(rec.mc_size);
    for (int j = 0; j < p; ++j) out += "," + format_double(rec.theta.values[j]);
    auto opt = [&](const std::optional<double>& v) {
      out += ",";
      if (v) out += format_double(*v);
    };
    opt(rec.objective_increment);
    opt(rec.ci_lower);
    opt(rec.ci_upper);
    out += ",";
    bool first = true;
    for (const auto& [key, value] : rec.diagnostics) {
      if (!first) out += ";";
      out += key + "=" + format_double(value);
      first = false;
    }
    out += "\n";
  }
  return out;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) fields.push_back(field);
  if (!line.empty() && line.back() == sep) fields.push_back("");
  return fields;
}

inline Trajectory parse_trajectory_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error("parse_trajectory_csv: empty input");
  auto header = split(line, ',');
  int p = 0;
  for (const auto& name : header) {
    if (name.rfind("theta_", 0) == 0) ++p;
  }
  if (header != split(trajectory_header(p), ',')) {
    throw Error("parse_trajectory_csv: unexpected header");
  }
  Trajectory trajectory;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split(line, ',');
    if (static_cast<int>(fields.size()) != p + 6) {
      throw Error("parse_trajectory_csv: bad field count");
    }
    TrajectoryRecord rec;
    rec.iteration = std::stoi(fields[0]);
    rec.mc_size = std::stol(fields[1]);
    rec.theta.values = Vector(p);
    for (int j = 0; j < p; ++j) rec.theta.values[j] = std::strtod(fields[2 + j].c_str(), nullptr);
    auto opt = [](const std::string& f) -> std::optional<double> {
      if (f.empty()) return std::nullopt;
      return std::strtod(f.c_str(), nullptr);
    };
    rec.objective_increment = opt(fields[p + 2]);
    rec.ci_lower = opt(fields[p + 3]);
    rec.ci_upper = opt(fields[p + 4]);
    for (const auto& pair : split(fields[p + 5], ';')) {
      if (pair.empty()) continue;
      auto eq = pair.find('=');
      if (eq == std::string::npos) throw Error("parse_trajectory_csv: bad diagnostic");
      rec.diagnostics[pair.substr(0, eq)] = std::strtod(pair.c_str() + eq + 1, nullptr);
    }
    trajectory.records.push_back(std::move(rec));
  }
  return trajectory;
}

// ---------------------------------------------------------------------------
// Config handling
// ---------------------------------------------------------------------------

inline std::uint64_t config_hash(const json& doc) {
  // FNV-1a over the canonical dump.
  std::string canon = doc.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <class T>
T config_get(const json& obj, const std::string& key, const T& fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field '" + key + "' has the wrong type");
  }
}

inline void check_known_keys(const json& obj, const std::vector<std::string>& known,
                             const std::string& section) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const auto& k : known) {
      if (key == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("unknown key '" + key + "' in section '" + section + "'");
  }
}

template <class M>
concept HasEnumeration = requires(const M model, const Theta& theta) {
  { model.enumerate_conditional(theta) } ->
      std::convertible_to<WeightedSample<typename M::Point>>;
};

template <MissingDataModel M>
SamplerPolicy<M> make_sampler_policy(const json& sampler_cfg) {
  check_known_keys(sampler_cfg, {"name"}, "sampler");
  std::string name = config_get<std::string>(sampler_cfg, "name", "direct");
  if (name == "direct") return direct_sampler_policy<M>();
  if (name == "enumeration") {
    if constexpr (HasEnumeration<M>) {
      return [](const M& model, const Theta& theta, long, RngStream&) {
        return model.enumerate_conditional(theta);
      };
    } else {
      throw ConfigError("sampler 'enumeration' is not available for this model");
    }
  }
  throw ConfigError("unknown sampler '" + name + "'");
}

template <MissingDataModel M>
Theta theta_from_config(const M& model, const json& method, const std::string& key) {
  Theta theta = model.initial_theta();
  if (method.contains(key)) {
    auto values = method.at(key).get<std::vector<double>>();
    if (static_cast<int>(values.size()) != theta.dim()) {
      throw ConfigError("config field '" + key + "' has the wrong length");
    }
    for (int j = 0; j < theta.dim(); ++j) theta.values[j] = values[j];
    if (!validate_theta(theta)) {
      throw ConfigError("config field '" + key + "' violates the parameter constraint");
    }
  }
  return theta;
}

inline StepSchedule schedule_from_config(const json& method) {
  json sched = config_get<json>(method, "schedule", json::object());
  check_known_keys(sched, {"kind", "gamma", "scale"}, "method.schedule");
  std::string kind = config_get<std::string>(sched, "kind", "power");
  double scale = config_get<double>(sched, "scale", 1.0);
  if (kind == "power") {
    return StepSchedule::power(config_get<double>(sched, "gamma", 0.7), scale);
  }
  if (kind == "harmonic") return StepSchedule::harmonic(scale);
  throw ConfigError("unknown schedule kind '" + kind + "'");
}

template <MissingDataModel M>
Trajectory execute_method(const M& model, const json& method,
                          const SamplerPolicy<M>& sampler, std::uint64_t seed) {
  std::string name = config_get<std::string>(method, "name", "");
  RngStream rng(seed);
  Theta theta0 = theta_from_config(model, method, "theta0");

  if (name == "em") {
    return run_em(model, theta0, config_get<double>(method, "tol", 1e-8),
                  config_get<int>(method, "max_iters", 500));
  }
  if (name == "wei-tanner") {
    WeiTannerConfig config;
    for (const auto& stage :
         config_get<std::vector<std::vector<long>>>(method, "schedule", {{50, 100}, {20, 1000}})) {
      if (stage.size() != 2) throw ConfigError("wei-tanner schedule stages are [iters, M]");
      config.schedule.emplace_back(static_cast<int>(stage[0]), stage[1]);
    }
    return run_wei_tanner(model, theta0, config, sampler, rng);
  }
  if (name == "booth-hobert") {
    BoothHobertConfig config;
    config.m0 = config_get<long>(method, "m0", config.m0);
    config.alpha = config_get<double>(method, "alpha", config.alpha);
    config.r = config_get<int>(method, "r", config.r);
    config.delta1 = config_get<double>(method, "delta1", config.delta1);
    config.delta2 = config_get<double>(method, "delta2", config.delta2);
    config.consecutive = config_get<int>(method, "consecutive", config.consecutive);
    config.se_rule = config_get<bool>(method, "se_rule", config.se_rule);
    config.ripatti_variant = config_get<bool>(method, "ripatti", config.ripatti_variant);
    config.max_iters = config_get<int>(method, "max_iters", config.max_iters);
    return run_booth_hobert(model, theta0, config, sampler, rng);
  }
  if (name == "caffo") {
    CaffoConfig config;
    config.m0 = config_get<long>(method, "m0", config.m0);
    config.ascent_level = config_get<double>(method, "ascent_level", config.ascent_level);
    config.term_level = config_get<double>(method, "term_level", config.term_level);
    config.tau = config_get<double>(method, "tau", config.tau);
    config.augment_fraction =
        config_get<double>(method, "augment_fraction", config.augment_fraction);
    config.max_iters = config_get<int>(method, "max_iters", config.max_iters);
    return run_caffo(model, theta0, config, sampler, rng);
  }
  if (name == "chan-ledolter") {
    ChanLedolterConfig config;
    config.pilot_iters = config_get<int>(method, "pilot_iters", config.pilot_iters);
    config.pilot_mc_size = config_get<long>(method, "pilot_mc_size", config.pilot_mc_size);
    config.followers = config_get<int>(method, "followers", config.followers);
    config.se_threshold = config_get<double>(method, "se_threshold", config.se_threshold);
    config.ci_level = config_get<double>(method, "ci_level", config.ci_level);
    config.max_stage2_iters =
        config_get<int>(method, "max_stage2_iters", config.max_stage2_iters);
    return run_chan_ledolter(model, theta0, config, sampler, rng);
  }
  if (name == "saem-gu-kong" || name == "saem-delyon") {
    SaemVariant variant =
        name == "saem-gu-kong" ? SaemVariant::gu_kong : SaemVariant::delyon;
    Trajectory trajectory = run_saem(model, theta0, variant,
                                     config_get<long>(method, "mc_size", 10),
                                     config_get<int>(method, "iterations", 50),
                                     schedule_from_config(method), sampler, rng);
    if (method.contains("average_burn")) {
      return offline_average(trajectory, method.at("average_burn").get<int>());
    }
    return trajectory;
  }
  if (name == "mcml") {
    long mc_size = config_get<long>(method, "mc_size", 1000);
    Theta theta_star = theta_from_config(model, method, "theta_star");
    RngStream stream = rng.child(0);
    auto surface =
        mcml_surface(model, theta_star, sampler(model, theta_star, mc_size, stream));
    Theta estimate = mcml_maximize(surface, theta0.dim() > 0 ? theta0 : theta_star);
    Trajectory trajectory;
    trajectory.terminated_reason = TerminationReason::converged;
    TrajectoryRecord record;
    record.iteration = 1;
    record.theta = estimate;
    record.mc_size = surface.sample().size();
    trajectory.records.push_back(std::move(record));
    return trajectory;
  }
  throw ConfigError("unknown method '" + name + "'");
}

// Oracle MLE used for the compare table's distance column.
template <MissingDataModel M>
Theta oracle_mle(const M& model) {
  if constexpr (std::is_same_v<M, BloodModel>) {
    return solve_score_system(model, model.initial_theta());
  } else if constexpr (std::is_same_v<M, CensoredNormalModel>) {
    return model.em_oracle(model.initial_theta());
  } else {
    throw CapabilityError("oracle_mle: no oracle for this model");
  }
}

template <class F>
auto with_model(const json& model_cfg, F&& f) {
  std::string name = config_get<std::string>(model_cfg, "name", "");
  if (name == "blood") {
    check_known_keys(model_cfg, {"name", "y"}, "model");
    BloodModel::Data data;
    if (model_cfg.contains("y")) {
      auto y = model_cfg.at("y").get<std::vector<double>>();
      if (y.size() != 4) throw ConfigError("blood model needs four counts in 'y'");
      for (int i = 0; i < 4; ++i) data.y[i] = y[i];
    }
    return f(BloodModel(data));
  }
  if (name == "censored-normal") {
    check_known_keys(model_cfg, {"name", "observed", "censored_count", "threshold"},
                     "model");
    CensoredNormalModel::Data data = censored_fixture();
    if (model_cfg.contains("observed")) {
      data.observed = model_cfg.at("observed").get<std::vector<double>>();
      data.censored_count = config_get<long>(model_cfg, "censored_count", 0);
      data.threshold = config_get<double>(model_cfg, "threshold", 1.0);
    }
    return f(CensoredNormalModel(data));
  }
  throw ConfigError("unknown model '" + name + "'");
}

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

inline int worker_count(int jobs) {
  int workers = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv(kWorkerEnvVar)) {
    workers = std::atoi(env);
    if (workers < 1) throw ConfigError(std::string(kWorkerEnvVar) + " must be >= 1");
  }
  if (workers < 1) workers = 1;
  return std::min(workers, jobs);
}

// Run job(i) for i in [0, jobs) across the worker pool; results are indexed,
// so assembly order never depends on completion order.
template <class Job>
void parallel_for(int jobs, const Job& job) {
  int workers = worker_count(jobs);
  if (workers <= 1) {
    for (int i = 0; i < jobs; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= jobs) return;
        try {
          job(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// run / compare
// ---------------------------------------------------------------------------

struct RunOutput {
  Trajectory trajectory;
  json summary;
  json inference;  // null unless requested
};

template <MissingDataModel M>
RunOutput run_single(const M& model, const json& config, std::uint64_t seed) {
  json method = config_get<json>(config, "method", json::object());
  auto sampler =
      make_sampler_policy<M>(config_get<json>(config, "sampler", json::object()));
  RunOutput out;
  out.trajectory = execute_method(model, method, sampler, seed);

  const Theta& final_theta = out.trajectory.final_theta();
  out.summary["final_theta"] = std::vector<double>(
      final_theta.values.data(), final_theta.values.data() + final_theta.dim());
  out.summary["termination_reason"] = to_string(out.trajectory.terminated_reason);
  out.summary["iterations"] = out.trajectory.records.size();
  out.summary["total_mc_draws"] = out.trajectory.total_mc_draws();
  out.summary["seed"] = seed;

  json inf_cfg = config_get<json>(config, "inference", json::object());
  if (config_get<bool>(inf_cfg, "enabled", false)) {
    // Fresh sample at the final estimate, never the last controller sample.
    long mc_size = config_get<long>(inf_cfg, "mc_size", 10000);
    RngStream rng = RngStream(seed).child(999983);
    auto sample = sampler(model, final_theta, mc_size, rng);
    auto report = louis_information(model, final_theta, sample);
    auto mat = [](const Matrix& m) {
      std::vector<std::vector<double>> rows(m.rows(), std::vector<double>(m.cols()));
      for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) rows[i][j] = m(i, j);
      }
      return rows;
    };
    out.inference["information"] = mat(report.info);
    out.inference["covariance"] = mat(report.covariance);
    out.inference["std_errors"] = std::vector<double>(
        report.std_errors.data(), report.std_errors.data() + report.std_errors.size());
    out.inference["fraction_missing"] =
        std::vector<double>(report.fraction_missing.data(),
                            report.fraction_missing.data() + report.fraction_missing.size());
    out.inference["mc_size_used"] = report.mc_size_used;
  }
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open output file " + path.string());
  out << content;
}

struct CliOptions {
  std::optional<std::uint64_t> seed;
  std::optional<int> replicates;
  std::optional<std::string> out_dir;
};

inline json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_known_keys(doc, {"model", "method", "methods", "sampler", "seed", "replicates",
                         "output", "inference"},
                   "top-level");
  return doc;
}

inline std::filesystem::path resolve_out_dir(const json& config, const CliOptions& opts) {
  if (opts.out_dir) return *opts.out_dir;
  json output = config_get<json>(config, "output", json::object());
  return config_get<std::string>(output, "dir", "out");
}

// `run`: one method, possibly replicated across seeds. Writes per-seed
// trajectory/summary/metadata files plus a replicate table when K > 1.
inline void run_config(const json& config, const CliOptions& opts) {
  std::uint64_t base_seed = opts.seed.value_or(config_get<std::uint64_t>(config, "seed", 1));
  int replicates = opts.replicates.value_or(config_get<int>(config, "replicates", 1));
  if (replicates < 1) throw ConfigError("replicates must be >= 1");
  std::filesystem::path out_dir = resolve_out_dir(config, opts);
  std::filesystem::create_directories(out_dir);

  with_model(config_get<json>(config, "model", json::object()), [&](const auto& model) {
    const int p = model.dim();
    std::vector<RunOutput> results(replicates);
    std::vector<std::exception_ptr> failures(replicates);
    parallel_for(replicates, [&](int i) {
      try {
        results[i] = run_single(model, config, base_seed + static_cast<std::uint64_t>(i));
      } catch (const Error&) {
        failures[i] = std::current_exception();
      }
    });
    for (int i = 0; i < replicates; ++i) {
      std::uint64_t seed = base_seed + static_cast<std::uint64_t>(i);
      std::filesystem::path dir =
          replicates == 1 ? out_dir : out_dir / ("seed_" + std::to_string(seed));
      std::filesystem::create_directories(dir);
      if (failures[i]) {
        // Flush what there is of the trajectory before reporting the failure.
        write_file(dir / "trajectory.csv", trajectory_header(p) + "\n");
        continue;
      }
      write_file(dir / "trajectory.csv", write_trajectory_csv(results[i].trajectory, p));
      write_file(dir / "summary.json", results[i].summary.dump(2) + "\n");
      json metadata;
      metadata["config_hash"] = config_hash(config);
      metadata["seed"] = seed;
      metadata["format_version"] = 1;
      write_file(dir / "metadata.json", metadata.dump(2) + "\n");
      if (!results[i].inference.is_null()) {
        write_file(dir / "inference.json", results[i].inference.dump(2) + "\n");
      }
    }
    for (const auto& failure : failures) {
      if (failure) std::rethrow_exception(failure);
    }
    if (replicates > 1) {
      std::string table = "seed";
      for (int j = 0; j < p; ++j) table += ",theta_" + std::to_string(j);
      table += ",iterations,total_mc_draws,termination_reason\n";
      for (int i = 0; i < replicates; ++i) {
        const auto& summary = results[i].summary;
        table += std::to_string(base_seed + static_cast<std::uint64_t>(i));
        for (const auto& v : summary.at("final_theta")) {
          table += "," + format_double(v.get<double>());
        }
        table += "," + std::to_string(summary.at("iterations").get<long>());
        table += "," + std::to_string(summary.at("total_mc_draws").get<long>());
        table += "," + summary.at("termination_reason").get<std::string>();
        table += "\n";
      }
      write_file(out_dir / "replicates.csv", table);
    }
  });
}

// `compare`: several methods on one model, one row per (method, seed), plus
// per-method mean/SD aggregate rows.
inline void compare_config(const json& config, const CliOptions& opts) {
  if (!config.contains("methods")) {
    throw ConfigError("compare needs a 'methods' list");
  }
  std::vector<json> methods = config.at("methods").get<std::vector<json>>();
  for (const auto& method : methods) {
    if (method.contains("model")) {
      throw ConfigError("compare methods must share the top-level model");
    }
  }
  std::uint64_t base_seed = opts.seed.value_or(config_get<std::uint64_t>(config, "seed", 1));
  int replicates = opts.replicates.value_or(config_get<int>(config, "replicates", 1));
  if (replicates < 1) throw ConfigError("replicates must be >= 1");
  std::filesystem::path out_dir = resolve_out_dir(config, opts);
  std::filesystem::create_directories(out_dir);

  with_model(config_get<json>(config, "model", json::object()), [&](const auto& model) {
    const int p = model.dim();
    Theta oracle = oracle_mle(model);
    struct Row {
      std::string method;
      std::uint64_t seed;
      Vector theta;
      double dist;
      long draws;
      long iterations;
    };
    const int jobs = static_cast<int>(methods.size()) * replicates;
    std::vector<Row> rows(jobs);
    auto sampler_cfg = config_get<json>(config, "sampler", json::object());
    parallel_for(jobs, [&](int i) {
      const json& method = methods[i / replicates];
      std::uint64_t seed = base_seed + static_cast<std::uint64_t>(i % replicates);
      auto sampler = make_sampler_policy<std::decay_t<decltype(model)>>(sampler_cfg);
      Trajectory trajectory = execute_method(model, method, sampler, seed);
      Row& row = rows[i];
      row.method = config_get<std::string>(method, "name", "");
      row.seed = seed;
      row.theta = trajectory.final_theta().values;
      row.dist = (row.theta - oracle.values).template lpNorm<Eigen::Infinity>();
      row.draws = trajectory.total_mc_draws();
      row.iterations = static_cast<long>(trajectory.records.size());
    });

    std::string table = "method,seed";
    for (int j = 0; j < p; ++j) table += ",theta_" + std::to_string(j);
    table += ",dist_to_oracle,total_mc_draws,iterations\n";
    for (const auto& row : rows) {
      table += row.method + "," + std::to_string(row.seed);
      for (int j = 0; j < p; ++j) table += "," + format_double(row.theta[j]);
      table += "," + format_double(row.dist) + "," + std::to_string(row.draws) + "," +
               std::to_string(row.iterations) + "\n";
    }
    write_file(out_dir / "compare.csv", table);

    std::string agg = "method,mean_dist,sd_dist,mean_draws\n";
    for (std::size_t m = 0; m < methods.size(); ++m) {
      std::vector<double> dists, draws;
      for (int i = 0; i < replicates; ++i) {
        const Row& row = rows[m * replicates + i];
        dists.push_back(row.dist);
        draws.push_back(static_cast<double>(row.draws));
      }
      agg += rows[m * replicates].method + "," + format_double(mean(dists)) + "," +
             format_double(sample_sd(dists)) + "," + format_double(mean(draws)) + "\n";
    }
    write_file(out_dir / "compare_aggregate.csv", agg);
  });
}

}  // namespace mcem::harness
