// Copyright 2026 The Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: gen-tasks, estimate, select, run, report.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "derts/harness.hpp"

namespace fs = std::filesystem;
using namespace derts;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitOther = 1;

std::ofstream open_out(const std::string& path) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  std::ofstream f(path);
  if (!f) throw InputError("cannot write " + path);
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot read " + path);
  return f;
}

ExperimentConfig base_config(const std::string& path,
                             const std::vector<std::string>& sets) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config_file(path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  apply_env_overrides(cfg);
  cfg.validate();
  return cfg;
}

// DERTS_SEED wins over the --seed flag.
std::uint64_t effective_seed(std::uint64_t flag) {
  ExperimentConfig tmp;
  tmp.seeds = {flag};
  apply_env_overrides(tmp);
  return tmp.seeds.front();
}

struct GenArgs {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 1;
  std::size_t pool_index = 0;
  std::string out;
};

int gen_tasks(const GenArgs& a) {
  ExperimentConfig cfg = base_config(a.config, a.sets);
  const std::uint64_t seed = effective_seed(a.seed);
  std::optional<NoiseConfig> noise;
  if (cfg.noise) noise = NoiseConfig{resolve_noise_lambda(cfg), cfg.noise_threshold};
  const ClassSplit classes = make_classes(cfg, seed);
  const TaskPool pool = draw_pool(cfg, classes.train, noise, seed, a.pool_index);
  auto f = open_out(a.out);
  write_pool_csv(pool.tasks, f);
  return 0;
}

struct EstimateArgs {
  std::string pool;
  std::string model;
  std::string model_out;
  std::string config;
  std::vector<std::string> sets;
  std::string algo = "anil";
  std::string mode = "at-meta";
  std::uint64_t seed = 1;
  std::string out;
};

int estimate(const EstimateArgs& a) {
  ExperimentConfig cfg = base_config(a.config, a.sets);
  cfg.algo = parse_algo(a.algo);
  const EstimateMode mode = parse_estimate_mode(a.mode);
  auto in = open_in(a.pool);
  TaskPool pool;
  pool.tasks = read_pool_csv(in);
  if (pool.tasks.empty()) throw InputError("pool file has no tasks");
  cfg.feature_dim = pool.tasks.front().feature_dim();
  cfg.way = pool.tasks.front().way;

  MetaModel model;
  if (!a.model.empty()) {
    model = MetaModel{nn::load_text_file(a.model), cfg.algo};
  } else {
    model = initial_model(cfg, effective_seed(a.seed));
  }
  if (model.net.input_dim() != cfg.feature_dim) {
    throw ShapeError("model input width does not match the pool features");
  }
  if (!a.model_out.empty()) nn::save_text_file(model.net, a.model_out);

  estimate_pool(model, pool, mode, cfg.inner);
  auto f = open_out(a.out);
  write_estimates_csv(pool.estimates, f);
  return 0;
}

struct SelectArgs {
  std::string estimates;
  std::size_t k = 0;
  std::string mode = "stochastic";
  double sg_eps = 0.01;
  bool noise = false;
  double tau = 1.25;
  std::string threshold_base = "pool";
  std::uint64_t seed = 0;
  std::string out;
};

int select(const SelectArgs& a) {
  auto in = open_in(a.estimates);
  const auto est = read_estimates_csv(in);
  SelectionConfig cfg;
  cfg.k_select = a.k;
  cfg.mode = parse_greedy_mode(a.mode);
  cfg.sg_epsilon = a.sg_eps;
  cfg.noise_flag = a.noise;
  cfg.tau = a.tau;
  if (a.threshold_base == "pool") {
    cfg.threshold_base = ThresholdBase::kPool;
  } else if (a.threshold_base == "subset") {
    cfg.threshold_base = ThresholdBase::kSubset;
  } else {
    throw ConfigError("--threshold-base expects pool|subset");
  }
  cfg.seed = effective_seed(a.seed);
  if (cfg.k_select == 0 || cfg.k_select > est.size()) {
    throw ConfigError("--k must lie in [1, " + std::to_string(est.size()) + "]");
  }
  if (!(cfg.sg_epsilon > 0.0 && cfg.sg_epsilon < 1.0)) {
    throw ConfigError("--sg-eps must lie in (0, 1)");
  }
  GreedyStats stats;
  const WeightedSubset subset = select_from_estimates(est, cfg, &stats);
  auto f = open_out(a.out);
  write_subset_csv(subset, est, f);
  std::clog << "selected " << subset.indices.size() << " of " << est.size()
            << " tasks, dropped " << subset.dropped.size() << ", "
            << stats.gain_evaluations << " gain evaluations\n";
  return 0;
}

struct RunArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string out = "results";
};

int run(const RunArgs& a) {
  const ExperimentConfig cfg = base_config(a.config, a.sets);
  const fs::path dir(a.out);
  fs::create_directories(dir / "metrics");
  {
    auto f = open_out((dir / "config.resolved").string());
    write_config(cfg, f);
  }
  const ExperimentResult res =
      cfg.suite == "noise" ? run_noise_suite(cfg) : run_experiment(cfg);
  {
    auto f = open_out((dir / "results.csv").string());
    write_results_csv(res.rows, f);
  }
  {
    auto f = open_out((dir / "timing.csv").string());
    write_timing_csv(res.rows, f);
  }
  {
    auto f = open_out((dir / "pools.csv").string());
    write_pools_csv(res.pools, f);
  }
  std::map<std::pair<std::uint64_t, Sampler>, std::vector<ResultRow>> loops;
  for (const auto& r : res.rows) loops[{r.seed, r.sampler}].push_back(r);
  for (const auto& [key, rows] : loops) {
    auto f = open_out((dir / "metrics" /
                       ("seed" + std::to_string(key.first) + "_" +
                        to_string(key.second) + ".csv"))
                          .string());
    write_metrics_csv(rows, f);
  }
  if (cfg.noise || cfg.suite == "noise") {
    const NoiseAudit audit = noise_audit(res.pools);
    std::clog << "noise rate " << res.noise_lambda << "; filter dropped "
              << audit.dropped_tasks << " tasks over " << audit.pools
              << " pools; mean swaps dropped " << audit.mean_swaps_dropped
              << " vs kept " << audit.mean_swaps_kept << "\n";
  }
  report(res.rows, dir.string());
  std::clog << "wrote " << res.rows.size() << " result rows to " << dir.string()
            << "\n";
  return 0;
}

struct ReportArgs {
  std::string results;
  std::string out = ".";
};

int report_cmd(const ReportArgs& a) {
  auto in = open_in(a.results);
  report(read_results_csv(in), a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weighted task-subset selection for meta-learning"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-tasks", "Write a synthetic task pool CSV");
  g->add_option("--config", gen.config, "Config file");
  g->add_option("--set", gen.sets, "Config override key=value");
  g->add_option("--seed", gen.seed, "Experiment seed");
  g->add_option("--pool-index", gen.pool_index, "Index in the pool stream");
  g->add_option("--out", gen.out, "Output pool CSV")->required();

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "Per-task gradient estimates");
  e->add_option("--pool", est.pool, "Pool CSV")->required();
  e->add_option("--model", est.model, "Model text file (default: fresh init)");
  e->add_option("--save-model", est.model_out, "Write the model used");
  e->add_option("--config", est.config, "Config file for inner-loop settings");
  e->add_option("--set", est.sets, "Config override key=value");
  e->add_option("--algo", est.algo, "anil|protonet");
  e->add_option("--mode", est.mode, "at-meta|after-adapt");
  e->add_option("--seed", est.seed, "Seed for a fresh model");
  e->add_option("--out", est.out, "Output estimates CSV")->required();

  SelectArgs sel;
  auto* s = app.add_subcommand("select", "Weighted subset from estimates");
  s->add_option("--estimates", sel.estimates, "Estimates CSV")->required();
  s->add_option("--k", sel.k, "Subset size")->required();
  s->add_option("--mode", sel.mode, "exact|stochastic");
  s->add_option("--sg-eps", sel.sg_eps, "Stochastic-greedy epsilon");
  s->add_flag("--noise", sel.noise, "Drop high-norm selected tasks");
  s->add_option("--tau", sel.tau, "Noise threshold multiplier");
  s->add_option("--threshold-base", sel.threshold_base, "pool|subset");
  s->add_option("--seed", sel.seed, "Selection seed");
  s->add_option("--out", sel.out, "Output subset CSV")->required();

  RunArgs ra;
  auto* r = app.add_subcommand("run", "Run an experiment from a config file");
  r->add_option("--config", ra.config, "Config file")->required();
  r->add_option("--set", ra.sets, "Config override key=value");
  r->add_option("--out", ra.out, "Output directory");

  ReportArgs rep;
  auto* p = app.add_subcommand("report", "Summaries from a results CSV");
  p->add_option("--results", rep.results, "results.csv")->required();
  p->add_option("--out", rep.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*g) return gen_tasks(gen);
    if (*e) return estimate(est);
    if (*s) return select(sel);
    if (*r) return run(ra);
    if (*p) return report_cmd(rep);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}
