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

//
// Experiment orchestration.
//
// Per seed: draw the class means, the clean evaluation tasks and the initial
// model; warm up with uniformly sampled tasks; then, from the shared warm-up
// checkpoint, train each sampler on the same stream of task pools. A pool is
// replaced once its (selected) tasks have been consumed in meta-batches.
//

#ifndef DERTS_HARNESS_HPP_
#define DERTS_HARNESS_HPP_

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "derts/gradest.hpp"
#include "derts/metalearn.hpp"
#include "derts/select.hpp"
#include "derts/tasks.hpp"

namespace derts {

enum class Sampler {
  kDerts,           // weighted subset, noise filter when enabled
  kDertsNoWeights,  // same subset, unit weights
  kDertsNoFilter,   // weighted subset, never filtered
  kRandom,          // K uniformly drawn pool tasks, unit weights
  kFullPool,        // every pool task in pool order, unit weights
};

Sampler parse_sampler(const std::string& name);
std::string to_string(Sampler s);

struct ExperimentConfig {
  Algo algo = Algo::kAnil;
  std::size_t way = 5;
  Shots shots{5, 15};

  std::size_t feature_dim = 16;
  std::size_t num_train_classes = 64;
  std::size_t num_test_classes = 16;
  double within_class_std = 1.0;
  // 0 draws every class mean independently; otherwise classes fall into this
  // many groups of nearby means (see SyntheticDistribution::make_grouped).
  std::size_t class_groups = 0;
  double group_spread = 0.25;
  // Fraction of the training classes tasks may draw from.
  double class_budget = 1.0;

  std::vector<std::size_t> hidden{32, 32};
  // Output width of the ProtoNet embedding.
  std::size_t embedding_dim = 16;

  std::size_t pool_size = 256;
  double select_ratio = 0.30;
  // 0 means floor(select_ratio * pool_size).
  std::size_t k_select = 0;
  GreedyMode selection_mode = GreedyMode::kStochastic;
  double sg_epsilon = 0.01;
  EstimateMode estimate_mode = EstimateMode::kAtMeta;

  bool noise = false;
  // Either a target mislabel fraction (rate found by Monte-Carlo calibration)
  // or an explicit Poisson rate.
  std::optional<double> noise_ratio;
  std::optional<double> noise_lambda;
  std::size_t noise_threshold = 5;
  bool noise_filter = true;
  double tau = 1.25;
  ThresholdBase threshold_base = ThresholdBase::kPool;

  InnerLoopConfig inner;
  OuterLoopConfig outer;
  // Divide every weight of a pool's subset by the subset's mean weight and
  // average each batch over its size, instead of normalizing per batch. Keeps
  // the relative emphasis between batches of one subset.
  bool subset_mean_weighting = false;
  // Shuffle a DERTS subset (seeded) before cutting it into meta-batches
  // instead of batching in selection order.
  bool shuffle_subset = false;
  bool warmup_on_noisy = false;

  std::size_t eval_every = 100;
  std::size_t eval_task_count = 300;
  // Exact-gradient diagnostics only for pools up to this size.
  std::size_t exact_diag_max_pool = 64;

  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<Sampler> samplers{Sampler::kDerts, Sampler::kRandom};
  std::string suite = "budget";

  std::size_t effective_k() const;
  void validate() const;
};

// Flat `key = value` text; `#` starts a comment. Unknown keys are errors.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config_file(const std::string& path);
// Applies one `key=value` override.
void set_config_value(ExperimentConfig& cfg, const std::string& key,
                      const std::string& value);
// DERTS_SEED replaces the seed list when set.
void apply_env_overrides(ExperimentConfig& cfg);
void write_config(const ExperimentConfig& cfg, std::ostream& out);

struct ResultRow {
  std::uint64_t seed = 0;
  Sampler sampler = Sampler::kDerts;
  std::size_t iter = 0;
  double train_loss = 0.0;
  double eval_acc = 0.0;
  double eval_ci = 0.0;
  // Approximation error of the most recent pool (NaN when not applicable).
  double eps_exact = 0.0;
  double eps_bound = 0.0;
  std::string eps_space = "none";
  // Timing; excluded from the deterministic results file.
  double select_time_s = 0.0;
  double train_time_s = 0.0;
  double wallclock_s = 0.0;
};

struct PoolLog {
  std::uint64_t seed = 0;
  Sampler sampler = Sampler::kDerts;
  std::size_t pool_index = 0;
  std::size_t start_iter = 0;
  std::size_t selected = 0;
  std::size_t dropped = 0;
  std::size_t gain_evaluations = 0;
  double eps_estimate_exact = 0.0;
  double eps_estimate_bound = 0.0;
  double eps_grad_exact = 0.0;
  double eps_grad_bound = 0.0;
  bool has_grad_eps = false;
  // Ground-truth swap totals from the generator (noise audit).
  std::size_t swaps_dropped = 0;
  std::size_t swaps_kept = 0;
  double select_time_s = 0.0;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
  std::vector<PoolLog> pools;
  // Calibrated Poisson rate when noise is on.
  double noise_lambda = 0.0;
};

struct NoiseAudit {
  std::size_t pools = 0;
  std::size_t dropped_tasks = 0;
  std::size_t kept_tasks = 0;
  double mean_swaps_dropped = 0.0;
  double mean_swaps_kept = 0.0;
};

// Everything a seed's samplers share.
struct SeedSetup {
  std::uint64_t seed = 0;
  SyntheticDistribution train_dist;
  SyntheticDistribution test_dist;
  std::vector<FewShotTask> eval_tasks;
  std::optional<NoiseConfig> noise;
  // Model after warm-up and the checkpoint rows recorded during warm-up.
  MetaModel warm_model;
  std::vector<ResultRow> warmup_rows;
};

struct SamplerRun {
  std::vector<ResultRow> rows;
  std::vector<PoolLog> pools;
  MetaModel final_model;
};

// Stream-specific seed derived from the experiment seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                          std::uint64_t index = 0);

std::vector<std::size_t> model_dims(const ExperimentConfig& cfg);

struct ClassSplit {
  SyntheticDistribution train;
  SyntheticDistribution test;
};
// Training classes (after the class budget) and the disjoint test classes.
ClassSplit make_classes(const ExperimentConfig& cfg, std::uint64_t seed);
MetaModel initial_model(const ExperimentConfig& cfg, std::uint64_t seed);

SeedSetup prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed);
// Pool `index` of the seed's pool stream (identical for every sampler).
TaskPool draw_pool(const ExperimentConfig& cfg,
                   const SyntheticDistribution& train,
                   const std::optional<NoiseConfig>& noise, std::uint64_t seed,
                   std::size_t index);
SamplerRun train_sampler(const ExperimentConfig& cfg, const SeedSetup& setup,
                         Sampler sampler);

// Evaluation checkpoints: multiples of eval_every plus 10%, 30% and 100% of
// the iteration budget.
std::vector<std::size_t> checkpoints(const ExperimentConfig& cfg);

double resolve_noise_lambda(const ExperimentConfig& cfg);

ExperimentResult run_experiment(const ExperimentConfig& cfg);
// DERTS with the filter, DERTS without it and random sampling on the same
// noisy pools.
ExperimentResult run_noise_suite(const ExperimentConfig& cfg);

NoiseAudit noise_audit(const std::vector<PoolLog>& pools);

// Rows at `iter` for `sampler`, one per seed, in seed order.
std::vector<double> accuracies_at(const std::vector<ResultRow>& rows,
                                  Sampler sampler, std::size_t iter);

// Linear-interpolation quantile of unsorted values.
double quantile(std::vector<double> values, double q);
double median(std::vector<double> values);

void write_results_csv(const std::vector<ResultRow>& rows, std::ostream& out);
std::vector<ResultRow> read_results_csv(std::istream& in);
void write_timing_csv(const std::vector<ResultRow>& rows, std::ostream& out);
void write_pools_csv(const std::vector<PoolLog>& pools, std::ostream& out);
// Per-loop metrics: iter,train_loss,eval_acc,eval_ci,wallclock_s.
void write_metrics_csv(const std::vector<ResultRow>& rows, std::ostream& out);

// Writes summary.csv and curves.csv under `out_dir`.
void report(const std::vector<ResultRow>& rows, const std::string& out_dir);
void write_summary_csv(const std::vector<ResultRow>& rows, std::ostream& out);
void write_curves_csv(const std::vector<ResultRow>& rows, std::ostream& out);

}  // namespace derts

#endif  // DERTS_HARNESS_HPP_
