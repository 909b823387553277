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

#include "derts/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace derts {

namespace {

enum Stream : std::uint64_t {
  kMeansStream = 1,
  kInitStream = 2,
  kEvalStream = 3,
  kWarmupStream = 4,
  kPoolStream = 5,
  kSelectStream = 6,
  kRandomStream = 7,
  kCalibrationStream = 8,
  kShuffleStream = 9,
};

constexpr std::size_t kCalibrationTasks = 4000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool is_derts(Sampler s) {
  return s == Sampler::kDerts || s == Sampler::kDertsNoWeights ||
         s == Sampler::kDertsNoFilter;
}

// Running state shared by warm-up and sampler training.
struct Tracker {
  const ExperimentConfig& cfg;
  std::vector<std::size_t> cps;
  std::size_t next_cp = 0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  Clock::time_point start = Clock::now();
  double select_s = 0.0;
  double train_s = 0.0;

  Tracker(const ExperimentConfig& c, std::size_t first_iter)
      : cfg(c), cps(checkpoints(c)) {
    while (next_cp < cps.size() && cps[next_cp] <= first_iter) ++next_cp;
  }

  // Records the step loss and, at checkpoints, evaluates into a row.
  void after_step(std::size_t iter, double loss, const MetaModel& model,
                  const std::vector<FewShotTask>& eval_tasks,
                  const std::optional<PoolLog>& latest,
                  std::vector<ResultRow>& rows) {
    loss_sum += loss;
    ++loss_count;
    if (next_cp >= cps.size() || cps[next_cp] != iter) return;
    ++next_cp;
    const EvalResult ev = evaluate(model, eval_tasks, cfg.inner);
    ResultRow row;
    row.iter = iter;
    row.train_loss = loss_sum / static_cast<double>(loss_count);
    row.eval_acc = ev.accuracy;
    row.eval_ci = ev.ci95;
    row.eps_exact = std::numeric_limits<double>::quiet_NaN();
    row.eps_bound = std::numeric_limits<double>::quiet_NaN();
    if (latest && is_derts(latest->sampler)) {
      if (latest->has_grad_eps) {
        row.eps_exact = latest->eps_grad_exact;
        row.eps_bound = latest->eps_grad_bound;
        row.eps_space = to_string(GradientSpace::kExact);
      } else {
        row.eps_exact = latest->eps_estimate_exact;
        row.eps_bound = latest->eps_estimate_bound;
        row.eps_space = to_string(GradientSpace::kEstimate);
      }
    }
    row.select_time_s = select_s;
    row.train_time_s = train_s;
    row.wallclock_s = seconds_since(start);
    rows.push_back(row);
    loss_sum = 0.0;
    loss_count = 0;
  }
};

std::size_t swaps_of(const FewShotTask& t) {
  return t.noise_meta ? t.noise_meta->swaps : 0;
}

std::vector<Vector> exact_flat_gradients(const MetaModel& model,
                                         const TaskPool& pool,
                                         const InnerLoopConfig& inner) {
  std::vector<Vector> out;
  out.reserve(pool.size());
  for (const auto& t : pool.tasks) {
    out.push_back(exact_task_gradient(model, t, inner).flatten());
  }
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                          std::uint64_t index) {
  return splitmix(splitmix(splitmix(seed) ^ stream) ^ index);
}

std::vector<std::size_t> model_dims(const ExperimentConfig& cfg) {
  std::vector<std::size_t> dims{cfg.feature_dim};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(cfg.algo == Algo::kAnil ? cfg.way : cfg.embedding_dim);
  return dims;
}

std::vector<std::size_t> checkpoints(const ExperimentConfig& cfg) {
  const std::size_t t = cfg.outer.iterations;
  std::vector<std::size_t> cps;
  for (std::size_t i = cfg.eval_every; i <= t; i += cfg.eval_every) cps.push_back(i);
  for (double f : {0.1, 0.3}) {
    const auto i = static_cast<std::size_t>(std::llround(f * static_cast<double>(t)));
    if (i > 0) cps.push_back(i);
  }
  cps.push_back(t);
  std::sort(cps.begin(), cps.end());
  cps.erase(std::unique(cps.begin(), cps.end()), cps.end());
  return cps;
}

double resolve_noise_lambda(const ExperimentConfig& cfg) {
  if (cfg.noise_lambda) {
    if (*cfg.noise_lambda < 0.0) throw ConfigError("noise_lambda must be >= 0");
    return *cfg.noise_lambda;
  }
  if (!cfg.noise_ratio) throw ConfigError("noise needs noise_ratio or noise_lambda");
  if (!(*cfg.noise_ratio >= 0.0 && *cfg.noise_ratio < 1.0)) {
    throw ConfigError("noise_ratio must lie in [0, 1)");
  }
  return calibrate_noise_lambda(*cfg.noise_ratio, cfg.way, cfg.shots,
                                cfg.noise_threshold, kCalibrationTasks,
                                derive_seed(0, kCalibrationStream));
}

ClassSplit make_classes(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, kMeansStream));
  const std::size_t total = cfg.num_train_classes + cfg.num_test_classes;
  const SyntheticDistribution all =
      cfg.class_groups == 0
          ? SyntheticDistribution::make(total, cfg.feature_dim, cfg.within_class_std, rng)
          : SyntheticDistribution::make_grouped(total, cfg.feature_dim,
                                                cfg.within_class_std, cfg.class_groups,
                                                cfg.group_spread, rng);
  const auto budget = std::max<std::size_t>(
      cfg.way, static_cast<std::size_t>(std::llround(
                   cfg.class_budget * static_cast<double>(cfg.num_train_classes))));
  std::vector<std::size_t> train_ids(budget);
  std::iota(train_ids.begin(), train_ids.end(), std::size_t{0});
  std::vector<std::size_t> test_ids(cfg.num_test_classes);
  std::iota(test_ids.begin(), test_ids.end(), cfg.num_train_classes);
  return {all.restricted(train_ids), all.restricted(test_ids)};
}

MetaModel initial_model(const ExperimentConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kInitStream));
  const auto dims = model_dims(cfg);
  return MetaModel::make(cfg.algo, dims, rng);
}

SeedSetup prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  ClassSplit classes = make_classes(cfg, seed);
  SeedSetup s{seed,         std::move(classes.train), std::move(classes.test), {},
              std::nullopt, MetaModel{},              {}};

  Rng erng(derive_seed(seed, kEvalStream));
  s.eval_tasks.reserve(cfg.eval_task_count);
  for (std::size_t i = 0; i < cfg.eval_task_count; ++i) {
    s.eval_tasks.push_back(sample_task(s.test_dist, cfg.way, cfg.shots, erng));
  }
  if (cfg.noise) s.noise = NoiseConfig{resolve_noise_lambda(cfg), cfg.noise_threshold};

  MetaModel model = initial_model(cfg, seed);

  Rng wrng(derive_seed(seed, kWarmupStream));
  const std::optional<NoiseConfig> warm_noise =
      cfg.warmup_on_noisy ? s.noise : std::nullopt;
  Tracker tr(cfg, 0);
  for (std::size_t it = 1; it <= cfg.outer.warmup_iters; ++it) {
    const TaskPool batch = fill_pool(s.train_dist, cfg.way, cfg.shots,
                                     cfg.outer.meta_batch, warm_noise, wrng);
    std::vector<WeightedTask> wt;
    for (const auto& t : batch.tasks) wt.push_back({&t, 1.0});
    const auto t0 = Clock::now();
    StepOutcome out = meta_train_step(model, wt, cfg.inner, cfg.outer);
    tr.train_s += seconds_since(t0);
    model = std::move(out.model);
    tr.after_step(it, out.mean_query_loss, model, s.eval_tasks, std::nullopt,
                  s.warmup_rows);
  }
  for (auto& r : s.warmup_rows) r.seed = seed;
  s.warm_model = std::move(model);
  return s;
}

TaskPool draw_pool(const ExperimentConfig& cfg,
                   const SyntheticDistribution& train,
                   const std::optional<NoiseConfig>& noise, std::uint64_t seed,
                   std::size_t index) {
  Rng rng(derive_seed(seed, kPoolStream, index));
  return fill_pool(train, cfg.way, cfg.shots, cfg.pool_size, noise, rng);
}

SamplerRun train_sampler(const ExperimentConfig& cfg, const SeedSetup& setup,
                         Sampler sampler) {
  SamplerRun run{{}, {}, setup.warm_model};
  MetaModel& model = run.final_model;
  const std::size_t total = cfg.outer.iterations;
  const std::size_t k = cfg.effective_k();
  std::size_t iter = cfg.outer.warmup_iters;
  Tracker tr(cfg, iter);
  std::optional<PoolLog> latest;

  for (std::size_t p = 0; iter < total; ++p) {
    TaskPool pool = draw_pool(cfg, setup.train_dist, setup.noise, setup.seed, p);
    PoolLog log;
    log.seed = setup.seed;
    log.sampler = sampler;
    log.pool_index = p;
    log.start_iter = iter;

    std::vector<std::size_t> order;
    std::vector<double> weights;
    const auto t0 = Clock::now();
    if (is_derts(sampler)) {
      estimate_pool(model, pool, cfg.estimate_mode, cfg.inner);
      SelectionConfig sc;
      sc.k_select = k;
      sc.mode = cfg.selection_mode;
      sc.sg_epsilon = cfg.sg_epsilon;
      sc.noise_flag = false;
      sc.seed = derive_seed(setup.seed, kSelectStream, p);
      GreedyStats gs;
      WeightedSubset subset = select_from_estimates(pool.estimates, sc, &gs);
      log.gain_evaluations = gs.gain_evaluations;
      tr.select_s += seconds_since(t0);

      // Diagnostics are taken on the unfiltered subset and kept out of the
      // selection timer.
      const auto est_rep = approx_error(estimate_vectors(pool.estimates), subset,
                                        GradientSpace::kEstimate);
      log.eps_estimate_exact = est_rep.exact_error;
      log.eps_estimate_bound = est_rep.upper_bound;
      if (pool.size() <= cfg.exact_diag_max_pool) {
        // Weights come from the estimate-space assignment; measure the exact
        // gradients under that same assignment.
        const auto grads = exact_flat_gradients(model, pool, cfg.inner);
        const auto mapping =
            assign_to_nearest(estimate_vectors(pool.estimates), subset.indices);
        const auto rep = approx_error_for_mapping(grads, mapping, GradientSpace::kExact);
        log.eps_grad_exact = rep.exact_error;
        log.eps_grad_bound = rep.upper_bound;
        log.has_grad_eps = true;
      }

      const auto t1 = Clock::now();
      if (sampler == Sampler::kDerts && cfg.noise && cfg.noise_filter) {
        subset = filter_noisy(pool.estimates, subset, cfg.tau, cfg.threshold_base);
      }
      tr.select_s += seconds_since(t1);
      for (std::size_t i : subset.dropped) log.swaps_dropped += swaps_of(pool.tasks[i]);
      for (std::size_t i : subset.indices) log.swaps_kept += swaps_of(pool.tasks[i]);
      log.dropped = subset.dropped.size();
      std::vector<std::size_t> perm(subset.indices.size());
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      if (cfg.shuffle_subset) {
        Rng sr(derive_seed(setup.seed, kShuffleStream, p));
        std::shuffle(perm.begin(), perm.end(), sr);
      }
      for (std::size_t s : perm) {
        order.push_back(subset.indices[s]);
        weights.push_back(sampler == Sampler::kDertsNoWeights
                              ? 1.0
                              : static_cast<double>(subset.weights[s]));
      }
    } else {
      order.resize(pool.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      if (sampler == Sampler::kRandom) {
        Rng rr(derive_seed(setup.seed, kRandomStream, p));
        for (std::size_t i = 0; i < k; ++i) {
          std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
          std::swap(order[i], order[pick(rr)]);
        }
        order.resize(k);
      }
      weights.assign(order.size(), 1.0);
      for (std::size_t i : order) log.swaps_kept += swaps_of(pool.tasks[i]);
      tr.select_s += seconds_since(t0);
    }
    if (cfg.subset_mean_weighting) {
      const double mean =
          std::accumulate(weights.begin(), weights.end(), 0.0) /
          static_cast<double>(weights.size());
      for (double& w : weights) w /= mean;
    }
    log.selected = order.size();
    log.select_time_s = seconds_since(t0);
    run.pools.push_back(log);
    latest = log;

    for (std::size_t pos = 0; pos < order.size() && iter < total;
         pos += cfg.outer.meta_batch) {
      const std::size_t end = std::min(order.size(), pos + cfg.outer.meta_batch);
      std::vector<WeightedTask> batch;
      for (std::size_t b = pos; b < end; ++b) {
        batch.push_back({&pool.tasks[order[b]], weights[b]});
      }
      const auto t2 = Clock::now();
      StepOutcome out = meta_train_step(model, batch, cfg.inner, cfg.outer);
      tr.train_s += seconds_since(t2);
      model = std::move(out.model);
      ++iter;
      tr.after_step(iter, out.mean_query_loss, model, setup.eval_tasks, latest,
                    run.rows);
    }
  }
  for (auto& r : run.rows) {
    r.seed = setup.seed;
    r.sampler = sampler;
  }
  return run;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  ExperimentConfig resolved = cfg;
  if (cfg.noise) {
    result.noise_lambda = resolve_noise_lambda(cfg);
    resolved.noise_lambda = result.noise_lambda;
  }
  for (std::uint64_t seed : resolved.seeds) {
    const SeedSetup setup = prepare_seed(resolved, seed);
    for (Sampler sampler : resolved.samplers) {
      SamplerRun run = train_sampler(resolved, setup, sampler);
      for (ResultRow r : setup.warmup_rows) {
        r.sampler = sampler;
        result.rows.push_back(r);
      }
      result.rows.insert(result.rows.end(), run.rows.begin(), run.rows.end());
      result.pools.insert(result.pools.end(), run.pools.begin(), run.pools.end());
    }
  }
  return result;
}

ExperimentResult run_noise_suite(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.noise = true;
  c.noise_filter = true;
  if (!c.noise_ratio && !c.noise_lambda) c.noise_ratio = 0.40;
  // Noisy pools get a longer clean warm-up so the estimate norms are already
  // informative when the first pool is filtered.
  c.outer.warmup_iters *= 2;
  c.samplers = {Sampler::kDerts, Sampler::kDertsNoFilter, Sampler::kRandom};
  return run_experiment(c);
}

NoiseAudit noise_audit(const std::vector<PoolLog>& pools) {
  NoiseAudit a;
  std::size_t sd = 0;
  std::size_t sk = 0;
  for (const auto& p : pools) {
    if (p.sampler != Sampler::kDerts) continue;
    ++a.pools;
    a.dropped_tasks += p.dropped;
    a.kept_tasks += p.selected;
    sd += p.swaps_dropped;
    sk += p.swaps_kept;
  }
  if (a.dropped_tasks > 0) {
    a.mean_swaps_dropped = static_cast<double>(sd) / static_cast<double>(a.dropped_tasks);
  }
  if (a.kept_tasks > 0) {
    a.mean_swaps_kept = static_cast<double>(sk) / static_cast<double>(a.kept_tasks);
  }
  return a;
}

std::vector<double> accuracies_at(const std::vector<ResultRow>& rows,
                                  Sampler sampler, std::size_t iter) {
  std::vector<std::pair<std::uint64_t, double>> hits;
  for (const auto& r : rows) {
    if (r.sampler == sampler && r.iter == iter) hits.emplace_back(r.seed, r.eval_acc);
  }
  std::stable_sort(hits.begin(), hits.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<double> out;
  for (const auto& h : hits) out.push_back(h.second);
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

}  // namespace derts
