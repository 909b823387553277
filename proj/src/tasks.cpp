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

#include "derts/tasks.hpp"

#include <algorithm>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "derts/csv.hpp"

namespace derts {

double FewShotTask::mislabel_fraction() const {
  std::size_t wrong = 0;
  for (const auto& e : support) wrong += e.y != e.true_y;
  for (const auto& e : query) wrong += e.y != e.true_y;
  const std::size_t n = num_examples();
  return n == 0 ? 0.0 : static_cast<double>(wrong) / static_cast<double>(n);
}

GradientEstimate GradientEstimate::make(Vector v, std::size_t index) {
  GradientEstimate e;
  e.norm = norm2(v);
  e.vec = std::move(v);
  e.task_index = index;
  return e;
}

std::size_t WeightedSubset::total_weight() const {
  return std::accumulate(weights.begin(), weights.end(), std::size_t{0});
}

SyntheticDistribution SyntheticDistribution::make(std::size_t num_classes,
                                                  std::size_t feature_dim,
                                                  double within_class_std,
                                                  Rng& rng) {
  if (num_classes == 0 || feature_dim == 0) {
    throw ConfigError("distribution needs at least one class and one feature");
  }
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vector> means(num_classes, Vector(feature_dim));
  for (auto& m : means) {
    for (double& v : m) v = u(rng);
  }
  return SyntheticDistribution(std::move(means), within_class_std);
}

SyntheticDistribution SyntheticDistribution::make_grouped(
    std::size_t num_classes, std::size_t feature_dim, double within_class_std,
    std::size_t num_groups, double spread, Rng& rng) {
  if (num_classes == 0 || feature_dim == 0 || num_groups == 0) {
    throw ConfigError("distribution needs at least one class, feature and group");
  }
  if (!(spread > 0.0)) throw ConfigError("group spread must be positive");
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vector> centers(num_groups, Vector(feature_dim));
  for (auto& c : centers) {
    for (double& v : c) v = u(rng);
  }
  std::vector<Vector> means(num_classes, Vector(feature_dim));
  for (std::size_t c = 0; c < num_classes; ++c) {
    const Vector& center = centers[c % num_groups];
    for (std::size_t k = 0; k < feature_dim; ++k) means[c][k] = center[k] + spread * u(rng);
  }
  return SyntheticDistribution(std::move(means), within_class_std);
}

SyntheticDistribution::SyntheticDistribution(
    std::vector<Vector> class_means, double within_class_std,
    std::optional<std::vector<std::size_t>> allowed)
    : means_(std::move(class_means)),
      std_(within_class_std),
      allowed_(std::move(allowed)) {
  if (means_.empty()) throw ConfigError("distribution has no classes");
  if (!(std_ > 0.0)) throw ConfigError("within-class std must be positive");
  for (std::size_t i = 0; i < means_.size(); ++i) {
    if (means_[i].size() != means_[0].size()) {
      throw ConfigError("class means have inconsistent dimensions");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (means_[i] == means_[j]) {
        throw ConfigError("class means must be pairwise distinct");
      }
    }
  }
  if (allowed_) {
    for (std::size_t c : *allowed_) {
      if (c >= means_.size()) throw ConfigError("allowed class out of range");
    }
  }
}

SyntheticDistribution SyntheticDistribution::restricted(
    std::vector<std::size_t> allowed) const {
  SyntheticDistribution d = *this;
  for (std::size_t c : allowed) {
    if (c >= means_.size()) throw ConfigError("allowed class out of range");
  }
  d.allowed_ = std::move(allowed);
  return d;
}

SyntheticDistribution SyntheticDistribution::with_std(double std) const {
  if (std < 0.0) throw ConfigError("within-class std must be nonnegative");
  SyntheticDistribution d = *this;
  d.std_ = std;
  return d;
}

std::vector<std::size_t> SyntheticDistribution::allowed_classes() const {
  if (allowed_) return *allowed_;
  std::vector<std::size_t> all(means_.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

FewShotTask sample_task(const SyntheticDistribution& dist, std::size_t way,
                        Shots shots, Rng& rng) {
  std::vector<std::size_t> pool = dist.allowed_classes();
  if (way == 0 || way > pool.size()) {
    throw ConfigError("way " + std::to_string(way) + " exceeds the " +
                      std::to_string(pool.size()) + " available classes");
  }
  // Partial Fisher-Yates: the first `way` entries are the drawn classes.
  for (std::size_t i = 0; i < way; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  FewShotTask task;
  task.way = way;
  task.shots = shots;
  task.classes.assign(pool.begin(), pool.begin() + static_cast<long>(way));
  task.support.reserve(way * shots.support);
  task.query.reserve(way * shots.query);

  std::normal_distribution<double> gauss(0.0, 1.0);
  const double std = dist.within_class_std();
  auto draw = [&](std::size_t label) {
    const Vector& mu = dist.mean(task.classes[label]);
    LabeledExample e{Vector(mu.size()), label, label};
    for (std::size_t k = 0; k < mu.size(); ++k) e.x[k] = mu[k] + std * gauss(rng);
    return e;
  };
  for (std::size_t c = 0; c < way; ++c) {
    for (std::size_t k = 0; k < shots.support; ++k) task.support.push_back(draw(c));
    for (std::size_t k = 0; k < shots.query; ++k) task.query.push_back(draw(c));
  }
  return task;
}

FewShotTask inject_noise(const FewShotTask& task, const NoiseConfig& cfg,
                         Rng& rng) {
  if (task.way < 2) throw InputError("label swaps need at least two classes");
  if (cfg.lambda < 0.0 || !std::isfinite(cfg.lambda)) {
    throw ConfigError("noise rate must be finite and nonnegative");
  }
  if (cfg.threshold > task.shots.per_class()) {
    throw ConfigError("noise threshold " + std::to_string(cfg.threshold) +
                      " exceeds the " + std::to_string(task.shots.per_class()) +
                      " examples per class");
  }
  const std::size_t way = task.way;

  // Whole-task example list, bucketed by current label.
  std::vector<LabeledExample> all;
  all.reserve(task.num_examples());
  all.insert(all.end(), task.support.begin(), task.support.end());
  all.insert(all.end(), task.query.begin(), task.query.end());
  std::vector<std::vector<std::size_t>> unswapped(way);
  for (std::size_t i = 0; i < all.size(); ++i) unswapped[all[i].y].push_back(i);

  std::vector<std::size_t> draws(way, 0);
  if (cfg.lambda > 0.0) {
    std::poisson_distribution<std::size_t> poisson(cfg.lambda);
    for (auto& d : draws) d = std::min(poisson(rng), cfg.threshold);
  }

  // Takes a uniformly chosen example from the bucket; each example is swapped
  // at most once.
  auto take = [&](std::size_t cls) {
    auto& bucket = unswapped[cls];
    std::uniform_int_distribution<std::size_t> pick(0, bucket.size() - 1);
    const std::size_t pos = pick(rng);
    const std::size_t idx = bucket[pos];
    bucket[pos] = bucket.back();
    bucket.pop_back();
    return idx;
  };

  std::size_t swaps = 0;
  std::uniform_int_distribution<std::size_t> other(0, way - 2);
  for (std::size_t cls = 0; cls < way; ++cls) {
    for (std::size_t j = 0; j < draws[cls]; ++j) {
      std::size_t partner = other(rng);
      if (partner >= cls) ++partner;
      // A class whose examples are all already swapped cannot take part.
      if (unswapped[cls].empty() || unswapped[partner].empty()) continue;
      const std::size_t a = take(cls);
      const std::size_t b = take(partner);
      std::swap(all[a].y, all[b].y);
      ++swaps;
    }
  }

  // Stratified re-split by (possibly swapped) label; per-label counts are
  // unchanged by swapping so the class-balance invariants hold.
  std::vector<std::vector<std::size_t>> by_label(way);
  for (std::size_t i = 0; i < all.size(); ++i) by_label[all[i].y].push_back(i);
  FewShotTask out;
  out.way = way;
  out.shots = task.shots;
  out.classes = task.classes;
  out.noise_meta = NoiseMeta{swaps};
  for (std::size_t c = 0; c < way; ++c) {
    auto& idx = by_label[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto& dst = k < task.shots.support ? out.support : out.query;
      dst.push_back(all[idx[k]]);
    }
  }
  return out;
}

TaskPool fill_pool(const SyntheticDistribution& dist, std::size_t way,
                   Shots shots, std::size_t pool_size,
                   const std::optional<NoiseConfig>& noise, Rng& rng) {
  if (pool_size == 0) throw ConfigError("pool size must be at least 1");
  TaskPool pool;
  pool.tasks.reserve(pool_size);
  for (std::size_t i = 0; i < pool_size; ++i) {
    FewShotTask t = sample_task(dist, way, shots, rng);
    if (noise) t = inject_noise(t, *noise, rng);
    pool.tasks.push_back(std::move(t));
  }
  return pool;
}

double mean_mislabel_fraction(std::size_t way, Shots shots,
                              const NoiseConfig& cfg, std::size_t num_tasks,
                              Rng& rng) {
  // Featureless template: labels are all the generator looks at.
  FewShotTask tmpl;
  tmpl.way = way;
  tmpl.shots = shots;
  for (std::size_t c = 0; c < way; ++c) {
    for (std::size_t k = 0; k < shots.support; ++k) tmpl.support.push_back({{}, c, c});
    for (std::size_t k = 0; k < shots.query; ++k) tmpl.query.push_back({{}, c, c});
  }
  double total = 0.0;
  for (std::size_t i = 0; i < num_tasks; ++i) {
    total += inject_noise(tmpl, cfg, rng).mislabel_fraction();
  }
  return total / static_cast<double>(num_tasks);
}

double calibrate_noise_lambda(double target_fraction, std::size_t way,
                              Shots shots, std::size_t threshold,
                              std::size_t tasks_per_eval, std::uint64_t seed) {
  if (target_fraction <= 0.0) return 0.0;
  // Common random numbers across evaluations keep the estimate monotone
  // enough for bisection.
  auto frac = [&](double lambda) {
    Rng rng(seed);
    return mean_mislabel_fraction(way, shots, NoiseConfig{lambda, threshold},
                                  tasks_per_eval, rng);
  };
  double lo = 0.0;
  double hi = 1.0;
  while (frac(hi) < target_fraction) {
    hi *= 2.0;
    if (hi > 1e3) {
      throw ConfigError("mislabel fraction " + std::to_string(target_fraction) +
                        " is unreachable with threshold " +
                        std::to_string(threshold));
    }
  }
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    (frac(mid) < target_fraction ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

void write_pool_csv(const std::vector<FewShotTask>& tasks, std::ostream& out) {
  const std::size_t dim = tasks.empty() ? 0 : tasks.front().feature_dim();
  out << "task_id,split,label,true_label";
  for (std::size_t k = 0; k < dim; ++k) out << ",f" << k;
  out << "\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    auto rows = [&](const std::vector<LabeledExample>& set, char split) {
      for (const auto& e : set) {
        out << t << ',' << split << ',' << e.y << ',' << e.true_y;
        for (double v : e.x) out << ',' << v;
        out << "\n";
      }
    };
    rows(tasks[t].support, 's');
    rows(tasks[t].query, 'q');
  }
}

std::vector<FewShotTask> read_pool_csv(std::istream& in) {
  csv::Table table = csv::read(in);
  const std::size_t id_col = table.column("task_id");
  const std::size_t split_col = table.column("split");
  const std::size_t label_col = table.column("label");
  const std::size_t true_col = table.column("true_label");
  std::vector<std::size_t> feature_cols;
  for (std::size_t k = 0;; ++k) {
    auto c = table.find_column("f" + std::to_string(k));
    if (!c) break;
    feature_cols.push_back(*c);
  }

  std::map<std::size_t, FewShotTask> by_id;
  for (const auto& row : table.rows) {
    LabeledExample e;
    e.y = csv::to_size(row[label_col]);
    e.true_y = csv::to_size(row[true_col]);
    for (std::size_t c : feature_cols) e.x.push_back(csv::to_double(row[c]));
    FewShotTask& t = by_id[csv::to_size(row[id_col])];
    if (row[split_col] == "s") {
      t.support.push_back(std::move(e));
    } else if (row[split_col] == "q") {
      t.query.push_back(std::move(e));
    } else {
      throw InputError("split must be `s` or `q`, got `" + row[split_col] + "`");
    }
  }

  std::vector<FewShotTask> tasks;
  for (auto& [id, t] : by_id) {
    std::size_t way = 0;
    std::size_t swapped = 0;
    for (const auto* set : {&t.support, &t.query}) {
      for (const auto& e : *set) {
        way = std::max({way, e.y + 1, e.true_y + 1});
        swapped += e.y != e.true_y;
      }
    }
    t.way = way;
    std::vector<std::size_t> s_count(way, 0), q_count(way, 0);
    for (const auto& e : t.support) ++s_count[e.y];
    for (const auto& e : t.query) ++q_count[e.y];
    t.shots = Shots{s_count.empty() ? 0 : s_count[0],
                    q_count.empty() ? 0 : q_count[0]};
    for (std::size_t c = 0; c < way; ++c) {
      if (s_count[c] != t.shots.support || q_count[c] != t.shots.query) {
        throw InputError("task " + std::to_string(id) + " is not class-balanced");
      }
    }
    t.classes.resize(way);
    std::iota(t.classes.begin(), t.classes.end(), std::size_t{0});
    if (swapped > 0) t.noise_meta = NoiseMeta{swapped / 2};
    tasks.push_back(std::move(t));
  }
  return tasks;
}

}  // namespace derts
