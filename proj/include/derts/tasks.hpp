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
// Synthetic few-shot task distribution and episodic sampling.
//
// Classes are isotropic Gaussian clusters. A task draws `way` distinct classes
// without replacement, relabels them 0..way-1 in draw order and emits a
// class-balanced support and query set. Label noise is injected by symmetric
// pairwise label swaps over the whole task, followed by a stratified re-split.
//

#ifndef DERTS_TASKS_HPP_
#define DERTS_TASKS_HPP_

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "derts/common.hpp"

namespace derts {

struct LabeledExample {
  Vector x;
  std::size_t y = 0;
  // Label before noise injection. Diagnostics only.
  std::size_t true_y = 0;
};

struct Shots {
  std::size_t support = 0;
  std::size_t query = 0;
  std::size_t per_class() const { return support + query; }
};

struct NoiseMeta {
  std::size_t swaps = 0;
};

struct FewShotTask {
  std::vector<LabeledExample> support;
  std::vector<LabeledExample> query;
  std::size_t way = 0;
  Shots shots;
  // Global class id for each task-local label.
  std::vector<std::size_t> classes;
  // Never read by selection or training.
  std::optional<NoiseMeta> noise_meta;

  std::size_t num_examples() const { return support.size() + query.size(); }
  std::size_t feature_dim() const {
    return support.empty() ? 0 : support.front().x.size();
  }
  double mislabel_fraction() const;
};

struct GradientEstimate {
  Vector vec;
  double norm = 0.0;
  std::size_t task_index = 0;

  static GradientEstimate make(Vector v, std::size_t index);
};

// Ordered tasks plus (once estimated) aligned gradient estimates.
struct TaskPool {
  std::vector<FewShotTask> tasks;
  std::vector<GradientEstimate> estimates;

  std::size_t size() const { return tasks.size(); }
  bool estimated() const { return estimates.size() == tasks.size(); }
};

// Selected pool indices in selection order with aligned integer weights, plus
// the indices removed by noise filtering.
struct WeightedSubset {
  std::vector<std::size_t> indices;
  std::vector<std::size_t> weights;
  std::vector<std::size_t> dropped;
  // Weights of the dropped indices, as computed before filtering.
  std::vector<std::size_t> dropped_weights;
  bool filter_fallback = false;

  std::size_t total_weight() const;
  friend bool operator==(const WeightedSubset&, const WeightedSubset&) = default;
};

class SyntheticDistribution {
 public:
  // Class means uniform in [-1, 1]^feature_dim.
  static SyntheticDistribution make(std::size_t num_classes,
                                    std::size_t feature_dim,
                                    double within_class_std, Rng& rng);
  // Class c belongs to group c % num_groups. Group centers are uniform in
  // [-1, 1]^feature_dim and each class mean is its center plus a uniform
  // offset in [-spread, spread]^feature_dim, so classes of one group are
  // close and tasks mixing them are fine-grained.
  static SyntheticDistribution make_grouped(std::size_t num_classes,
                                            std::size_t feature_dim,
                                            double within_class_std,
                                            std::size_t num_groups, double spread,
                                            Rng& rng);

  SyntheticDistribution(std::vector<Vector> class_means, double within_class_std,
                        std::optional<std::vector<std::size_t>> allowed = {});

  std::size_t num_classes() const { return means_.size(); }
  std::size_t feature_dim() const { return means_.front().size(); }
  double within_class_std() const { return std_; }
  const Vector& mean(std::size_t c) const { return means_[c]; }

  // Restricting to a subset of classes (class-budget setting).
  SyntheticDistribution restricted(std::vector<std::size_t> allowed) const;
  // Same means with a different spread; std 0 is allowed here.
  SyntheticDistribution with_std(double std) const;
  std::vector<std::size_t> allowed_classes() const;

 private:
  std::vector<Vector> means_;
  double std_ = 1.0;
  std::optional<std::vector<std::size_t>> allowed_;
};

struct NoiseConfig {
  double lambda = 0.0;
  std::size_t threshold = 0;
};

FewShotTask sample_task(const SyntheticDistribution& dist, std::size_t way,
                        Shots shots, Rng& rng);

FewShotTask inject_noise(const FewShotTask& task, const NoiseConfig& cfg,
                         Rng& rng);

TaskPool fill_pool(const SyntheticDistribution& dist, std::size_t way,
                   Shots shots, std::size_t pool_size,
                   const std::optional<NoiseConfig>& noise, Rng& rng);

// Monte-Carlo bisection for the Poisson rate giving the requested mean
// mislabel fraction under the swap cap. Only labels matter, so the search
// runs on featureless tasks.
double calibrate_noise_lambda(double target_fraction, std::size_t way,
                              Shots shots, std::size_t threshold,
                              std::size_t tasks_per_eval, std::uint64_t seed);

// Mean mislabel fraction over `num_tasks` generated tasks.
double mean_mislabel_fraction(std::size_t way, Shots shots,
                              const NoiseConfig& cfg, std::size_t num_tasks,
                              Rng& rng);

// CSV with columns task_id,split,label,true_label,f0..f{d-1}.
void write_pool_csv(const std::vector<FewShotTask>& tasks, std::ostream& out);
std::vector<FewShotTask> read_pool_csv(std::istream& in);

}  // namespace derts

#endif  // DERTS_TASKS_HPP_
