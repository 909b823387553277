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
// Weighted task-subset selection.
//
// Tasks are points in gradient-estimate space. The facility-location
// objective
//
//   F(S) = sum_j max_{i in S} (c - d(j, i)),   F({}) = 0,
//
// with c the largest pairwise distance, is monotone submodular; maximizing it
// under |S| <= K minimizes the summed nearest-representative distance, which
// bounds the error of replacing the pool's gradient sum by the weighted subset
// sum. Each selected task is weighted by the number of pool tasks closest to
// it. Under label noise, selected tasks whose estimate norm reaches
// tau * (mean norm) are dropped.
//
// Ties are broken by the lowest pool index everywhere.
//

#ifndef DERTS_SELECT_HPP_
#define DERTS_SELECT_HPP_

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "derts/gradest.hpp"
#include "derts/metalearn.hpp"
#include "derts/tasks.hpp"

namespace derts {

enum class GreedyMode { kExact, kStochastic };
GreedyMode parse_greedy_mode(const std::string& name);
std::string to_string(GreedyMode mode);

// Which norms the noise threshold averages over.
enum class ThresholdBase { kPool, kSubset };

struct SelectionConfig {
  std::size_t k_select = 1;
  GreedyMode mode = GreedyMode::kStochastic;
  double sg_epsilon = 0.01;
  bool noise_flag = false;
  double tau = 1.25;
  ThresholdBase threshold_base = ThresholdBase::kPool;
  std::uint64_t seed = 0;
};

// Pairwise Euclidean distances between points, either materialized or
// computed on demand. Both paths produce bit-identical values.
class DistanceOracle {
 public:
  DistanceOracle(std::span<const Vector> points, bool materialize);
  // Explicit matrix; must be symmetric, nonnegative with zero diagonal.
  explicit DistanceOracle(Matrix distances);

  std::size_t size() const { return n_; }
  bool materialized() const { return matrix_.has_value(); }
  double operator()(std::size_t i, std::size_t j) const {
    return matrix_ ? (*matrix_)(i, j) : distance(points_[i], points_[j]);
  }
  // Largest pairwise distance (O(N^2) when not materialized).
  double max_distance() const;

 private:
  std::span<const Vector> points_;
  std::optional<Matrix> matrix_;
  std::size_t n_ = 0;
};

// F(S) with c = `constant` (defaults to the largest pairwise distance).
double facility_value(const DistanceOracle& dist,
                      std::span<const std::size_t> subset,
                      std::optional<double> constant = std::nullopt);
double facility_value(const Matrix& distances,
                      std::span<const std::size_t> subset);

// Number of candidates drawn per stochastic-greedy step,
// ceil((N / K) * ln(1 / epsilon)).
std::size_t stochastic_sample_size(std::size_t n, std::size_t k, double epsilon);

struct GreedyStats {
  std::size_t gain_evaluations = 0;
};

// Indices in selection order.
std::vector<std::size_t> greedy_select(const DistanceOracle& dist, std::size_t k,
                                       GreedyMode mode, double sg_epsilon,
                                       Rng& rng, GreedyStats* stats = nullptr);
std::vector<std::size_t> greedy_select(std::span<const Vector> points,
                                       std::size_t k, GreedyMode mode,
                                       double sg_epsilon, Rng& rng,
                                       GreedyStats* stats = nullptr);

// Pool index -> representative pool index. Selected tasks map to themselves;
// others to the nearest selected task.
std::vector<std::size_t> assign_to_nearest(std::span<const Vector> points,
                                           std::span<const std::size_t> selected);

// Weights aligned with `selected`; they sum to the pool size.
std::vector<std::size_t> compute_weights(std::span<const Vector> points,
                                         std::span<const std::size_t> selected);

WeightedSubset filter_noisy(std::span<const GradientEstimate> estimates,
                            const WeightedSubset& subset, double tau,
                            ThresholdBase base = ThresholdBase::kPool);

struct RoundStats {
  GreedyStats greedy;
  double estimate_seconds = 0.0;
  double select_seconds = 0.0;
};

// Estimate every pool task, greedily select, weight and (optionally) filter.
WeightedSubset derts_round(const MetaModel& model, TaskPool& pool,
                           const SelectionConfig& cfg,
                           const InnerLoopConfig& inner, EstimateMode mode,
                           RoundStats* stats = nullptr);

// Selection from already-computed estimates (the `select` CLI path).
WeightedSubset select_from_estimates(std::span<const GradientEstimate> estimates,
                                     const SelectionConfig& cfg,
                                     GreedyStats* stats = nullptr);

// CSV with columns task_id,weight,dropped; kept rows first in selection order.
void write_subset_csv(const WeightedSubset& subset,
                      std::span<const GradientEstimate> estimates,
                      std::ostream& out);

}  // namespace derts

#endif  // DERTS_SELECT_HPP_
