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

#include "derts/select.hpp"

#include <algorithm>
#include <chrono>
#include <iostream>
#include <limits>
#include <numeric>
#include <ostream>

#include "derts/kernels.hpp"

namespace derts {

namespace {

// Exact-mode pools up to this size get a materialized distance matrix.
constexpr std::size_t kMaterializeLimit = 2048;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

void check_indices(std::span<const std::size_t> idx, std::size_t n) {
  std::vector<bool> seen(n, false);
  for (std::size_t i : idx) {
    if (i >= n) throw IndexError("index " + std::to_string(i) + " out of range");
    if (seen[i]) throw InputError("duplicate index " + std::to_string(i));
    seen[i] = true;
  }
}

}  // namespace

GreedyMode parse_greedy_mode(const std::string& name) {
  if (name == "exact" || name == "exact-greedy") return GreedyMode::kExact;
  if (name == "stochastic" || name == "stochastic-greedy") {
    return GreedyMode::kStochastic;
  }
  throw ConfigError("unknown selection mode `" + name + "` (exact|stochastic)");
}

std::string to_string(GreedyMode mode) {
  return mode == GreedyMode::kExact ? "exact" : "stochastic";
}

DistanceOracle::DistanceOracle(std::span<const Vector> points, bool materialize)
    : points_(points), n_(points.size()) {
  for (const auto& p : points) {
    if (p.size() != points.front().size()) {
      throw ShapeError("points have inconsistent dimensions");
    }
  }
  if (materialize) matrix_ = kernels::pairwise_distances(points);
}

DistanceOracle::DistanceOracle(Matrix distances) : n_(distances.rows()) {
  if (distances.rows() != distances.cols()) {
    throw InputError("distance matrix must be square");
  }
  for (std::size_t i = 0; i < n_; ++i) {
    if (distances(i, i) != 0.0) throw InputError("distance diagonal must be 0");
    for (std::size_t j = 0; j < n_; ++j) {
      const double d = distances(i, j);
      if (!(d >= 0.0) || !std::isfinite(d)) {
        throw InputError("distances must be finite and nonnegative");
      }
      if (d != distances(j, i)) throw InputError("distance matrix is asymmetric");
    }
  }
  matrix_ = std::move(distances);
}

double DistanceOracle::max_distance() const {
  double m = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = i + 1; j < n_; ++j) m = std::max(m, (*this)(i, j));
  }
  return m;
}

double facility_value(const DistanceOracle& dist,
                      std::span<const std::size_t> subset,
                      std::optional<double> constant) {
  check_indices(subset, dist.size());
  if (subset.empty()) return 0.0;
  const double c = constant.value_or(dist.max_distance());
  double f = 0.0;
  for (std::size_t j = 0; j < dist.size(); ++j) {
    double best = 0.0;
    for (std::size_t i : subset) best = std::max(best, c - dist(j, i));
    f += best;
  }
  return f;
}

double facility_value(const Matrix& distances,
                      std::span<const std::size_t> subset) {
  return facility_value(DistanceOracle(distances), subset);
}

std::size_t stochastic_sample_size(std::size_t n, std::size_t k, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw ConfigError("stochastic-greedy epsilon must lie in (0, 1)");
  }
  if (k == 0) throw ConfigError("k must be at least 1");
  const double s = std::ceil(static_cast<double>(n) / static_cast<double>(k) *
                             std::log(1.0 / epsilon));
  return std::max<std::size_t>(1, static_cast<std::size_t>(s));
}

std::vector<std::size_t> greedy_select(const DistanceOracle& dist, std::size_t k,
                                       GreedyMode mode, double sg_epsilon,
                                       Rng& rng, GreedyStats* stats) {
  const std::size_t n = dist.size();
  if (k == 0 || k > n) {
    throw ConfigError("k=" + std::to_string(k) + " must lie in [1, " +
                      std::to_string(n) + "]");
  }
  const std::size_t sample = mode == GreedyMode::kStochastic
                                 ? stochastic_sample_size(n, k, sg_epsilon)
                                 : n;

  // Current distance from every pool task to its nearest selected task.
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> remaining(n);
  std::iota(remaining.begin(), remaining.end(), std::size_t{0});
  std::vector<std::size_t> selected;
  selected.reserve(k);
  std::vector<double> gains;

  while (selected.size() < k) {
    const std::size_t r = remaining.size();
    std::span<const std::size_t> cand(remaining);
    if (sample < r) {
      for (std::size_t i = 0; i < sample; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, r - 1);
        std::swap(remaining[i], remaining[pick(rng)]);
      }
      cand = cand.first(sample);
    }
    kernels::facility_gains(dist, cand, nearest, selected.empty(), gains);
    if (stats) stats->gain_evaluations += cand.size();

    std::size_t best = cand[0];
    double best_gain = gains[0];
    for (std::size_t c = 1; c < cand.size(); ++c) {
      if (gains[c] > best_gain || (gains[c] == best_gain && cand[c] < best)) {
        best = cand[c];
        best_gain = gains[c];
      }
    }
    selected.push_back(best);
    auto it = std::find(remaining.begin(), remaining.end(), best);
    *it = remaining.back();
    remaining.pop_back();
    for (std::size_t j = 0; j < n; ++j) {
      nearest[j] = std::min(nearest[j], dist(j, best));
    }
  }
  return selected;
}

std::vector<std::size_t> greedy_select(std::span<const Vector> points,
                                       std::size_t k, GreedyMode mode,
                                       double sg_epsilon, Rng& rng,
                                       GreedyStats* stats) {
  const bool materialize =
      mode == GreedyMode::kExact && points.size() <= kMaterializeLimit;
  return greedy_select(DistanceOracle(points, materialize), k, mode, sg_epsilon,
                       rng, stats);
}

std::vector<std::size_t> assign_to_nearest(std::span<const Vector> points,
                                           std::span<const std::size_t> selected) {
  if (selected.empty()) throw InputError("selection is empty");
  check_indices(selected, points.size());
  std::vector<std::size_t> mapping(points.size());
  std::vector<bool> is_selected(points.size(), false);
  for (std::size_t i : selected) is_selected[i] = true;
  for (std::size_t j = 0; j < points.size(); ++j) {
    if (is_selected[j]) {
      mapping[j] = j;
      continue;
    }
    std::size_t best = selected[0];
    double best_d = distance(points[j], points[best]);
    for (std::size_t s = 1; s < selected.size(); ++s) {
      const std::size_t i = selected[s];
      const double d = distance(points[j], points[i]);
      if (d < best_d || (d == best_d && i < best)) {
        best = i;
        best_d = d;
      }
    }
    mapping[j] = best;
  }
  return mapping;
}

std::vector<std::size_t> compute_weights(std::span<const Vector> points,
                                         std::span<const std::size_t> selected) {
  const std::vector<std::size_t> mapping = assign_to_nearest(points, selected);
  std::vector<std::size_t> slot(points.size(), 0);
  for (std::size_t s = 0; s < selected.size(); ++s) slot[selected[s]] = s;
  std::vector<std::size_t> weights(selected.size(), 0);
  for (std::size_t j = 0; j < points.size(); ++j) ++weights[slot[mapping[j]]];
  return weights;
}

WeightedSubset filter_noisy(std::span<const GradientEstimate> estimates,
                            const WeightedSubset& subset, double tau,
                            ThresholdBase base) {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (subset.indices.empty()) return subset;
  if (subset.weights.size() != subset.indices.size()) {
    throw InputError("subset is not weighted");
  }
  for (std::size_t i : subset.indices) {
    if (i >= estimates.size()) throw IndexError("subset index outside the pool");
  }
  double mean = 0.0;
  if (base == ThresholdBase::kPool) {
    for (const auto& e : estimates) mean += e.norm;
    mean /= static_cast<double>(estimates.size());
  } else {
    for (std::size_t i : subset.indices) mean += estimates[i].norm;
    mean /= static_cast<double>(subset.indices.size());
  }
  const double h = tau * mean;

  WeightedSubset out;
  out.dropped = subset.dropped;
  out.dropped_weights = subset.dropped_weights;
  std::size_t lowest = 0;
  for (std::size_t s = 0; s < subset.indices.size(); ++s) {
    const std::size_t i = subset.indices[s];
    const double norm = estimates[i].norm;
    const std::size_t li = subset.indices[lowest];
    if (norm < estimates[li].norm || (norm == estimates[li].norm && i < li)) {
      lowest = s;
    }
    if (norm >= h) {
      out.dropped.push_back(i);
      out.dropped_weights.push_back(subset.weights[s]);
    } else {
      out.indices.push_back(i);
      out.weights.push_back(subset.weights[s]);
    }
  }
  if (out.indices.empty()) {
    const std::size_t keep = subset.indices[lowest];
    std::clog << "warning: noise threshold " << h
              << " drops every selected task; keeping task " << keep << "\n";
    auto it = std::find(out.dropped.begin(), out.dropped.end(), keep);
    const auto pos = it - out.dropped.begin();
    out.indices.push_back(keep);
    out.weights.push_back(out.dropped_weights[static_cast<std::size_t>(pos)]);
    out.dropped.erase(it);
    out.dropped_weights.erase(out.dropped_weights.begin() + pos);
    out.filter_fallback = true;
  }
  return out;
}

WeightedSubset select_from_estimates(std::span<const GradientEstimate> estimates,
                                     const SelectionConfig& cfg,
                                     GreedyStats* stats) {
  if (estimates.empty()) throw InputError("no estimates to select from");
  const std::vector<Vector> points = estimate_vectors(estimates);
  Rng rng(cfg.seed);
  WeightedSubset subset;
  subset.indices =
      greedy_select(points, cfg.k_select, cfg.mode, cfg.sg_epsilon, rng, stats);
  subset.weights = compute_weights(points, subset.indices);
  if (cfg.noise_flag) {
    subset = filter_noisy(estimates, subset, cfg.tau, cfg.threshold_base);
  }
  return subset;
}

WeightedSubset derts_round(const MetaModel& model, TaskPool& pool,
                           const SelectionConfig& cfg,
                           const InnerLoopConfig& inner, EstimateMode mode,
                           RoundStats* stats) {
  auto t0 = std::chrono::steady_clock::now();
  estimate_pool(model, pool, mode, inner);
  const double est_s = seconds_since(t0);
  t0 = std::chrono::steady_clock::now();
  GreedyStats gs;
  WeightedSubset subset = select_from_estimates(pool.estimates, cfg, &gs);
  if (stats) {
    stats->greedy = gs;
    stats->estimate_seconds = est_s;
    stats->select_seconds = seconds_since(t0);
  }
  return subset;
}

void write_subset_csv(const WeightedSubset& subset,
                      std::span<const GradientEstimate> estimates,
                      std::ostream& out) {
  auto id = [&](std::size_t i) {
    return i < estimates.size() ? estimates[i].task_index : i;
  };
  out << "task_id,weight,dropped\n";
  for (std::size_t s = 0; s < subset.indices.size(); ++s) {
    out << id(subset.indices[s]) << ',' << subset.weights[s] << ",0\n";
  }
  for (std::size_t s = 0; s < subset.dropped.size(); ++s) {
    const std::size_t w =
        s < subset.dropped_weights.size() ? subset.dropped_weights[s] : 0;
    out << id(subset.dropped[s]) << ',' << w << ",1\n";
  }
}

}  // namespace derts
