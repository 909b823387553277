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

#include "derts/kernels.hpp"

#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace derts::kernels {

namespace {

// Exceptions must not escape an OpenMP region; the first one (by index) is
// rethrown after the loop.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

double gain_of(const DistanceOracle& dist, std::size_t c,
               std::span<const double> nearest, bool first_step) {
  const std::size_t n = dist.size();
  double g = 0.0;
  if (first_step) {
    for (std::size_t j = 0; j < n; ++j) g -= dist(j, c);
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      const double d = nearest[j] - dist(j, c);
      if (d > 0.0) g += d;
    }
  }
  return g;
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

Matrix pairwise_distances(std::span<const Vector> points) {
  const std::size_t n = points.size();
  Matrix d(n, n);
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t ii = 0; ii < count; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < n; ++j) {
      d(i, j) = i == j ? 0.0 : distance(points[i], points[j]);
    }
  }
  return d;
}

void facility_gains(const DistanceOracle& dist,
                    std::span<const std::size_t> candidates,
                    std::span<const double> nearest, bool first_step,
                    std::vector<double>& gains) {
  gains.assign(candidates.size(), 0.0);
  const auto count = static_cast<std::int64_t>(candidates.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < count; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    gains[ci] = gain_of(dist, candidates[ci], nearest, first_step);
  }
}

std::vector<GradientEstimate> estimate_pool(const MetaModel& model,
                                            std::span<const FewShotTask> tasks,
                                            EstimateMode mode,
                                            const InnerLoopConfig& inner) {
  std::vector<GradientEstimate> out(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t i) {
    out[i] = estimate_task_gradient(model, tasks[i], mode, inner, i);
  });
  return out;
}

std::vector<TaskGrad> task_outer_grads(const MetaModel& model,
                                       std::span<const WeightedTask> batch,
                                       const InnerLoopConfig& inner) {
  std::vector<TaskGrad> out(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    out[i] = task_outer_grad(model, *batch[i].task, inner);
  });
  return out;
}

Vector task_accuracies(const MetaModel& model, std::span<const FewShotTask> tasks,
                       const InnerLoopConfig& inner) {
  Vector out(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t i) {
    out[i] = task_accuracy(model, tasks[i], inner);
  });
  return out;
}

namespace serial {

Matrix pairwise_distances(std::span<const Vector> points) {
  const std::size_t n = points.size();
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      d(i, j) = i == j ? 0.0 : distance(points[i], points[j]);
    }
  }
  return d;
}

void facility_gains(const DistanceOracle& dist,
                    std::span<const std::size_t> candidates,
                    std::span<const double> nearest, bool first_step,
                    std::vector<double>& gains) {
  gains.assign(candidates.size(), 0.0);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    gains[c] = gain_of(dist, candidates[c], nearest, first_step);
  }
}

std::vector<GradientEstimate> estimate_pool(const MetaModel& model,
                                            std::span<const FewShotTask> tasks,
                                            EstimateMode mode,
                                            const InnerLoopConfig& inner) {
  std::vector<GradientEstimate> out;
  out.reserve(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    out.push_back(estimate_task_gradient(model, tasks[i], mode, inner, i));
  }
  return out;
}

std::vector<TaskGrad> task_outer_grads(const MetaModel& model,
                                       std::span<const WeightedTask> batch,
                                       const InnerLoopConfig& inner) {
  std::vector<TaskGrad> out;
  out.reserve(batch.size());
  for (const auto& wt : batch) out.push_back(task_outer_grad(model, *wt.task, inner));
  return out;
}

Vector task_accuracies(const MetaModel& model, std::span<const FewShotTask> tasks,
                       const InnerLoopConfig& inner) {
  Vector out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) out.push_back(task_accuracy(model, t, inner));
  return out;
}

}  // namespace serial

}  // namespace derts::kernels
