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
// Data-parallel inner loops.
//
// Every kernel writes each result into a pre-assigned slot and any reduction
// happens afterwards in index order, so outputs are bit-identical to the
// serial reference versions in `kernels::serial` for any thread count.
//

#ifndef DERTS_KERNELS_HPP_
#define DERTS_KERNELS_HPP_

#include <span>
#include <vector>

#include "derts/gradest.hpp"
#include "derts/metalearn.hpp"
#include "derts/select.hpp"

namespace derts::kernels {

int max_threads();

Matrix pairwise_distances(std::span<const Vector> points);

// gains[c] for candidates[c]. On the first step (empty selection) the gain is
// -sum_j d(j, c), which orders candidates exactly as N*C - sum_j d(j, c) does
// for any constant C; afterwards sum_j max(0, nearest[j] - d(j, c)).
void facility_gains(const DistanceOracle& dist,
                    std::span<const std::size_t> candidates,
                    std::span<const double> nearest, bool first_step,
                    std::vector<double>& gains);

std::vector<GradientEstimate> estimate_pool(const MetaModel& model,
                                            std::span<const FewShotTask> tasks,
                                            EstimateMode mode,
                                            const InnerLoopConfig& inner);

std::vector<TaskGrad> task_outer_grads(const MetaModel& model,
                                       std::span<const WeightedTask> batch,
                                       const InnerLoopConfig& inner);

Vector task_accuracies(const MetaModel& model, std::span<const FewShotTask> tasks,
                       const InnerLoopConfig& inner);

namespace serial {

Matrix pairwise_distances(std::span<const Vector> points);
void facility_gains(const DistanceOracle& dist,
                    std::span<const std::size_t> candidates,
                    std::span<const double> nearest, bool first_step,
                    std::vector<double>& gains);
std::vector<GradientEstimate> estimate_pool(const MetaModel& model,
                                            std::span<const FewShotTask> tasks,
                                            EstimateMode mode,
                                            const InnerLoopConfig& inner);
std::vector<TaskGrad> task_outer_grads(const MetaModel& model,
                                       std::span<const WeightedTask> batch,
                                       const InnerLoopConfig& inner);
Vector task_accuracies(const MetaModel& model, std::span<const FewShotTask> tasks,
                       const InnerLoopConfig& inner);

}  // namespace serial

}  // namespace derts::kernels

#endif  // DERTS_KERNELS_HPP_
