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
// Per-task gradient estimates.
//
// The estimate of a task is the sum over its query set of the loss gradient
// with respect to the final pre-activations, softmax(scores) - onehot(label).
// Scores are the ANIL logits or the ProtoNet negative distances. With an
// identity output activation this is exactly the head-bias gradient of the
// summed query loss. It costs one forward pass per query point.
//

#ifndef DERTS_GRADEST_HPP_
#define DERTS_GRADEST_HPP_

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "derts/metalearn.hpp"
#include "derts/tasks.hpp"

namespace derts {

enum class EstimateMode {
  kAtMeta,      // scores from the meta parameters
  kAfterAdapt,  // scores from the adapted parameters (ANIL only differs)
};

EstimateMode parse_estimate_mode(const std::string& name);
std::string to_string(EstimateMode mode);

enum class GradientSpace { kExact, kEstimate };

std::string to_string(GradientSpace space);

struct ApproxErrorReport {
  // || sum_M g_j - sum_S gamma_i g_i ||
  double exact_error = 0.0;
  // sum_M min_{i in S} || g_j - g_i ||
  double upper_bound = 0.0;
  GradientSpace space = GradientSpace::kEstimate;
};

GradientEstimate estimate_task_gradient(const MetaModel& model,
                                        const FewShotTask& task,
                                        EstimateMode mode,
                                        const InnerLoopConfig& inner,
                                        std::size_t task_index = 0);

// Full parameter gradient of the summed (not averaged) query loss at the
// adapted parameters. Validation oracle for the estimates.
nn::ParamGrads exact_task_gradient(const MetaModel& model,
                                   const FewShotTask& task,
                                   const InnerLoopConfig& inner);

// Fills pool.estimates for every task.
void estimate_pool(const MetaModel& model, TaskPool& pool, EstimateMode mode,
                   const InnerLoopConfig& inner);

std::vector<Vector> estimate_vectors(std::span<const GradientEstimate> est);

// The bound uses the nearest subset member of each pool task in `gradients`,
// so it only bounds the error when the weights were assigned in that same
// space. For weights chosen elsewhere use approx_error_for_mapping().
ApproxErrorReport approx_error(std::span<const Vector> gradients,
                               const WeightedSubset& subset,
                               GradientSpace space);

// Same quantities for an explicit mapping pool index -> representative index.
// The weights are implied by the mapping.
ApproxErrorReport approx_error_for_mapping(std::span<const Vector> gradients,
                                           std::span<const std::size_t> mapping,
                                           GradientSpace space);

// CSV with columns task_id,norm,g0..g{C-1}.
void write_estimates_csv(std::span<const GradientEstimate> est, std::ostream& out);
std::vector<GradientEstimate> read_estimates_csv(std::istream& in);

}  // namespace derts

#endif  // DERTS_GRADEST_HPP_
