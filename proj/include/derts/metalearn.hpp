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
// Episodic meta-training.
//
// ANIL: the last layer of the network is the classification head and is the
// only part adapted in the inner loop; the outer gradient is taken at the
// adapted parameters (first order), optionally differentiated exactly through
// the head updates.
//
// ProtoNet: the whole network is an embedding; queries are scored by negative
// squared Euclidean distance to per-class support means.
//

#ifndef DERTS_METALEARN_HPP_
#define DERTS_METALEARN_HPP_

#include <span>
#include <string>
#include <vector>

#include "derts/nn.hpp"
#include "derts/tasks.hpp"

namespace derts {

enum class Algo { kAnil, kProtoNet };

Algo parse_algo(const std::string& name);
std::string to_string(Algo algo);

struct MetaModel {
  // For ANIL the final layer is the head and the rest is the backbone.
  nn::Mlp net;
  Algo algo = Algo::kAnil;

  static MetaModel make(Algo algo, std::span<const std::size_t> dims, Rng& rng);

  bool has_head() const { return algo == Algo::kAnil; }
  const nn::Dense& head() const { return net.layers().back(); }
  std::size_t backbone_layers() const {
    return has_head() ? net.num_layers() - 1 : net.num_layers();
  }

  friend bool operator==(const MetaModel&, const MetaModel&) = default;
};

struct InnerLoopConfig {
  double lr = 0.5;
  std::size_t steps = 3;
  bool head_only = true;
  // Differentiate through the head updates instead of stopping at the adapted
  // parameters. Requires head_only; the backbone part stays first order.
  bool through_head = false;
};

struct OuterLoopConfig {
  double lr = 0.1;
  std::size_t meta_batch = 8;
  std::size_t iterations = 1000;
  std::size_t warmup_iters = 50;
  // Divide the weighted gradient sum by the total weight; otherwise by the
  // batch size.
  bool normalize_weights = true;
};

struct TaskGrad {
  nn::ParamGrads grads;
  // Mean query cross-entropy at the parameters the gradient was taken at.
  double query_loss = 0.0;
};

struct WeightedTask {
  const FewShotTask* task = nullptr;
  double weight = 1.0;
};

struct StepOutcome {
  MetaModel model;
  // Unweighted mean of the per-task query losses.
  double mean_query_loss = 0.0;
};

struct ProtoResult {
  double loss = 0.0;
  nn::ParamGrads grads;
  // [num_query x way] negative squared distances.
  Matrix query_scores;
};

struct EvalResult {
  double accuracy = 0.0;
  double ci95 = 0.0;
};

// Mean cross-entropy of the network's logits over the examples.
double mean_xent(const nn::Mlp& net, std::span<const LabeledExample> examples);

MetaModel adapt(const MetaModel& model, std::span<const LabeledExample> support,
                const InnerLoopConfig& cfg);

nn::ParamGrads anil_outer_grad(const MetaModel& model, const FewShotTask& task,
                               const InnerLoopConfig& cfg);
TaskGrad anil_task_grad(const MetaModel& model, const FewShotTask& task,
                        const InnerLoopConfig& cfg);

ProtoResult proto_loss(const MetaModel& model, const FewShotTask& task);

// Mean-query-loss outer gradient for either algorithm.
TaskGrad task_outer_grad(const MetaModel& model, const FewShotTask& task,
                         const InnerLoopConfig& cfg);

StepOutcome meta_train_step(const MetaModel& model,
                            std::span<const WeightedTask> batch,
                            const InnerLoopConfig& inner,
                            const OuterLoopConfig& outer);

// Fraction of query points classified correctly after adaptation (ANIL) or by
// nearest prototype (ProtoNet). Ties go to the lowest class index.
double task_accuracy(const MetaModel& model, const FewShotTask& task,
                     const InnerLoopConfig& cfg);

// Mean accuracy with a normal-approximation 95% half-width over tasks.
EvalResult evaluate(const MetaModel& model, std::span<const FewShotTask> tasks,
                    const InnerLoopConfig& cfg);
EvalResult summarize_accuracies(std::span<const double> per_task);

}  // namespace derts

#endif  // DERTS_METALEARN_HPP_
