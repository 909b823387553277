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

#include "derts/gradest.hpp"

#include <algorithm>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>

#include "derts/csv.hpp"
#include "derts/kernels.hpp"

namespace derts {

EstimateMode parse_estimate_mode(const std::string& name) {
  if (name == "at-meta") return EstimateMode::kAtMeta;
  if (name == "after-adapt") return EstimateMode::kAfterAdapt;
  throw ConfigError("unknown estimate mode `" + name + "` (at-meta|after-adapt)");
}

std::string to_string(EstimateMode mode) {
  return mode == EstimateMode::kAtMeta ? "at-meta" : "after-adapt";
}

std::string to_string(GradientSpace space) {
  return space == GradientSpace::kExact ? "exact" : "estimate";
}

GradientEstimate estimate_task_gradient(const MetaModel& model,
                                        const FewShotTask& task,
                                        EstimateMode mode,
                                        const InnerLoopConfig& inner,
                                        std::size_t task_index) {
  if (task.query.empty()) throw InputError("task has an empty query set");
  Vector g;
  if (model.has_head()) {
    const MetaModel& at = model;
    MetaModel phi;
    const MetaModel* m = &at;
    if (mode == EstimateMode::kAfterAdapt && !task.support.empty()) {
      phi = adapt(model, task.support, inner);
      m = &phi;
    }
    g.assign(m->net.output_dim(), 0.0);
    for (const auto& e : task.query) {
      auto r = nn::softmax_xent(nn::predict(m->net, e.x), e.y);
      for (std::size_t c = 0; c < g.size(); ++c) g[c] += r.grad_logits[c];
    }
  } else {
    // ProtoNet has no inner loop, so both modes coincide.
    const Matrix scores = proto_loss(model, task).query_scores;
    g.assign(task.way, 0.0);
    for (std::size_t q = 0; q < task.query.size(); ++q) {
      auto r = nn::softmax_xent(scores.row(q), task.query[q].y);
      for (std::size_t c = 0; c < g.size(); ++c) g[c] += r.grad_logits[c];
    }
  }
  return GradientEstimate::make(std::move(g), task_index);
}

nn::ParamGrads exact_task_gradient(const MetaModel& model,
                                   const FewShotTask& task,
                                   const InnerLoopConfig& inner) {
  TaskGrad tg = task_outer_grad(model, task, inner);
  tg.grads.scale(static_cast<double>(task.query.size()));
  return std::move(tg.grads);
}

void estimate_pool(const MetaModel& model, TaskPool& pool, EstimateMode mode,
                   const InnerLoopConfig& inner) {
  pool.estimates = kernels::estimate_pool(model, pool.tasks, mode, inner);
}

std::vector<Vector> estimate_vectors(std::span<const GradientEstimate> est) {
  std::vector<Vector> out;
  out.reserve(est.size());
  for (const auto& e : est) out.push_back(e.vec);
  return out;
}

ApproxErrorReport approx_error(std::span<const Vector> gradients,
                               const WeightedSubset& subset,
                               GradientSpace space) {
  if (subset.indices.empty()) throw InputError("subset is empty");
  if (subset.weights.size() != subset.indices.size()) {
    throw InputError("subset weights are not aligned with indices");
  }
  if (gradients.empty()) throw InputError("no gradients");
  const std::size_t dim = gradients.front().size();
  for (std::size_t i : subset.indices) {
    if (i >= gradients.size()) throw IndexError("subset index out of range");
  }
  ApproxErrorReport r;
  r.space = space;
  Vector diff(dim, 0.0);
  for (const auto& g : gradients) {
    if (g.size() != dim) throw ShapeError("gradient dimensions differ");
    for (std::size_t k = 0; k < dim; ++k) diff[k] += g[k];
  }
  for (std::size_t s = 0; s < subset.indices.size(); ++s) {
    const Vector& g = gradients[subset.indices[s]];
    const double w = static_cast<double>(subset.weights[s]);
    for (std::size_t k = 0; k < dim; ++k) diff[k] -= w * g[k];
  }
  r.exact_error = norm2(diff);
  for (const auto& g : gradients) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i : subset.indices) {
      best = std::min(best, distance(g, gradients[i]));
    }
    r.upper_bound += best;
  }
  return r;
}

ApproxErrorReport approx_error_for_mapping(std::span<const Vector> gradients,
                                           std::span<const std::size_t> mapping,
                                           GradientSpace space) {
  if (mapping.size() != gradients.size()) {
    throw InputError("mapping must cover every pool task");
  }
  if (gradients.empty()) throw InputError("no gradients");
  const std::size_t dim = gradients.front().size();
  ApproxErrorReport r;
  r.space = space;
  Vector diff(dim, 0.0);
  for (std::size_t j = 0; j < gradients.size(); ++j) {
    if (mapping[j] >= gradients.size()) throw IndexError("mapping out of range");
    const Vector& g = gradients[j];
    const Vector& rep = gradients[mapping[j]];
    for (std::size_t k = 0; k < dim; ++k) diff[k] += g[k] - rep[k];
    r.upper_bound += distance(g, rep);
  }
  r.exact_error = norm2(diff);
  return r;
}

void write_estimates_csv(std::span<const GradientEstimate> est,
                         std::ostream& out) {
  const std::size_t dim = est.empty() ? 0 : est.front().vec.size();
  out << "task_id,norm";
  for (std::size_t k = 0; k < dim; ++k) out << ",g" << k;
  out << "\n";
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& e : est) {
    out << e.task_index << ',' << e.norm;
    for (double v : e.vec) out << ',' << v;
    out << "\n";
  }
}

std::vector<GradientEstimate> read_estimates_csv(std::istream& in) {
  csv::Table t = csv::read(in);
  const std::size_t id_col = t.column("task_id");
  std::vector<std::size_t> gcols;
  for (std::size_t k = 0;; ++k) {
    auto c = t.find_column("g" + std::to_string(k));
    if (!c) break;
    gcols.push_back(*c);
  }
  if (gcols.empty()) throw InputError("estimates CSV has no g0.. columns");
  std::vector<GradientEstimate> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    Vector v;
    v.reserve(gcols.size());
    for (std::size_t c : gcols) v.push_back(csv::to_double(row[c]));
    if (!all_finite(v)) throw NumericError("non-finite gradient estimate");
    // The norm column is informational; it is recomputed from the vector.
    out.push_back(GradientEstimate::make(std::move(v), csv::to_size(row[id_col])));
  }
  return out;
}

}  // namespace derts
