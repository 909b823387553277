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

#include "derts/metalearn.hpp"

#include <algorithm>
#include <numeric>

#include "derts/kernels.hpp"

namespace derts {

namespace {

void require_anil(const MetaModel& model) {
  if (!model.has_head()) throw InputError("operation requires an ANIL model");
}

// Input of the head layer for one example.
Vector head_features(const MetaModel& model, std::span<const double> x) {
  if (model.net.num_layers() == 1) {
    if (x.size() != model.net.input_dim()) throw ShapeError("input dim mismatch");
    return Vector(x.begin(), x.end());
  }
  nn::ForwardTrace t = nn::forward(model.net, x);
  return t.post[t.post.size() - 2];
}

Vector head_logits(const nn::Dense& head, std::span<const double> h) {
  Vector z(head.out_dim());
  for (std::size_t r = 0; r < z.size(); ++r) {
    z[r] = dot(head.weights.row(r), h) + head.bias[r];
  }
  return z;
}

// Gradient of the mean support cross-entropy with respect to the head.
nn::Dense head_grad(const nn::Dense& head, const std::vector<Vector>& feats,
                    std::span<const LabeledExample> support) {
  nn::Dense g{Matrix(head.out_dim(), head.in_dim()), Vector(head.out_dim())};
  const double inv_n = 1.0 / static_cast<double>(support.size());
  for (std::size_t i = 0; i < support.size(); ++i) {
    auto r = nn::softmax_xent(head_logits(head, feats[i]), support[i].y);
    for (std::size_t c = 0; c < head.out_dim(); ++c) {
      const double d = r.grad_logits[c] * inv_n;
      g.bias[c] += d;
      auto row = g.weights.row(c);
      for (std::size_t k = 0; k < head.in_dim(); ++k) row[k] += d * feats[i][k];
    }
  }
  return g;
}

// Hessian of the mean support cross-entropy (head parameters only) applied
// to the direction `v`.
nn::Dense head_hvp(const nn::Dense& head, const std::vector<Vector>& feats,
                   const nn::Dense& v) {
  nn::Dense out{Matrix(head.out_dim(), head.in_dim()), Vector(head.out_dim())};
  const double inv_n = 1.0 / static_cast<double>(feats.size());
  for (const Vector& h : feats) {
    const Vector p = nn::softmax(head_logits(head, h));
    const Vector dl = head_logits(v, h);
    const double pdl = dot(p, dl);
    for (std::size_t c = 0; c < head.out_dim(); ++c) {
      const double dp = (p[c] * dl[c] - p[c] * pdl) * inv_n;
      out.bias[c] += dp;
      auto row = out.weights.row(c);
      for (std::size_t k = 0; k < head.in_dim(); ++k) row[k] += dp * h[k];
    }
  }
  return out;
}

void dense_axpy(nn::Dense& y, double a, const nn::Dense& x) {
  auto& yw = y.weights.data();
  const auto& xw = x.weights.data();
  for (std::size_t i = 0; i < yw.size(); ++i) yw[i] += a * xw[i];
  for (std::size_t i = 0; i < y.bias.size(); ++i) y.bias[i] += a * x.bias[i];
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(
      std::max_element(v.begin(), v.end()) - v.begin());
}

struct HeadAdaptation {
  MetaModel adapted;
  std::vector<nn::Dense> heads;  // head before each step
  std::vector<Vector> feats;
};

HeadAdaptation adapt_head(const MetaModel& model,
                          std::span<const LabeledExample> support,
                          const InnerLoopConfig& cfg, bool keep_history) {
  HeadAdaptation a{model, {}, {}};
  if (cfg.steps == 0 || cfg.lr == 0.0) return a;
  a.feats.reserve(support.size());
  for (const auto& e : support) a.feats.push_back(head_features(model, e.x));
  nn::Dense& head = a.adapted.net.mutable_layers().back();
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    if (keep_history) a.heads.push_back(head);
    dense_axpy(head, -cfg.lr, head_grad(head, a.feats, support));
  }
  return a;
}

}  // namespace

Algo parse_algo(const std::string& name) {
  if (name == "anil") return Algo::kAnil;
  if (name == "protonet") return Algo::kProtoNet;
  throw ConfigError("unknown algorithm `" + name + "` (anil|protonet)");
}

std::string to_string(Algo algo) {
  return algo == Algo::kAnil ? "anil" : "protonet";
}

MetaModel MetaModel::make(Algo algo, std::span<const std::size_t> dims,
                          Rng& rng) {
  return MetaModel{nn::Mlp::random(dims, rng), algo};
}

double mean_xent(const nn::Mlp& net, std::span<const LabeledExample> examples) {
  if (examples.empty()) throw InputError("no examples");
  double s = 0.0;
  for (const auto& e : examples) {
    s += nn::softmax_xent(nn::predict(net, e.x), e.y).loss;
  }
  return s / static_cast<double>(examples.size());
}

MetaModel adapt(const MetaModel& model, std::span<const LabeledExample> support,
                const InnerLoopConfig& cfg) {
  require_anil(model);
  if (support.empty()) throw InputError("adaptation needs a nonempty support set");
  if (cfg.lr < 0.0) throw ConfigError("inner learning rate must be >= 0");
  if (cfg.head_only) return adapt_head(model, support, cfg, false).adapted;

  MetaModel out = model;
  if (cfg.steps == 0 || cfg.lr == 0.0) return out;
  const double inv_n = 1.0 / static_cast<double>(support.size());
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    nn::ParamGrads g = nn::ParamGrads::zeros_like(out.net);
    for (const auto& e : support) {
      auto trace = nn::forward(out.net, e.x);
      auto r = nn::softmax_xent(trace.logits(), e.y);
      nn::backward_accumulate(out.net, trace, r.grad_logits, inv_n, g);
    }
    out.net = nn::apply_grads(out.net, g, cfg.lr);
  }
  return out;
}

TaskGrad anil_task_grad(const MetaModel& model, const FewShotTask& task,
                        const InnerLoopConfig& cfg) {
  require_anil(model);
  if (task.query.empty()) throw InputError("task has an empty query set");
  if (cfg.through_head && !cfg.head_only) {
    throw ConfigError("differentiating through the head requires head_only");
  }

  HeadAdaptation ha;
  MetaModel phi;
  if (cfg.head_only) {
    if (task.support.empty() && cfg.steps > 0 && cfg.lr != 0.0) {
      throw InputError("adaptation needs a nonempty support set");
    }
    ha = adapt_head(model, task.support, cfg, cfg.through_head);
    phi = ha.adapted;
  } else {
    phi = adapt(model, task.support, cfg);
  }

  TaskGrad out{nn::ParamGrads::zeros_like(phi.net), 0.0};
  const double inv_n = 1.0 / static_cast<double>(task.query.size());
  for (const auto& e : task.query) {
    auto trace = nn::forward(phi.net, e.x);
    auto r = nn::softmax_xent(trace.logits(), e.y);
    out.query_loss += r.loss;
    nn::backward_accumulate(phi.net, trace, r.grad_logits, inv_n, out.grads);
  }
  out.query_loss *= inv_n;

  if (cfg.through_head) {
    // Chain rule back through each head step: G_k = (I - lr H_k) G_{k+1}.
    nn::Dense& g = out.grads.layers.back();
    for (std::size_t k = ha.heads.size(); k-- > 0;) {
      dense_axpy(g, -cfg.lr, head_hvp(ha.heads[k], ha.feats, g));
    }
  }
  return out;
}

nn::ParamGrads anil_outer_grad(const MetaModel& model, const FewShotTask& task,
                               const InnerLoopConfig& cfg) {
  return anil_task_grad(model, task, cfg).grads;
}

ProtoResult proto_loss(const MetaModel& model, const FewShotTask& task) {
  if (model.has_head()) throw InputError("proto_loss requires a ProtoNet model");
  if (task.query.empty()) throw InputError("task has an empty query set");
  const std::size_t way = task.way;
  const std::size_t dim = model.net.output_dim();

  std::vector<nn::ForwardTrace> s_traces;
  s_traces.reserve(task.support.size());
  std::vector<std::size_t> counts(way, 0);
  Matrix protos(way, dim);
  for (const auto& e : task.support) {
    if (e.y >= way) throw IndexError("support label out of range");
    s_traces.push_back(nn::forward(model.net, e.x));
    ++counts[e.y];
    auto row = protos.row(e.y);
    const Vector& emb = s_traces.back().logits();
    for (std::size_t k = 0; k < dim; ++k) row[k] += emb[k];
  }
  for (std::size_t r = 0; r < way; ++r) {
    if (counts[r] == 0) {
      throw InputError("class " + std::to_string(r) + " missing from support");
    }
    for (double& v : protos.row(r)) v /= static_cast<double>(counts[r]);
  }

  ProtoResult out;
  out.grads = nn::ParamGrads::zeros_like(model.net);
  out.query_scores = Matrix(task.query.size(), way);
  Matrix proto_grad(way, dim);
  const double inv_q = 1.0 / static_cast<double>(task.query.size());
  for (std::size_t q = 0; q < task.query.size(); ++q) {
    const auto& e = task.query[q];
    auto trace = nn::forward(model.net, e.x);
    const Vector& emb = trace.logits();
    auto scores = out.query_scores.row(q);
    for (std::size_t r = 0; r < way; ++r) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double d = emb[k] - protos(r, k);
        d2 += d * d;
      }
      scores[r] = -d2;
    }
    auto x = nn::softmax_xent(scores, e.y);
    out.loss += x.loss * inv_q;
    // score_r = -|e - c_r|^2: d/de = -2 (e - c_r), d/dc_r = 2 (e - c_r).
    Vector emb_grad(dim, 0.0);
    for (std::size_t r = 0; r < way; ++r) {
      const double gs = x.grad_logits[r] * inv_q;
      if (gs == 0.0) continue;
      auto pg = proto_grad.row(r);
      for (std::size_t k = 0; k < dim; ++k) {
        const double diff = emb[k] - protos(r, k);
        emb_grad[k] -= 2.0 * gs * diff;
        pg[k] += 2.0 * gs * diff;
      }
    }
    nn::backward_accumulate(model.net, trace, emb_grad, 1.0, out.grads);
  }
  for (std::size_t i = 0; i < task.support.size(); ++i) {
    const std::size_t r = task.support[i].y;
    Vector g(proto_grad.row(r).begin(), proto_grad.row(r).end());
    nn::backward_accumulate(model.net, s_traces[i], g,
                            1.0 / static_cast<double>(counts[r]), out.grads);
  }
  return out;
}

TaskGrad task_outer_grad(const MetaModel& model, const FewShotTask& task,
                         const InnerLoopConfig& cfg) {
  if (model.algo == Algo::kAnil) return anil_task_grad(model, task, cfg);
  ProtoResult p = proto_loss(model, task);
  return TaskGrad{std::move(p.grads), p.loss};
}

StepOutcome meta_train_step(const MetaModel& model,
                            std::span<const WeightedTask> batch,
                            const InnerLoopConfig& inner,
                            const OuterLoopConfig& outer) {
  if (batch.empty()) throw InputError("meta batch is empty");
  double total = 0.0;
  for (const auto& wt : batch) {
    if (!(wt.weight >= 0.0)) throw InputError("task weights must be nonnegative");
    total += wt.weight;
  }
  if (total == 0.0) throw InputError("total task weight is zero");

  std::vector<TaskGrad> grads = kernels::task_outer_grads(model, batch, inner);
  nn::ParamGrads dir = nn::ParamGrads::zeros_like(model.net);
  double loss = 0.0;
  const double denom =
      outer.normalize_weights ? total : static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    dir.axpy(batch[i].weight / denom, grads[i].grads);
    loss += grads[i].query_loss;
  }
  if (!all_finite(dir.flatten())) throw NumericError("non-finite meta-gradient");
  return StepOutcome{MetaModel{nn::apply_grads(model.net, dir, outer.lr), model.algo},
                     loss / static_cast<double>(batch.size())};
}

double task_accuracy(const MetaModel& model, const FewShotTask& task,
                     const InnerLoopConfig& cfg) {
  if (task.query.empty()) return 0.0;
  std::size_t correct = 0;
  if (model.has_head()) {
    const MetaModel phi =
        task.support.empty() ? model : adapt(model, task.support, cfg);
    for (const auto& e : task.query) {
      correct += argmax(nn::predict(phi.net, e.x)) == e.y;
    }
  } else {
    const Matrix scores = proto_loss(model, task).query_scores;
    for (std::size_t q = 0; q < task.query.size(); ++q) {
      correct += argmax(scores.row(q)) == task.query[q].y;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(task.query.size());
}

EvalResult summarize_accuracies(std::span<const double> per_task) {
  EvalResult r;
  if (per_task.empty()) return r;
  const double n = static_cast<double>(per_task.size());
  r.accuracy = std::accumulate(per_task.begin(), per_task.end(), 0.0) / n;
  if (per_task.size() > 1) {
    double ss = 0.0;
    for (double a : per_task) ss += (a - r.accuracy) * (a - r.accuracy);
    r.ci95 = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return r;
}

EvalResult evaluate(const MetaModel& model, std::span<const FewShotTask> tasks,
                    const InnerLoopConfig& cfg) {
  const Vector acc = kernels::task_accuracies(model, tasks, cfg);
  return summarize_accuracies(acc);
}

}  // namespace derts
