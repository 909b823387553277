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
// Dense multilayer perceptron with explicit forward traces and hand-written
// backpropagation.
//
// Hidden layers use the rectifier (subgradient 0 at 0); the output layer is
// the identity, so the last pre-activation is the logit vector.
//

#ifndef DERTS_NN_HPP_
#define DERTS_NN_HPP_

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "derts/common.hpp"

namespace derts::nn {

// One affine layer, weights are [out x in].
struct Dense {
  Matrix weights;
  Vector bias;

  std::size_t in_dim() const { return weights.cols(); }
  std::size_t out_dim() const { return weights.rows(); }

  friend bool operator==(const Dense&, const Dense&) = default;
};

class Mlp {
 public:
  Mlp() = default;
  // Validates that consecutive layer shapes chain.
  explicit Mlp(std::vector<Dense> layers);

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  // `dims` lists the input width followed by every layer's output width.
  static Mlp random(std::span<const std::size_t> dims, Rng& rng);
  static Mlp zeros(std::span<const std::size_t> dims);

  std::size_t num_layers() const { return layers_.size(); }
  std::size_t input_dim() const { return layers_.front().in_dim(); }
  std::size_t output_dim() const { return layers_.back().out_dim(); }
  std::size_t num_params() const;

  const std::vector<Dense>& layers() const { return layers_; }
  std::vector<Dense>& mutable_layers() { return layers_; }
  const Dense& layer(std::size_t l) const { return layers_[l]; }
  Dense& layer(std::size_t l) { return layers_[l]; }

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  std::vector<Dense> layers_;
};

// Per-layer pre-activations z and post-activations x, plus the input x^(0).
// pre[l] and post[l] belong to layer l (0-based); post.back() == pre.back().
struct ForwardTrace {
  Vector input;
  std::vector<Vector> pre;
  std::vector<Vector> post;

  const Vector& logits() const { return pre.back(); }
  // Input to layer l.
  const Vector& layer_input(std::size_t l) const {
    return l == 0 ? input : post[l - 1];
  }
};

// Shape-congruent with the Mlp it was computed from.
struct ParamGrads {
  std::vector<Dense> layers;

  static ParamGrads zeros_like(const Mlp& model);

  // this += scale * other
  void axpy(double scale, const ParamGrads& other);
  void scale(double s);
  Vector flatten() const;
  double norm() const;

  friend bool operator==(const ParamGrads&, const ParamGrads&) = default;
};

struct XentResult {
  double loss = 0.0;
  Vector grad_logits;
};

ForwardTrace forward(const Mlp& model, std::span<const double> input);

// Logits only, without keeping the trace.
Vector predict(const Mlp& model, std::span<const double> input);

// Max-shifted softmax.
Vector softmax(std::span<const double> logits);

// loss = -log softmax(logits)[label], grad = softmax(logits) - e_label.
XentResult softmax_xent(std::span<const double> logits, std::size_t label);

// Gradients of the scalar loss whose logit gradient is `grad_logits`.
ParamGrads backward(const Mlp& model, const ForwardTrace& trace,
                    std::span<const double> grad_logits);

// Same as backward() but accumulates `scale * grads` into `out` and returns
// `scale` times the gradient with respect to the network input.
Vector backward_accumulate(const Mlp& model, const ForwardTrace& trace,
                           std::span<const double> grad_logits, double scale,
                           ParamGrads& out);

// params - lr * grads
Mlp apply_grads(const Mlp& model, const ParamGrads& grads, double lr);

// Plain-text format: `mlp <L>` then per layer `layer <out> <in>` followed by
// the row-major weights and then the biases.
void save_text(const Mlp& model, std::ostream& out);
Mlp load_text(std::istream& in);
void save_text_file(const Mlp& model, const std::string& path);
Mlp load_text_file(const std::string& path);

}  // namespace derts::nn

#endif  // DERTS_NN_HPP_
