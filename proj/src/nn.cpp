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

#include "derts/nn.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>

namespace derts::nn {

namespace {

void check_congruent(const Mlp& model, const ParamGrads& grads) {
  if (grads.layers.size() != model.num_layers()) {
    throw ShapeError("gradient layer count does not match model");
  }
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const Dense& p = model.layer(l);
    const Dense& g = grads.layers[l];
    if (g.weights.rows() != p.weights.rows() ||
        g.weights.cols() != p.weights.cols() || g.bias.size() != p.bias.size()) {
      throw ShapeError("gradient shape mismatch at layer " + std::to_string(l));
    }
  }
}

}  // namespace

Mlp::Mlp(std::vector<Dense> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ShapeError("mlp needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Dense& d = layers_[l];
    if (d.bias.size() != d.weights.rows()) {
      throw ShapeError("bias size mismatch at layer " + std::to_string(l));
    }
    if (l > 0 && d.in_dim() != layers_[l - 1].out_dim()) {
      throw ShapeError("layer " + std::to_string(l) +
                       " input does not chain with previous output");
    }
  }
}

Mlp Mlp::random(std::span<const std::size_t> dims, Rng& rng) {
  if (dims.size() < 2) throw ShapeError("mlp needs at least one layer");
  std::vector<Dense> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    std::uniform_real_distribution<double> u(-bound, bound);
    Dense d{Matrix(dims[l + 1], dims[l]), Vector(dims[l + 1])};
    for (double& w : d.weights.data()) w = u(rng);
    for (double& b : d.bias) b = u(rng);
    layers.push_back(std::move(d));
  }
  return Mlp(std::move(layers));
}

Mlp Mlp::zeros(std::span<const std::size_t> dims) {
  if (dims.size() < 2) throw ShapeError("mlp needs at least one layer");
  std::vector<Dense> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    layers.push_back(Dense{Matrix(dims[l + 1], dims[l]), Vector(dims[l + 1])});
  }
  return Mlp(std::move(layers));
}

std::size_t Mlp::num_params() const {
  std::size_t n = 0;
  for (const Dense& d : layers_) n += d.weights.size() + d.bias.size();
  return n;
}

ParamGrads ParamGrads::zeros_like(const Mlp& model) {
  ParamGrads g;
  g.layers.reserve(model.num_layers());
  for (const Dense& d : model.layers()) {
    g.layers.push_back(
        Dense{Matrix(d.weights.rows(), d.weights.cols()), Vector(d.bias.size())});
  }
  return g;
}

void ParamGrads::axpy(double scale, const ParamGrads& other) {
  if (other.layers.size() != layers.size()) {
    throw ShapeError("gradient layer count mismatch");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& w = layers[l].weights.data();
    const auto& ow = other.layers[l].weights.data();
    if (w.size() != ow.size() ||
        layers[l].bias.size() != other.layers[l].bias.size()) {
      throw ShapeError("gradient shape mismatch");
    }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += scale * ow[i];
    auto& b = layers[l].bias;
    const auto& ob = other.layers[l].bias;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += scale * ob[i];
  }
}

void ParamGrads::scale(double s) {
  for (Dense& d : layers) {
    for (double& w : d.weights.data()) w *= s;
    for (double& b : d.bias) b *= s;
  }
}

Vector ParamGrads::flatten() const {
  Vector out;
  for (const Dense& d : layers) {
    out.insert(out.end(), d.weights.data().begin(), d.weights.data().end());
    out.insert(out.end(), d.bias.begin(), d.bias.end());
  }
  return out;
}

double ParamGrads::norm() const {
  double s = 0.0;
  for (const Dense& d : layers) {
    s += dot(d.weights.data(), d.weights.data());
    s += dot(d.bias, d.bias);
  }
  return std::sqrt(s);
}

ForwardTrace forward(const Mlp& model, std::span<const double> input) {
  if (input.size() != model.input_dim()) {
    throw ShapeError("input dim " + std::to_string(input.size()) +
                     " does not match model input " +
                     std::to_string(model.input_dim()));
  }
  ForwardTrace t;
  t.input.assign(input.begin(), input.end());
  t.pre.resize(model.num_layers());
  t.post.resize(model.num_layers());
  const std::size_t last = model.num_layers() - 1;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const Dense& d = model.layer(l);
    const Vector& x = t.layer_input(l);
    Vector z(d.out_dim());
    for (std::size_t r = 0; r < d.out_dim(); ++r) {
      z[r] = dot(d.weights.row(r), x) + d.bias[r];
    }
    Vector a = z;
    if (l != last) {
      for (double& v : a) v = v > 0.0 ? v : 0.0;
    }
    t.pre[l] = std::move(z);
    t.post[l] = std::move(a);
  }
  return t;
}

Vector predict(const Mlp& model, std::span<const double> input) {
  return forward(model, input).pre.back();
}

Vector softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

XentResult softmax_xent(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw IndexError("label " + std::to_string(label) + " out of range for " +
                     std::to_string(logits.size()) + " logits");
  }
  if (!all_finite(logits)) throw NumericError("non-finite logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double v : logits) s += std::exp(v - m);
  const double log_z = m + std::log(s);
  XentResult r;
  r.loss = log_z - logits[label];
  r.grad_logits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    r.grad_logits[i] = std::exp(logits[i] - log_z);
  }
  r.grad_logits[label] -= 1.0;
  return r;
}

Vector backward_accumulate(const Mlp& model, const ForwardTrace& trace,
                           std::span<const double> grad_logits, double scale,
                           ParamGrads& out) {
  if (trace.pre.size() != model.num_layers() ||
      grad_logits.size() != model.output_dim()) {
    throw ShapeError("trace or logit gradient does not match model");
  }
  check_congruent(model, out);
  // delta holds dLoss/dz for the current layer.
  Vector delta(grad_logits.begin(), grad_logits.end());
  for (std::size_t l = model.num_layers(); l-- > 0;) {
    const Dense& d = model.layer(l);
    const Vector& x = trace.layer_input(l);
    Dense& g = out.layers[l];
    for (std::size_t r = 0; r < d.out_dim(); ++r) {
      const double dr = scale * delta[r];
      g.bias[r] += dr;
      auto grow = g.weights.row(r);
      for (std::size_t c = 0; c < d.in_dim(); ++c) grow[c] += dr * x[c];
    }
    Vector prev(d.in_dim(), 0.0);
    for (std::size_t r = 0; r < d.out_dim(); ++r) {
      const double dr = delta[r];
      if (dr == 0.0) continue;
      auto wrow = d.weights.row(r);
      for (std::size_t c = 0; c < d.in_dim(); ++c) prev[c] += wrow[c] * dr;
    }
    if (l > 0) {
      const Vector& z = trace.pre[l - 1];
      for (std::size_t c = 0; c < prev.size(); ++c) {
        if (!(z[c] > 0.0)) prev[c] = 0.0;
      }
    }
    delta = std::move(prev);
  }
  for (double& v : delta) v *= scale;
  return delta;
}

ParamGrads backward(const Mlp& model, const ForwardTrace& trace,
                    std::span<const double> grad_logits) {
  ParamGrads g = ParamGrads::zeros_like(model);
  backward_accumulate(model, trace, grad_logits, 1.0, g);
  return g;
}

Mlp apply_grads(const Mlp& model, const ParamGrads& grads, double lr) {
  check_congruent(model, grads);
  Mlp out = model;
  for (std::size_t l = 0; l < out.num_layers(); ++l) {
    auto& w = out.layer(l).weights.data();
    const auto& gw = grads.layers[l].weights.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i];
    auto& b = out.layer(l).bias;
    const auto& gb = grads.layers[l].bias;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr * gb[i];
  }
  return out;
}

void save_text(const Mlp& model, std::ostream& out) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "mlp " << model.num_layers() << "\n";
  for (const Dense& d : model.layers()) {
    out << "layer " << d.out_dim() << " " << d.in_dim() << "\n";
    for (std::size_t r = 0; r < d.out_dim(); ++r) {
      for (std::size_t c = 0; c < d.in_dim(); ++c) {
        out << (c ? " " : "") << d.weights(r, c);
      }
      out << "\n";
    }
    for (std::size_t r = 0; r < d.out_dim(); ++r) {
      out << (r ? " " : "") << d.bias[r];
    }
    out << "\n";
  }
}

Mlp load_text(std::istream& in) {
  std::string tag;
  std::size_t num_layers = 0;
  if (!(in >> tag >> num_layers) || tag != "mlp") {
    throw InputError("model text must start with `mlp <num_layers>`");
  }
  std::vector<Dense> layers;
  for (std::size_t l = 0; l < num_layers; ++l) {
    std::size_t rows = 0, cols = 0;
    if (!(in >> tag >> rows >> cols) || tag != "layer") {
      throw InputError("expected `layer <out> <in>` for layer " +
                       std::to_string(l));
    }
    Dense d{Matrix(rows, cols), Vector(rows)};
    for (double& w : d.weights.data()) {
      if (!(in >> w)) throw InputError("truncated weights");
    }
    for (double& b : d.bias) {
      if (!(in >> b)) throw InputError("truncated biases");
    }
    if (!all_finite(d.weights.data()) || !all_finite(d.bias)) {
      throw NumericError("non-finite parameter in model file");
    }
    layers.push_back(std::move(d));
  }
  return Mlp(std::move(layers));
}

void save_text_file(const Mlp& model, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot open " + path + " for writing");
  save_text(model, f);
}

Mlp load_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open " + path);
  return load_text(f);
}

}  // namespace derts::nn
