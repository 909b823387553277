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

#include <doctest.h>

#include <sstream>

#include "derts/nn.hpp"
#include "test_support.hpp"

using namespace derts;
using derts::testing::finite_difference;
using derts::testing::naive_forward;
using derts::testing::naive_xent;
using derts::testing::rel_error;

namespace {

nn::Mlp two_by_two() {
  // y = W2 relu(W1 x + b1) + b2
  nn::Dense l1{Matrix(2, 2, {1.0, -1.0, 0.5, 2.0}), {0.0, -3.0}};
  nn::Dense l2{Matrix(2, 2, {1.0, 1.0, -1.0, 0.5}), {0.25, 0.0}};
  return nn::Mlp({l1, l2});
}

}  // namespace

TEST_CASE("forward on a hand-computed 2x2 network") {
  const nn::Mlp m = two_by_two();
  // x = (1, 2): z1 = (-1, 1.5) -> relu (0, 1.5); y = (1.5 + 0.25, 0.75).
  auto t = nn::forward(m, Vector{1.0, 2.0});
  CHECK(t.pre[0] == Vector{-1.0, 1.5});
  CHECK(t.post[0] == Vector{0.0, 1.5});
  CHECK(t.logits() == Vector{1.75, 0.75});
  // x = (3, 1): z1 = (2, 0.5) -> (2, 0.5); y = (2.5 + 0.25, -2 + 0.25).
  t = nn::forward(m, Vector{3.0, 1.0});
  CHECK(t.post[0] == Vector{2.0, 0.5});
  CHECK(t.logits()[0] == doctest::Approx(2.75));
  CHECK(t.logits()[1] == doctest::Approx(-1.75));
  CHECK(nn::predict(m, Vector{3.0, 1.0}) == t.logits());
}

TEST_CASE("constructor rejects layers that do not chain") {
  nn::Dense a{Matrix(3, 2), Vector(3)};
  nn::Dense b{Matrix(2, 4), Vector(2)};
  CHECK_THROWS_AS(nn::Mlp({a, b}), ShapeError);
  nn::Dense c{Matrix(2, 2), Vector(3)};
  CHECK_THROWS_AS(nn::Mlp({c}), ShapeError);
  CHECK_THROWS_AS(nn::forward(two_by_two(), Vector{1.0}), ShapeError);
}

TEST_CASE("random init stays inside the fan-in bound") {
  Rng rng(3);
  const std::vector<std::size_t> dims{9, 4, 3};
  const nn::Mlp m = nn::Mlp::random(dims, rng);
  CHECK(m.num_params() == 9 * 4 + 4 + 4 * 3 + 3);
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    for (double w : m.layer(l).weights.data()) CHECK(std::abs(w) <= bound);
    for (double b : m.layer(l).bias) CHECK(std::abs(b) <= bound);
  }
  Rng again(3);
  CHECK(nn::Mlp::random(dims, again) == m);
}

TEST_CASE("softmax cross-entropy") {
  auto r = nn::softmax_xent(Vector{0.0, 0.0}, 0);
  CHECK(r.loss == doctest::Approx(std::log(2.0)));
  CHECK(r.grad_logits[0] == doctest::Approx(-0.5));
  CHECK(r.grad_logits[1] == doctest::Approx(0.5));

  r = nn::softmax_xent(Vector{60.0, -60.0, -60.0}, 0);
  CHECK(r.loss < 1e-20);
  CHECK(std::abs(r.grad_logits[1]) < 1e-20);

  // Large logits must not overflow.
  r = nn::softmax_xent(Vector{1000.0, 999.0}, 1);
  CHECK(r.loss == doctest::Approx(std::log1p(std::exp(1.0))));

  CHECK_THROWS_AS(nn::softmax_xent(Vector{0.0, 1.0}, 2), IndexError);
  CHECK_THROWS_AS(nn::softmax_xent(Vector{0.0, NAN}, 0), NumericError);
  CHECK_THROWS_AS(nn::softmax_xent(Vector{0.0, INFINITY}, 0), NumericError);
}

TEST_CASE("softmax cross-entropy gradient: finite differences and zero sum") {
  Rng rng(11);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vector z(5);
    for (double& v : z) v = g(rng);
    const std::size_t y = static_cast<std::size_t>(trial) % 5;
    const auto r = nn::softmax_xent(z, y);
    CHECK(r.loss == doctest::Approx(naive_xent(z, y)).epsilon(1e-12));
    double sum = 0.0;
    for (double v : r.grad_logits) sum += v;
    CHECK(std::abs(sum) < 1e-14);
    Vector fd(5);
    for (std::size_t k = 0; k < 5; ++k) {
      Vector up = z;
      Vector dn = z;
      up[k] += 1e-5;
      dn[k] -= 1e-5;
      fd[k] = (naive_xent(up, y) - naive_xent(dn, y)) / 2e-5;
    }
    CHECK(rel_error(fd, r.grad_logits) <= 1e-4);
  }
}

TEST_CASE("backward matches finite differences on random small models") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<std::size_t> dims{4, 6, 5, 3};
    const nn::Mlp m = nn::Mlp::random(dims, rng);
    Vector x(4);
    std::normal_distribution<double> g(0.0, 1.0);
    for (double& v : x) v = g(rng);
    const std::size_t y = static_cast<std::size_t>(trial) % 3;
    auto loss = [&](const nn::Mlp& mm) { return naive_xent(naive_forward(mm, x), y); };
    const auto t = nn::forward(m, x);
    const auto r = nn::softmax_xent(t.logits(), y);
    const nn::ParamGrads pg = nn::backward(m, t, r.grad_logits);
    CHECK(rel_error(finite_difference(m, loss), pg.flatten()) <= 1e-4);
    // The final bias gradient is the logit gradient itself.
    CHECK(pg.layers.back().bias == r.grad_logits);
  }
}

TEST_CASE("backward with zero upstream gradient is zero") {
  Rng rng(2);
  const std::vector<std::size_t> dims{3, 4, 2};
  const nn::Mlp m = nn::Mlp::random(dims, rng);
  const auto t = nn::forward(m, Vector{0.3, -0.2, 1.0});
  const auto pg = nn::backward(m, t, Vector{0.0, 0.0});
  for (double v : pg.flatten()) CHECK(v == 0.0);
  CHECK_THROWS_AS(nn::backward(m, t, Vector{0.0}), ShapeError);
}

TEST_CASE("backward_accumulate returns the input gradient") {
  Rng rng(9);
  const std::vector<std::size_t> dims{3, 5, 2};
  const nn::Mlp m = nn::Mlp::random(dims, rng);
  const Vector x{0.4, -0.7, 0.2};
  const auto t = nn::forward(m, x);
  const auto r = nn::softmax_xent(t.logits(), 1);
  auto acc = nn::ParamGrads::zeros_like(m);
  const Vector gx = nn::backward_accumulate(m, t, r.grad_logits, 2.0, acc);
  // Twice the input gradient, matching the scale.
  Vector fd(3);
  for (std::size_t k = 0; k < 3; ++k) {
    Vector up = x;
    Vector dn = x;
    up[k] += 1e-5;
    dn[k] -= 1e-5;
    fd[k] = (naive_xent(naive_forward(m, up), 1) - naive_xent(naive_forward(m, dn), 1)) / 1e-5;
  }
  CHECK(rel_error(fd, gx) <= 1e-4);
  auto once = nn::backward(m, t, r.grad_logits);
  once.scale(2.0);
  CHECK(rel_error(once.flatten(), acc.flatten()) < 1e-15);
}

TEST_CASE("apply_grads") {
  Rng rng(4);
  const std::vector<std::size_t> dims{3, 4, 2};
  const nn::Mlp m = nn::Mlp::random(dims, rng);
  auto g = nn::ParamGrads::zeros_like(m);
  g.layers = m.layers();
  CHECK(nn::apply_grads(m, g, 0.0) == m);
  for (double v : nn::ParamGrads{nn::apply_grads(m, g, 1.0).layers()}.flatten()) {
    CHECK(v == 0.0);
  }
  const nn::Mlp half = nn::apply_grads(nn::apply_grads(m, g, 0.25), g, 0.25);
  const nn::Mlp full = nn::apply_grads(m, g, 0.5);
  CHECK(rel_error(nn::ParamGrads{half.layers()}.flatten(),
                  nn::ParamGrads{full.layers()}.flatten()) < 1e-15);
}

TEST_CASE("relu subgradient at zero is zero") {
  nn::Dense l1{Matrix(1, 1, {1.0}), {0.0}};
  nn::Dense l2{Matrix(1, 1, {1.0}), {0.0}};
  const nn::Mlp m({l1, l2});
  const auto t = nn::forward(m, Vector{0.0});
  const auto pg = nn::backward(m, t, Vector{1.0});
  CHECK(pg.layers[0].weights(0, 0) == 0.0);
  CHECK(pg.layers[0].bias[0] == 0.0);
}

TEST_CASE("text format round trip and layout") {
  const nn::Mlp m = two_by_two();
  std::stringstream ss;
  nn::save_text(m, ss);
  std::string header;
  std::getline(ss, header);
  CHECK(header == "mlp 2");
  std::string layer;
  std::getline(ss, layer);
  CHECK(layer.rfind("layer 2 2", 0) == 0);
  ss.seekg(0);
  CHECK(nn::load_text(ss) == m);

  Rng rng(8);
  const std::vector<std::size_t> dims{5, 7, 3};
  const nn::Mlp r = nn::Mlp::random(dims, rng);
  std::stringstream s2;
  nn::save_text(r, s2);
  CHECK(nn::load_text(s2) == r);

  std::stringstream bad("mlp 1\nlayer 2 2\n1 2 3\n");
  CHECK_THROWS(nn::load_text(bad));
}

TEST_CASE("forward and backward are deterministic") {
  Rng rng(21);
  const std::vector<std::size_t> dims{6, 8, 4};
  const nn::Mlp m = nn::Mlp::random(dims, rng);
  const Vector x{0.1, 0.2, -0.3, 0.4, -0.5, 0.6};
  const auto a = nn::forward(m, x);
  const auto b = nn::forward(m, x);
  CHECK(a.logits() == b.logits());
  const auto ga = nn::backward(m, a, nn::softmax_xent(a.logits(), 2).grad_logits);
  const auto gb = nn::backward(m, b, nn::softmax_xent(b.logits(), 2).grad_logits);
  CHECK(ga == gb);
}
