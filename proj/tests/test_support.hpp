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

// Independent oracles shared by the unit and acceptance tests. Nothing here
// calls into the code paths it is used to check.

#ifndef DERTS_TESTS_TEST_SUPPORT_HPP_
#define DERTS_TESTS_TEST_SUPPORT_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "derts/metalearn.hpp"
#include "derts/nn.hpp"
#include "derts/tasks.hpp"

namespace derts::testing {

// Parameter `i` in flatten() order: per layer, row-major weights then bias.
inline double& param_at(nn::Mlp& m, std::size_t i) {
  for (auto& d : m.mutable_layers()) {
    const std::size_t nw = d.weights.size();
    if (i < nw) return d.weights.data()[i];
    i -= nw;
    if (i < d.bias.size()) return d.bias[i];
    i -= d.bias.size();
  }
  throw std::out_of_range("parameter index");
}

// Central differences of `loss` with respect to every parameter.
inline Vector finite_difference(const nn::Mlp& model,
                                const std::function<double(const nn::Mlp&)>& loss,
                                double h = 1e-5) {
  nn::Mlp m = model;
  Vector g(m.num_params());
  for (std::size_t i = 0; i < g.size(); ++i) {
    double& p = param_at(m, i);
    const double p0 = p;
    p = p0 + h;
    const double up = loss(m);
    p = p0 - h;
    const double down = loss(m);
    p = p0;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||, floor).
inline double rel_error(const Vector& a, const Vector& b, double floor = 1e-8) {
  double num = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) num += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(num) / std::max({norm2(a), norm2(b), floor});
}

// Plain forward pass written out without the library.
inline Vector naive_forward(const nn::Mlp& m, const Vector& x) {
  Vector h = x;
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const auto& d = m.layer(l);
    Vector z(d.out_dim());
    for (std::size_t o = 0; o < d.out_dim(); ++o) {
      double s = d.bias[o];
      for (std::size_t i = 0; i < d.in_dim(); ++i) s += d.weights(o, i) * h[i];
      z[o] = (l + 1 < m.num_layers()) ? std::max(0.0, s) : s;
    }
    h = std::move(z);
  }
  return h;
}

inline double naive_xent(const Vector& logits, std::size_t label) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  return std::log(s) + mx - logits[label];
}

inline double naive_mean_xent(const nn::Mlp& m,
                              const std::vector<LabeledExample>& ex) {
  double s = 0.0;
  for (const auto& e : ex) s += naive_xent(naive_forward(m, e.x), e.y);
  return s / static_cast<double>(ex.size());
}

// Head-only adaptation re-implemented on the whole network's forward pass.
inline nn::Mlp naive_adapt_head(const nn::Mlp& model,
                                const std::vector<LabeledExample>& support,
                                double lr, std::size_t steps) {
  nn::Mlp m = model;
  const std::size_t last = m.num_layers() - 1;
  for (std::size_t s = 0; s < steps; ++s) {
    nn::Dense g = m.layer(last);
    std::fill(g.weights.data().begin(), g.weights.data().end(), 0.0);
    std::fill(g.bias.begin(), g.bias.end(), 0.0);
    for (const auto& e : support) {
      // Features: forward through all but the last layer.
      Vector h = e.x;
      for (std::size_t l = 0; l < last; ++l) {
        const auto& d = m.layer(l);
        Vector z(d.out_dim());
        for (std::size_t o = 0; o < d.out_dim(); ++o) {
          double v = d.bias[o];
          for (std::size_t i = 0; i < d.in_dim(); ++i) v += d.weights(o, i) * h[i];
          z[o] = std::max(0.0, v);
        }
        h = std::move(z);
      }
      const Vector logits = naive_forward(m, e.x);
      double mx = *std::max_element(logits.begin(), logits.end());
      double sum = 0.0;
      for (double v : logits) sum += std::exp(v - mx);
      for (std::size_t o = 0; o < logits.size(); ++o) {
        const double p = std::exp(logits[o] - mx) / sum - (o == e.y ? 1.0 : 0.0);
        g.bias[o] += p / static_cast<double>(support.size());
        for (std::size_t i = 0; i < h.size(); ++i) {
          g.weights(o, i) += p * h[i] / static_cast<double>(support.size());
        }
      }
    }
    auto& head = m.layer(last);
    for (std::size_t i = 0; i < head.weights.size(); ++i) {
      head.weights.data()[i] -= lr * g.weights.data()[i];
    }
    for (std::size_t o = 0; o < head.bias.size(); ++o) head.bias[o] -= lr * g.bias[o];
  }
  return m;
}

// ProtoNet loss written directly from its definition.
inline double naive_proto_loss(const nn::Mlp& m, const FewShotTask& t) {
  const std::size_t dim = m.output_dim();
  std::vector<Vector> protos(t.way, Vector(dim, 0.0));
  std::vector<double> counts(t.way, 0.0);
  for (const auto& e : t.support) {
    const Vector emb = naive_forward(m, e.x);
    for (std::size_t k = 0; k < dim; ++k) protos[e.y][k] += emb[k];
    counts[e.y] += 1.0;
  }
  for (std::size_t r = 0; r < t.way; ++r) {
    for (double& v : protos[r]) v /= counts[r];
  }
  double loss = 0.0;
  for (const auto& e : t.query) {
    const Vector emb = naive_forward(m, e.x);
    Vector scores(t.way);
    for (std::size_t r = 0; r < t.way; ++r) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < dim; ++k) d2 += (emb[k] - protos[r][k]) * (emb[k] - protos[r][k]);
      scores[r] = -d2;
    }
    loss += naive_xent(scores, e.y);
  }
  return loss / static_cast<double>(t.query.size());
}

// Facility location from its definition, for any constant c.
inline double naive_facility(const std::vector<Vector>& pts,
                             const std::vector<std::size_t>& subset, double c) {
  if (subset.empty()) return 0.0;
  double f = 0.0;
  for (const auto& p : pts) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i : subset) best = std::max(best, c - distance(p, pts[i]));
    f += best;
  }
  return f;
}

inline double naive_max_distance(const std::vector<Vector>& pts) {
  double c = 0.0;
  for (const auto& a : pts) {
    for (const auto& b : pts) c = std::max(c, distance(a, b));
  }
  return c;
}

// Best value of F over all subsets of size exactly k (monotone, so this is
// the optimum under |S| <= k).
inline double brute_force_opt(const std::vector<Vector>& pts, std::size_t k,
                              double c) {
  const std::size_t n = pts.size();
  double best = 0.0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1u << i)) s.push_back(i);
    }
    best = std::max(best, naive_facility(pts, s, c));
  }
  return best;
}

// Greedy maximization recomputing F from scratch at every step. Ties go to
// the lowest index.
inline std::vector<std::size_t> naive_greedy(const std::vector<Vector>& pts,
                                             std::size_t k, double c) {
  std::vector<std::size_t> sel;
  std::vector<bool> used(pts.size(), false);
  for (std::size_t step = 0; step < k; ++step) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    const double base = naive_facility(pts, sel, c);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (used[i]) continue;
      auto s = sel;
      s.push_back(i);
      const double gain = naive_facility(pts, s, c) - base;
      if (gain > best) {
        best = gain;
        arg = i;
      }
    }
    used[arg] = true;
    sel.push_back(arg);
  }
  return sel;
}

inline std::vector<Vector> random_points(std::size_t n, std::size_t dim,
                                         Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<Vector> pts(n, Vector(dim));
  for (auto& p : pts) {
    for (double& v : p) v = g(rng);
  }
  return pts;
}

inline FewShotTask random_task(std::size_t way, Shots shots, std::size_t dim,
                               Rng& rng) {
  const auto dist = SyntheticDistribution::make(way + 3, dim, 0.7, rng);
  return sample_task(dist, way, shots, rng);
}

}  // namespace derts::testing

#endif  // DERTS_TESTS_TEST_SUPPORT_HPP_
