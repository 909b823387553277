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

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "derts/harness.hpp"

namespace derts {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d)) {
    throw ConfigError("`" + key + "` expects a number, got `" + v + "`");
  }
  return d;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("`" + key + "` expects a nonnegative integer, got `" + v +
                      "`");
  }
  try {
    return std::stoull(v);
  } catch (const std::out_of_range&) {
    throw ConfigError("`" + key + "` is out of range");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("`" + key + "` expects on/off, got `" + v + "`");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&,
                                  const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"algo", [](auto& c, auto&, auto& v) { c.algo = parse_algo(v); }},
      {"way", [](auto& c, auto& k, auto& v) { c.way = to_u64(k, v); }},
      {"shots_support",
       [](auto& c, auto& k, auto& v) { c.shots.support = to_u64(k, v); }},
      {"shots_query",
       [](auto& c, auto& k, auto& v) { c.shots.query = to_u64(k, v); }},
      {"feature_dim",
       [](auto& c, auto& k, auto& v) { c.feature_dim = to_u64(k, v); }},
      {"num_train_classes",
       [](auto& c, auto& k, auto& v) { c.num_train_classes = to_u64(k, v); }},
      {"num_test_classes",
       [](auto& c, auto& k, auto& v) { c.num_test_classes = to_u64(k, v); }},
      {"within_class_std",
       [](auto& c, auto& k, auto& v) { c.within_class_std = to_double(k, v); }},
      {"class_budget",
       [](auto& c, auto& k, auto& v) { c.class_budget = to_double(k, v); }},
      {"class_groups",
       [](auto& c, auto& k, auto& v) { c.class_groups = to_u64(k, v); }},
      {"group_spread",
       [](auto& c, auto& k, auto& v) { c.group_spread = to_double(k, v); }},
      {"hidden",
       [](auto& c, auto& k, auto& v) {
         c.hidden.clear();
         for (const auto& s : split_list(v)) c.hidden.push_back(to_u64(k, s));
       }},
      {"embedding_dim",
       [](auto& c, auto& k, auto& v) { c.embedding_dim = to_u64(k, v); }},
      {"pool_size", [](auto& c, auto& k, auto& v) { c.pool_size = to_u64(k, v); }},
      {"select_ratio",
       [](auto& c, auto& k, auto& v) { c.select_ratio = to_double(k, v); }},
      {"k_select", [](auto& c, auto& k, auto& v) { c.k_select = to_u64(k, v); }},
      {"selection_mode",
       [](auto& c, auto&, auto& v) { c.selection_mode = parse_greedy_mode(v); }},
      {"sg_epsilon",
       [](auto& c, auto& k, auto& v) { c.sg_epsilon = to_double(k, v); }},
      {"estimate_mode",
       [](auto& c, auto&, auto& v) { c.estimate_mode = parse_estimate_mode(v); }},
      {"noise", [](auto& c, auto& k, auto& v) { c.noise = to_bool(k, v); }},
      {"noise_ratio",
       [](auto& c, auto& k, auto& v) { c.noise_ratio = to_double(k, v); }},
      {"noise_lambda",
       [](auto& c, auto& k, auto& v) { c.noise_lambda = to_double(k, v); }},
      {"noise_threshold",
       [](auto& c, auto& k, auto& v) { c.noise_threshold = to_u64(k, v); }},
      {"noise_filter",
       [](auto& c, auto& k, auto& v) { c.noise_filter = to_bool(k, v); }},
      {"tau", [](auto& c, auto& k, auto& v) { c.tau = to_double(k, v); }},
      {"threshold_base",
       [](auto& c, auto& k, auto& v) {
         if (v == "pool") {
           c.threshold_base = ThresholdBase::kPool;
         } else if (v == "subset") {
           c.threshold_base = ThresholdBase::kSubset;
         } else {
           throw ConfigError("`" + k + "` expects pool|subset");
         }
       }},
      {"inner_lr", [](auto& c, auto& k, auto& v) { c.inner.lr = to_double(k, v); }},
      {"inner_steps",
       [](auto& c, auto& k, auto& v) { c.inner.steps = to_u64(k, v); }},
      {"head_only",
       [](auto& c, auto& k, auto& v) { c.inner.head_only = to_bool(k, v); }},
      {"through_head",
       [](auto& c, auto& k, auto& v) { c.inner.through_head = to_bool(k, v); }},
      {"outer_lr", [](auto& c, auto& k, auto& v) { c.outer.lr = to_double(k, v); }},
      {"meta_batch",
       [](auto& c, auto& k, auto& v) { c.outer.meta_batch = to_u64(k, v); }},
      {"iterations",
       [](auto& c, auto& k, auto& v) { c.outer.iterations = to_u64(k, v); }},
      {"warmup_iters",
       [](auto& c, auto& k, auto& v) { c.outer.warmup_iters = to_u64(k, v); }},
      {"weighting",
       [](auto& c, auto& k, auto& v) {
         if (v == "normalized") {
           c.outer.normalize_weights = true;
           c.subset_mean_weighting = false;
         } else if (v == "raw") {
           c.outer.normalize_weights = false;
           c.subset_mean_weighting = false;
         } else if (v == "subset-mean") {
           c.outer.normalize_weights = false;
           c.subset_mean_weighting = true;
         } else {
           throw ConfigError("`" + k + "` expects normalized|raw|subset-mean");
         }
       }},
      {"batch_order",
       [](auto& c, auto& k, auto& v) {
         if (v == "selection") {
           c.shuffle_subset = false;
         } else if (v == "shuffled") {
           c.shuffle_subset = true;
         } else {
           throw ConfigError("`" + k + "` expects selection|shuffled");
         }
       }},
      {"warmup_on_noisy",
       [](auto& c, auto& k, auto& v) { c.warmup_on_noisy = to_bool(k, v); }},
      {"eval_every", [](auto& c, auto& k, auto& v) { c.eval_every = to_u64(k, v); }},
      {"eval_task_count",
       [](auto& c, auto& k, auto& v) { c.eval_task_count = to_u64(k, v); }},
      {"exact_diag_max_pool",
       [](auto& c, auto& k, auto& v) { c.exact_diag_max_pool = to_u64(k, v); }},
      {"seed",
       [](auto& c, auto& k, auto& v) { c.seeds = {to_u64(k, v)}; }},
      {"seeds",
       [](auto& c, auto& k, auto& v) {
         c.seeds.clear();
         for (const auto& s : split_list(v)) c.seeds.push_back(to_u64(k, s));
       }},
      {"samplers",
       [](auto& c, auto&, auto& v) {
         c.samplers.clear();
         for (const auto& s : split_list(v)) c.samplers.push_back(parse_sampler(s));
       }},
      {"sampler",
       [](auto& c, auto&, auto& v) { c.samplers = {parse_sampler(v)}; }},
      {"suite",
       [](auto& c, auto& k, auto& v) {
         if (v != "budget" && v != "noise") {
           throw ConfigError("`" + k + "` expects budget|noise");
         }
         c.suite = v;
       }},
  };
  return table;
}

}  // namespace

Sampler parse_sampler(const std::string& name) {
  if (name == "derts") return Sampler::kDerts;
  if (name == "derts-noweights") return Sampler::kDertsNoWeights;
  if (name == "derts-nofilter") return Sampler::kDertsNoFilter;
  if (name == "random") return Sampler::kRandom;
  if (name == "full-pool") return Sampler::kFullPool;
  throw ConfigError("unknown sampler `" + name +
                    "` (derts|derts-noweights|derts-nofilter|random|full-pool)");
}

std::string to_string(Sampler s) {
  switch (s) {
    case Sampler::kDerts: return "derts";
    case Sampler::kDertsNoWeights: return "derts-noweights";
    case Sampler::kDertsNoFilter: return "derts-nofilter";
    case Sampler::kRandom: return "random";
    case Sampler::kFullPool: return "full-pool";
  }
  return "unknown";
}

std::size_t ExperimentConfig::effective_k() const {
  if (k_select > 0) return k_select;
  const auto k = static_cast<std::size_t>(
      std::floor(select_ratio * static_cast<double>(pool_size) + 1e-9));
  return std::max<std::size_t>(1, k);
}

void ExperimentConfig::validate() const {
  if (way < 2) throw ConfigError("way must be at least 2");
  if (shots.support == 0 || shots.query == 0) {
    throw ConfigError("support and query shots must be positive");
  }
  if (feature_dim == 0) throw ConfigError("feature_dim must be positive");
  if (num_test_classes < way) {
    throw ConfigError("num_test_classes must be at least way");
  }
  if (class_groups > 0 && !(group_spread > 0.0)) {
    throw ConfigError("group_spread must be positive");
  }
  if (!(class_budget > 0.0 && class_budget <= 1.0)) {
    throw ConfigError("class_budget must lie in (0, 1]");
  }
  if (!(within_class_std > 0.0)) throw ConfigError("within_class_std must be > 0");
  if (pool_size == 0) throw ConfigError("pool_size must be at least 1");
  if (!(select_ratio > 0.0 && select_ratio <= 1.0)) {
    throw ConfigError("select_ratio must lie in (0, 1]");
  }
  if (effective_k() > pool_size) throw ConfigError("k_select exceeds pool_size");
  if (!(sg_epsilon > 0.0 && sg_epsilon < 1.0)) {
    throw ConfigError("sg_epsilon must lie in (0, 1)");
  }
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (inner.lr < 0.0) throw ConfigError("inner_lr must be >= 0");
  if (inner.through_head && !inner.head_only) {
    throw ConfigError("through_head requires head_only");
  }
  if (!(outer.lr > 0.0)) throw ConfigError("outer_lr must be positive");
  if (outer.meta_batch == 0 || outer.iterations == 0) {
    throw ConfigError("meta_batch and iterations must be positive");
  }
  if (outer.warmup_iters >= outer.iterations) {
    throw ConfigError("warmup_iters must be below iterations");
  }
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
  if (eval_task_count == 0) throw ConfigError("eval_task_count must be positive");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (samplers.empty()) throw ConfigError("at least one sampler is required");
  if (algo == Algo::kProtoNet && embedding_dim == 0) {
    throw ConfigError("embedding_dim must be positive");
  }
  if (noise) {
    if (!noise_ratio && !noise_lambda) {
      throw ConfigError("noise needs noise_ratio or noise_lambda");
    }
    if (noise_threshold > shots.per_class()) {
      throw ConfigError("noise_threshold exceeds examples per class");
    }
  }
  const auto budget_classes = static_cast<std::size_t>(
      std::llround(class_budget * static_cast<double>(num_train_classes)));
  if (budget_classes < way) {
    throw ConfigError("class budget leaves fewer than `way` training classes");
  }
}

void set_config_value(ExperimentConfig& cfg, const std::string& key,
                      const std::string& value) {
  const auto& table = setters();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key `" + key + "`");
  it->second(cfg, key, value);
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  return parse_config(f);
}

void apply_env_overrides(ExperimentConfig& cfg) {
  if (const char* s = std::getenv("DERTS_SEED"); s != nullptr && *s != '\0') {
    cfg.seeds = {to_u64("DERTS_SEED", s)};
  }
}

void write_config(const ExperimentConfig& c, std::ostream& out) {
  auto join = [](const auto& v, auto fmt) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
    return s;
  };
  auto num = [](auto x) { return std::to_string(x); };
  std::ostringstream d;
  d << std::setprecision(std::numeric_limits<double>::max_digits10);
  auto dbl = [&d](double x) {
    d.str("");
    d << x;
    return d.str();
  };
  out << "algo = " << to_string(c.algo) << "\n"
      << "way = " << c.way << "\n"
      << "shots_support = " << c.shots.support << "\n"
      << "shots_query = " << c.shots.query << "\n"
      << "feature_dim = " << c.feature_dim << "\n"
      << "num_train_classes = " << c.num_train_classes << "\n"
      << "num_test_classes = " << c.num_test_classes << "\n"
      << "within_class_std = " << dbl(c.within_class_std) << "\n"
      << "class_groups = " << c.class_groups << "\n"
      << "group_spread = " << dbl(c.group_spread) << "\n"
      << "class_budget = " << dbl(c.class_budget) << "\n"
      << "hidden = " << join(c.hidden, num) << "\n"
      << "embedding_dim = " << c.embedding_dim << "\n"
      << "pool_size = " << c.pool_size << "\n"
      << "select_ratio = " << dbl(c.select_ratio) << "\n"
      << "k_select = " << c.k_select << "\n"
      << "selection_mode = " << to_string(c.selection_mode) << "\n"
      << "sg_epsilon = " << dbl(c.sg_epsilon) << "\n"
      << "estimate_mode = " << to_string(c.estimate_mode) << "\n"
      << "noise = " << (c.noise ? "on" : "off") << "\n";
  if (c.noise_ratio) out << "noise_ratio = " << dbl(*c.noise_ratio) << "\n";
  if (c.noise_lambda) out << "noise_lambda = " << dbl(*c.noise_lambda) << "\n";
  out << "noise_threshold = " << c.noise_threshold << "\n"
      << "noise_filter = " << (c.noise_filter ? "on" : "off") << "\n"
      << "tau = " << dbl(c.tau) << "\n"
      << "threshold_base = "
      << (c.threshold_base == ThresholdBase::kPool ? "pool" : "subset") << "\n"
      << "inner_lr = " << dbl(c.inner.lr) << "\n"
      << "inner_steps = " << c.inner.steps << "\n"
      << "head_only = " << (c.inner.head_only ? "on" : "off") << "\n"
      << "through_head = " << (c.inner.through_head ? "on" : "off") << "\n"
      << "outer_lr = " << dbl(c.outer.lr) << "\n"
      << "meta_batch = " << c.outer.meta_batch << "\n"
      << "iterations = " << c.outer.iterations << "\n"
      << "warmup_iters = " << c.outer.warmup_iters << "\n"
      << "weighting = "
      << (c.subset_mean_weighting ? "subset-mean"
                                  : c.outer.normalize_weights ? "normalized" : "raw")
      << "\n"
      << "batch_order = " << (c.shuffle_subset ? "shuffled" : "selection")
      << "\n"
      << "warmup_on_noisy = " << (c.warmup_on_noisy ? "on" : "off") << "\n"
      << "eval_every = " << c.eval_every << "\n"
      << "eval_task_count = " << c.eval_task_count << "\n"
      << "exact_diag_max_pool = " << c.exact_diag_max_pool << "\n"
      << "seeds = " << join(c.seeds, num) << "\n"
      << "samplers = "
      << join(c.samplers, [](Sampler s) { return to_string(s); }) << "\n"
      << "suite = " << c.suite << "\n";
}

}  // namespace derts
