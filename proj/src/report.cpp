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
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>

#include "derts/csv.hpp"
#include "derts/harness.hpp"

namespace derts {

namespace {

// NaN is written as the literal `nan` so the files stay locale free.
void put(std::ostream& out, double v) {
  if (std::isnan(v)) {
    out << "nan";
  } else {
    out << v;
  }
}

void full_precision(std::ostream& out) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
}

// Samplers in first-appearance order, iterations ascending.
std::vector<Sampler> samplers_in(const std::vector<ResultRow>& rows) {
  std::vector<Sampler> out;
  for (const auto& r : rows) {
    if (std::find(out.begin(), out.end(), r.sampler) == out.end()) {
      out.push_back(r.sampler);
    }
  }
  return out;
}

}  // namespace

void write_results_csv(const std::vector<ResultRow>& rows, std::ostream& out) {
  full_precision(out);
  out << "seed,sampler,iter,train_loss,eval_acc,eval_ci,eps_exact,eps_bound,"
         "eps_space\n";
  for (const auto& r : rows) {
    out << r.seed << ',' << to_string(r.sampler) << ',' << r.iter << ',';
    put(out, r.train_loss);
    out << ',';
    put(out, r.eval_acc);
    out << ',';
    put(out, r.eval_ci);
    out << ',';
    put(out, r.eps_exact);
    out << ',';
    put(out, r.eps_bound);
    out << ',' << r.eps_space << '\n';
  }
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  const csv::Table t = csv::read(in);
  const std::size_t c_seed = t.column("seed");
  const std::size_t c_sampler = t.column("sampler");
  const std::size_t c_iter = t.column("iter");
  const std::size_t c_loss = t.column("train_loss");
  const std::size_t c_acc = t.column("eval_acc");
  const auto c_ci = t.find_column("eval_ci");
  const auto c_ex = t.find_column("eps_exact");
  const auto c_bd = t.find_column("eps_bound");
  const auto c_sp = t.find_column("eps_space");
  std::vector<ResultRow> rows;
  for (const auto& f : t.rows) {
    ResultRow r;
    r.seed = csv::to_size(f[c_seed]);
    r.sampler = parse_sampler(f[c_sampler]);
    r.iter = csv::to_size(f[c_iter]);
    r.train_loss = csv::to_double(f[c_loss]);
    r.eval_acc = csv::to_double(f[c_acc]);
    if (c_ci) r.eval_ci = csv::to_double(f[*c_ci]);
    if (c_ex) r.eps_exact = csv::to_double(f[*c_ex]);
    if (c_bd) r.eps_bound = csv::to_double(f[*c_bd]);
    if (c_sp) r.eps_space = f[*c_sp];
    rows.push_back(r);
  }
  return rows;
}

void write_timing_csv(const std::vector<ResultRow>& rows, std::ostream& out) {
  full_precision(out);
  out << "seed,sampler,iter,select_time_s,train_time_s,wallclock_s\n";
  for (const auto& r : rows) {
    out << r.seed << ',' << to_string(r.sampler) << ',' << r.iter << ','
        << r.select_time_s << ',' << r.train_time_s << ',' << r.wallclock_s
        << '\n';
  }
}

void write_pools_csv(const std::vector<PoolLog>& pools, std::ostream& out) {
  full_precision(out);
  out << "seed,sampler,pool,start_iter,selected,dropped,gain_evaluations,"
         "eps_estimate_exact,eps_estimate_bound,eps_grad_exact,eps_grad_bound,"
         "swaps_dropped,swaps_kept\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& p : pools) {
    out << p.seed << ',' << to_string(p.sampler) << ',' << p.pool_index << ','
        << p.start_iter << ',' << p.selected << ',' << p.dropped << ','
        << p.gain_evaluations << ',';
    const bool derts = p.sampler != Sampler::kRandom &&
                       p.sampler != Sampler::kFullPool;
    put(out, derts ? p.eps_estimate_exact : nan);
    out << ',';
    put(out, derts ? p.eps_estimate_bound : nan);
    out << ',';
    put(out, p.has_grad_eps ? p.eps_grad_exact : nan);
    out << ',';
    put(out, p.has_grad_eps ? p.eps_grad_bound : nan);
    out << ',' << p.swaps_dropped << ',' << p.swaps_kept << '\n';
  }
}

void write_metrics_csv(const std::vector<ResultRow>& rows, std::ostream& out) {
  full_precision(out);
  out << "iter,train_loss,eval_acc,eval_ci,wallclock_s\n";
  for (const auto& r : rows) {
    out << r.iter << ',';
    put(out, r.train_loss);
    out << ',';
    put(out, r.eval_acc);
    out << ',';
    put(out, r.eval_ci);
    out << ',' << r.wallclock_s << '\n';
  }
}

void write_summary_csv(const std::vector<ResultRow>& rows, std::ostream& out) {
  full_precision(out);
  out << "sampler,iter,n_seeds,acc_median,acc_q25,acc_q75,loss_median\n";
  for (Sampler s : samplers_in(rows)) {
    std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> by_iter;
    for (const auto& r : rows) {
      if (r.sampler != s) continue;
      by_iter[r.iter].first.push_back(r.eval_acc);
      by_iter[r.iter].second.push_back(r.train_loss);
    }
    for (const auto& [iter, v] : by_iter) {
      out << to_string(s) << ',' << iter << ',' << v.first.size() << ',';
      put(out, median(v.first));
      out << ',';
      put(out, quantile(v.first, 0.25));
      out << ',';
      put(out, quantile(v.first, 0.75));
      out << ',';
      put(out, median(v.second));
      out << '\n';
    }
  }
}

void write_curves_csv(const std::vector<ResultRow>& rows, std::ostream& out) {
  full_precision(out);
  out << "sampler,seed,iter,metric,value\n";
  for (const auto& r : rows) {
    const std::pair<const char*, double> metrics[] = {
        {"train_loss", r.train_loss}, {"eval_acc", r.eval_acc}};
    for (const auto& [name, v] : metrics) {
      out << to_string(r.sampler) << ',' << r.seed << ',' << r.iter << ','
          << name << ',';
      put(out, v);
      out << '\n';
    }
  }
}

void report(const std::vector<ResultRow>& rows, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream summary(fs::path(out_dir) / "summary.csv");
  std::ofstream curves(fs::path(out_dir) / "curves.csv");
  if (!summary || !curves) throw InputError("cannot write reports under " + out_dir);
  write_summary_csv(rows, summary);
  write_curves_csv(rows, curves);
}

}  // namespace derts
