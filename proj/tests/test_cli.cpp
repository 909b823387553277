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

// End-to-end checks of the command-line tool.

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "derts/csv.hpp"
#include "derts/gradest.hpp"
#include "derts/tasks.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "derts_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd =
      env + " " + std::string(DERTS_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

const char* kTinyConfig =
    "feature_dim = 6\n"
    "num_train_classes = 12\n"
    "num_test_classes = 6\n"
    "hidden = 8\n"
    "shots_support = 2\n"
    "shots_query = 3\n"
    "pool_size = 20\n"
    "iterations = 20\n"
    "warmup_iters = 4\n"
    "meta_batch = 2\n"
    "eval_every = 10\n"
    "eval_task_count = 10\n"
    "seeds = 3\n"
    "samplers = derts, random\n";

}  // namespace

TEST_CASE("gen-tasks, estimate and select round trip") {
  const fs::path d = workdir();
  write(d / "tiny.cfg", kTinyConfig);
  REQUIRE(run("gen-tasks --config " + (d / "tiny.cfg").string() + " --seed 5 --out " +
              (d / "pool.csv").string()) == 0);
  std::ifstream pf(d / "pool.csv");
  const auto tasks = derts::read_pool_csv(pf);
  CHECK(tasks.size() == 20);
  CHECK(tasks.front().way == 5);

  REQUIRE(run("estimate --pool " + (d / "pool.csv").string() + " --config " +
              (d / "tiny.cfg").string() + " --save-model " + (d / "model.txt").string() +
              " --out " + (d / "est.csv").string()) == 0);
  CHECK(slurp(d / "model.txt").rfind("mlp 2\n", 0) == 0);
  // Supplying the saved model reproduces the estimates.
  REQUIRE(run("estimate --pool " + (d / "pool.csv").string() + " --model " +
              (d / "model.txt").string() + " --out " + (d / "est2.csv").string()) == 0);
  CHECK(slurp(d / "est.csv") == slurp(d / "est2.csv"));
  std::ifstream ef(d / "est.csv");
  const auto est = derts::read_estimates_csv(ef);
  CHECK(est.size() == 20);
  CHECK(est.front().vec.size() == 5);

  REQUIRE(run("select --estimates " + (d / "est.csv").string() +
              " --k 6 --mode exact --noise --tau 1.25 --out " +
              (d / "subset.csv").string()) == 0);
  const auto t = derts::csv::read_file((d / "subset.csv").string());
  CHECK(t.header == std::vector<std::string>{"task_id", "weight", "dropped"});
  std::size_t total = 0;
  std::size_t kept = 0;
  for (const auto& row : t.rows) {
    total += derts::csv::to_size(row[1]);
    kept += row[2] == "0";
  }
  CHECK(total == 20);
  CHECK(t.rows.size() == 6);
  CHECK(kept >= 1);

  // Exact mode does not depend on the seed; stochastic mode is seeded.
  REQUIRE(run("select --estimates " + (d / "est.csv").string() +
              " --k 6 --mode stochastic --seed 9 --out " + (d / "s1.csv").string()) == 0);
  REQUIRE(run("select --estimates " + (d / "est.csv").string() +
              " --k 6 --mode stochastic --seed 9 --out " + (d / "s2.csv").string()) == 0);
  CHECK(slurp(d / "s1.csv") == slurp(d / "s2.csv"));
}

TEST_CASE("DERTS_SEED overrides the seed flag") {
  const fs::path d = workdir();
  write(d / "tiny.cfg", kTinyConfig);
  REQUIRE(run("gen-tasks --config " + (d / "tiny.cfg").string() + " --seed 1 --out " +
                  (d / "env.csv").string(),
              "DERTS_SEED=8") == 0);
  REQUIRE(run("gen-tasks --config " + (d / "tiny.cfg").string() + " --seed 8 --out " +
              (d / "flag.csv").string()) == 0);
  CHECK(slurp(d / "env.csv") == slurp(d / "flag.csv"));
}

TEST_CASE("run and report produce the documented files deterministically") {
  const fs::path d = workdir();
  write(d / "tiny.cfg", kTinyConfig);
  REQUIRE(run("run --config " + (d / "tiny.cfg").string() + " --out " +
              (d / "r1").string()) == 0);
  REQUIRE(run("run --config " + (d / "tiny.cfg").string() + " --out " +
              (d / "r2").string()) == 0);
  // metrics/ and timing.csv carry wall-clock times and are not compared.
  CHECK(fs::exists(d / "r1" / "metrics" / "seed3_derts.csv"));
  CHECK(fs::exists(d / "r1" / "timing.csv"));
  for (const char* f : {"results.csv", "pools.csv", "summary.csv", "curves.csv",
                        "config.resolved"}) {
    CHECK(fs::exists(d / "r1" / f));
    CHECK(slurp(d / "r1" / f) == slurp(d / "r2" / f));
  }
  CHECK(slurp(d / "r1" / "results.csv")
            .rfind("seed,sampler,iter,train_loss,eval_acc,eval_ci,eps_exact,eps_bound,"
                   "eps_space\n",
                   0) == 0);
  CHECK(slurp(d / "r1" / "metrics" / "seed3_derts.csv")
            .rfind("iter,train_loss,eval_acc,eval_ci,wallclock_s\n", 0) == 0);

  REQUIRE(run("report --results " + (d / "r1" / "results.csv").string() + " --out " +
              (d / "rep").string()) == 0);
  CHECK(slurp(d / "rep" / "summary.csv") == slurp(d / "r1" / "summary.csv"));

  // DERTS_SEED changes the run.
  REQUIRE(run("run --config " + (d / "tiny.cfg").string() + " --out " +
                  (d / "r3").string(),
              "DERTS_SEED=4") == 0);
  CHECK(slurp(d / "r3" / "results.csv").find("\n4,derts,") != std::string::npos);
}

TEST_CASE("exit codes") {
  const fs::path d = workdir();
  write(d / "bad.cfg", "pool_size = -3\n");
  CHECK(run("run --config " + (d / "bad.cfg").string() + " --out " +
            (d / "bad").string()) == 2);
  write(d / "unknown.cfg", "flavour = vanilla\n");
  CHECK(run("run --config " + (d / "unknown.cfg").string()) == 2);
  CHECK(run("run --config " + (d / "missing.cfg").string()) == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("run --config " + (d / "unknown.cfg").string() + " --set pool_size=4",
            "") == 2);

  // A pool whose features overflow the forward pass is a numeric failure.
  write(d / "huge.csv",
        "task_id,split,label,true_label,f0\n"
        "0,s,0,0,1e308\n0,s,1,1,-1e308\n0,q,0,0,1e308\n0,q,1,1,-1e308\n");
  const std::string model = (d / "big.txt").string();
  write(model, "mlp 1\nlayer 2 1\n1e10 -1e10\n0 0\n");
  CHECK(run("estimate --pool " + (d / "huge.csv").string() + " --model " + model +
            " --out " + (d / "huge_est.csv").string()) == 3);
  CHECK(run("select --estimates " + (d / "nope.csv").string() + " --k 2 --out " +
            (d / "x.csv").string()) == 1);
}
