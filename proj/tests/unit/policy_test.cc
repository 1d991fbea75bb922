// Copyright 2026 The privctrl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <filesystem>
#include <vector>

#include <gtest/gtest.h>

#include "privctrl/error.h"
#include "privctrl/io.h"
#include "privctrl/model.h"
#include "privctrl/policy.h"
#include "privctrl/stats.h"

namespace privctrl {
namespace {

Architecture small_arch() {
  Architecture a;
  a.observations = 5;
  a.indices = 3;
  a.controls = 4;
  a.hidden = 6;
  return a;
}

RecurrentPolicy spread_policy(std::uint64_t seed, double scale = 2.0) {
  RecurrentPolicy p = RecurrentPolicy::init(small_arch(), seed);
  RandomStream r(seed, 99);
  for (double& v : p.mutable_params()) v = scale * (r.uniform() - 0.5);
  return p;
}

TrajectoryContext random_context(int horizon, std::uint64_t seed) {
  RandomStream r(seed, 7);
  TrajectoryContext c;
  for (int t = 0; t < horizon; ++t) {
    c.z.push_back(r.uniform_int(5));
    c.s.push_back(r.uniform_int(3));
    c.u.push_back(r.uniform_int(4));
  }
  return c;
}

TEST(PolicyTest, HeadsArePositiveAndNormalized) {
  const RecurrentPolicy p = spread_policy(3, 6.0);
  PolicyCarry carry = p.initial_carry();
  for (int t = 0; t < 10; ++t) {
    const PolicyOutput out = forward(p, carry, t % 5);
    EXPECT_NEAR(out.s_probs.sum(), 1.0, 1e-9);
    EXPECT_GT(out.s_probs.minCoeff(), 0.0);
    for (int s = 0; s < 3; ++s) {
      EXPECT_NEAR(out.u_probs.row(s).sum(), 1.0, 1e-9);
      EXPECT_GT(out.u_probs.row(s).minCoeff(), 0.0);
    }
    p.advance(carry, t % 5, t % 3, t % 4, out.hidden);
  }
}

TEST(PolicyTest, ZeroParametersGiveUniformLogProb) {
  Architecture a;
  a.observations = 8;
  a.indices = 4;
  a.controls = 9;
  a.hidden = 5;
  const RecurrentPolicy p(a, std::vector<double>(RecurrentPolicy::parameter_count(a), 0.0));
  const PolicyOutput out = forward(p, p.initial_carry(), 2);
  RandomStream r(1);
  const Action act = sample_action(out, r);
  EXPECT_NEAR(act.log_prob, -std::log(36.0), 1e-12);
  // Uniform controller head: greedy picks index 0.
  EXPECT_EQ(p.greedy_control(p.initial_carry(), 1), 0);
}

TEST(PolicyTest, SamplingFrequenciesMatchHeads) {
  const RecurrentPolicy p = spread_policy(4);
  const PolicyOutput out = forward(p, p.initial_carry(), 1);
  RandomStream r(2);
  std::vector<double> freq(3, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) freq[sample_action(out, r).s] += 1.0 / n;
  for (int s = 0; s < 3; ++s) EXPECT_NEAR(freq[s], out.s_probs[s], 0.01);
}

TEST(PolicyTest, LogProbMatchesForwardReplay) {
  const RecurrentPolicy p = spread_policy(5);
  const TrajectoryContext c = random_context(6, 5);
  double expect = 0.0;
  PolicyCarry carry = p.initial_carry();
  for (int t = 0; t < 6; ++t) {
    const PolicyOutput out = forward(p, carry, c.z[t]);
    expect += std::log(out.s_probs[c.s[t]]) + std::log(out.u_probs(c.s[t], c.u[t]));
    p.advance(carry, c.z[t], c.s[t], c.u[t], out.hidden);
  }
  EXPECT_NEAR(log_probability(p, c), expect, 1e-12);
  EXPECT_NEAR(log_prob_gradient(p, c).log_prob, expect, 1e-12);
}

TEST(PolicyTest, GradientMatchesFiniteDifferences) {
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    RecurrentPolicy p = spread_policy(100 + rep);
    const TrajectoryContext c = random_context(5, 200 + rep);
    const LogProbGradient g = log_prob_gradient(p, c);
    const double eps = 1e-5;
    double scale = 0.0;
    std::vector<double> fd(g.gradient.size());
    for (std::size_t i = 0; i < fd.size(); ++i) {
      std::vector<double>& th = p.mutable_params();
      const double keep = th[i];
      th[i] = keep + eps;
      const double lp = log_probability(p, c);
      th[i] = keep - eps;
      const double lm = log_probability(p, c);
      th[i] = keep;
      fd[i] = (lp - lm) / (2 * eps);
      scale = std::max(scale, std::abs(fd[i]));
    }
    for (std::size_t i = 0; i < fd.size(); ++i) {
      const double denom = std::max({std::abs(fd[i]), std::abs(g.gradient[i]), 1e-3 * scale});
      worst = std::max(worst, std::abs(fd[i] - g.gradient[i]) / denom);
    }
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(PolicyTest, GradientIsLinearInTrajectories) {
  const RecurrentPolicy p = spread_policy(6);
  const TrajectoryContext a = random_context(4, 1), b = random_context(4, 2);
  const auto ga = log_prob_gradient(p, a).gradient;
  const auto gb = log_prob_gradient(p, b).gradient;
  const std::vector<double> w = {2.0, 2.0, 2.0, 2.0};
  const auto g2 = log_prob_gradient(p, a, w).gradient;
  for (std::size_t i = 0; i < ga.size(); ++i) {
    EXPECT_NEAR(g2[i], 2.0 * ga[i], 1e-12);
    EXPECT_TRUE(std::isfinite(gb[i]));
  }
}

TEST(PolicyTest, ContextLengthMismatchIsRejected) {
  const RecurrentPolicy p = spread_policy(6);
  TrajectoryContext c = random_context(4, 1);
  c.u.pop_back();
  EXPECT_THROW(log_prob_gradient(p, c), Error);
}

TEST(PolicyTest, PrefixReplayReproducesHiddenState) {
  const RecurrentPolicy p = spread_policy(7);
  const TrajectoryContext c = random_context(8, 3);
  auto run = [&](int steps) {
    PolicyCarry carry = p.initial_carry();
    for (int t = 0; t < steps; ++t) {
      const PolicyOutput out = forward(p, carry, c.z[t]);
      p.advance(carry, c.z[t], c.s[t], c.u[t], out.hidden);
    }
    return carry;
  };
  const PolicyCarry a = run(5), b = run(5);
  EXPECT_EQ(a.quantizer, b.quantizer);
  EXPECT_EQ(a.controller, b.controller);
}

TEST(PolicyTest, QuantizerAllMatchesSingleSteps) {
  const RecurrentPolicy p = spread_policy(8);
  PolicyCarry carry = p.initial_carry();
  const PolicyOutput first = forward(p, carry, 2);
  p.advance(carry, 2, 1, 3, first.hidden);
  Eigen::MatrixXd all;
  std::vector<Eigen::VectorXd> next;
  p.quantizer_all(carry, all, &next);
  for (int z = 0; z < 5; ++z) {
    std::vector<double> probs(3);
    Eigen::VectorXd h;
    p.quantizer_step(carry, z, probs, &h);
    for (int s = 0; s < 3; ++s) EXPECT_NEAR(all(z, s), probs[s], 1e-14);
    EXPECT_LT((next[z] - h).norm(), 1e-14);
  }
}

TEST(PolicyTest, GreedyHeadKeepsQuantizer) {
  const RecurrentPolicy p = spread_policy(9, 8.0);
  const RecurrentPolicy g = make_deterministic_controller_head(p);
  const PolicyOutput a = forward(p, p.initial_carry(), 3);
  const PolicyOutput b = forward(g, g.initial_carry(), 3);
  EXPECT_LT((a.s_probs - b.s_probs).norm(), 1e-15);
  RandomStream r1(4);
  const Action sa = sample_action(b, r1, ControlMode::kGreedy);
  Eigen::Index best;
  b.u_probs.row(sa.s).maxCoeff(&best);
  EXPECT_EQ(sa.u, static_cast<int>(best));
}

TEST(PolicyTest, CheckpointRoundTripIsBitExact) {
  const RecurrentPolicy p = spread_policy(10);
  const std::string path =
      (std::filesystem::temp_directory_path() / "privctrl_policy_test.json").string();
  save_policy(path, p, 42, 17);
  const RecurrentPolicy q = load_policy(path);
  ASSERT_EQ(p.params().size(), q.params().size());
  for (std::size_t i = 0; i < p.params().size(); ++i) EXPECT_EQ(p.params()[i], q.params()[i]);
  const Checkpoint ck = parse_checkpoint(read_json_file(path));
  EXPECT_EQ(ck.seed, 42u);
  EXPECT_EQ(ck.step, 17);
  std::filesystem::remove(path);
}

TEST(PolicyTest, ScoreMeanIsZeroOverRollouts) {
  const nlohmann::json cfg = read_json_file(PRIVCTRL_CONFIG_DIR "/tiny_tabular.json");
  const SystemModel m = model_from_json(cfg["model"]);
  const StageCost cost = cost_from_json(cfg, m);
  Architecture a;
  a.observations = 2;
  a.indices = 2;
  a.controls = 2;
  a.hidden = 3;
  RecurrentPolicy p = RecurrentPolicy::init(a, 3);
  RandomStream r(3, 1);
  for (double& v : p.mutable_params()) v = 2.0 * (r.uniform() - 0.5);
  const auto trajs = rollout_batch(m, p, cost, 5, 0, 4000);
  const std::size_t dim = p.params().size();
  std::vector<RunningStats> st(dim);
  for (const Trajectory& tr : trajs) {
    const auto g = log_prob_gradient(p, TrajectoryContext::of(tr)).gradient;
    for (std::size_t i = 0; i < dim; ++i) st[i].add(g[i]);
  }
  for (std::size_t i = 0; i < dim; ++i) {
    const MeanSe s = st[i].summary();
    EXPECT_LT(std::abs(s.mean), 5.0 * s.se + 1e-12) << "component " << i;
  }
}

}  // namespace
}  // namespace privctrl
