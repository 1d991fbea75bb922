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
#include <vector>

#include <gtest/gtest.h>

#include "privctrl/error.h"
#include "privctrl/io.h"
#include "privctrl/mi.h"
#include "privctrl/oracle.h"
#include "privctrl/policy.h"
#include "privctrl/rng.h"
#include "privctrl/trainer.h"

namespace privctrl {
namespace {

RecurrentPolicy spread_recurrent(const SystemModel& model, std::uint64_t seed) {
  Architecture arch;
  arch.observations = model.observation_count();
  arch.indices = model.indices();
  arch.controls = model.control_count();
  arch.hidden = 3;
  RecurrentPolicy p = RecurrentPolicy::init(arch, seed);
  RandomStream r(seed, 1);
  for (double& v : p.mutable_params()) v = 3.0 * (r.uniform() - 0.5);
  return p;
}

TEST(ScoreGradient, ConstantReturnsCancelAgainstBaseline) {
  const TabularInstance inst = random_instance(3);
  const RecurrentPolicy p = spread_recurrent(inst.model, 4);
  const std::vector<Trajectory> tr = rollout_batch(inst.model, p, inst.cost, 5, 0, 16);
  std::vector<TrajectoryContext> ctx;
  for (const auto& t : tr) ctx.push_back(TrajectoryContext::of(t));
  const std::vector<double> returns(tr.size(), 3.25);
  const GradientEstimate g =
      score_function_gradient(p, ctx, returns, {}, BaselineKind::kBatchMean);
  for (double v : g.gradient) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g.norm, 0.0);
}

TEST(ScoreGradient, BaselineNeedsTwoTrajectories) {
  const TabularInstance inst = random_instance(3);
  const RecurrentPolicy p = spread_recurrent(inst.model, 4);
  const std::vector<Trajectory> tr = rollout_batch(inst.model, p, inst.cost, 5, 0, 1);
  const std::vector<TrajectoryContext> ctx{TrajectoryContext::of(tr[0])};
  const std::vector<double> r{1.0};
  EXPECT_THROW(score_function_gradient(p, ctx, r, {}, BaselineKind::kBatchMean), Error);
}

TEST(ScoreGradient, LinearInReturns) {
  const TabularInstance inst = random_instance(7);
  const RecurrentPolicy p = spread_recurrent(inst.model, 8);
  const std::vector<Trajectory> tr = rollout_batch(inst.model, p, inst.cost, 9, 0, 12);
  std::vector<TrajectoryContext> ctx;
  std::vector<double> a, b, ab;
  RandomStream r(1);
  for (const auto& t : tr) {
    ctx.push_back(TrajectoryContext::of(t));
    a.push_back(r.normal());
    b.push_back(r.normal());
    ab.push_back(a.back() + 2.0 * b.back());
  }
  const auto ga = score_function_gradient(p, ctx, a, {}, BaselineKind::kBatchMean).gradient;
  const auto gb = score_function_gradient(p, ctx, b, {}, BaselineKind::kBatchMean).gradient;
  const auto gab = score_function_gradient(p, ctx, ab, {}, BaselineKind::kBatchMean).gradient;
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(gab[i], ga[i] + 2.0 * gb[i], 1e-12);
}

TEST(ScoreGradient, EnumerationWeightsReproduceExactGradient) {
  const TabularInstance inst = random_instance(2);
  const RecurrentPolicy p = spread_recurrent(inst.model, 17);
  const double lambda = 0.5;
  const EnumeratedJoint j = enumerate_distribution(inst.model, p, inst.cost);
  const std::vector<double> losses = exact_information_losses(j);
  std::vector<TrajectoryContext> ctx;
  std::vector<double> returns, weights;
  for (std::size_t o = 0; o < j.size(); ++o) {
    if (j.prob[o] == 0.0) continue;
    TrajectoryContext c;
    double leak = 0.0;
    for (int t = 0; t < j.horizon; ++t) {
      c.z.push_back(j.z(o, t));
      c.s.push_back(j.s(o, t));
      c.u.push_back(j.u(o, t));
      leak += losses[o * j.horizon + t];
    }
    ctx.push_back(c);
    returns.push_back(j.cost_mass[o] / j.prob[o] + lambda * leak);
    weights.push_back(j.prob[o]);
  }
  const auto g = score_function_gradient(p, ctx, returns, weights, BaselineKind::kNone).gradient;
  const auto exact = exact_score_gradient(inst.model, p, inst.cost, lambda);
  ASSERT_EQ(g.size(), exact.size());
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], exact[i], 1e-8) << i;
}

TEST(ObjectiveEstimate, CostMatchesEnumerationWithinError) {
  const TabularInstance inst = random_instance(11);
  const RecurrentPolicy p = spread_recurrent(inst.model, 12);
  const std::vector<Trajectory> tr = rollout_batch(inst.model, p, inst.cost, 13, 0, 20000);
  const ObjectiveEstimate est = objective_estimate(tr, nullptr, 0.0);
  MeanSe ms = mean_se(est.returns);
  const double exact = exact_objective(inst.model, p, inst.cost, 0.0).expected_cost;
  EXPECT_NEAR(ms.mean, exact, 4.0 * ms.se + 1e-12);
  EXPECT_DOUBLE_EQ(est.value, ms.mean);
}

TEST(ObjectiveEstimate, ReturnsSplitIntoCostAndLeakage) {
  const TabularInstance inst = random_instance(5);
  const RecurrentPolicy p = spread_recurrent(inst.model, 6);
  const std::vector<Trajectory> tr = rollout_batch(inst.model, p, inst.cost, 1, 0, 30);
  const ClassifierPair pair = ClassifierPair::init(inst.model.indices(),
                                                   inst.model.control_count(),
                                                   inst.model.chain().size(), 4, 3);
  const double lambda = 1.7;
  const ObjectiveEstimate est = objective_estimate(tr, &pair, lambda);
  ASSERT_EQ(est.returns.size(), tr.size());
  for (std::size_t k = 0; k < tr.size(); ++k) {
    EXPECT_NEAR(est.returns[k], est.cost_returns[k] + lambda * est.leakage_returns[k], 1e-12);
    EXPECT_NEAR(est.cost_returns[k], tr[k].total_cost(), 1e-12);
    double steps = 0.0;
    for (int t = 0; t < tr[k].horizon(); ++t) steps += est.step_losses[k * tr[k].horizon() + t];
    EXPECT_NEAR(steps, est.returns[k], 1e-12);
  }
}

TEST(TrainConfig, ValidationRejectsBadValues) {
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), Error);
  c.baseline = BaselineKind::kNone;
  EXPECT_NO_THROW(c.validate());
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(TrainConfig, UnknownFieldIsNamed) {
  try {
    TrainConfig::from_json(nlohmann::json{{"batch_size", 8}, {"learning_rate", 0.1}});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidConfiguration);
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
}

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig c;
  c.lambda = 0.3;
  c.batch_size = 17;
  c.reward_to_go = true;
  c.max_grad_norm = 2.5;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

struct TrainedRun {
  RecurrentPolicy policy;
  TrainReport report;
};

TrainedRun short_run(double lambda, int iterations) {
  const TabularInstance inst = random_instance(21);
  RecurrentPolicy policy = spread_recurrent(inst.model, 22);
  TrainConfig c;
  c.lambda = lambda;
  c.batch_size = 16;
  c.iterations = iterations;
  c.classifier_hidden = 4;
  c.classifier_warmup_steps = 5;
  c.classifier_refresh_steps = 2;
  c.seed = 23;
  ClassifierPair pair = ClassifierPair::init(inst.model.indices(), inst.model.control_count(),
                                             inst.model.chain().size(), 4, 24);
  TrainReport report = train(inst.model, inst.cost, policy, pair, c);
  return {std::move(policy), std::move(report)};
}

TEST(Train, ZeroIterationsLeavesPolicyUntouched) {
  const TrainedRun r = short_run(0.5, 0);
  const TabularInstance inst = random_instance(21);
  const RecurrentPolicy fresh = spread_recurrent(inst.model, 22);
  EXPECT_TRUE(r.report.iterations.empty());
  EXPECT_EQ(std::vector<double>(r.policy.params().begin(), r.policy.params().end()),
            std::vector<double>(fresh.params().begin(), fresh.params().end()));
}

TEST(Train, MetricStreamIsReproducible) {
  const TrainedRun a = short_run(0.5, 4);
  const TrainedRun b = short_run(0.5, 4);
  ASSERT_EQ(a.report.iterations.size(), 4u);
  EXPECT_EQ(a.report.to_jsonl(), b.report.to_jsonl());
  EXPECT_EQ(std::vector<double>(a.policy.params().begin(), a.policy.params().end()),
            std::vector<double>(b.policy.params().begin(), b.policy.params().end()));
  for (const IterationRecord& rec : a.report.iterations) EXPECT_TRUE(std::isfinite(rec.objective));
}

TEST(Pretrain, ImitationLossFallsAndTeacherNeedsLinearModel) {
  nlohmann::json cfg = read_json_file(PRIVCTRL_CONFIG_DIR "/co2.json");
  cfg["model"]["T"] = 8;
  const SystemModel model = model_from_json(cfg["model"]);
  const StageCost cost = cost_from_json(cfg, model);
  Architecture arch;
  arch.observations = model.observation_count();
  arch.indices = model.indices();
  arch.controls = model.control_count();
  arch.hidden = 8;
  RecurrentPolicy p = RecurrentPolicy::init(arch, 5);
  PretrainConfig pc;
  pc.iterations = 40;
  pc.batch_size = 16;
  pc.lr = 0.02;
  const std::vector<double> losses = pretrain_imitation(model, cost, p, pc);
  ASSERT_EQ(losses.size(), 40u);
  EXPECT_LT(losses.back(), 0.5 * losses.front());

  pc.iterations = 0;
  const std::vector<double> before(p.params().begin(), p.params().end());
  EXPECT_TRUE(pretrain_imitation(model, cost, p, pc).empty());
  EXPECT_EQ(before, std::vector<double>(p.params().begin(), p.params().end()));

  const TabularInstance inst = random_instance(1);
  EXPECT_THROW(coarse_proportional_teacher(inst.model, 6.2), Error);
}

}  // namespace
}  // namespace privctrl
