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
#include <map>
#include <vector>

#include <gtest/gtest.h>

#include "privctrl/error.h"
#include "privctrl/io.h"
#include "privctrl/model.h"
#include "privctrl/oracle.h"
#include "privctrl/policy.h"

namespace privctrl {
namespace {

SystemModel co2_model() {
  return model_from_json(read_json_file(PRIVCTRL_CONFIG_DIR "/co2.json")["model"]);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

TEST(MarkovChainTest, EmpiricalTransitionRow) {
  const SystemModel m = co2_model();
  MarkovChain chain = m.chain();
  chain.initial = {1.0, 0.0, 0.0};
  RandomStream rng(11);
  std::vector<int> counts(3, 0);
  int from_zero = 0;
  for (int rep = 0; rep < 2000; ++rep) {
    const std::vector<int> y = sample_private_path(chain, 60, rng);
    for (std::size_t t = 1; t < y.size(); ++t) {
      if (y[t - 1] != 0) continue;
      ++counts[y[t]];
      ++from_zero;
    }
  }
  ASSERT_GT(from_zero, 30000);
  EXPECT_NEAR(counts[0] / double(from_zero), 0.80, 0.01);
  EXPECT_NEAR(counts[1] / double(from_zero), 0.15, 0.01);
  EXPECT_NEAR(counts[2] / double(from_zero), 0.05, 0.01);
}

TEST(MarkovChainTest, IdentityChainIsConstant) {
  MarkovChain chain;
  chain.values = {0, 1};
  chain.transition = {1, 0, 0, 1};
  chain.initial = {1, 0};
  RandomStream rng(1);
  for (int y : sample_private_path(chain, 20, rng)) EXPECT_EQ(y, 0);
}

TEST(MarkovChainTest, StationaryIsFixedPoint) {
  const SystemModel model = co2_model();
  const MarkovChain& chain = model.chain();
  const std::vector<double> pi = stationary_distribution(chain);
  for (int j = 0; j < 3; ++j) {
    double v = 0.0;
    for (int i = 0; i < 3; ++i) v += pi[i] * chain.p(i, j);
    EXPECT_NEAR(v, pi[j], 1e-12);
  }
}

TEST(MarkovChainTest, RejectsNonStochasticRows) {
  MarkovChain chain;
  chain.values = {0, 1};
  chain.transition = {0.5, 0.6, 0.0, 1.0};
  chain.initial = {1, 0};
  EXPECT_THROW(chain.validate(), Error);
}

TEST(ModelTest, MeanStepMatchesCoefficients) {
  const SystemModel m = co2_model();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
  const int zero = m.control_index(0.0);
  EXPECT_NEAR(m.linear_mean(x, 1, zero)[0], 0.6, 1e-15);
  x[0] = 1.0;
  const int u = m.control_index(6.0);
  EXPECT_NEAR(m.linear_mean(x, 0, u)[0], 0.85 - 0.6, 1e-15);
}

TEST(ModelTest, NonMemberControlIsRejected) {
  const SystemModel m = co2_model();
  RandomStream rng(1);
  EXPECT_THROW(m.step_value(Eigen::VectorXd::Zero(1), 0, 0.5, rng), Error);
}

TEST(ModelTest, QuantizerCellsAndSaturation) {
  const UniformQuantizer q(8, -2.0, 2.0);
  // Cells are 0.5 wide, so 0.6 falls in [0.5, 1.0).
  EXPECT_EQ(q.quantize(0.6), 5);
  EXPECT_EQ(q.quantize(-2.0), 0);
  EXPECT_EQ(q.quantize(7.0), 7);
  EXPECT_EQ(q.quantize(-7.0), 0);
  EXPECT_DOUBLE_EQ(q.center(5), 0.75);
}

TEST(ModelTest, ObservationFrequenciesMatchCellMasses) {
  const SystemModel m = co2_model();
  RandomStream rng(5);
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
  std::vector<int> counts(8, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[m.observe(x, rng)];
  // Cells adjacent to zero are [-0.5, 0) and [0, 0.5).
  const double inner = normal_cdf(0.5 / 0.1) - 0.5;
  EXPECT_NEAR(counts[4] / double(n), inner, 0.01);
  EXPECT_NEAR(counts[3] / double(n), inner, 0.01);
  for (int z = 0; z < 8; ++z) {
    EXPECT_NEAR(counts[z] / double(n), m.observation_probability(x, z), 0.01);
  }
}

TEST(ModelTest, TabularStepFrequencies) {
  const nlohmann::json cfg = read_json_file(PRIVCTRL_CONFIG_DIR "/tiny_tabular.json");
  const SystemModel m = model_from_json(cfg["model"]);
  RandomStream rng(8);
  Eigen::VectorXd x(1);
  x[0] = 0;
  int ones = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ones += m.step(x, 1, 0, rng)[0] == 1.0;
  EXPECT_NEAR(ones / double(n), m.kx(0, 1, 0, 1), 0.01);
}

TEST(ModelTest, JsonRoundTripKeepsKernels) {
  const nlohmann::json cfg = read_json_file(PRIVCTRL_CONFIG_DIR "/tiny_tabular.json");
  const SystemModel a = model_from_json(cfg["model"]);
  const SystemModel b = model_from_json(model_to_json(a));
  ASSERT_EQ(a.table().kernel_x.size(), b.table().kernel_x.size());
  for (std::size_t i = 0; i < a.table().kernel_x.size(); ++i) {
    EXPECT_NEAR(a.table().kernel_x[i], b.table().kernel_x[i], 1e-12);
  }
  EXPECT_EQ(a.chain().transition, b.chain().transition);
}

TEST(ModelTest, MissingFieldIsNamed) {
  nlohmann::json cfg = read_json_file(PRIVCTRL_CONFIG_DIR "/co2.json")["model"];
  cfg.erase("sigma_w");
  try {
    model_from_json(cfg);
    FAIL() << "expected a configuration error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidConfiguration);
    EXPECT_NE(std::string(e.what()).find("sigma_w"), std::string::npos);
  }
}

TEST(RolloutTest, SeedDeterminism) {
  const SystemModel demo =
      model_from_json(read_json_file(PRIVCTRL_CONFIG_DIR "/co2_demo.json")["model"]);
  const StageCost cost = StageCost::quadratic(1.0, 0.01, demo.controls());
  const KpBaselinePolicy p(6.2, demo);
  const auto a = rollout_batch(demo, p, cost, 3, 0, 4);
  const auto b = rollout_batch(demo, p, cost, 3, 0, 4);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(a[i].x, b[i].x);
    EXPECT_EQ(a[i].s, b[i].s);
    EXPECT_EQ(a[i].cost, b[i].cost);
  }
}

TEST(RolloutTest, ZeroGainIsConstantNearZeroControl) {
  const SystemModel demo =
      model_from_json(read_json_file(PRIVCTRL_CONFIG_DIR "/co2_demo.json")["model"]);
  const StageCost cost = StageCost::quadratic(1.0, 0.01, demo.controls());
  const KpBaselinePolicy p(0.0, demo);
  const int zero = demo.nearest_control(0.0);
  for (const Trajectory& tr : rollout_batch(demo, p, cost, 1, 0, 3)) {
    for (int u : tr.u) EXPECT_EQ(u, zero);
    EXPECT_EQ(tr.s, tr.z);
  }
}

TEST(RolloutTest, BaselineRejectsTooFewIndices) {
  EXPECT_THROW(KpBaselinePolicy(6.2, co2_model()), Error);
}

TEST(RolloutTest, FuturePolicyDrawsDoNotChangeThePast) {
  const nlohmann::json cfg = read_json_file(PRIVCTRL_CONFIG_DIR "/tiny_tabular.json");
  const SystemModel full = model_from_json(cfg["model"]);
  nlohmann::json shorter = cfg["model"];
  shorter["T"] = 2;
  const SystemModel prefix = model_from_json(shorter);
  const StageCost cost = cost_from_json(cfg, full);
  const auto policy = random_history_policy({2, 2, 2}, 4);
  for (std::uint64_t id = 0; id < 20; ++id) {
    const Trajectory a = rollout(full, *policy, cost, RandomStream(9, id));
    const Trajectory b = rollout(prefix, *policy, cost, RandomStream(9, id));
    for (int t = 0; t < 2; ++t) {
      EXPECT_EQ(a.z[t], b.z[t]);
      EXPECT_EQ(a.s[t], b.s[t]);
      EXPECT_EQ(a.u[t], b.u[t]);
    }
  }
}

TEST(RolloutTest, EmpiricalJointMatchesEnumeration) {
  const nlohmann::json cfg = read_json_file(PRIVCTRL_CONFIG_DIR "/tiny_tabular.json");
  nlohmann::json mc = cfg["model"];
  mc["T"] = 2;
  const SystemModel m = model_from_json(mc);
  const StageCost cost = cost_from_json(cfg, m);
  const auto policy = random_history_policy({2, 2, 2}, 6);
  const EnumeratedJoint joint = enumerate_distribution(m, *policy, cost);
  std::map<std::vector<int>, double> exact;
  for (std::size_t o = 0; o < joint.size(); ++o) {
    std::vector<int> key;
    for (int t = 0; t < 2; ++t) {
      key.insert(key.end(), {joint.y(o, t), joint.z(o, t), joint.s(o, t), joint.u(o, t)});
    }
    exact[key] += joint.prob[o];
  }
  const int n = 100000;
  std::map<std::vector<int>, double> empirical;
  for (const Trajectory& tr : rollout_batch(m, *policy, cost, 17, 0, n)) {
    std::vector<int> key;
    for (int t = 0; t < 2; ++t) key.insert(key.end(), {tr.y[t], tr.z[t], tr.s[t], tr.u[t]});
    empirical[key] += 1.0 / n;
  }
  double tv = 0.0;
  for (const auto& [k, p] : exact) tv += std::abs(p - empirical[k]);
  for (const auto& [k, p] : empirical) {
    if (!exact.contains(k)) tv += p;
  }
  tv *= 0.5;
  const double cells = static_cast<double>(exact.size());
  EXPECT_LT(tv, 3.0 * std::sqrt(cells / n));
}

}  // namespace
}  // namespace privctrl
