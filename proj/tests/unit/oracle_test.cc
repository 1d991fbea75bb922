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

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "privctrl/error.h"
#include "privctrl/model.h"
#include "privctrl/oracle.h"
#include "privctrl/policy.h"
#include "privctrl/rng.h"

namespace privctrl {
namespace {

// x2 = y1 deterministically, z = x, i.i.d. uniform binary private state.
SystemModel copy_model(int horizon) {
  nlohmann::json m = {{"kind", "tabular"},
                      {"T", horizon},
                      {"M", 2},
                      {"x_states", 2},
                      {"z_levels", 2},
                      {"states", {0, 1}},
                      {"transition", {{0.5, 0.5}, {0.5, 0.5}}},
                      {"initial", {0.5, 0.5}},
                      {"controls", {0.0, 1.0}},
                      {"kernel_x", {{{{1.0, 0.0}, {1.0, 0.0}}, {{0.0, 1.0}, {0.0, 1.0}}},
                                    {{{1.0, 0.0}, {1.0, 0.0}}, {{0.0, 1.0}, {0.0, 1.0}}}}},
                      {"kernel_z", {{1.0, 0.0}, {0.0, 1.0}}},
                      {"initial_x", {0.5, 0.5}}};
  return model_from_json(m);
}

StageCost unit_cost() { return StageCost::table(2, {0.0, 0.1, 1.0, 1.1}, {0.0, 1.0}); }

TabularPolicy identity_policy() {
  return TabularPolicy::memoryless({2, 2, 2}, {1, 0, 0, 1}, {1, 0, 1, 0});
}

RecurrentPolicy spread_recurrent(const SystemModel& model, std::uint64_t seed, int hidden = 3) {
  Architecture arch;
  arch.observations = model.observation_count();
  arch.indices = model.indices();
  arch.controls = model.control_count();
  arch.hidden = hidden;
  RecurrentPolicy p = RecurrentPolicy::init(arch, seed);
  RandomStream r(seed, 1);
  for (double& v : p.mutable_params()) v = 3.0 * (r.uniform() - 0.5);
  return p;
}

TEST(Enumeration, ProbabilitiesSumToOne) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const TabularInstance inst = random_instance(seed);
    const EnumeratedJoint j = enumerate_distribution(inst.model, *inst.policy, inst.cost);
    EXPECT_NEAR(j.total_probability(), 1.0, 1e-12) << seed;
    EXPECT_TRUE(std::all_of(j.prob.begin(), j.prob.end(), [](double p) { return p >= 0.0; }));
  }
}

TEST(Enumeration, KeepingStatesDoesNotChangeMarginals) {
  InstanceLimits limits;
  limits.max_horizon = 2;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TabularInstance inst = random_instance(seed, limits);
    const EnumeratedJoint a = enumerate_distribution(inst.model, *inst.policy, inst.cost);
    EnumerationOptions keep;
    keep.keep_states = true;
    const EnumeratedJoint b = enumerate_distribution(inst.model, *inst.policy, inst.cost, keep);
    EXPECT_NEAR(a.expected_cost(), b.expected_cost(), 1e-12);
    EXPECT_NEAR(exact_mutual_information(a), exact_mutual_information(b), 1e-12);
  }
}

TEST(Enumeration, CapIsEnforced) {
  const TabularInstance inst = random_instance(3);
  EnumerationOptions options;
  options.max_outcomes = 1;
  try {
    enumerate_distribution(inst.model, *inst.policy, inst.cost, options);
    FAIL() << "expected the outcome cap to trip";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInstanceTooLarge);
  }
}

TEST(Enumeration, CsvHasOneRowPerOutcome) {
  const SystemModel model = copy_model(2);
  const EnumeratedJoint j = enumerate_distribution(model, identity_policy(), unit_cost());
  std::ostringstream os;
  j.write_csv(os);
  const std::string text = os.str();
  const auto lines = std::count(text.begin(), text.end(), '\n');
  EXPECT_EQ(static_cast<std::size_t>(lines), j.size() + 1);
}

TEST(MutualInformation, RevealingPolicyLeaksOneBit) {
  // S_2 = X_2 = Y_1, Y uniform and i.i.d.
  const EnumeratedJoint j = enumerate_distribution(copy_model(2), identity_policy(), unit_cost());
  EXPECT_NEAR(exact_mutual_information(j), std::log(2.0), 1e-12);
}

TEST(MutualInformation, ConstantQuantizerAndControlLeakNothing) {
  const TabularPolicy constant = TabularPolicy::memoryless({2, 2, 2}, {1, 0, 1, 0}, {1, 0, 1, 0});
  const EnumeratedJoint j = enumerate_distribution(copy_model(3), constant, unit_cost());
  EXPECT_NEAR(exact_mutual_information(j), 0.0, 1e-14);
}

TEST(MutualInformation, SingleStepCannotLeak) {
  // At T = 1 the private state has not yet influenced anything observable.
  InstanceLimits limits;
  limits.min_horizon = limits.max_horizon = 1;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const TabularInstance inst = random_instance(seed, limits);
    const EnumeratedJoint j = enumerate_distribution(inst.model, *inst.policy, inst.cost);
    EXPECT_NEAR(exact_mutual_information(j), 0.0, 1e-12);
  }
}

TEST(ChainRule, TermsSumToMutualInformation) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const TabularInstance inst = random_instance(seed);
    const EnumeratedJoint j = enumerate_distribution(inst.model, *inst.policy, inst.cost);
    const ChainDecomposition chain = exact_chain_decomposition(j);
    ASSERT_EQ(static_cast<int>(chain.terms.size()), j.horizon);
    EXPECT_NEAR(chain.total(), exact_mutual_information(j), 1e-10) << seed;
    EXPECT_NEAR(chain.terms[0], 0.0, 1e-14);
    for (int t = 0; t < j.horizon; ++t) {
      EXPECT_GE(chain.terms[t], -1e-12);
      EXPECT_NEAR(chain.cross_terms[t], 0.0, 1e-10) << seed << " t=" << t;
      EXPECT_NEAR(chain.control_terms[t], 0.0, 1e-10) << seed << " t=" << t;
    }
  }
}

TEST(ChainRule, InformationLossAveragesToTerm) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const TabularInstance inst = random_instance(seed);
    const EnumeratedJoint j = enumerate_distribution(inst.model, *inst.policy, inst.cost);
    const ChainDecomposition chain = exact_chain_decomposition(j);
    const std::vector<double> c = exact_information_losses(j);
    for (int t = 0; t < j.horizon; ++t) {
      double mean = 0.0;
      for (std::size_t o = 0; o < j.size(); ++o) mean += j.prob[o] * c[o * j.horizon + t];
      EXPECT_NEAR(mean, chain.terms[t], 1e-10) << seed << " t=" << t;
    }
  }
}

TEST(ChainRule, PointwiseLossMatchesPerOutcomeTable) {
  const TabularInstance inst = random_instance(4);
  const EnumeratedJoint j = enumerate_distribution(inst.model, *inst.policy, inst.cost);
  const std::vector<double> c = exact_information_losses(j);
  const std::size_t stride = std::max<std::size_t>(1, j.size() / 25);
  for (std::size_t o = 0; o < j.size(); o += stride) {
    if (j.prob[o] == 0.0) continue;
    const int t = j.horizon;
    std::vector<int> ys, ss, us;
    for (int k = 0; k + 1 < t; ++k) {
      ys.push_back(j.y(o, k));
      ss.push_back(j.s(o, k));
      us.push_back(j.u(o, k));
    }
    EXPECT_NEAR(exact_information_loss(j, t, j.s(o, t - 1), ys, ss, us),
                c[o * j.horizon + t - 1], 1e-10);
  }
}

TEST(Objective, ZeroLambdaIsExpectedCost) {
  const TabularInstance inst = random_instance(6);
  const ExactObjective obj = exact_objective(inst.model, *inst.policy, inst.cost, 0.0);
  EXPECT_DOUBLE_EQ(obj.value, obj.expected_cost);
}

TEST(Objective, AdditiveAndMutualInformationFormsAgree) {
  for (std::uint64_t seed = 1; seed <= 15; ++seed) {
    const TabularInstance inst = random_instance(seed);
    const ExactObjective obj = exact_objective(inst.model, *inst.policy, inst.cost, 0.7);
    EXPECT_NEAR(obj.additive_leakage, obj.mutual_information, 1e-10);
    EXPECT_NEAR(obj.value, obj.additive_value, 1e-10);
    EXPECT_NEAR(obj.value, obj.expected_cost + 0.7 * obj.mutual_information, 1e-12);
  }
}

TEST(Objective, RevealingCostByHand) {
  // u = 0 always; stage cost of x at t = 1 is 0 or 1 with equal odds and the
  // terminal x_2 = y_1 costs 0 or 1 likewise.
  const ExactObjective obj = exact_objective(copy_model(2), identity_policy(), unit_cost(), 1.0);
  EXPECT_NEAR(obj.expected_cost, 1.0, 1e-12);
  EXPECT_NEAR(obj.value, 1.0 + std::log(2.0), 1e-12);
}

TEST(Gradient, ScoreMatchesFiniteDifferences) {
  const TabularInstance inst = random_instance(2);
  for (double lambda : {0.0, 0.5}) {
    const RecurrentPolicy p = spread_recurrent(inst.model, 17);
    GradientCheckOptions options;
    const GradientCheck check = exact_gradient(inst.model, p, inst.cost, lambda, options);
    EXPECT_TRUE(check.passed) << "lambda " << lambda << " err " << check.max_relative_error;
    EXPECT_EQ(check.score.size(), p.params().size());
  }
}

TEST(Gradient, MismatchRaisesWhenRequested) {
  // A tolerance of zero cannot be met by finite differences.
  const TabularInstance inst = random_instance(2);
  const RecurrentPolicy p = spread_recurrent(inst.model, 17);
  GradientCheckOptions options;
  options.tolerance = 0.0;
  options.throw_on_mismatch = true;
  try {
    exact_gradient(inst.model, p, inst.cost, 0.5, options);
    FAIL() << "expected a mismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInternalInconsistency);
  }
}

TEST(Gradient, InformationLossScoreHasZeroMean) {
  for (std::uint64_t seed : {2u, 5u, 9u}) {
    const TabularInstance inst = random_instance(seed);
    const RecurrentPolicy p = spread_recurrent(inst.model, seed + 40);
    const std::vector<double> g = expected_information_loss_gradient(inst.model, p, inst.cost);
    double worst = 0.0;
    for (double v : g) worst = std::max(worst, std::abs(v));
    EXPECT_LT(worst, 1e-10) << seed;
  }
}

TEST(Gradient, RelativeErrorUsesFloor) {
  EXPECT_DOUBLE_EQ(max_relative_error({1.0, 0.0}, {1.0, 0.0}, 1e-2), 0.0);
  // Second component is compared against 1e-2 * 10.
  EXPECT_NEAR(max_relative_error({10.0, 1e-3}, {10.0, 0.0}, 1e-2), 1e-2, 1e-15);
  // Symmetric: the larger magnitude is the denominator.
  EXPECT_NEAR(max_relative_error({2.0}, {1.0}, 1e-2), 0.5, 1e-15);
}

TEST(BruteForce, SingleStepValueIsPolicyIndependent) {
  // With T = 1 only the terminal cost of x_1 is charged and nothing leaks.
  InstanceLimits limits;
  limits.min_horizon = limits.max_horizon = 1;
  const SystemModel model = random_tabular_model(8, limits);
  const StageCost cost = random_cost(model, 8);
  double expected = 0.0;
  const TabularParams& tab = model.table();
  for (int x = 0; x < tab.states; ++x) {
    expected += tab.initial_x[x] * cost.terminal(Eigen::VectorXd::Constant(1, x));
  }
  const SearchResult r = brute_force_policy_search(model, cost, 3.0, make_policy_grid(model));
  for (double v : r.values) EXPECT_NEAR(v, expected, 1e-12);
}

class Mixture : public ::testing::TestWithParam<int> {};

TEST_P(Mixture, NeverBeatsBestDeterministic) {
  InstanceLimits limits;
  limits.max_alphabet = 2;
  limits.max_horizon = 2;
  const std::uint64_t seed = static_cast<std::uint64_t>(GetParam());
  const SystemModel model = random_tabular_model(seed, limits);
  const StageCost cost = random_cost(model, seed);
  const PolicyGrid grid = make_policy_grid(model);
  const double lambda = 0.5;
  const SearchResult best = brute_force_policy_search(model, cost, lambda, grid);
  const PolicyShape shape{model.observation_count(), model.indices(), model.control_count()};
  RandomStream r(seed, 3);
  const auto& q = grid.quantizers[best.quantizer];
  for (int k = 0; k < 5; ++k) {
    const int a = r.uniform_int(static_cast<int>(grid.controllers.size()));
    const int b = r.uniform_int(static_cast<int>(grid.controllers.size()));
    const TabularPolicy mixed(shape, q, mix_controllers(grid.controllers[a], grid.controllers[b],
                                                        0.5));
    const ExactObjective obj = exact_objective(model, mixed, cost, lambda);
    EXPECT_GE(obj.value, best.value - 1e-10);
  }
}

INSTANTIATE_TEST_SUITE_P(Instances, Mixture, ::testing::Range(1, 11));

TEST(BruteForce, LargeLambdaPrefersConstantQuantizer) {
  const SystemModel model = copy_model(2);
  const StageCost cost = unit_cost();
  const PolicyGrid grid = make_policy_grid(model);
  const SearchResult r = brute_force_policy_search(model, cost, 1e3, grid);
  const PolicyShape shape{2, 2, 2};
  const TabularPolicy chosen(shape, grid.quantizers[r.quantizer], grid.controllers[r.controller]);
  const ExactObjective obj = exact_objective(model, chosen, cost, 0.0);
  EXPECT_NEAR(exact_objective(model, chosen, cost, 1e3).mutual_information, 0.0, 1e-12);
  EXPECT_NEAR(r.value, obj.expected_cost, 1e-9);
  std::vector<double> a(2), b(2);
  grid.quantizers[r.quantizer](PolicyCarry{}, 0, a);
  grid.quantizers[r.quantizer](PolicyCarry{}, 1, b);
  EXPECT_EQ(a, b);
}

TEST(BruteForce, GridSizesAreExact) {
  const PolicyShape shape{2, 2, 2};
  EXPECT_EQ(memoryless_quantizer_grid(shape).size(), 4u);
  bool exhaustive = false;
  // t = 1: 2 histories; t = 2: 2 * 2 * 2 = 8 histories; 2^10 controllers.
  EXPECT_EQ(history_controller_grid(shape, 2, {}, &exhaustive).size(), 1024u);
  EXPECT_TRUE(exhaustive);
  GridOptions small;
  small.max_exhaustive = 10;
  small.random_subset = 7;
  EXPECT_EQ(history_controller_grid(shape, 2, small, &exhaustive).size(), 7u);
  EXPECT_FALSE(exhaustive);
}

TEST(Instances, OutcomeCountMatchesEnumeration) {
  const TabularInstance inst = random_instance(12);
  const EnumeratedJoint j = enumerate_distribution(inst.model, *inst.policy, inst.cost);
  EXPECT_GE(outcome_count(inst.model, false), j.size());
}

}  // namespace
}  // namespace privctrl
