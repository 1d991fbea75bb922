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
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "privctrl/belief.h"
#include "privctrl/error.h"
#include "privctrl/model.h"
#include "privctrl/oracle.h"

namespace privctrl {
namespace {

// Two-state x with symmetric observation noise `flip`, two private states.
SystemModel two_state(double flip, std::vector<double> transition = {0.7, 0.3, 0.4, 0.6},
                      int horizon = 3) {
  nlohmann::json m = {
      {"kind", "tabular"},
      {"T", horizon},
      {"M", 2},
      {"x_states", 2},
      {"z_levels", 2},
      {"states", {0, 1}},
      {"transition", {{transition[0], transition[1]}, {transition[2], transition[3]}}},
      {"initial", {0.5, 0.5}},
      {"controls", {0.0, 1.0}},
      {"kernel_x", {{{{0.9, 0.1}, {0.5, 0.5}}, {{0.2, 0.8}, {0.3, 0.7}}},
                    {{{0.6, 0.4}, {0.1, 0.9}}, {{0.4, 0.6}, {0.25, 0.75}}}}},
      {"kernel_z", {{1.0 - flip, flip}, {flip, 1.0 - flip}}},
      {"initial_x", {0.5, 0.5}}};
  return model_from_json(m);
}

QuantizerCollection constant_collection(std::vector<double> probs) {
  QuantizerCollection q;
  q.indices = static_cast<int>(probs.size());
  q.fn = [probs](const std::vector<int>&, std::span<double> out) {
    std::copy(probs.begin(), probs.end(), out.begin());
  };
  return q;
}

QuantizerCollection revealing_collection() {
  QuantizerCollection q;
  q.indices = 2;
  q.fn = [](const std::vector<int>& z, std::span<double> out) {
    out[0] = z.back() == 0 ? 1.0 : 0.0;
    out[1] = 1.0 - out[0];
  };
  return q;
}

TEST(BeliefTest, InitialBeliefByBayesRule) {
  const BeliefState b = init_belief(two_state(0.1), 0);
  EXPECT_NEAR(b.atoms.at(AtomKey{0, {}, {0}}), 0.9, 1e-15);
  EXPECT_NEAR(b.atoms.at(AtomKey{1, {}, {0}}), 0.1, 1e-15);
  b.validate();
}

TEST(BeliefTest, NoiselessObservationGivesSingleAtom) {
  const BeliefState b = init_belief(two_state(0.0), 0);
  ASSERT_EQ(b.atoms.size(), 1u);
  EXPECT_EQ(b.atoms.begin()->first.x, 0);
  EXPECT_EQ(b.atoms.begin()->second, 1.0);
}

TEST(BeliefTest, OutOfRangeObservationIsRejected) {
  EXPECT_THROW(init_belief(two_state(0.1), 2), Error);
}

TEST(BeliefTest, UniformQuantizerLeavesBeliefUnchanged) {
  const SystemModel m = two_state(0.2);
  const BeliefState e = update_phi_e(update_phi_c(init_belief_joint(m),
                                                  constant_collection({0.5, 0.5}), 0),
                                     1, m);
  const BeliefState c = update_phi_c(e, constant_collection({0.5, 0.5}), 1);
  ASSERT_EQ(c.atoms.size(), e.atoms.size());
  for (const auto& [k, w] : e.atoms) EXPECT_NEAR(c.atoms.at(k), w, 1e-15);
}

TEST(BeliefTest, DeterministicQuantizerRestrictsSupport) {
  const SystemModel m = two_state(0.2);
  const BeliefState c = update_phi_c(init_belief_joint(m), revealing_collection(), 1);
  for (const auto& [k, w] : c.atoms) EXPECT_EQ(k.z.back(), 1);
  EXPECT_THROW(update_phi_c(c, constant_collection({1.0, 0.0}), 1), Error);
}

TEST(BeliefTest, SupportGrowsByPrivateTimesObservations) {
  const SystemModel m = two_state(0.2);
  const BeliefState c = update_phi_c(init_belief_joint(m), constant_collection({0.5, 0.5}), 0);
  const BeliefState e = update_phi_e(c, 0, m, 0.0);
  // Each (x, z) atom branches into |Y| x |Z| (y, z') pairs with two x' each;
  // atoms are keyed on the new x, so count distinct (y, z-history) keys.
  std::set<std::pair<std::vector<int>, std::vector<int>>> before, after;
  for (const auto& [k, w] : c.atoms) before.insert({k.y, k.z});
  for (const auto& [k, w] : e.atoms) after.insert({k.y, k.z});
  EXPECT_EQ(after.size(), before.size() * 2 * 2);
  e.validate();
}

TEST(BeliefTest, IdentityChainFreezesPrivateMarginal) {
  const SystemModel m = two_state(0.2, {1.0, 0.0, 0.0, 1.0});
  BeliefState b = init_belief_joint(m);
  for (int t = 0; t < 2; ++t) {
    b = update_phi_e(update_phi_c(b, constant_collection({0.5, 0.5}), 0), 0, m);
    double y0_first = 0.0, y0_last = 0.0;
    for (const auto& [k, w] : b.atoms) {
      if (k.y.front() == 0) y0_first += w;
      if (k.y.back() == 0) y0_last += w;
      for (int y : k.y) EXPECT_EQ(y, k.y.front());
    }
    EXPECT_NEAR(y0_first, y0_last, 1e-15);
  }
}

TEST(BeliefTest, ConstantQuantizerHasNoInformationLoss) {
  const SystemModel m = two_state(0.2);
  BeliefState b = update_phi_joint(init_belief_joint(m), constant_collection({0.3, 0.7}), 1, 0, m);
  const QuantizerCollection q = constant_collection({0.3, 0.7});
  for (const std::vector<int>& y : {std::vector<int>{0}, std::vector<int>{1}}) {
    for (int s = 0; s < 2; ++s) EXPECT_NEAR(information_loss_from_belief(b, q, s, y), 0.0, 1e-14);
  }
  EXPECT_NEAR(conditional_mi_from_belief(b, q), 0.0, 1e-14);
}

TEST(BeliefTest, ConditionalMiIsNonNegative) {
  const SystemModel m = two_state(0.1);
  BeliefState b = update_phi_joint(init_belief_joint(m), revealing_collection(), 0, 1, m);
  EXPECT_GE(conditional_mi_from_belief(b, revealing_collection()), 0.0);
}

TEST(BeliefTest, PosteriorIsNormalized) {
  const SystemModel m = two_state(0.1);
  BeliefState b = update_phi_joint(init_belief_joint(m), revealing_collection(), 0, 1, m);
  double total = 0.0;
  for (const auto& [y, p] : adversary_posterior(b)) total += p;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(BeliefTest, AgreesWithEnumerationOnRandomInstances) {
  for (std::uint64_t seed = 1; seed <= 15; ++seed) {
    const TabularInstance inst = random_instance(seed);
    const BeliefAgreement a = compare_beliefs(inst.model, *inst.policy, inst.cost);
    EXPECT_LT(a.quantizer, 1e-10) << seed;
    EXPECT_LT(a.controller, 1e-10) << seed;
    EXPECT_LT(a.composition, 1e-12) << seed;
    EXPECT_LT(a.information_loss, 1e-10) << seed;
    EXPECT_GT(a.histories, 0);
  }
}

TEST(BeliefTest, JsonlDumpHasOneLinePerAtom) {
  const BeliefState b = init_belief_joint(two_state(0.2));
  const std::string dump = belief_to_jsonl(b);
  EXPECT_EQ(static_cast<std::size_t>(std::count(dump.begin(), dump.end(), '\n')), b.atoms.size());
}

}  // namespace
}  // namespace privctrl
