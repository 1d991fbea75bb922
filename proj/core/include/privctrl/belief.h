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

#ifndef PRIVCTRL_BELIEF_H_
#define PRIVCTRL_BELIEF_H_

#include <compare>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "privctrl/model.h"
#include "privctrl/policy.h"

namespace privctrl {

// One support point (x_t, y^{t-1}, z^t) of a belief.
struct AtomKey {
  int x = 0;
  std::vector<int> y;
  std::vector<int> z;

  auto operator<=>(const AtomKey&) const = default;
};

enum class BeliefTag { kQuantizer, kController };

// Finite weighted support for b^e_t (quantizer tag) or b^c_t (controller tag)
// on a tabular model. time is t (1-based): z-histories have length t and
// y-histories length t - 1.
struct BeliefState {
  BeliefTag tag = BeliefTag::kQuantizer;
  int time = 1;
  std::map<AtomKey, double> atoms;

  double total() const;
  // Throws kInternalInconsistency if weights do not sum to 1 within tol or
  // histories have inconsistent lengths.
  void validate(double tol = 1e-10) const;
};

// q_t(. | z^t) for every z-history in a belief's support.
struct QuantizerCollection {
  int indices = 0;
  std::function<void(const std::vector<int>& z_history, std::span<double> s_probs)> fn;

  std::vector<double> operator()(const std::vector<int>& z_history) const;
};

// The collection selected by common information (s^{t-1}, u^{t-1}).
QuantizerCollection collection_from_policy(const JointPolicy& policy,
                                           std::vector<int> s_history,
                                           std::vector<int> u_history);

constexpr double kDefaultPrune = 1e-15;

// b^e_1 = p(x | z_1) P(z_1) over every z_1 (joint form used in the
// optimality equations).
BeliefState init_belief_joint(const SystemModel& model);
// b^e_1 conditioned on the realized z_1: weights P(x | z_1).
BeliefState init_belief(const SystemModel& model, int z1);

BeliefState update_phi_c(const BeliefState& belief, const QuantizerCollection& q, int s);
BeliefState update_phi_e(const BeliefState& belief, int u, const SystemModel& model,
                         double prune = kDefaultPrune);
// Direct one-shot update b^e_{t+1} = Phi(b^e_t, (q_t, u), s_t).
BeliefState update_phi_joint(const BeliefState& belief, const QuantizerCollection& q, int s,
                             int u, const SystemModel& model, double prune = kDefaultPrune);

// log [sum_z q b / ((sum_{y,z} q b)(sum_z b))] evaluated at (s, y-history).
double information_loss_from_belief(const BeliefState& belief, const QuantizerCollection& q,
                                    int s, const std::vector<int>& y_history);

// E[c_i | s^{t-1}, u^{t-1}] = I(S_t; Y^{t-1} | s^{t-1}, u^{t-1}) under the belief.
double conditional_mi_from_belief(const BeliefState& belief, const QuantizerCollection& q);

// b^a_t(y^t) = sum over (x, z^{t+1}) of b^e_{t+1}.
std::map<std::vector<int>, double> adversary_posterior(const BeliefState& belief);

// One JSON object per atom: {"x":..,"y":[..],"z":[..],"w":..}.
std::string belief_to_jsonl(const BeliefState& belief);

}  // namespace privctrl

#endif  // PRIVCTRL_BELIEF_H_
