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

#ifndef PRIVCTRL_ORACLE_H_
#define PRIVCTRL_ORACLE_H_

#include <cstdint>
#include <memory>
#include <ostream>
#include <vector>

#include <Eigen/Core>

#include "privctrl/belief.h"
#include "privctrl/model.h"
#include "privctrl/policy.h"

namespace privctrl {

struct EnumerationOptions {
  std::size_t max_outcomes = 10'000'000;
  // When false the state path is summed out analytically and outcomes are
  // (y, z, s, u) paths; x symbols then read as -1.
  bool keep_states = false;
};

// Exact joint over full outcomes of a tabular model under a policy.
// Outcomes are stored in depth-first order; cost_mass[o] is
// sum over state paths of P * total stage cost.
struct EnumeratedJoint {
  int horizon = 0;
  int ny = 0, nx = 0, nz = 0, m = 0, nu = 0;
  bool has_states = false;
  std::vector<std::uint8_t> symbols;
  std::vector<double> prob;
  std::vector<double> cost_mass;

  std::size_t size() const { return prob.size(); }
  // t is 0-based here.
  int y(std::size_t o, int t) const { return symbols[(o * horizon + t) * 5 + 0]; }
  int x(std::size_t o, int t) const {
    const int v = symbols[(o * horizon + t) * 5 + 1];
    return v == 255 ? -1 : v;
  }
  int z(std::size_t o, int t) const { return symbols[(o * horizon + t) * 5 + 2]; }
  int s(std::size_t o, int t) const { return symbols[(o * horizon + t) * 5 + 3]; }
  int u(std::size_t o, int t) const { return symbols[(o * horizon + t) * 5 + 4]; }

  double total_probability() const;
  double expected_cost() const;
  void write_csv(std::ostream& os) const;
};

EnumeratedJoint enumerate_distribution(const SystemModel& model, const JointPolicy& policy,
                                       const StageCost& cost, EnumerationOptions options = {});

// I(S^T, U^T; Y^T).
double exact_mutual_information(const EnumeratedJoint& joint);

struct ChainDecomposition {
  // terms[t] = I(S_t; Y^{t-1} | S^{t-1}, U^{t-1}).
  std::vector<double> terms;
  // cross_terms[t] = I(S_t, U_t; Y_t^T | S^{t-1}, U^{t-1}, Y^{t-1}).
  std::vector<double> cross_terms;
  // control_terms[t] = I(U_t; Y^T | S^t, U^{t-1}).
  std::vector<double> control_terms;

  double total() const;
};

ChainDecomposition exact_chain_decomposition(const EnumeratedJoint& joint);

// Per-outcome c_i: losses[o * T + t] = log P(s_t | y^{t-1}, h) - log P(s_t | h),
// h = (s^{t-1}, u^{t-1}).
std::vector<double> exact_information_losses(const EnumeratedJoint& joint);

// c_i for one event; t is 1-based and histories have length t - 1.
double exact_information_loss(const EnumeratedJoint& joint, int t, int s_t,
                              const std::vector<int>& y_history,
                              const std::vector<int>& s_history,
                              const std::vector<int>& u_history);

// P(M = 1 | s_bar, y^{t-1}, h) (with_y) or P(M = 1 | s_bar, h) for the
// contrastive construction with a uniform decoy.
double exact_classifier_posterior(const EnumeratedJoint& joint, int t, int s_bar,
                                  const std::vector<int>& y_history,
                                  const std::vector<int>& s_history,
                                  const std::vector<int>& u_history, bool with_y);

// P(y_t | s^T, u^T) for every t, rows indexed by t (0-based).
Eigen::MatrixXd exact_private_marginals(const EnumeratedJoint& joint,
                                        const std::vector<int>& s_seq,
                                        const std::vector<int>& u_seq);

// Enumerated conditional matching b^e_t (conditioning on s^{t-1}, u^{t-1})
// or b^c_t (conditioning on s^t, u^{t-1}). Requires keep_states.
BeliefState exact_belief(const EnumeratedJoint& joint, BeliefTag tag, int t,
                         const std::vector<int>& s_history, const std::vector<int>& u_history);

struct ExactObjective {
  double expected_cost = 0.0;
  double mutual_information = 0.0;
  // sum_t E[c_i]
  double additive_leakage = 0.0;
  double value = 0.0;           // expected_cost + lambda * mutual_information
  double additive_value = 0.0;  // expected_cost + lambda * additive_leakage
};

ExactObjective exact_objective(const SystemModel& model, const JointPolicy& policy,
                               const StageCost& cost, double lambda,
                               EnumerationOptions options = {});
ExactObjective exact_objective(const EnumeratedJoint& joint, double lambda);

// sum_tau P(tau) R(tau) grad log P(tau) with exact per-outcome c_i.
std::vector<double> exact_score_gradient(const SystemModel& model, const RecurrentPolicy& policy,
                                         const StageCost& cost, double lambda,
                                         EnumerationOptions options = {});

// Fourth-order central differences of exact_objective(...).value.
std::vector<double> finite_difference_gradient(const SystemModel& model,
                                               const RecurrentPolicy& policy,
                                               const StageCost& cost, double lambda,
                                               double eps = 1e-3,
                                               EnumerationOptions options = {});

// E[sum_t grad c_i] with the outcome held fixed, computed analytically from
// the event marginals.
std::vector<double> expected_information_loss_gradient(const SystemModel& model,
                                                       const RecurrentPolicy& policy,
                                                       const StageCost& cost,
                                                       EnumerationOptions options = {});

struct GradientCheck {
  std::vector<double> score;
  std::vector<double> finite_difference;
  double max_relative_error = 0.0;
  double tolerance = 1e-5;
  bool passed = false;
};

// Relative error per component uses max(|a|, |b|, floor) with
// floor = floor_fraction * max_i |b_i|.
double max_relative_error(const std::vector<double>& a, const std::vector<double>& b,
                          double floor_fraction);

struct GradientCheckOptions {
  double eps = 1e-3;
  double tolerance = 1e-5;
  // Components smaller than this fraction of the largest one are compared
  // against it instead; finite differences cannot resolve them.
  double floor_fraction = 1e-3;
  std::size_t max_parameters = 200;
  bool throw_on_mismatch = false;
  EnumerationOptions enumeration;
};

GradientCheck exact_gradient(const SystemModel& model, const RecurrentPolicy& policy,
                             const StageCost& cost, double lambda,
                             GradientCheckOptions options = {});

// Candidate quantizer collections and controller maps for exhaustive search.
struct PolicyGrid {
  std::vector<TabularPolicy::QuantizerFn> quantizers;
  std::vector<TabularPolicy::ControllerFn> controllers;
  bool exhaustive = true;
};

struct GridOptions {
  std::size_t max_exhaustive = 100'000;
  std::size_t random_subset = 1'000;
  std::uint64_t seed = 1;
};

// All deterministic memoryless index maps z -> s.
std::vector<TabularPolicy::QuantizerFn> memoryless_quantizer_grid(const PolicyShape& shape);
// Deterministic controllers over full histories (s^t, u^{t-1}); exhaustive
// when the count is within max_exhaustive, otherwise a random subset.
std::vector<TabularPolicy::ControllerFn> history_controller_grid(const PolicyShape& shape,
                                                                 int horizon,
                                                                 const GridOptions& options,
                                                                 bool* exhaustive = nullptr);
PolicyGrid make_policy_grid(const SystemModel& model, const GridOptions& options = {});

// Decision-wise mixture w * a + (1 - w) * b.
TabularPolicy::ControllerFn mix_controllers(TabularPolicy::ControllerFn a,
                                            TabularPolicy::ControllerFn b, double w);

struct SearchResult {
  int quantizer = -1;
  int controller = -1;
  double value = 0.0;
  std::vector<double> values;  // quantizer-major
  bool exhaustive = true;
};

SearchResult brute_force_policy_search(const SystemModel& model, const StageCost& cost,
                                       double lambda, const PolicyGrid& grid,
                                       EnumerationOptions options = {});

// Random tiny tabular instances for property tests.
struct InstanceLimits {
  int min_alphabet = 2;
  int max_alphabet = 3;
  int min_horizon = 1;
  int max_horizon = 3;
  std::size_t max_outcomes = 100'000;
  bool keep_states = false;
};

struct TabularInstance {
  SystemModel model;
  StageCost cost;
  std::shared_ptr<JointPolicy> policy;
};

// Stochastic policy whose quantizer and controller distributions are
// pseudo-random functions of the full history.
std::shared_ptr<TabularPolicy> random_history_policy(const PolicyShape& shape,
                                                     std::uint64_t seed);

SystemModel random_tabular_model(std::uint64_t seed, const InstanceLimits& limits);
StageCost random_cost(const SystemModel& model, std::uint64_t seed);
TabularInstance random_instance(std::uint64_t seed, const InstanceLimits& limits = {});

std::size_t outcome_count(const SystemModel& model, bool keep_states);

// Largest deviations between the belief recursions and enumerated
// conditionals, over every common-information history of positive
// probability.
struct BeliefAgreement {
  double quantizer = 0.0;         // b^e_t from the recursion vs enumeration
  double controller = 0.0;        // b^c_t likewise
  double composition = 0.0;       // joint update vs the two-stage update
  double information_loss = 0.0;  // belief-based vs enumerated c_i
  int histories = 0;
};

double max_belief_difference(const BeliefState& a, const BeliefState& b);

BeliefAgreement compare_beliefs(const SystemModel& model, const JointPolicy& policy,
                                const StageCost& cost, EnumerationOptions options = {});

}  // namespace privctrl

#endif  // PRIVCTRL_ORACLE_H_
