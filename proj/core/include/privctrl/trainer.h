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

#ifndef PRIVCTRL_TRAINER_H_
#define PRIVCTRL_TRAINER_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "privctrl/adversary.h"
#include "privctrl/mi.h"
#include "privctrl/model.h"
#include "privctrl/optim.h"
#include "privctrl/policy.h"
#include "privctrl/stats.h"

namespace privctrl {

enum class BaselineKind { kNone, kBatchMean };

struct TrainConfig {
  double lambda = 0.0;
  int batch_size = 64;
  double policy_lr = 0.01;
  double momentum = 0.9;
  double classifier_lr = 3e-3;
  int classifier_refresh_steps = 5;
  int classifier_hidden = 16;
  // Extra classifier steps before the first policy update.
  int classifier_warmup_steps = 50;
  // Warm-started classifiers keep their weights between policy updates.
  bool warm_start_classifiers = true;
  int iterations = 200;
  BaselineKind baseline = BaselineKind::kBatchMean;
  // Weights each step's score by the return from that step on instead of the
  // whole-trajectory return.
  bool reward_to_go = false;
  // Gradients with a larger norm are rescaled to this norm; 0 disables.
  double max_grad_norm = 0.0;
  std::uint64_t seed = 1;
  int eval_every = 0;
  int eval_rollouts = 200;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig defaults);
};

struct IterationRecord {
  long iteration = 0;
  double mean_cost = 0.0;  // per-step stage cost averaged over the batch
  double mean_leakage = 0.0;
  double objective = 0.0;
  double grad_norm = 0.0;
  double wall_time = 0.0;
  std::optional<double> eval_cost;
};

struct TrainReport {
  std::vector<IterationRecord> iterations;
  std::string checkpoint;

  // One JSON object per iteration. Wall time is left out unless requested so
  // that metric streams are reproducible.
  std::string to_jsonl(bool with_wall_time = false) const;
};

struct ObjectiveEstimate {
  double value = 0.0;
  std::vector<double> returns;
  std::vector<double> cost_returns;
  std::vector<double> leakage_returns;
  // Per-step losses c_t + lambda * c_i,t, row-major trajectory x step.
  std::vector<double> step_losses;
};

// Per-trajectory return sum_t (c_t + lambda * c_i,t); pair may be null when
// lambda is zero.
ObjectiveEstimate objective_estimate(std::span<const Trajectory> trajectories,
                                     const ClassifierPair* pair, double lambda);

struct GradientEstimate {
  std::vector<double> gradient;
  double norm = 0.0;
};

// sum_k weight_k (R_k - b_k) grad log pi(tau_k). Empty weights mean 1/n and
// the batch-mean baseline is leave-one-out so the estimate stays unbiased.
// step_returns, when non-empty, holds per-step weights (trajectory x step)
// and replaces the whole-trajectory return.
GradientEstimate score_function_gradient(const RecurrentPolicy& policy,
                                         std::span<const TrajectoryContext> contexts,
                                         std::span<const double> returns,
                                         std::span<const double> weights, BaselineKind baseline,
                                         std::span<const double> step_returns = {});

// Estimates the gradient from the batch and applies one descent step.
GradientEstimate policy_gradient_step(RecurrentPolicy& policy,
                                      std::span<const Trajectory> trajectories,
                                      const ClassifierPair* pair, double lambda,
                                      BaselineKind baseline, SgdMomentum& optimizer,
                                      bool reward_to_go = false, double max_grad_norm = 0.0);

struct EvalMetrics {
  MeanSe cost;     // mean stage cost per step
  MeanSe leakage;  // classifier estimate; n = 0 when no pair is supplied
  MeanSe accuracy; // per-step adversary accuracy
  int degenerate_rollouts = 0;
};

struct EvalOptions {
  int rollouts = 500;
  std::uint64_t seed = 7;
  bool with_adversary = true;
  AdversaryOptions adversary;
};

// Evaluates the deployed policy with the deterministic controller head.
EvalMetrics evaluate(const SystemModel& model, const RecurrentPolicy& policy,
                     const StageCost& cost, const ClassifierPair* pair,
                     const EvalOptions& options);

// Supervised warm start: the policy imitates a fixed memoryless teacher on
// the teacher's own rollouts before any policy-gradient update.
struct PretrainConfig {
  int iterations = 0;
  int batch_size = 32;
  double lr = 0.01;
  double k_p = 6.2;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static PretrainConfig from_json(const nlohmann::json& j);
};

// Groups adjacent observation cells evenly into the indices; the control is
// the level nearest to k_p times the mean cell centre of the group.
TabularPolicy coarse_proportional_teacher(const SystemModel& model, double k_p);

// Returns the mean per-step negative log-likelihood of each iteration.
std::vector<double> pretrain_imitation(const SystemModel& model, const StageCost& cost,
                                       RecurrentPolicy& policy, const PretrainConfig& config);

struct TrainHooks {
  // Called after every iteration with the current policy.
  std::function<void(const IterationRecord&, const RecurrentPolicy&)> on_iteration;
  // Where the last good policy is written if training diverges.
  std::string checkpoint_path;
  long first_iteration = 0;
};

TrainReport train(const SystemModel& model, const StageCost& cost, RecurrentPolicy& policy,
                  ClassifierPair& pair, const TrainConfig& config, const TrainHooks& hooks = {});

}  // namespace privctrl

#endif  // PRIVCTRL_TRAINER_H_
