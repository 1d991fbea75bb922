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

#ifndef PRIVCTRL_HARNESS_H_
#define PRIVCTRL_HARNESS_H_

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "privctrl/adversary.h"
#include "privctrl/error.h"
#include "privctrl/model.h"
#include "privctrl/policy.h"
#include "privctrl/trainer.h"

namespace privctrl {

// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitValidation = 2,
  kExitDivergence = 3,
  kExitIdentity = 4,
};

int exit_code_for(ErrorCode code);

struct LeakageOptions {
  int train_rollouts = 1000;
  int steps = 300;
  int batch_rollouts = 128;
  int hidden = 16;
  double lr = 3e-3;
};

struct ExperimentConfig {
  nlohmann::json raw;
  std::uint64_t hash = 0;
  std::shared_ptr<const SystemModel> model;
  std::shared_ptr<const StageCost> cost;
  nlohmann::json policy;  // hidden, init_seed, checkpoint, baseline
  TrainConfig train;
  PretrainConfig pretrain;
  std::vector<double> sweep;
  int eval_rollouts = 500;
  std::uint64_t eval_seed = 7;
  AdversaryOptions adversary;
  LeakageOptions leakage;
  std::uint64_t seed = 1;

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
};

// Options common to all subcommands; unset fields fall back to the config.
struct CommandOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::vector<double> lambdas;
  std::optional<int> rollouts;
  std::string policy_path;  // checkpoint overriding the config's policy
  bool observe_z = false;   // adversary-eval: estimate from raw observations
};

// Seed for one sweep entry, a function of the master seed and lambda only.
std::uint64_t lambda_seed(std::uint64_t master, double lambda);

RecurrentPolicy initial_policy(const ExperimentConfig& config);

// The policy named by the options or the config: a checkpoint, the
// proportional baseline, or a freshly initialised recurrent policy.
std::shared_ptr<const JointPolicy> configured_policy(const ExperimentConfig& config,
                                                     const CommandOptions& options);

void write_trajectories_csv(std::ostream& os, std::span<const Trajectory> trajectories,
                            std::uint64_t first_rollout = 0);

// Trains a fresh classifier pair on rollouts of `policy` and returns it.
ClassifierPair fit_leakage_classifiers(const SystemModel& model, const JointPolicy& policy,
                                       const StageCost& cost, const LeakageOptions& options,
                                       std::uint64_t seed);

struct SweepRow {
  double lambda = 0.0;
  EvalMetrics metrics;
  std::uint64_t seed = 0;
  std::string checkpoint;
  std::string error;
};

std::string sweep_csv_header();
std::string sweep_csv_row(const SweepRow& row);

struct OracleCheckLine {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

std::vector<OracleCheckLine> run_oracle_checks(const ExperimentConfig& config,
                                               std::uint64_t seed);

int cmd_simulate(const CommandOptions& options, std::ostream& log);
int cmd_train(const CommandOptions& options, std::ostream& log);
int cmd_sweep(const CommandOptions& options, std::ostream& log);
int cmd_oracle_check(const CommandOptions& options, std::ostream& log);
int cmd_adversary_eval(const CommandOptions& options, std::ostream& log);
int cmd_estimate_mi(const CommandOptions& options, std::ostream& log);

// Dispatches by subcommand name and maps errors to exit codes.
int run_command(const std::string& name, const CommandOptions& options, std::ostream& log);

}  // namespace privctrl

#endif  // PRIVCTRL_HARNESS_H_
