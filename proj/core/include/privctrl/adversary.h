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

#ifndef PRIVCTRL_ADVERSARY_H_
#define PRIVCTRL_ADVERSARY_H_

#include <cstdint>
#include <memory>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "privctrl/model.h"
#include "privctrl/policy.h"
#include "privctrl/rng.h"
#include "privctrl/stats.h"

namespace privctrl {

enum class AdversaryMode { kExactTabular, kParticle };

// Per-step maximum posterior marginal, or the single most likely sequence.
enum class DecodeMode { kMarginal, kJointMap };

struct AdversaryOptions {
  AdversaryMode mode = AdversaryMode::kParticle;
  DecodeMode decode = DecodeMode::kMarginal;
  int particles = 2000;
  // Fixed-lag smoothing window of the particle filter; a lag of at least the
  // horizon gives full smoothing.
  int lag = 10;
  double resample_fraction = 0.5;
};

// White-box adversary: knows the model and the deployed policy exactly.
struct AdversaryModel {
  const SystemModel* model = nullptr;
  std::shared_ptr<const JointPolicy> policy;
  AdversaryOptions options;

  void validate() const;
};

struct EstimateReport {
  Eigen::MatrixXd marginals;  // horizon x private symbols
  std::vector<int> y_hat;
  std::vector<int> y_true;    // empty when the truth is unknown
  std::vector<int> flags;     // 1 where y_hat != y_true
  double accuracy = 0.0;
  bool degenerate = false;    // the particle filter collapsed at least once
};

// Fills y_hat (marginal argmax, lowest index on ties), flags and accuracy.
EstimateReport make_report(Eigen::MatrixXd marginals, const std::vector<int>& y_true);

// Exact smoothed marginals P(y_t | s^T, u^T) on a tabular model.
Eigen::MatrixXd exact_private_posterior(const AdversaryModel& adversary,
                                        const std::vector<int>& s_seq,
                                        const std::vector<int>& u_seq,
                                        std::vector<int>* joint_map = nullptr);

EstimateReport ml_estimate_tabular(const AdversaryModel& adversary, const std::vector<int>& s_seq,
                                   const std::vector<int>& u_seq,
                                   const std::vector<int>& y_true = {});

EstimateReport ml_estimate_particle(const AdversaryModel& adversary,
                                    const std::vector<int>& s_seq, const std::vector<int>& u_seq,
                                    RandomStream& rng, const std::vector<int>& y_true = {});

// Estimator that sees the raw quantized observations z^T and the controls.
EstimateReport ml_estimate_from_observations(const SystemModel& model,
                                             const std::vector<int>& z_seq,
                                             const std::vector<int>& u_seq, RandomStream& rng,
                                             const AdversaryOptions& options,
                                             const std::vector<int>& y_true = {});

std::vector<int> misdetection_trace(const EstimateReport& report);

struct AdversaryEvaluation {
  MeanSe accuracy;  // per-step accuracy, SE across rollouts
  std::vector<EstimateReport> reports;
  int degenerate_rollouts = 0;
};

// Runs the adversary on every trajectory; rollout i uses stream (seed, i).
AdversaryEvaluation evaluate_adversary(const AdversaryModel& adversary,
                                       std::span<const Trajectory> trajectories,
                                       std::uint64_t seed);

AdversaryEvaluation evaluate_observation_adversary(const SystemModel& model,
                                                   std::span<const Trajectory> trajectories,
                                                   const AdversaryOptions& options,
                                                   std::uint64_t seed);

// CSV rows: rollout,t,y_true,y_hat,flag with t starting at 1.
void write_reports_csv(std::ostream& os, std::span<const EstimateReport> reports,
                       std::uint64_t first_rollout = 0);

}  // namespace privctrl

#endif  // PRIVCTRL_ADVERSARY_H_
