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

#ifndef PRIVCTRL_MI_H_
#define PRIVCTRL_MI_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "privctrl/autodiff.h"
#include "privctrl/model.h"
#include "privctrl/optim.h"
#include "privctrl/policy.h"
#include "privctrl/rng.h"
#include "privctrl/stats.h"

namespace privctrl {

// Recurrent classifier over the common history (s, u) and, when
// private_symbols > 0, the private history y. At time t it scores every
// candidate index against the history strictly before t.
struct ClassifierArchitecture {
  int indices = 4;
  int controls = 9;
  int private_symbols = 0;
  int hidden = 16;

  nlohmann::json to_json() const;
  static ClassifierArchitecture from_json(const nlohmann::json& j);
};

struct ClassifierLayout {
  CellBlocks cell;
  ParamBlock head_w, head_b;
  int size = 0;
};

ClassifierLayout make_classifier_layout(const ClassifierArchitecture& arch);

struct ContrastiveSequence {
  std::vector<int> y;
  std::vector<int> s;
  std::vector<int> u;
  std::vector<int> s_tilde;
  std::vector<int> label;
  std::vector<int> s_bar;

  int horizon() const { return static_cast<int>(s.size()); }
};

struct ContrastiveBatch {
  int indices = 0;
  std::vector<ContrastiveSequence> sequences;

  std::size_t sample_count() const;
};

// One labelled sample per (trajectory, t): label ~ Bernoulli(1/2), s_tilde
// uniform and independent, s_bar = s when label = 1 and s_tilde otherwise.
ContrastiveBatch build_contrastive_batch(std::span<const Trajectory> trajectories, int indices,
                                         RandomStream& rng);

class HistoryClassifier {
 public:
  HistoryClassifier(ClassifierArchitecture arch, std::vector<double> theta);
  static HistoryClassifier init(const ClassifierArchitecture& arch, std::uint64_t seed);
  static int parameter_count(const ClassifierArchitecture& arch);

  const ClassifierArchitecture& architecture() const { return arch_; }
  bool uses_private() const { return arch_.private_symbols > 0; }
  std::span<const double> params() const { return theta_; }
  std::vector<double>& mutable_params() { return theta_; }

  // Row t-1 holds the logits of P(label = 1 | s_bar, history before t) for
  // every candidate s_bar.
  Eigen::MatrixXd logits(const std::vector<int>& y, const std::vector<int>& s,
                         const std::vector<int>& u) const;

  // Mean binary cross-entropy over the batch; accumulates its gradient into
  // grad when non-null.
  double loss(const ContrastiveBatch& batch, std::vector<double>* grad = nullptr) const;

 private:
  double sequence_loss(const ContrastiveSequence& seq, double weight,
                       std::span<double> grad) const;

  ClassifierArchitecture arch_;
  ClassifierLayout layout_;
  std::vector<double> theta_;
};

struct ClassifierPair {
  HistoryClassifier w;
  HistoryClassifier xi;
  Adam w_opt;
  Adam xi_opt;
  long steps = 0;

  static ClassifierPair init(int indices, int controls, int private_symbols, int hidden,
                             std::uint64_t seed, double lr = 3e-3);
};

struct ClassifierTrainOptions {
  int steps = 100;
  double lr = 3e-3;
  // Validation loss is recorded every this many steps; the trailing window is
  // checked for an increase at the end.
  int validation_every = 10;
  int trailing_window = 5;
  const ContrastiveBatch* validation = nullptr;
};

struct ClassifierTrainStats {
  std::vector<double> w_loss;
  std::vector<double> xi_loss;
  std::vector<double> w_validation;
  std::vector<double> xi_validation;
  bool validation_increasing = false;
};

ClassifierTrainStats train_classifiers(ClassifierPair& pair,
                                       std::span<const ContrastiveBatch> batches,
                                       const ClassifierTrainOptions& options);

constexpr double kClassifierClamp = 1e-6;

double clamped_logit(double logit);

double estimate_information_loss(const ClassifierPair& pair, const Trajectory& trajectory, int t);
std::vector<double> estimate_information_losses(const ClassifierPair& pair,
                                                const Trajectory& trajectory);
MeanSe estimate_total_leakage(const ClassifierPair& pair,
                              std::span<const Trajectory> trajectories);

// Classifier output at time t for candidate s_bar.
double classifier_probability(const HistoryClassifier& c, const std::vector<int>& y,
                              const std::vector<int>& s, const std::vector<int>& u, int t,
                              int s_bar);

nlohmann::json classifier_checkpoint(const ClassifierPair& pair, std::uint64_t seed, long step);
void save_classifiers(const std::string& path, const ClassifierPair& pair, std::uint64_t seed,
                      long step);
ClassifierPair load_classifiers(const std::string& path, double lr = 3e-3);

}  // namespace privctrl

#endif  // PRIVCTRL_MI_H_
