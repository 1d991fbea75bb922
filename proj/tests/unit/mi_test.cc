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
#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "privctrl/error.h"
#include "privctrl/mi.h"
#include "privctrl/model.h"
#include "privctrl/oracle.h"
#include "privctrl/policy.h"
#include "privctrl/rng.h"

namespace privctrl {
namespace {

// x2 = y1, z = x; an identity quantizer then leaks exactly log 2 at t = 2.
SystemModel copy_model() {
  nlohmann::json m = {{"kind", "tabular"},
                      {"T", 2},
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

std::vector<Trajectory> copy_rollouts(int count, std::uint64_t seed) {
  const TabularPolicy p = TabularPolicy::memoryless({2, 2, 2}, {1, 0, 0, 1}, {1, 0, 1, 0});
  return rollout_batch(copy_model(), p, unit_cost(), seed, 0, count);
}

TEST(ClampedLogit, IdentityInsideAndSaturatesOutside) {
  EXPECT_NEAR(clamped_logit(0.3), 0.3, 1e-12);
  EXPECT_NEAR(clamped_logit(-2.0), -2.0, 1e-12);
  const double edge = std::log((1.0 - kClassifierClamp) / kClassifierClamp);
  EXPECT_NEAR(clamped_logit(100.0), edge, 1e-6);
  EXPECT_NEAR(clamped_logit(-100.0), -edge, 1e-6);
}

TEST(ContrastiveBatch, LabelsSelectTrueOrShuffledIndex) {
  const std::vector<Trajectory> tr = copy_rollouts(2000, 3);
  RandomStream rng(5, 1);
  const ContrastiveBatch b = build_contrastive_batch(tr, 2, rng);
  ASSERT_EQ(b.sequences.size(), tr.size());
  EXPECT_EQ(b.sample_count(), tr.size() * 2);
  int positives = 0, total = 0, tilde_one = 0;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const ContrastiveSequence& seq = b.sequences[i];
    EXPECT_EQ(seq.s, tr[i].s);
    for (int t = 0; t < seq.horizon(); ++t) {
      EXPECT_EQ(seq.s_bar[t], seq.label[t] == 1 ? seq.s[t] : seq.s_tilde[t]);
      positives += seq.label[t];
      tilde_one += seq.s_tilde[t];
      ++total;
    }
  }
  EXPECT_NEAR(static_cast<double>(positives) / total, 0.5, 0.03);
  EXPECT_NEAR(static_cast<double>(tilde_one) / total, 0.5, 0.03);
}

TEST(ContrastiveBatch, NeedsTwoIndices) {
  RandomStream rng(1);
  EXPECT_THROW(build_contrastive_batch({}, 1, rng), Error);
}

TEST(HistoryClassifier, LogitsShapeAndCausality) {
  const ClassifierArchitecture arch{3, 2, 2, 5};
  const HistoryClassifier c = HistoryClassifier::init(arch, 4);
  const Eigen::MatrixXd a = c.logits({0, 1, 1}, {2, 0, 1}, {1, 0, 1});
  EXPECT_EQ(a.rows(), 3);
  EXPECT_EQ(a.cols(), 3);
  // Row t only sees the history before t.
  const Eigen::MatrixXd b = c.logits({0, 1, 0}, {2, 0, 2}, {1, 0, 0});
  EXPECT_EQ((a.topRows(2) - b.topRows(2)).norm(), 0.0);
}

TEST(HistoryClassifier, LossGradientMatchesFiniteDifferences) {
  const std::vector<Trajectory> tr = copy_rollouts(20, 8);
  RandomStream rng(2, 1);
  const ContrastiveBatch batch = build_contrastive_batch(tr, 2, rng);
  const ClassifierArchitecture arch{2, 2, 2, 4};
  HistoryClassifier c = HistoryClassifier::init(arch, 9);
  RandomStream spread(9, 3);
  for (double& v : c.mutable_params()) v = spread.uniform() - 0.5;
  std::vector<double> grad;
  c.loss(batch, &grad);
  const double eps = 1e-6;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    HistoryClassifier plus = c, minus = c;
    plus.mutable_params()[i] += eps;
    minus.mutable_params()[i] -= eps;
    const double fd = (plus.loss(batch) - minus.loss(batch)) / (2 * eps);
    EXPECT_NEAR(grad[i], fd, 1e-6 + 1e-5 * std::abs(fd)) << i;
  }
}

TEST(HistoryClassifier, RejectsWrongParameterCount) {
  const ClassifierArchitecture arch{2, 2, 0, 4};
  EXPECT_THROW(HistoryClassifier(arch, std::vector<double>(3, 0.0)), Error);
}

TEST(Classifiers, RecoverKnownLeakage) {
  const std::vector<Trajectory> train = copy_rollouts(1000, 21);
  std::vector<ContrastiveBatch> batches;
  RandomStream rng(21, 1);
  for (int k = 0; k < 4; ++k) {
    batches.push_back(build_contrastive_batch(
        std::span<const Trajectory>(train).subspan(k * 250, 250), 2, rng));
  }
  ClassifierPair pair = ClassifierPair::init(2, 2, 2, 8, 13, 0.02);
  ClassifierTrainOptions options;
  options.steps = 400;
  options.lr = 0.02;
  const ClassifierTrainStats stats = train_classifiers(pair, batches, options);
  ASSERT_EQ(stats.w_loss.size(), 400u);
  EXPECT_LT(stats.w_loss.back(), stats.w_loss.front());
  EXPECT_EQ(pair.steps, 400);

  const std::vector<Trajectory> held = copy_rollouts(500, 22);
  const MeanSe leak = estimate_total_leakage(pair, held);
  EXPECT_NEAR(leak.mean, std::log(2.0), 0.1);
  // Nothing can be learned at t = 1.
  double first = 0.0;
  for (const Trajectory& t : held) first += estimate_information_loss(pair, t, 1);
  EXPECT_NEAR(first / held.size(), 0.0, 0.05);
}

TEST(Classifiers, ZeroStepsLeavesParametersAlone) {
  ClassifierPair pair = ClassifierPair::init(2, 2, 2, 4, 1);
  const std::vector<double> before(pair.w.params().begin(), pair.w.params().end());
  ClassifierTrainOptions options;
  options.steps = 0;
  train_classifiers(pair, {}, options);
  EXPECT_EQ(before, std::vector<double>(pair.w.params().begin(), pair.w.params().end()));
}

TEST(Classifiers, CheckpointRoundTrip) {
  ClassifierPair pair = ClassifierPair::init(3, 2, 2, 5, 17);
  const auto dir = std::filesystem::temp_directory_path() / "privctrl_mi_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "classifiers.json").string();
  save_classifiers(path, pair, 17, 42);
  const ClassifierPair back = load_classifiers(path);
  EXPECT_EQ(back.steps, 42);
  EXPECT_EQ(std::vector<double>(back.w.params().begin(), back.w.params().end()),
            std::vector<double>(pair.w.params().begin(), pair.w.params().end()));
  EXPECT_EQ(std::vector<double>(back.xi.params().begin(), back.xi.params().end()),
            std::vector<double>(pair.xi.params().begin(), pair.xi.params().end()));
  EXPECT_TRUE(back.w.uses_private());
  EXPECT_FALSE(back.xi.uses_private());
  std::filesystem::remove_all(dir);
}

TEST(Classifiers, ProbabilityIsSigmoidOfLogit) {
  const ClassifierPair pair = ClassifierPair::init(3, 2, 2, 5, 2);
  const std::vector<int> y{0, 1, 0}, s{1, 2, 0}, u{0, 1, 1};
  const Eigen::MatrixXd l = pair.w.logits(y, s, u);
  for (int t = 1; t <= 3; ++t) {
    for (int sb = 0; sb < 3; ++sb) {
      EXPECT_NEAR(classifier_probability(pair.w, y, s, u, t, sb),
                  1.0 / (1.0 + std::exp(-l(t - 1, sb))), 1e-12);
    }
  }
}

}  // namespace
}  // namespace privctrl
