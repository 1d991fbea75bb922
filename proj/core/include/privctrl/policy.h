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

#ifndef PRIVCTRL_POLICY_H_
#define PRIVCTRL_POLICY_H_

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "privctrl/autodiff.h"
#include "privctrl/model.h"
#include "privctrl/rng.h"

namespace privctrl {

struct PolicyShape {
  int observations = 0;
  int indices = 0;
  int controls = 0;
};

// Per-rollout policy state. Histories hold the committed (z, s, u) symbols;
// the recurrent policy additionally keeps its two hidden vectors here.
struct PolicyCarry {
  Eigen::VectorXd quantizer;
  Eigen::VectorXd controller;
  std::vector<int> z;
  std::vector<int> s;
  std::vector<int> u;

  int prev_s() const { return s.empty() ? -1 : s.back(); }
  int prev_u() const { return u.empty() ? -1 : u.back(); }
  int time() const { return static_cast<int>(z.size()) + 1; }
};

// pi(u_t, s_t | z^t, s^{t-1}, u^{t-1}) = pi_c(u_t | s^t, u^{t-1}) pi_e(s_t | z^t, s^{t-1}, u^{t-1}).
// The controller never receives z.
class JointPolicy {
 public:
  virtual ~JointPolicy() = default;

  virtual PolicyShape shape() const = 0;
  virtual PolicyCarry initial_carry() const { return {}; }
  // Fills s_probs with pi_e(. | z, carry). When next is non-null it receives
  // the quantizer state to hand to advance().
  virtual void quantizer_step(const PolicyCarry& carry, int z, std::span<double> s_probs,
                              Eigen::VectorXd* next) const = 0;
  virtual void controller_probs(const PolicyCarry& carry, int s,
                                std::span<double> u_probs) const = 0;
  // Argmax of controller_probs, lowest index on ties.
  virtual int greedy_control(const PolicyCarry& carry, int s) const;

  // Index distributions for every observation at once: row z of s_probs is
  // the distribution after observing z, next[z] the matching hidden state.
  // When mask is given, rows with mask[z] == 0 are skipped and left zero.
  virtual void quantizer_all(const PolicyCarry& carry, Eigen::MatrixXd& s_probs,
                             std::vector<Eigen::VectorXd>* next,
                             std::span<const double> mask = {}) const;

  void advance(PolicyCarry& carry, int z, int s, int u, Eigen::VectorXd next) const;
  // advance() without the controller update, for callers that only need the
  // quantizer side of the carry.
  void advance_quantizer(PolicyCarry& carry, int z, int s, int u, Eigen::VectorXd next) const;

 protected:
  virtual void update_controller(PolicyCarry& carry, int s, int u) const;
};

struct Architecture {
  int observations = 0;
  int indices = 4;
  int controls = 9;
  int hidden = 32;

  nlohmann::json to_json() const;
  static Architecture from_json(const nlohmann::json& j);
};

// Parameter blocks of one gated recurrent cell.
struct CellBlocks {
  ParamBlock wg, bg, ug;
  ParamBlock wc, bc, uc;
};

struct PolicyLayout {
  CellBlocks quantizer;
  ParamBlock quantizer_head_w, quantizer_head_b;
  CellBlocks controller;
  ParamBlock controller_head_w, controller_head_s, controller_head_b;
  int size = 0;
};

PolicyLayout make_policy_layout(const Architecture& arch);
CellBlocks add_cell(ParamLayout& layout, int inputs, int hidden);
// g = sigmoid(Wg[:, cols] + bg + Ug h), c = tanh(Wc[:, cols] + bc + Uc h), h' = h + g (c - h).
Tape::Var gated_cell(Tape& tape, const CellBlocks& cell, Tape::Var h, std::span<const int> cols);
// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for cell matrices, zero biases.
void init_cell(const CellBlocks& cell, int fan_in, std::span<double> theta, RandomStream& rng);
void init_uniform(ParamBlock block, double scale, std::span<double> theta, RandomStream& rng);

// Two gated cells: the quantizer cell consumes (z_t, s_{t-1}, u_{t-1}) and
// feeds the index head; the controller cell consumes (s_{t-1}, u_{t-1}) and
// its head adds a per-index column for the current s_t.
class RecurrentPolicy : public JointPolicy {
 public:
  RecurrentPolicy(Architecture arch, std::vector<double> theta);

  static RecurrentPolicy init(const Architecture& arch, std::uint64_t seed);
  static int parameter_count(const Architecture& arch);

  PolicyShape shape() const override;
  PolicyCarry initial_carry() const override;
  void quantizer_step(const PolicyCarry& carry, int z, std::span<double> s_probs,
                      Eigen::VectorXd* next) const override;
  void controller_probs(const PolicyCarry& carry, int s,
                        std::span<double> u_probs) const override;
  int greedy_control(const PolicyCarry& carry, int s) const override;
  void quantizer_all(const PolicyCarry& carry, Eigen::MatrixXd& s_probs,
                     std::vector<Eigen::VectorXd>* next,
                     std::span<const double> mask = {}) const override;

  const Architecture& architecture() const { return arch_; }
  const PolicyLayout& layout() const { return layout_; }
  std::span<const double> params() const { return theta_; }
  std::vector<double>& mutable_params() { return theta_; }
  bool greedy() const { return greedy_; }
  void set_greedy(bool greedy) { greedy_ = greedy; }

  // Input columns of the quantizer cell for (z_t, s_{t-1}, u_{t-1}).
  std::array<int, 3> quantizer_columns(int z, int prev_s, int prev_u) const;
  std::array<int, 2> controller_columns(int s, int u) const;

  Tape::Var quantizer_logits(Tape& tape, Tape::Var h) const;
  Tape::Var controller_logits(Tape& tape, Tape::Var h, int s) const;

 protected:
  void update_controller(PolicyCarry& carry, int s, int u) const override;

 private:
  Architecture arch_;
  PolicyLayout layout_;
  std::vector<double> theta_;
  bool greedy_ = false;
};

// Controller head replaced by argmax selection; quantizer unchanged.
RecurrentPolicy make_deterministic_controller_head(const RecurrentPolicy& policy);

// Policy defined by explicit functions of the carried histories.
class TabularPolicy : public JointPolicy {
 public:
  using QuantizerFn = std::function<void(const PolicyCarry&, int z, std::span<double>)>;
  using ControllerFn = std::function<void(const PolicyCarry&, int s, std::span<double>)>;

  TabularPolicy(PolicyShape shape, QuantizerFn quantizer, ControllerFn controller);

  // Memoryless tables q[z][s] and c[s][u], row-major.
  static TabularPolicy memoryless(PolicyShape shape, std::vector<double> q,
                                  std::vector<double> c);

  PolicyShape shape() const override { return shape_; }
  void quantizer_step(const PolicyCarry& carry, int z, std::span<double> s_probs,
                      Eigen::VectorXd* next) const override;
  void controller_probs(const PolicyCarry& carry, int s,
                        std::span<double> u_probs) const override;

 private:
  PolicyShape shape_;
  QuantizerFn quantizer_;
  ControllerFn controller_;
};

// s_t = z_t and u_t = nearest control to k_p times the dequantized z_t.
class KpBaselinePolicy : public JointPolicy {
 public:
  KpBaselinePolicy(double k_p, const SystemModel& model);

  PolicyShape shape() const override { return shape_; }
  void quantizer_step(const PolicyCarry& carry, int z, std::span<double> s_probs,
                      Eigen::VectorXd* next) const override;
  void controller_probs(const PolicyCarry& carry, int s,
                        std::span<double> u_probs) const override;

  int control_for(int s) const { return control_of_index_[s]; }

 private:
  PolicyShape shape_;
  std::vector<int> control_of_index_;
};

KpBaselinePolicy kp_baseline_controller(double k_p, const SystemModel& model);

struct PolicyOutput {
  Eigen::VectorXd s_probs;
  // u_probs.row(s) is pi_c(. | s, history).
  Eigen::MatrixXd u_probs;
  Eigen::VectorXd hidden;
};

PolicyOutput forward(const JointPolicy& policy, const PolicyCarry& carry, int z);

struct Action {
  int s = 0;
  int u = 0;
  double log_prob = 0.0;
};

Action sample_action(const PolicyOutput& output, RandomStream& rng,
                     ControlMode mode = ControlMode::kStochastic);

struct TrajectoryContext {
  std::vector<int> z;
  std::vector<int> s;
  std::vector<int> u;

  static TrajectoryContext of(const Trajectory& trajectory);
};

struct LogProbGradient {
  double log_prob = 0.0;
  std::vector<double> gradient;
};

// d/dtheta of sum_t weight_t * log pi(u_t, s_t | .). Empty weights mean 1.
LogProbGradient log_prob_gradient(const RecurrentPolicy& policy,
                                  const TrajectoryContext& context,
                                  std::span<const double> step_weights = {});

// Same sum with separate weights for the index and control terms.
LogProbGradient log_prob_gradient_split(const RecurrentPolicy& policy,
                                        const TrajectoryContext& context,
                                        std::span<const double> index_weights,
                                        std::span<const double> control_weights);

double log_probability(const JointPolicy& policy, const TrajectoryContext& context);

// Checkpoints: one JSON document with an architecture header and a base64
// payload of the flat parameter vector. kind distinguishes policies from
// classifiers.
nlohmann::json make_checkpoint(const std::string& kind, const Architecture& arch,
                               std::span<const double> theta, std::uint64_t seed,
                               long step, const nlohmann::json& extra = {});
struct Checkpoint {
  std::string kind;
  Architecture arch;
  std::vector<double> theta;
  std::uint64_t seed = 0;
  long step = 0;
  nlohmann::json extra;
};
Checkpoint parse_checkpoint(const nlohmann::json& j);
void save_policy(const std::string& path, const RecurrentPolicy& policy,
                 std::uint64_t seed, long step);
RecurrentPolicy load_policy(const std::string& path);

}  // namespace privctrl

#endif  // PRIVCTRL_POLICY_H_
