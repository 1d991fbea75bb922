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

#ifndef PRIVCTRL_MODEL_H_
#define PRIVCTRL_MODEL_H_

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "privctrl/rng.h"

namespace privctrl {

class JointPolicy;

// Private input process. values[i] is the numeric value of state i; the
// transition matrix is row-major, P(next = j | prev = i) = transition[i*n+j].
struct MarkovChain {
  std::vector<double> values;
  std::vector<double> transition;
  std::vector<double> initial;

  int size() const { return static_cast<int>(values.size()); }
  double p(int from, int to) const { return transition[from * size() + to]; }
  void validate() const;
};

std::vector<double> stationary_distribution(const MarkovChain& chain);
std::vector<int> sample_private_path(const MarkovChain& chain, int horizon,
                                     RandomStream& rng);

// Uniform mid-rise quantizer on [lo, hi] with saturating end cells.
class UniformQuantizer {
 public:
  UniformQuantizer() = default;
  UniformQuantizer(int levels, double lo, double hi);

  int levels() const { return levels_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  double width() const { return (hi_ - lo_) / levels_; }

  int quantize(double v) const;
  double center(int level) const;
  // P(quantize(mean + std * N(0,1)) == level); std == 0 gives an indicator.
  double cell_mass(int level, double mean, double std) const;

 private:
  int levels_ = 2;
  double lo_ = -1.0;
  double hi_ = 1.0;
};

enum class ModelKind { kLinearGaussian, kTabular };

struct LinearGaussianParams {
  Eigen::MatrixXd a;
  Eigen::VectorXd b_y;
  Eigen::VectorXd b_u;
  double sigma_w = 0.1;
  double sigma_v = 0.1;
  double x0_std = 0.1;
  UniformQuantizer quantizer;
};

// Tabular kernels: kernel_x is indexed [x][y][u][x'], kernel_z [x][z].
struct TabularParams {
  int states = 0;
  int observations = 0;
  std::vector<double> kernel_x;
  std::vector<double> kernel_z;
  std::vector<double> initial_x;
};

class SystemModel {
 public:
  static SystemModel linear_gaussian(LinearGaussianParams params, MarkovChain chain,
                                     std::vector<double> controls, int indices,
                                     int horizon);
  static SystemModel tabular(TabularParams params, MarkovChain chain,
                             std::vector<double> controls, int indices, int horizon);

  ModelKind kind() const { return kind_; }
  const MarkovChain& chain() const { return chain_; }
  const std::vector<double>& controls() const { return controls_; }
  int control_count() const { return static_cast<int>(controls_.size()); }
  int indices() const { return indices_; }
  int horizon() const { return horizon_; }
  int state_dim() const;
  int observation_count() const;
  const LinearGaussianParams& linear() const { return linear_; }
  const TabularParams& table() const { return table_; }

  // Returns the alphabet index of control value u; throws if u is not a member.
  int control_index(double u) const;
  int nearest_control(double u) const;

  Eigen::VectorXd sample_initial_state(RandomStream& rng) const;
  Eigen::VectorXd step(const Eigen::VectorXd& x, int y, int u, RandomStream& rng) const;
  // Value form of step(); u must be a member of the control alphabet.
  Eigen::VectorXd step_value(const Eigen::VectorXd& x, int y, double u,
                             RandomStream& rng) const;
  // Noise-free part of the linear-gaussian transition.
  Eigen::VectorXd linear_mean(const Eigen::VectorXd& x, int y, int u) const;
  int observe(const Eigen::VectorXd& x, RandomStream& rng) const;
  double observation_probability(const Eigen::VectorXd& x, int z) const;
  // Representative state value of observation z (cell centers for the
  // linear-gaussian kind, the matching state index for tabular models).
  Eigen::VectorXd dequantize(int z) const;

  double kx(int x, int y, int u, int x_next) const {
    return table_.kernel_x[((static_cast<std::size_t>(x) * chain_.size() + y) *
                                controls_.size() + u) * table_.states + x_next];
  }
  double kz(int x, int z) const {
    return table_.kernel_z[static_cast<std::size_t>(x) * table_.observations + z];
  }

  void validate() const;

 private:
  SystemModel() = default;

  ModelKind kind_ = ModelKind::kTabular;
  MarkovChain chain_;
  std::vector<double> controls_;
  int indices_ = 2;
  int horizon_ = 1;
  LinearGaussianParams linear_;
  TabularParams table_;
};

// Stage cost c(x, u) for t < T and terminal cost c(x) at t = T.
class StageCost {
 public:
  using Evaluate = std::function<double(const Eigen::VectorXd&, int)>;
  using Terminal = std::function<double(const Eigen::VectorXd&)>;

  StageCost(Evaluate evaluate, Terminal terminal);

  // x' Q x + r u^2 with Q = q I.
  static StageCost quadratic(double q, double r, std::vector<double> controls);
  // Tables indexed [x][u] and [x] over tabular state indices.
  static StageCost table(int states, std::vector<double> stage,
                         std::vector<double> terminal);

  double evaluate(const Eigen::VectorXd& x, int u) const { return evaluate_(x, u); }
  double terminal(const Eigen::VectorXd& x) const { return terminal_(x); }
  // Cost charged at step t in [1, horizon].
  double at(int t, int horizon, const Eigen::VectorXd& x, int u) const {
    return t == horizon ? terminal_(x) : evaluate_(x, u);
  }

 private:
  Evaluate evaluate_;
  Terminal terminal_;
};

struct Trajectory {
  int state_dim = 1;
  std::vector<int> y;
  std::vector<double> x;  // horizon x state_dim, row-major
  std::vector<int> z;
  std::vector<int> s;
  std::vector<int> u;
  std::vector<double> cost;

  int horizon() const { return static_cast<int>(y.size()); }
  double total_cost() const;
  Eigen::VectorXd state(int t) const;
};

enum class ControlMode { kStochastic, kGreedy };

// Streams used by rollout(); all derive from a per-trajectory base stream.
struct RolloutStreams {
  explicit RolloutStreams(const RandomStream& base);
  RandomStream privates;
  RandomStream dynamics;
  RandomStream policy;
};

Trajectory rollout(const SystemModel& model, const JointPolicy& policy,
                   const StageCost& cost, const RandomStream& base,
                   ControlMode mode = ControlMode::kStochastic);

// Trajectory i of a batch uses RandomStream(seed, first_id + i).
std::vector<Trajectory> rollout_batch(const SystemModel& model, const JointPolicy& policy,
                                      const StageCost& cost, std::uint64_t seed,
                                      std::uint64_t first_id, int count,
                                      ControlMode mode = ControlMode::kStochastic);

SystemModel model_from_json(const nlohmann::json& config);
nlohmann::json model_to_json(const SystemModel& model);
// Reads the optional "cost" object; defaults to x^2 + 0.01 u^2.
StageCost cost_from_json(const nlohmann::json& config, const SystemModel& model);

}  // namespace privctrl

#endif  // PRIVCTRL_MODEL_H_
