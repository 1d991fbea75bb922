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

#include "privctrl/model.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "privctrl/error.h"
#include "privctrl/parallel.h"
#include "privctrl/policy.h"

namespace privctrl {

namespace {

constexpr double kStochasticTol = 1e-12;

void check_distribution(std::span<const double> p, const std::string& what) {
  double total = 0.0;
  for (double v : p) {
    require(std::isfinite(v) && v >= 0.0, ErrorCode::kInvalidConfiguration,
            what + " has a negative or non-finite entry");
    total += v;
  }
  require(std::abs(total - 1.0) <= kStochasticTol, ErrorCode::kInvalidConfiguration,
          what + " does not sum to 1");
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

void MarkovChain::validate() const {
  const int n = size();
  require(n >= 1, ErrorCode::kInvalidConfiguration, "private chain needs at least one state");
  require(static_cast<int>(transition.size()) == n * n, ErrorCode::kInvalidConfiguration,
          "transition matrix must be n x n");
  require(static_cast<int>(initial.size()) == n, ErrorCode::kInvalidConfiguration,
          "initial distribution length must match the state count");
  for (int i = 0; i < n; ++i) {
    check_distribution(std::span<const double>(transition).subspan(i * n, n),
                       "transition row " + std::to_string(i));
  }
  check_distribution(initial, "initial distribution");
}

std::vector<double> stationary_distribution(const MarkovChain& chain) {
  const int n = chain.size();
  std::vector<double> p(n, 1.0 / n);
  std::vector<double> next(n);
  for (int iter = 0; iter < 100000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) next[j] += p[i] * chain.p(i, j);
    }
    double diff = 0.0;
    for (int j = 0; j < n; ++j) diff = std::max(diff, std::abs(next[j] - p[j]));
    p.swap(next);
    if (diff < 1e-16) break;
  }
  double total = 0.0;
  for (double v : p) total += v;
  for (double& v : p) v /= total;
  return p;
}

std::vector<int> sample_private_path(const MarkovChain& chain, int horizon, RandomStream& rng) {
  require(horizon >= 1, ErrorCode::kInvalidInput, "horizon must be >= 1");
  const int n = chain.size();
  std::vector<int> path(horizon);
  path[0] = rng.categorical(chain.initial);
  for (int t = 1; t < horizon; ++t) {
    path[t] = rng.categorical(
        std::span<const double>(chain.transition).subspan(path[t - 1] * n, n));
  }
  return path;
}

UniformQuantizer::UniformQuantizer(int levels, double lo, double hi)
    : levels_(levels), lo_(lo), hi_(hi) {
  require(levels >= 1, ErrorCode::kInvalidConfiguration, "quantizer needs >= 1 level");
  require(hi > lo, ErrorCode::kInvalidConfiguration, "quantizer range must satisfy lo < hi");
}

int UniformQuantizer::quantize(double v) const {
  const double k = std::floor((v - lo_) / width());
  if (!(k >= 0.0)) return 0;  // also maps NaN to the lowest cell
  if (k >= levels_ - 1) return levels_ - 1;
  return static_cast<int>(k);
}

double UniformQuantizer::center(int level) const { return lo_ + (level + 0.5) * width(); }

double UniformQuantizer::cell_mass(int level, double mean, double std) const {
  if (std <= 0.0) return quantize(mean) == level ? 1.0 : 0.0;
  const double upper = level == levels_ - 1 ? 1.0
                                            : normal_cdf((lo_ + (level + 1) * width() - mean) / std);
  const double lower = level == 0 ? 0.0 : normal_cdf((lo_ + level * width() - mean) / std);
  return std::max(0.0, upper - lower);
}

SystemModel SystemModel::linear_gaussian(LinearGaussianParams params, MarkovChain chain,
                                         std::vector<double> controls, int indices,
                                         int horizon) {
  SystemModel m;
  m.kind_ = ModelKind::kLinearGaussian;
  m.linear_ = std::move(params);
  m.chain_ = std::move(chain);
  m.controls_ = std::move(controls);
  m.indices_ = indices;
  m.horizon_ = horizon;
  m.validate();
  return m;
}

SystemModel SystemModel::tabular(TabularParams params, MarkovChain chain,
                                 std::vector<double> controls, int indices, int horizon) {
  SystemModel m;
  m.kind_ = ModelKind::kTabular;
  m.table_ = std::move(params);
  m.chain_ = std::move(chain);
  m.controls_ = std::move(controls);
  m.indices_ = indices;
  m.horizon_ = horizon;
  m.validate();
  return m;
}

void SystemModel::validate() const {
  chain_.validate();
  require(!controls_.empty(), ErrorCode::kInvalidConfiguration, "control alphabet is empty");
  require(indices_ >= 2, ErrorCode::kInvalidConfiguration, "M must be >= 2");
  require(horizon_ >= 1, ErrorCode::kInvalidConfiguration, "T must be >= 1");
  if (kind_ == ModelKind::kLinearGaussian) {
    const auto n = linear_.a.rows();
    require(n >= 1 && linear_.a.cols() == n, ErrorCode::kInvalidConfiguration,
            "a must be a square matrix");
    require(linear_.b_y.size() == n && linear_.b_u.size() == n,
            ErrorCode::kInvalidConfiguration, "b_y and b_u must match the state dimension");
    require(linear_.sigma_w > 0.0 && linear_.sigma_v > 0.0, ErrorCode::kInvalidConfiguration,
            "sigma_w and sigma_v must be > 0");
    require(linear_.x0_std >= 0.0, ErrorCode::kInvalidConfiguration, "x0_std must be >= 0");
    double levels = std::pow(static_cast<double>(linear_.quantizer.levels()),
                             static_cast<double>(n));
    require(levels < 1e9, ErrorCode::kInvalidConfiguration, "observation alphabet too large");
  } else {
    const int nx = table_.states;
    const int nz = table_.observations;
    const int ny = chain_.size();
    const int nu = control_count();
    require(nx >= 1 && nz >= 1, ErrorCode::kInvalidConfiguration,
            "tabular model needs states and observations");
    require(table_.kernel_x.size() == static_cast<std::size_t>(nx) * ny * nu * nx,
            ErrorCode::kInvalidConfiguration, "kernel_x has the wrong size");
    require(table_.kernel_z.size() == static_cast<std::size_t>(nx) * nz,
            ErrorCode::kInvalidConfiguration, "kernel_z has the wrong size");
    for (std::size_t r = 0; r < table_.kernel_x.size() / nx; ++r) {
      check_distribution(std::span<const double>(table_.kernel_x).subspan(r * nx, nx),
                         "kernel_x row " + std::to_string(r));
    }
    for (int x = 0; x < nx; ++x) {
      check_distribution(std::span<const double>(table_.kernel_z).subspan(x * nz, nz),
                         "kernel_z row " + std::to_string(x));
    }
    require(static_cast<int>(table_.initial_x.size()) == nx, ErrorCode::kInvalidConfiguration,
            "initial_x length must match the state count");
    check_distribution(table_.initial_x, "initial_x");
  }
}

int SystemModel::state_dim() const {
  return kind_ == ModelKind::kLinearGaussian ? static_cast<int>(linear_.a.rows()) : 1;
}

int SystemModel::observation_count() const {
  if (kind_ == ModelKind::kTabular) return table_.observations;
  int count = 1;
  for (int i = 0; i < state_dim(); ++i) count *= linear_.quantizer.levels();
  return count;
}

int SystemModel::control_index(double u) const {
  for (int i = 0; i < control_count(); ++i) {
    if (controls_[i] == u) return i;
  }
  fail(ErrorCode::kInvalidInput, "control value " + std::to_string(u) + " is not in the alphabet");
}

int SystemModel::nearest_control(double u) const {
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int i = 0; i < control_count(); ++i) {
    const double d = std::abs(controls_[i] - u);
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
  }
  return best;
}

Eigen::VectorXd SystemModel::sample_initial_state(RandomStream& rng) const {
  if (kind_ == ModelKind::kTabular) {
    Eigen::VectorXd x(1);
    x[0] = rng.categorical(table_.initial_x);
    return x;
  }
  Eigen::VectorXd x(state_dim());
  for (int i = 0; i < state_dim(); ++i) x[i] = linear_.x0_std * rng.normal();
  return x;
}

Eigen::VectorXd SystemModel::linear_mean(const Eigen::VectorXd& x, int y, int u) const {
  return linear_.a * x + linear_.b_y * chain_.values[y] + linear_.b_u * controls_[u];
}

Eigen::VectorXd SystemModel::step(const Eigen::VectorXd& x, int y, int u,
                                  RandomStream& rng) const {
  require(u >= 0 && u < control_count(), ErrorCode::kInvalidInput,
          "control index outside the alphabet");
  require(y >= 0 && y < chain_.size(), ErrorCode::kInvalidInput, "private state out of range");
  if (kind_ == ModelKind::kTabular) {
    const int xi = static_cast<int>(x[0]);
    const int nx = table_.states;
    const std::size_t row = ((static_cast<std::size_t>(xi) * chain_.size() + y) *
                                 controls_.size() + u) * nx;
    Eigen::VectorXd next(1);
    next[0] = rng.categorical(std::span<const double>(table_.kernel_x).subspan(row, nx));
    return next;
  }
  Eigen::VectorXd next = linear_mean(x, y, u);
  for (int i = 0; i < state_dim(); ++i) next[i] += linear_.sigma_w * rng.normal();
  return next;
}

Eigen::VectorXd SystemModel::step_value(const Eigen::VectorXd& x, int y, double u,
                                        RandomStream& rng) const {
  return step(x, y, control_index(u), rng);
}

int SystemModel::observe(const Eigen::VectorXd& x, RandomStream& rng) const {
  if (kind_ == ModelKind::kTabular) {
    const int xi = static_cast<int>(x[0]);
    return rng.categorical(std::span<const double>(table_.kernel_z)
                               .subspan(static_cast<std::size_t>(xi) * table_.observations,
                                        table_.observations));
  }
  int z = 0;
  int radix = 1;
  for (int i = 0; i < state_dim(); ++i) {
    z += radix * linear_.quantizer.quantize(x[i] + linear_.sigma_v * rng.normal());
    radix *= linear_.quantizer.levels();
  }
  return z;
}

double SystemModel::observation_probability(const Eigen::VectorXd& x, int z) const {
  if (kind_ == ModelKind::kTabular) return kz(static_cast<int>(x[0]), z);
  double p = 1.0;
  const int levels = linear_.quantizer.levels();
  for (int i = 0; i < state_dim(); ++i) {
    p *= linear_.quantizer.cell_mass(z % levels, x[i], linear_.sigma_v);
    z /= levels;
  }
  return p;
}

Eigen::VectorXd SystemModel::dequantize(int z) const {
  if (kind_ == ModelKind::kTabular) {
    Eigen::VectorXd x(1);
    x[0] = z;
    return x;
  }
  Eigen::VectorXd x(state_dim());
  const int levels = linear_.quantizer.levels();
  for (int i = 0; i < state_dim(); ++i) {
    x[i] = linear_.quantizer.center(z % levels);
    z /= levels;
  }
  return x;
}

StageCost::StageCost(Evaluate evaluate, Terminal terminal)
    : evaluate_(std::move(evaluate)), terminal_(std::move(terminal)) {}

StageCost StageCost::quadratic(double q, double r, std::vector<double> controls) {
  require(q >= 0.0 && r >= 0.0, ErrorCode::kInvalidConfiguration,
          "quadratic cost weights must be >= 0");
  return StageCost(
      [q, r, controls = std::move(controls)](const Eigen::VectorXd& x, int u) {
        return q * x.squaredNorm() + r * controls[u] * controls[u];
      },
      [q](const Eigen::VectorXd& x) { return q * x.squaredNorm(); });
}

StageCost StageCost::table(int states, std::vector<double> stage, std::vector<double> terminal) {
  require(static_cast<int>(terminal.size()) == states && states > 0 &&
              stage.size() % states == 0,
          ErrorCode::kInvalidConfiguration, "cost table dimensions do not match the state count");
  const int controls = static_cast<int>(stage.size()) / states;
  return StageCost(
      [stage = std::move(stage), controls](const Eigen::VectorXd& x, int u) {
        return stage[static_cast<int>(x[0]) * controls + u];
      },
      [terminal = std::move(terminal)](const Eigen::VectorXd& x) {
        return terminal[static_cast<int>(x[0])];
      });
}

double Trajectory::total_cost() const {
  double total = 0.0;
  for (double c : cost) total += c;
  return total;
}

Eigen::VectorXd Trajectory::state(int t) const {
  return Eigen::Map<const Eigen::VectorXd>(x.data() + static_cast<std::size_t>(t) * state_dim,
                                           state_dim);
}

RolloutStreams::RolloutStreams(const RandomStream& base)
    : privates(base.split(1)), dynamics(base.split(2)), policy(base.split(3)) {}

Trajectory rollout(const SystemModel& model, const JointPolicy& policy, const StageCost& cost,
                   const RandomStream& base, ControlMode mode) {
  const PolicyShape shape = policy.shape();
  require(shape.observations == model.observation_count() && shape.indices == model.indices() &&
              shape.controls == model.control_count(),
          ErrorCode::kInvalidInput, "policy alphabet sizes do not match the model");
  RolloutStreams streams(base);
  const int horizon = model.horizon();
  Trajectory traj;
  traj.state_dim = model.state_dim();
  traj.y = sample_private_path(model.chain(), horizon, streams.privates);
  traj.x.reserve(static_cast<std::size_t>(horizon) * traj.state_dim);
  traj.z.reserve(horizon);
  traj.s.reserve(horizon);
  traj.u.reserve(horizon);
  traj.cost.reserve(horizon);

  PolicyCarry carry = policy.initial_carry();
  Eigen::VectorXd x = model.sample_initial_state(streams.dynamics);
  for (int t = 1; t <= horizon; ++t) {
    const int z = model.observe(x, streams.dynamics);
    const PolicyOutput out = forward(policy, carry, z);
    const Action action = sample_action(out, streams.policy, mode);
    const int u = action.u;
    for (int i = 0; i < traj.state_dim; ++i) traj.x.push_back(x[i]);
    traj.z.push_back(z);
    traj.s.push_back(action.s);
    traj.u.push_back(u);
    traj.cost.push_back(cost.at(t, horizon, x, u));
    const int y = traj.y[t - 1];
    policy.advance(carry, z, action.s, u, out.hidden);
    if (t < horizon) x = model.step(x, y, u, streams.dynamics);
  }
  return traj;
}

std::vector<Trajectory> rollout_batch(const SystemModel& model, const JointPolicy& policy,
                                      const StageCost& cost, std::uint64_t seed,
                                      std::uint64_t first_id, int count, ControlMode mode) {
  std::vector<Trajectory> out(std::max(count, 0));
  parallel_for(count, [&](int i) {
    out[i] = rollout(model, policy, cost, RandomStream(seed, first_id + i), mode);
  });
  return out;
}

namespace {

const nlohmann::json& field(const nlohmann::json& j, const char* name) {
  if (!j.contains(name)) {
    fail(ErrorCode::kInvalidConfiguration, std::string("missing config field '") + name + "'");
  }
  return j.at(name);
}

std::vector<double> flat_numbers(const nlohmann::json& j, const char* name) {
  std::vector<double> out;
  std::function<void(const nlohmann::json&)> walk = [&](const nlohmann::json& v) {
    if (v.is_array()) {
      for (const auto& e : v) walk(e);
    } else if (v.is_number()) {
      out.push_back(v.get<double>());
    } else {
      fail(ErrorCode::kInvalidConfiguration, std::string("field '") + name + "' must be numeric");
    }
  };
  walk(j);
  return out;
}

// A tensor field is either a nested/flat array or {"dims": [...], "data": [...]}.
std::vector<double> tensor_field(const nlohmann::json& j, const char* name,
                                 std::vector<int> expected_dims) {
  const nlohmann::json& v = field(j, name);
  std::vector<double> data;
  if (v.is_object()) {
    const auto dims = field(v, "dims").get<std::vector<int>>();
    require(dims == expected_dims, ErrorCode::kInvalidConfiguration,
            std::string("field '") + name + "' has unexpected dims");
    data = flat_numbers(field(v, "data"), name);
  } else {
    data = flat_numbers(v, name);
  }
  std::size_t expected = 1;
  for (int d : expected_dims) expected *= d;
  require(data.size() == expected, ErrorCode::kInvalidConfiguration,
          std::string("field '") + name + "' has " + std::to_string(data.size()) +
              " entries, expected " + std::to_string(expected));
  return data;
}

Eigen::MatrixXd matrix_field(const nlohmann::json& j, const char* name, int rows, int cols) {
  const std::vector<double> data = tensor_field(j, name, {rows, cols});
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = data[r * cols + c];
  }
  return m;
}

}  // namespace

SystemModel model_from_json(const nlohmann::json& config) {
  try {
    const std::string kind = field(config, "kind").get<std::string>();
    const int horizon = field(config, "T").get<int>();
    const int indices = field(config, "M").get<int>();

    MarkovChain chain;
    const nlohmann::json& transition = field(config, "transition");
    std::vector<double> flat = flat_numbers(transition, "transition");
    const int ny = static_cast<int>(std::lround(std::sqrt(static_cast<double>(flat.size()))));
    require(ny * ny == static_cast<int>(flat.size()), ErrorCode::kInvalidConfiguration,
            "transition must be a square matrix");
    chain.transition = std::move(flat);
    if (config.contains("states")) {
      chain.values = flat_numbers(config.at("states"), "states");
    } else {
      for (int i = 0; i < ny; ++i) chain.values.push_back(i);
    }
    require(static_cast<int>(chain.values.size()) == ny, ErrorCode::kInvalidConfiguration,
            "states must list one value per private state");
    chain.initial.assign(ny, 1.0 / ny);
    if (config.contains("initial")) {
      const nlohmann::json& init = config.at("initial");
      if (init.is_string()) {
        require(init.get<std::string>() == "stationary", ErrorCode::kInvalidConfiguration,
                "initial must be a probability vector or \"stationary\"");
        chain.initial = stationary_distribution(chain);
      } else {
        chain.initial = flat_numbers(init, "initial");
      }
    } else {
      chain.initial = stationary_distribution(chain);
    }

    std::vector<double> controls;
    if (config.contains("controls")) {
      controls = flat_numbers(config.at("controls"), "controls");
    } else {
      const int levels = config.value("u_levels", 9);
      const double u_max = config.value("u_max", 12.0);
      require(levels >= 1, ErrorCode::kInvalidConfiguration, "u_levels must be >= 1");
      if (levels == 1) {
        controls.push_back(0.0);
      } else {
        for (int i = 0; i < levels; ++i) controls.push_back(-u_max + 2.0 * u_max * i / (levels - 1));
      }
    }

    if (kind == "linear-gaussian") {
      LinearGaussianParams p;
      const nlohmann::json& a = field(config, "a");
      const int n = a.is_number() ? 1
                                  : static_cast<int>(std::lround(std::sqrt(
                                        static_cast<double>(flat_numbers(a, "a").size()))));
      p.a = matrix_field(config, "a", n, n);
      p.b_y = matrix_field(config, "b_y", n, 1).col(0);
      p.b_u = matrix_field(config, "b_u", n, 1).col(0);
      p.sigma_w = field(config, "sigma_w").get<double>();
      p.sigma_v = field(config, "sigma_v").get<double>();
      p.x0_std = config.value("x0_std", p.sigma_w);
      const auto range = field(config, "obs_range").get<std::vector<double>>();
      require(range.size() == 2, ErrorCode::kInvalidConfiguration, "obs_range must be [lo, hi]");
      p.quantizer = UniformQuantizer(field(config, "obs_levels").get<int>(), range[0], range[1]);
      return SystemModel::linear_gaussian(std::move(p), std::move(chain), std::move(controls),
                                          indices, horizon);
    }
    if (kind == "tabular") {
      TabularParams p;
      p.states = field(config, "x_states").get<int>();
      p.observations = field(config, "z_levels").get<int>();
      p.kernel_x = tensor_field(config, "kernel_x",
                                {p.states, ny, static_cast<int>(controls.size()), p.states});
      p.kernel_z = tensor_field(config, "kernel_z", {p.states, p.observations});
      if (config.contains("initial_x")) {
        p.initial_x = flat_numbers(config.at("initial_x"), "initial_x");
      } else {
        p.initial_x.assign(p.states, 1.0 / p.states);
      }
      return SystemModel::tabular(std::move(p), std::move(chain), std::move(controls), indices,
                                  horizon);
    }
    fail(ErrorCode::kInvalidConfiguration, "unknown model kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidConfiguration, std::string("malformed model config: ") + e.what());
  }
}

nlohmann::json model_to_json(const SystemModel& model) {
  nlohmann::json j;
  const MarkovChain& chain = model.chain();
  j["T"] = model.horizon();
  j["M"] = model.indices();
  j["transition"] = chain.transition;
  j["initial"] = chain.initial;
  j["states"] = chain.values;
  j["controls"] = model.controls();
  if (model.kind() == ModelKind::kLinearGaussian) {
    const LinearGaussianParams& p = model.linear();
    const int n = model.state_dim();
    j["kind"] = "linear-gaussian";
    std::vector<double> a;
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) a.push_back(p.a(r, c));
    }
    j["a"] = a;
    j["b_y"] = std::vector<double>(p.b_y.data(), p.b_y.data() + n);
    j["b_u"] = std::vector<double>(p.b_u.data(), p.b_u.data() + n);
    j["sigma_w"] = p.sigma_w;
    j["sigma_v"] = p.sigma_v;
    j["x0_std"] = p.x0_std;
    j["obs_levels"] = p.quantizer.levels();
    j["obs_range"] = {p.quantizer.lo(), p.quantizer.hi()};
  } else {
    const TabularParams& p = model.table();
    j["kind"] = "tabular";
    j["x_states"] = p.states;
    j["z_levels"] = p.observations;
    j["kernel_x"] = {{"dims", {p.states, chain.size(), model.control_count(), p.states}},
                     {"data", p.kernel_x}};
    j["kernel_z"] = {{"dims", {p.states, p.observations}}, {"data", p.kernel_z}};
    j["initial_x"] = p.initial_x;
  }
  return j;
}

StageCost cost_from_json(const nlohmann::json& config, const SystemModel& model) {
  if (!config.contains("cost")) return StageCost::quadratic(1.0, 0.01, model.controls());
  const nlohmann::json& c = config.at("cost");
  if (c.contains("stage")) {
    require(model.kind() == ModelKind::kTabular, ErrorCode::kInvalidConfiguration,
            "cost tables require a tabular model");
    const int nx = model.table().states;
    return StageCost::table(nx, tensor_field(c, "stage", {nx, model.control_count()}),
                            tensor_field(c, "terminal", {nx}));
  }
  return StageCost::quadratic(c.value("q", 1.0), c.value("r", 0.01), model.controls());
}

}  // namespace privctrl
