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

#include "privctrl/policy.h"

#include <algorithm>
#include <cmath>

#include "privctrl/error.h"
#include "privctrl/io.h"

namespace privctrl {

namespace {

int argmax_lowest(const Eigen::VectorXd& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

void check_row(std::span<const double> row, const char* what) {
  double total = 0.0;
  for (double p : row) {
    require(p >= 0.0 && std::isfinite(p), ErrorCode::kInvalidInput,
            std::string(what) + " has a negative entry");
    total += p;
  }
  require(std::abs(total - 1.0) < 1e-9, ErrorCode::kInvalidInput,
          std::string(what) + " row does not sum to 1");
}

}  // namespace

int JointPolicy::greedy_control(const PolicyCarry& carry, int s) const {
  std::vector<double> probs(shape().controls);
  controller_probs(carry, s, probs);
  return argmax_lowest(Eigen::Map<const Eigen::VectorXd>(probs.data(), probs.size()));
}

void JointPolicy::advance(PolicyCarry& carry, int z, int s, int u, Eigen::VectorXd next) const {
  carry.z.push_back(z);
  carry.s.push_back(s);
  carry.u.push_back(u);
  if (next.size() > 0) carry.quantizer = std::move(next);
  update_controller(carry, s, u);
}

void JointPolicy::advance_quantizer(PolicyCarry& carry, int z, int s, int u,
                                    Eigen::VectorXd next) const {
  carry.z.push_back(z);
  carry.s.push_back(s);
  carry.u.push_back(u);
  if (next.size() > 0) carry.quantizer = std::move(next);
}

void JointPolicy::update_controller(PolicyCarry&, int, int) const {}

void JointPolicy::quantizer_all(const PolicyCarry& carry, Eigen::MatrixXd& s_probs,
                                std::vector<Eigen::VectorXd>* next,
                                std::span<const double> mask) const {
  const PolicyShape sh = shape();
  s_probs.setZero(sh.observations, sh.indices);
  if (next != nullptr) next->assign(sh.observations, Eigen::VectorXd());
  std::vector<double> row(sh.indices);
  for (int z = 0; z < sh.observations; ++z) {
    if (!mask.empty() && mask[z] == 0.0) continue;
    quantizer_step(carry, z, row, next != nullptr ? &(*next)[z] : nullptr);
    for (int s = 0; s < sh.indices; ++s) s_probs(z, s) = row[s];
  }
}

nlohmann::json Architecture::to_json() const {
  return {{"observations", observations}, {"indices", indices}, {"controls", controls},
          {"hidden", hidden}};
}

Architecture Architecture::from_json(const nlohmann::json& j) {
  Architecture a;
  a.observations = j.at("observations").get<int>();
  a.indices = j.at("indices").get<int>();
  a.controls = j.at("controls").get<int>();
  a.hidden = j.at("hidden").get<int>();
  return a;
}

CellBlocks add_cell(ParamLayout& layout, int inputs, int hidden) {
  CellBlocks c;
  c.wg = layout.add(hidden, inputs);
  c.bg = layout.add(hidden);
  c.ug = layout.add(hidden, hidden);
  c.wc = layout.add(hidden, inputs);
  c.bc = layout.add(hidden);
  c.uc = layout.add(hidden, hidden);
  return c;
}

PolicyLayout make_policy_layout(const Architecture& arch) {
  require(arch.observations >= 1 && arch.indices >= 1 && arch.controls >= 1 && arch.hidden >= 1,
          ErrorCode::kInvalidConfiguration, "architecture widths must be >= 1");
  ParamLayout layout;
  PolicyLayout out;
  const int h = arch.hidden;
  out.quantizer = add_cell(layout, arch.observations + arch.indices + 1 + arch.controls + 1, h);
  out.quantizer_head_w = layout.add(arch.indices, h);
  out.quantizer_head_b = layout.add(arch.indices);
  out.controller = add_cell(layout, arch.indices + arch.controls, h);
  out.controller_head_w = layout.add(arch.controls, h);
  out.controller_head_s = layout.add(arch.controls, arch.indices);
  out.controller_head_b = layout.add(arch.controls);
  out.size = layout.size();
  return out;
}

Tape::Var gated_cell(Tape& tape, const CellBlocks& cell, Tape::Var h, std::span<const int> cols) {
  const Tape::Var g = tape.sigmoid(tape.affine(cell.ug, h, tape.embed(cell.wg, cols, cell.bg)));
  const Tape::Var c = tape.tanh(tape.affine(cell.uc, h, tape.embed(cell.wc, cols, cell.bc)));
  return tape.blend(h, g, c);
}

void init_uniform(ParamBlock block, double scale, std::span<double> theta, RandomStream& rng) {
  for (int i = 0; i < block.size(); ++i) {
    theta[block.offset + i] = scale * (2.0 * rng.uniform() - 1.0);
  }
}

void init_cell(const CellBlocks& cell, int fan_in, std::span<double> theta, RandomStream& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
  init_uniform(cell.wg, scale, theta, rng);
  init_uniform(cell.ug, scale, theta, rng);
  init_uniform(cell.wc, scale, theta, rng);
  init_uniform(cell.uc, scale, theta, rng);
}

RecurrentPolicy::RecurrentPolicy(Architecture arch, std::vector<double> theta)
    : arch_(arch), layout_(make_policy_layout(arch)), theta_(std::move(theta)) {
  require(static_cast<int>(theta_.size()) == layout_.size, ErrorCode::kInvalidInput,
          "parameter count does not match the architecture");
  for (double v : theta_) {
    require(std::isfinite(v), ErrorCode::kInvalidInput, "policy parameters must be finite");
  }
}

int RecurrentPolicy::parameter_count(const Architecture& arch) {
  return make_policy_layout(arch).size;
}

RecurrentPolicy RecurrentPolicy::init(const Architecture& arch, std::uint64_t seed) {
  const PolicyLayout layout = make_policy_layout(arch);
  std::vector<double> theta(layout.size, 0.0);
  RandomStream rng(seed, 0x706f6c6963ULL);
  init_cell(layout.quantizer, arch.hidden, theta, rng);
  init_cell(layout.controller, arch.hidden, theta, rng);
  const double head = 0.01 / std::sqrt(static_cast<double>(arch.hidden));
  init_uniform(layout.quantizer_head_w, head, theta, rng);
  init_uniform(layout.controller_head_w, head, theta, rng);
  init_uniform(layout.controller_head_s, 0.01, theta, rng);
  return RecurrentPolicy(arch, std::move(theta));
}

PolicyShape RecurrentPolicy::shape() const {
  return {arch_.observations, arch_.indices, arch_.controls};
}

PolicyCarry RecurrentPolicy::initial_carry() const {
  PolicyCarry carry;
  carry.quantizer = Eigen::VectorXd::Zero(arch_.hidden);
  carry.controller = Eigen::VectorXd::Zero(arch_.hidden);
  return carry;
}

std::array<int, 3> RecurrentPolicy::quantizer_columns(int z, int prev_s, int prev_u) const {
  require(z >= 0 && z < arch_.observations, ErrorCode::kInvalidInput, "observation out of range");
  require(prev_s >= -1 && prev_s < arch_.indices && prev_u >= -1 && prev_u < arch_.controls,
          ErrorCode::kInvalidInput, "history symbol out of range");
  return {z, arch_.observations + prev_s + 1,
          arch_.observations + arch_.indices + 1 + prev_u + 1};
}

std::array<int, 2> RecurrentPolicy::controller_columns(int s, int u) const {
  require(s >= 0 && s < arch_.indices && u >= 0 && u < arch_.controls, ErrorCode::kInvalidInput,
          "controller input out of range");
  return {s, arch_.indices + u};
}

Tape::Var RecurrentPolicy::quantizer_logits(Tape& tape, Tape::Var h) const {
  return tape.affine(layout_.quantizer_head_w, h, tape.bias(layout_.quantizer_head_b));
}

Tape::Var RecurrentPolicy::controller_logits(Tape& tape, Tape::Var h, int s) const {
  require(s >= 0 && s < arch_.indices, ErrorCode::kInvalidInput, "index out of range");
  const Tape::Var base =
      tape.affine(layout_.controller_head_w, h, tape.bias(layout_.controller_head_b));
  return tape.add_column(base, layout_.controller_head_s, s);
}

void RecurrentPolicy::quantizer_step(const PolicyCarry& carry, int z, std::span<double> s_probs,
                                     Eigen::VectorXd* next) const {
  require(static_cast<int>(s_probs.size()) == arch_.indices, ErrorCode::kInvalidInput,
          "index distribution buffer has the wrong width");
  require(carry.quantizer.size() == arch_.hidden, ErrorCode::kInvalidInput,
          "hidden state width mismatch");
  Tape tape(theta_);
  const auto cols = quantizer_columns(z, carry.prev_s(), carry.prev_u());
  const Tape::Var h = gated_cell(tape, layout_.quantizer, tape.constant(carry.quantizer), cols);
  const Eigen::VectorXd p = softmax(tape.value(quantizer_logits(tape, h)));
  std::copy(p.data(), p.data() + p.size(), s_probs.begin());
  if (next != nullptr) *next = tape.value(h);
}

void RecurrentPolicy::quantizer_all(const PolicyCarry& carry, Eigen::MatrixXd& s_probs,
                                    std::vector<Eigen::VectorXd>* next,
                                    std::span<const double> mask) const {
  require(carry.quantizer.size() == arch_.hidden, ErrorCode::kInvalidInput,
          "hidden state width mismatch");
  // Same arithmetic as the taped cell, with the z-independent part shared.
  auto block = [this](ParamBlock b) {
    return Eigen::Map<const Eigen::MatrixXd>(theta_.data() + b.offset, b.rows, b.cols);
  };
  const CellBlocks& cell = layout_.quantizer;
  const auto cols = quantizer_columns(0, carry.prev_s(), carry.prev_u());
  const Eigen::VectorXd& h = carry.quantizer;
  const Eigen::VectorXd pre_g = block(cell.ug) * h + block(cell.bg) + block(cell.wg).col(cols[1]) +
                                block(cell.wg).col(cols[2]);
  const Eigen::VectorXd pre_c = block(cell.uc) * h + block(cell.bc) + block(cell.wc).col(cols[1]) +
                                block(cell.wc).col(cols[2]);
  const auto head_w = block(layout_.quantizer_head_w);
  const auto head_b = block(layout_.quantizer_head_b);
  s_probs.setZero(arch_.observations, arch_.indices);
  if (next != nullptr) next->resize(arch_.observations);
  Eigen::VectorXd hn(arch_.hidden);
  Eigen::VectorXd logits(arch_.indices);
  const double* wg = theta_.data() + cell.wg.offset;
  const double* wc = theta_.data() + cell.wc.offset;
  const int hidden = arch_.hidden;
  for (int z = 0; z < arch_.observations; ++z) {
    if (!mask.empty() && mask[z] == 0.0) continue;
    for (int i = 0; i < hidden; ++i) {
      const double g = 1.0 / (1.0 + std::exp(-(pre_g[i] + wg[z * hidden + i])));
      const double c = std::tanh(pre_c[i] + wc[z * hidden + i]);
      hn[i] = h[i] + g * (c - h[i]);
    }
    logits.noalias() = head_w * hn;
    logits += head_b;
    const double top = logits.maxCoeff();
    double total = 0.0;
    for (int s = 0; s < arch_.indices; ++s) {
      const double e = std::exp(logits[s] - top);
      s_probs(z, s) = e;
      total += e;
    }
    s_probs.row(z) /= total;
    if (next != nullptr) (*next)[z] = hn;
  }
}

void RecurrentPolicy::controller_probs(const PolicyCarry& carry, int s,
                                       std::span<double> u_probs) const {
  require(static_cast<int>(u_probs.size()) == arch_.controls, ErrorCode::kInvalidInput,
          "control distribution buffer has the wrong width");
  Tape tape(theta_);
  const Eigen::VectorXd& logits =
      tape.value(controller_logits(tape, tape.constant(carry.controller), s));
  if (greedy_) {
    std::fill(u_probs.begin(), u_probs.end(), 0.0);
    u_probs[argmax_lowest(logits)] = 1.0;
    return;
  }
  const Eigen::VectorXd p = softmax(logits);
  std::copy(p.data(), p.data() + p.size(), u_probs.begin());
}

int RecurrentPolicy::greedy_control(const PolicyCarry& carry, int s) const {
  Tape tape(theta_);
  return argmax_lowest(tape.value(controller_logits(tape, tape.constant(carry.controller), s)));
}

void RecurrentPolicy::update_controller(PolicyCarry& carry, int s, int u) const {
  Tape tape(theta_);
  const auto cols = controller_columns(s, u);
  carry.controller =
      tape.value(gated_cell(tape, layout_.controller, tape.constant(carry.controller), cols));
}

RecurrentPolicy make_deterministic_controller_head(const RecurrentPolicy& policy) {
  RecurrentPolicy out = policy;
  out.set_greedy(true);
  return out;
}

TabularPolicy::TabularPolicy(PolicyShape shape, QuantizerFn quantizer, ControllerFn controller)
    : shape_(shape), quantizer_(std::move(quantizer)), controller_(std::move(controller)) {}

TabularPolicy TabularPolicy::memoryless(PolicyShape shape, std::vector<double> q,
                                        std::vector<double> c) {
  require(q.size() == static_cast<std::size_t>(shape.observations) * shape.indices &&
              c.size() == static_cast<std::size_t>(shape.indices) * shape.controls,
          ErrorCode::kInvalidInput, "memoryless table sizes do not match the shape");
  for (int z = 0; z < shape.observations; ++z) {
    check_row(std::span<const double>(q).subspan(z * shape.indices, shape.indices), "quantizer");
  }
  for (int s = 0; s < shape.indices; ++s) {
    check_row(std::span<const double>(c).subspan(s * shape.controls, shape.controls),
              "controller");
  }
  return TabularPolicy(
      shape,
      [q, m = shape.indices](const PolicyCarry&, int z, std::span<double> out) {
        std::copy(q.begin() + z * m, q.begin() + (z + 1) * m, out.begin());
      },
      [c, n = shape.controls](const PolicyCarry&, int s, std::span<double> out) {
        std::copy(c.begin() + s * n, c.begin() + (s + 1) * n, out.begin());
      });
}

void TabularPolicy::quantizer_step(const PolicyCarry& carry, int z, std::span<double> s_probs,
                                   Eigen::VectorXd* next) const {
  quantizer_(carry, z, s_probs);
  if (next != nullptr) *next = Eigen::VectorXd();
}

void TabularPolicy::controller_probs(const PolicyCarry& carry, int s,
                                     std::span<double> u_probs) const {
  controller_(carry, s, u_probs);
}

KpBaselinePolicy::KpBaselinePolicy(double k_p, const SystemModel& model)
    : shape_{model.observation_count(), model.indices(), model.control_count()} {
  require(model.indices() >= model.observation_count(), ErrorCode::kInvalidConfiguration,
          "the pass-through baseline needs M >= observation levels");
  require(model.state_dim() == 1, ErrorCode::kInvalidConfiguration,
          "the proportional baseline is defined for scalar states");
  control_of_index_.resize(model.indices());
  for (int s = 0; s < model.indices(); ++s) {
    const double center = s < model.observation_count() ? model.dequantize(s)[0] : 0.0;
    control_of_index_[s] = model.nearest_control(k_p * center);
  }
}

void KpBaselinePolicy::quantizer_step(const PolicyCarry&, int z, std::span<double> s_probs,
                                      Eigen::VectorXd* next) const {
  std::fill(s_probs.begin(), s_probs.end(), 0.0);
  s_probs[z] = 1.0;
  if (next != nullptr) *next = Eigen::VectorXd();
}

void KpBaselinePolicy::controller_probs(const PolicyCarry&, int s,
                                        std::span<double> u_probs) const {
  std::fill(u_probs.begin(), u_probs.end(), 0.0);
  u_probs[control_of_index_[s]] = 1.0;
}

KpBaselinePolicy kp_baseline_controller(double k_p, const SystemModel& model) {
  return KpBaselinePolicy(k_p, model);
}

PolicyOutput forward(const JointPolicy& policy, const PolicyCarry& carry, int z) {
  const PolicyShape shape = policy.shape();
  require(z >= 0 && z < shape.observations, ErrorCode::kInvalidInput, "observation out of range");
  PolicyOutput out;
  out.s_probs.resize(shape.indices);
  policy.quantizer_step(carry, z, std::span<double>(out.s_probs.data(), shape.indices),
                        &out.hidden);
  out.u_probs.resize(shape.indices, shape.controls);
  std::vector<double> row(shape.controls);
  for (int s = 0; s < shape.indices; ++s) {
    policy.controller_probs(carry, s, row);
    for (int u = 0; u < shape.controls; ++u) out.u_probs(s, u) = row[u];
  }
  return out;
}

Action sample_action(const PolicyOutput& output, RandomStream& rng, ControlMode mode) {
  Action a;
  a.s = rng.categorical(std::span<const double>(output.s_probs.data(), output.s_probs.size()));
  const Eigen::VectorXd row = output.u_probs.row(a.s).transpose();
  if (mode == ControlMode::kGreedy) {
    a.u = argmax_lowest(row);
  } else {
    a.u = rng.categorical(std::span<const double>(row.data(), row.size()));
  }
  a.log_prob = std::log(output.s_probs[a.s]) + std::log(row[a.u]);
  return a;
}

TrajectoryContext TrajectoryContext::of(const Trajectory& trajectory) {
  return {trajectory.z, trajectory.s, trajectory.u};
}

LogProbGradient log_prob_gradient_split(const RecurrentPolicy& policy,
                                        const TrajectoryContext& context,
                                        std::span<const double> index_weights,
                                        std::span<const double> control_weights) {
  const int horizon = static_cast<int>(context.z.size());
  require(static_cast<int>(context.s.size()) == horizon &&
              static_cast<int>(context.u.size()) == horizon,
          ErrorCode::kInvalidInput, "trajectory context lengths differ");
  require((index_weights.empty() || static_cast<int>(index_weights.size()) == horizon) &&
              (control_weights.empty() || static_cast<int>(control_weights.size()) == horizon),
          ErrorCode::kInvalidInput, "step weights must match the horizon");
  const Architecture& arch = policy.architecture();
  Tape tape(policy.params());
  LogProbGradient out;
  out.gradient.assign(policy.params().size(), 0.0);
  Tape::Var hq = tape.constant(Eigen::VectorXd::Zero(arch.hidden));
  Tape::Var hc = tape.constant(Eigen::VectorXd::Zero(arch.hidden));
  for (int t = 0; t < horizon; ++t) {
    const int prev_s = t == 0 ? -1 : context.s[t - 1];
    const int prev_u = t == 0 ? -1 : context.u[t - 1];
    const auto qcols = policy.quantizer_columns(context.z[t], prev_s, prev_u);
    hq = gated_cell(tape, policy.layout().quantizer, hq, qcols);

    const Tape::Var lq = policy.quantizer_logits(tape, hq);
    const Eigen::VectorXd lsq = log_softmax(tape.value(lq));
    out.log_prob += lsq[context.s[t]];
    const double wq = index_weights.empty() ? 1.0 : index_weights[t];
    if (wq != 0.0) {
      Eigen::VectorXd seed = -wq * lsq.array().exp().matrix();
      seed[context.s[t]] += wq;
      tape.seed(lq, seed);
    }

    const Tape::Var lu = policy.controller_logits(tape, hc, context.s[t]);
    const Eigen::VectorXd lsu = log_softmax(tape.value(lu));
    out.log_prob += lsu[context.u[t]];
    const double wu = control_weights.empty() ? 1.0 : control_weights[t];
    if (wu != 0.0) {
      Eigen::VectorXd seed = -wu * lsu.array().exp().matrix();
      seed[context.u[t]] += wu;
      tape.seed(lu, seed);
    }

    if (t + 1 < horizon) {
      const auto ccols = policy.controller_columns(context.s[t], context.u[t]);
      hc = gated_cell(tape, policy.layout().controller, hc, ccols);
    }
  }
  tape.backward(out.gradient);
  return out;
}

LogProbGradient log_prob_gradient(const RecurrentPolicy& policy, const TrajectoryContext& context,
                                  std::span<const double> step_weights) {
  return log_prob_gradient_split(policy, context, step_weights, step_weights);
}

double log_probability(const JointPolicy& policy, const TrajectoryContext& context) {
  const int horizon = static_cast<int>(context.z.size());
  require(static_cast<int>(context.s.size()) == horizon &&
              static_cast<int>(context.u.size()) == horizon,
          ErrorCode::kInvalidInput, "trajectory context lengths differ");
  const PolicyShape shape = policy.shape();
  PolicyCarry carry = policy.initial_carry();
  std::vector<double> sp(shape.indices), up(shape.controls);
  double total = 0.0;
  for (int t = 0; t < horizon; ++t) {
    Eigen::VectorXd next;
    policy.quantizer_step(carry, context.z[t], sp, &next);
    policy.controller_probs(carry, context.s[t], up);
    total += std::log(sp[context.s[t]]) + std::log(up[context.u[t]]);
    policy.advance(carry, context.z[t], context.s[t], context.u[t], std::move(next));
  }
  return total;
}

nlohmann::json make_checkpoint(const std::string& kind, const Architecture& arch,
                               std::span<const double> theta, std::uint64_t seed, long step,
                               const nlohmann::json& extra) {
  nlohmann::json j;
  j["format"] = "privctrl-checkpoint";
  j["format_version"] = 1;
  j["kind"] = kind;
  j["architecture"] = arch.to_json();
  j["seed"] = seed;
  j["step"] = step;
  j["parameter_count"] = theta.size();
  j["params"] = encode_doubles(theta);
  if (!extra.is_null()) j["extra"] = extra;
  return j;
}

Checkpoint parse_checkpoint(const nlohmann::json& j) {
  try {
    require(j.at("format").get<std::string>() == "privctrl-checkpoint",
            ErrorCode::kInvalidInput, "not a privctrl checkpoint");
    Checkpoint c;
    c.kind = j.at("kind").get<std::string>();
    c.arch = Architecture::from_json(j.at("architecture"));
    c.seed = j.at("seed").get<std::uint64_t>();
    c.step = j.at("step").get<long>();
    c.theta = decode_doubles(j.at("params").get<std::string>());
    require(c.theta.size() == j.at("parameter_count").get<std::size_t>(),
            ErrorCode::kInvalidInput, "checkpoint payload length mismatch");
    if (j.contains("extra")) c.extra = j.at("extra");
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidInput, std::string("malformed checkpoint: ") + e.what());
  }
}

void save_policy(const std::string& path, const RecurrentPolicy& policy, std::uint64_t seed,
                 long step) {
  const nlohmann::json j = make_checkpoint("policy", policy.architecture(), policy.params(), seed,
                                           step, {{"greedy", policy.greedy()}});
  write_file_atomic(path, j.dump(2) + "\n");
}

RecurrentPolicy load_policy(const std::string& path) {
  const Checkpoint c = parse_checkpoint(read_json_file(path));
  require(c.kind == "policy", ErrorCode::kInvalidInput, path + " is not a policy checkpoint");
  RecurrentPolicy policy(c.arch, c.theta);
  if (c.extra.contains("greedy")) policy.set_greedy(c.extra.at("greedy").get<bool>());
  return policy;
}

}  // namespace privctrl
