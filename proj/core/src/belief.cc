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

#include "privctrl/belief.h"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "privctrl/error.h"

namespace privctrl {

namespace {

using QTable = std::map<std::vector<int>, std::vector<double>>;

QTable tabulate(const BeliefState& belief, const QuantizerCollection& q) {
  QTable table;
  for (const auto& [key, w] : belief.atoms) {
    if (!table.contains(key.z)) table.emplace(key.z, q(key.z));
  }
  return table;
}

double prior_y(const SystemModel& model, const std::vector<int>& y_history, int y) {
  const MarkovChain& chain = model.chain();
  return y_history.empty() ? chain.initial[y] : chain.p(y_history.back(), y);
}

void require_quantizer(const BeliefState& b) {
  require(b.tag == BeliefTag::kQuantizer, ErrorCode::kInvalidInput,
          "operation expects a quantizer (b^e) belief");
}

void prune_and_normalize(BeliefState& b, double prune) {
  if (prune > 0.0) {
    std::erase_if(b.atoms, [prune](const auto& kv) { return kv.second < prune; });
  }
  const double total = b.total();
  require(total > 0.0, ErrorCode::kImpossibleObservation, "belief lost all mass");
  for (auto& [key, w] : b.atoms) w /= total;
}

}  // namespace

std::vector<double> QuantizerCollection::operator()(const std::vector<int>& z_history) const {
  std::vector<double> out(indices);
  fn(z_history, out);
  return out;
}

double BeliefState::total() const {
  double t = 0.0;
  for (const auto& [key, w] : atoms) t += w;
  return t;
}

void BeliefState::validate(double tol) const {
  for (const auto& [key, w] : atoms) {
    require(static_cast<int>(key.z.size()) == time && static_cast<int>(key.y.size()) == time - 1,
            ErrorCode::kInternalInconsistency, "belief atom histories have the wrong length");
    require(w >= 0.0 && std::isfinite(w), ErrorCode::kInternalInconsistency,
            "belief weight is negative or non-finite");
  }
  require(std::abs(total() - 1.0) <= tol, ErrorCode::kInternalInconsistency,
          "belief weights do not sum to 1");
}

QuantizerCollection collection_from_policy(const JointPolicy& policy, std::vector<int> s_history,
                                           std::vector<int> u_history) {
  require(s_history.size() == u_history.size(), ErrorCode::kInvalidInput,
          "common-information histories differ in length");
  QuantizerCollection q;
  q.indices = policy.shape().indices;
  q.fn = [&policy, s_history = std::move(s_history), u_history = std::move(u_history)](
             const std::vector<int>& z_history, std::span<double> out) {
    require(z_history.size() == s_history.size() + 1, ErrorCode::kInvalidInput,
            "z-history length must be one more than the common information");
    PolicyCarry carry = policy.initial_carry();
    std::vector<double> scratch(policy.shape().indices);
    for (std::size_t k = 0; k < s_history.size(); ++k) {
      Eigen::VectorXd next;
      policy.quantizer_step(carry, z_history[k], scratch, &next);
      policy.advance(carry, z_history[k], s_history[k], u_history[k], std::move(next));
    }
    policy.quantizer_step(carry, z_history.back(), out, nullptr);
  };
  return q;
}

BeliefState init_belief_joint(const SystemModel& model) {
  require(model.kind() == ModelKind::kTabular, ErrorCode::kInvalidInput,
          "beliefs are defined for tabular models");
  BeliefState b;
  const TabularParams& p = model.table();
  for (int x = 0; x < p.states; ++x) {
    for (int z = 0; z < p.observations; ++z) {
      const double w = p.initial_x[x] * model.kz(x, z);
      if (w > 0.0) b.atoms[AtomKey{x, {}, {z}}] = w;
    }
  }
  prune_and_normalize(b, 0.0);
  return b;
}

BeliefState init_belief(const SystemModel& model, int z1) {
  require(model.kind() == ModelKind::kTabular, ErrorCode::kInvalidInput,
          "beliefs are defined for tabular models");
  const TabularParams& p = model.table();
  require(z1 >= 0 && z1 < p.observations, ErrorCode::kInvalidInput,
          "z_1 outside the observation alphabet");
  BeliefState b;
  for (int x = 0; x < p.states; ++x) {
    const double w = p.initial_x[x] * model.kz(x, z1);
    if (w > 0.0) b.atoms[AtomKey{x, {}, {z1}}] = w;
  }
  require(!b.atoms.empty(), ErrorCode::kImpossibleObservation, "z_1 has probability 0");
  prune_and_normalize(b, 0.0);
  return b;
}

BeliefState update_phi_c(const BeliefState& belief, const QuantizerCollection& q, int s) {
  require_quantizer(belief);
  require(s >= 0 && s < q.indices, ErrorCode::kInvalidInput, "index out of range");
  const QTable table = tabulate(belief, q);
  BeliefState out;
  out.tag = BeliefTag::kController;
  out.time = belief.time;
  double normalizer = 0.0;
  for (const auto& [key, w] : belief.atoms) {
    const double v = table.at(key.z)[s] * w;
    if (v > 0.0) out.atoms.emplace(key, v);
    normalizer += v;
  }
  if (!(normalizer > 0.0)) {
    fail(ErrorCode::kImpossibleObservation, "index has probability 0 under the belief");
  }
  for (auto& [key, w] : out.atoms) w /= normalizer;
  return out;
}

BeliefState update_phi_e(const BeliefState& belief, int u, const SystemModel& model,
                         double prune) {
  require(belief.tag == BeliefTag::kController, ErrorCode::kInvalidInput,
          "update_phi_e expects a controller (b^c) belief");
  require(u >= 0 && u < model.control_count(), ErrorCode::kInvalidInput,
          "control index outside the alphabet");
  const TabularParams& p = model.table();
  const int ny = model.chain().size();
  BeliefState out;
  out.tag = BeliefTag::kQuantizer;
  out.time = belief.time + 1;
  for (const auto& [key, w] : belief.atoms) {
    for (int y = 0; y < ny; ++y) {
      const double py = prior_y(model, key.y, y);
      if (py == 0.0) continue;
      for (int xn = 0; xn < p.states; ++xn) {
        const double px = model.kx(key.x, y, u, xn);
        if (px == 0.0) continue;
        for (int zn = 0; zn < p.observations; ++zn) {
          const double pz = model.kz(xn, zn);
          if (pz == 0.0) continue;
          AtomKey next{xn, key.y, key.z};
          next.y.push_back(y);
          next.z.push_back(zn);
          out.atoms[std::move(next)] += pz * px * py * w;
        }
      }
    }
  }
  prune_and_normalize(out, prune);
  return out;
}

BeliefState update_phi_joint(const BeliefState& belief, const QuantizerCollection& q, int s,
                             int u, const SystemModel& model, double prune) {
  require_quantizer(belief);
  require(u >= 0 && u < model.control_count(), ErrorCode::kInvalidInput,
          "control index outside the alphabet");
  const QTable table = tabulate(belief, q);
  double denominator = 0.0;
  for (const auto& [key, w] : belief.atoms) denominator += table.at(key.z)[s] * w;
  if (!(denominator > 0.0)) {
    fail(ErrorCode::kImpossibleObservation, "index has probability 0 under the belief");
  }
  const TabularParams& p = model.table();
  const int ny = model.chain().size();
  // Predictive mass sum_x p(x' | x, y, u) q(s | z^t) b(x, y^{t-1}, z^t) per
  // (x', y^t, z^t), then the observation factor.
  std::map<AtomKey, double> predicted;
  for (const auto& [key, w] : belief.atoms) {
    const double qw = table.at(key.z)[s] * w;
    if (qw == 0.0) continue;
    for (int y = 0; y < ny; ++y) {
      for (int xn = 0; xn < p.states; ++xn) {
        const double px = model.kx(key.x, y, u, xn);
        if (px == 0.0) continue;
        AtomKey next{xn, key.y, key.z};
        next.y.push_back(y);
        predicted[std::move(next)] += px * qw;
      }
    }
  }
  BeliefState out;
  out.tag = BeliefTag::kQuantizer;
  out.time = belief.time + 1;
  for (const auto& [key, mass] : predicted) {
    std::vector<int> y_prev(key.y.begin(), key.y.end() - 1);
    const double py = prior_y(model, y_prev, key.y.back());
    if (py == 0.0) continue;
    for (int zn = 0; zn < p.observations; ++zn) {
      const double pz = model.kz(key.x, zn);
      if (pz == 0.0) continue;
      AtomKey next = key;
      next.z.push_back(zn);
      out.atoms[std::move(next)] = pz * py * mass / denominator;
    }
  }
  prune_and_normalize(out, prune);
  return out;
}

double information_loss_from_belief(const BeliefState& belief, const QuantizerCollection& q,
                                    int s, const std::vector<int>& y_history) {
  require_quantizer(belief);
  const QTable table = tabulate(belief, q);
  double joint = 0.0;    // sum_z q b at y-history
  double index = 0.0;    // sum_{y,z} q b
  double history = 0.0;  // sum_z b at y-history
  for (const auto& [key, w] : belief.atoms) {
    const double qw = table.at(key.z)[s] * w;
    index += qw;
    if (key.y == y_history) {
      joint += qw;
      history += w;
    }
  }
  if (!(joint > 0.0 && index > 0.0 && history > 0.0)) {
    fail(ErrorCode::kUndefinedRatio, "information loss undefined for a zero-probability event");
  }
  return std::log(joint / (index * history));
}

double conditional_mi_from_belief(const BeliefState& belief, const QuantizerCollection& q) {
  require_quantizer(belief);
  const QTable table = tabulate(belief, q);
  const int m = q.indices;
  std::map<std::vector<int>, std::vector<double>> joint;  // y-history -> P(s, y)
  std::map<std::vector<int>, double> marginal_y;
  std::vector<double> marginal_s(m, 0.0);
  for (const auto& [key, w] : belief.atoms) {
    auto& row = joint[key.y];
    row.resize(m, 0.0);
    marginal_y[key.y] += w;
    const auto& qs = table.at(key.z);
    for (int s = 0; s < m; ++s) {
      row[s] += qs[s] * w;
      marginal_s[s] += qs[s] * w;
    }
  }
  double mi = 0.0;
  for (const auto& [y, row] : joint) {
    for (int s = 0; s < m; ++s) {
      if (row[s] > 0.0) mi += row[s] * std::log(row[s] / (marginal_s[s] * marginal_y.at(y)));
    }
  }
  return mi;
}

std::map<std::vector<int>, double> adversary_posterior(const BeliefState& belief) {
  require_quantizer(belief);
  std::map<std::vector<int>, double> out;
  for (const auto& [key, w] : belief.atoms) out[key.y] += w;
  return out;
}

std::string belief_to_jsonl(const BeliefState& belief) {
  std::ostringstream os;
  for (const auto& [key, w] : belief.atoms) {
    nlohmann::json j = {{"x", key.x}, {"y", key.y}, {"z", key.z}, {"w", w}};
    os << j.dump() << '\n';
  }
  return os.str();
}

}  // namespace privctrl
