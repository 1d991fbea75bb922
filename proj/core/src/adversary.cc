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

#include "privctrl/adversary.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "privctrl/belief.h"
#include "privctrl/error.h"
#include "privctrl/io.h"
#include "privctrl/parallel.h"

namespace privctrl {

namespace {

constexpr double kNegligibleCell = 1e-15;

struct Particle {
  Eigen::VectorXd x;
  int y = 0;
  PolicyCarry carry;
  std::vector<int> path;
};

int argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

void check_sequences(const SystemModel& model, const std::vector<int>& s_seq,
                     const std::vector<int>& u_seq) {
  require(static_cast<int>(s_seq.size()) == model.horizon() &&
              static_cast<int>(u_seq.size()) == model.horizon(),
          ErrorCode::kInvalidInput, "observed sequences must cover the horizon");
  for (int u : u_seq) {
    require(u >= 0 && u < model.control_count(), ErrorCode::kInvalidInput,
            "control index out of range");
  }
}

// Bootstrap filter over (x, y) with the observation channel supplied by
// `weigh`, which returns the likelihood of step t and may update the carry.
template <class Weigh>
EstimateReport run_filter(const SystemModel& model, const std::vector<int>& u_seq,
                          const PolicyCarry& initial_carry, const AdversaryOptions& options,
                          RandomStream& rng, const std::vector<int>& y_true, Weigh&& weigh) {
  const int horizon = model.horizon();
  const int n = options.particles;
  const int ny = model.chain().size();
  const int lag = std::max(0, options.lag);
  std::vector<Particle> particles(n);
  std::vector<double> w(n, 1.0 / n);
  const std::vector<double>& init = model.chain().initial;
  for (Particle& p : particles) {
    p.x = model.sample_initial_state(rng);
    p.y = rng.categorical(init);
    p.carry = initial_carry;
    p.path.reserve(horizon);
  }
  Eigen::MatrixXd marginals = Eigen::MatrixXd::Zero(horizon, ny);
  auto finalize = [&](int row) {
    for (int i = 0; i < n; ++i) marginals(row, particles[i].path[row]) += w[i];
  };
  bool degenerate = false;
  std::vector<double> row_weights(ny);
  std::vector<Particle> scratch;
  for (int t = 0; t < horizon; ++t) {
    if (t > 0) {
      for (int i = 0; i < n; ++i) {
        Particle& p = particles[i];
        p.x = model.step(p.x, p.y, u_seq[t - 1], rng);
        for (int y = 0; y < ny; ++y) row_weights[y] = model.chain().p(p.y, y);
        p.y = rng.categorical(row_weights);
      }
    }
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      particles[i].path.push_back(particles[i].y);
      w[i] *= weigh(particles[i], t, rng);
      total += w[i];
    }
    if (!(total > 0.0) || !std::isfinite(total)) {
      degenerate = true;
      std::fill(w.begin(), w.end(), 1.0 / n);
    } else {
      for (double& v : w) v /= total;
    }
    if (t - lag >= 0) finalize(t - lag);
    double sq = 0.0;
    for (double v : w) sq += v * v;
    const double ess = 1.0 / sq;
    if (ess < 2.0) degenerate = true;
    if (ess < options.resample_fraction * n && t + 1 < horizon) {
      // Systematic resampling; weights become uniform.
      scratch.clear();
      scratch.reserve(n);
      const double step = 1.0 / n;
      double target = rng.uniform() * step;
      double cum = w[0];
      int j = 0;
      for (int i = 0; i < n; ++i) {
        while (cum < target && j + 1 < n) cum += w[++j];
        scratch.push_back(particles[j]);
        target += step;
      }
      particles.swap(scratch);
      std::fill(w.begin(), w.end(), 1.0 / n);
    }
  }
  for (int row = std::max(0, horizon - lag); row < horizon; ++row) finalize(row);
  if (degenerate) warn("particle filter weights collapsed; weights were reset");

  EstimateReport report = make_report(std::move(marginals), y_true);
  report.degenerate = degenerate;
  if (options.decode == DecodeMode::kJointMap) {
    std::map<std::vector<int>, double> paths;
    for (int i = 0; i < n; ++i) paths[particles[i].path] += w[i];
    auto best = paths.begin();
    for (auto it = paths.begin(); it != paths.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    report.y_hat = best->first;
    if (!y_true.empty()) {
      int correct = 0;
      for (int t = 0; t < horizon; ++t) {
        report.flags[t] = report.y_hat[t] != y_true[t] ? 1 : 0;
        correct += 1 - report.flags[t];
      }
      report.accuracy = static_cast<double>(correct) / horizon;
    }
  }
  return report;
}

AdversaryEvaluation summarize(std::vector<EstimateReport> reports) {
  AdversaryEvaluation out;
  std::vector<double> acc;
  for (const EstimateReport& r : reports) {
    acc.push_back(r.accuracy);
    if (r.degenerate) ++out.degenerate_rollouts;
  }
  out.accuracy = mean_se(acc);
  out.reports = std::move(reports);
  return out;
}

}  // namespace

void AdversaryModel::validate() const {
  require(model != nullptr && policy != nullptr, ErrorCode::kInvalidConfiguration,
          "adversary needs a model and a policy");
  const PolicyShape shape = policy->shape();
  require(shape.observations == model->observation_count() &&
              shape.indices == model->indices() && shape.controls == model->control_count(),
          ErrorCode::kInvalidConfiguration, "adversary policy does not match the model");
  if (options.mode == AdversaryMode::kParticle) {
    require(options.particles >= 100, ErrorCode::kInvalidConfiguration,
            "particle mode needs at least 100 particles");
  } else {
    require(model->kind() == ModelKind::kTabular, ErrorCode::kInvalidConfiguration,
            "exact decoding needs a tabular model");
  }
}

EstimateReport make_report(Eigen::MatrixXd marginals, const std::vector<int>& y_true) {
  EstimateReport r;
  const int horizon = static_cast<int>(marginals.rows());
  r.marginals = std::move(marginals);
  r.y_hat.resize(horizon);
  for (int t = 0; t < horizon; ++t) r.y_hat[t] = argmax_lowest(r.marginals.row(t).transpose());
  if (!y_true.empty()) {
    require(static_cast<int>(y_true.size()) == horizon, ErrorCode::kInvalidInput,
            "true private sequence has the wrong length");
    r.y_true = y_true;
    r.flags.resize(horizon);
    int correct = 0;
    for (int t = 0; t < horizon; ++t) {
      r.flags[t] = r.y_hat[t] != y_true[t] ? 1 : 0;
      correct += 1 - r.flags[t];
    }
    r.accuracy = horizon > 0 ? static_cast<double>(correct) / horizon : 0.0;
  }
  return r;
}

Eigen::MatrixXd exact_private_posterior(const AdversaryModel& adversary,
                                        const std::vector<int>& s_seq,
                                        const std::vector<int>& u_seq,
                                        std::vector<int>* joint_map) {
  require(adversary.model != nullptr && adversary.policy != nullptr,
          ErrorCode::kInvalidConfiguration, "adversary needs a model and a policy");
  const SystemModel& model = *adversary.model;
  require(model.kind() == ModelKind::kTabular, ErrorCode::kInvalidInput,
          "exact decoding needs a tabular model");
  check_sequences(model, s_seq, u_seq);
  const int horizon = model.horizon();
  BeliefState b = init_belief_joint(model);
  for (int t = 0; t < horizon; ++t) {
    const QuantizerCollection q = collection_from_policy(
        *adversary.policy, std::vector<int>(s_seq.begin(), s_seq.begin() + t),
        std::vector<int>(u_seq.begin(), u_seq.begin() + t));
    b = update_phi_c(b, q, s_seq[t]);
    b = update_phi_e(b, u_seq[t], model);
  }
  const std::map<std::vector<int>, double> posterior = adversary_posterior(b);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(horizon, model.chain().size());
  double total = 0.0;
  const std::vector<int>* best = nullptr;
  double best_p = -1.0;
  for (const auto& [path, p] : posterior) {
    total += p;
    for (int t = 0; t < horizon; ++t) out(t, path[t]) += p;
    if (p > best_p) {
      best_p = p;
      best = &path;
    }
  }
  if (!(total > 0.0)) fail(ErrorCode::kImpossibleObservation, "evidence has probability 0");
  if (joint_map != nullptr && best != nullptr) *joint_map = *best;
  return out / total;
}

EstimateReport ml_estimate_tabular(const AdversaryModel& adversary, const std::vector<int>& s_seq,
                                   const std::vector<int>& u_seq,
                                   const std::vector<int>& y_true) {
  std::vector<int> map_path;
  EstimateReport r = make_report(exact_private_posterior(adversary, s_seq, u_seq, &map_path),
                                 y_true);
  if (adversary.options.decode == DecodeMode::kJointMap) {
    r.y_hat = map_path;
    if (!y_true.empty()) {
      int correct = 0;
      for (std::size_t t = 0; t < y_true.size(); ++t) {
        r.flags[t] = r.y_hat[t] != y_true[t] ? 1 : 0;
        correct += 1 - r.flags[t];
      }
      r.accuracy = static_cast<double>(correct) / static_cast<double>(y_true.size());
    }
  }
  return r;
}

EstimateReport ml_estimate_particle(const AdversaryModel& adversary,
                                    const std::vector<int>& s_seq, const std::vector<int>& u_seq,
                                    RandomStream& rng, const std::vector<int>& y_true) {
  AdversaryModel local = adversary;
  local.options.mode = AdversaryMode::kParticle;
  local.validate();
  const SystemModel& model = *adversary.model;
  const JointPolicy& policy = *adversary.policy;
  check_sequences(model, s_seq, u_seq);
  const int nz = model.observation_count();
  Eigen::MatrixXd q;
  std::vector<Eigen::VectorXd> next;
  std::vector<double> zw(nz), pz(nz);
  // z is summed out of the weight and then drawn from its posterior so the
  // quantizer memory follows a consistent observation history.
  auto weigh = [&](Particle& p, int t, RandomStream& r) {
    double top = 0.0;
    for (int z = 0; z < nz; ++z) {
      pz[z] = model.observation_probability(p.x, z);
      top = std::max(top, pz[z]);
    }
    // Cells with negligible mass are dropped before the quantizer is run.
    for (double& v : pz) {
      if (v < kNegligibleCell * top) v = 0.0;
    }
    policy.quantizer_all(p.carry, q, &next, pz);
    double lik = 0.0;
    for (int z = 0; z < nz; ++z) {
      zw[z] = pz[z] * q(z, s_seq[t]);
      lik += zw[z];
    }
    if (lik > 0.0) {
      const int z = r.categorical(zw);
      policy.advance_quantizer(p.carry, z, s_seq[t], u_seq[t], std::move(next[z]));
    }
    return lik;
  };
  return run_filter(model, u_seq, policy.initial_carry(), adversary.options, rng, y_true, weigh);
}

EstimateReport ml_estimate_from_observations(const SystemModel& model,
                                             const std::vector<int>& z_seq,
                                             const std::vector<int>& u_seq, RandomStream& rng,
                                             const AdversaryOptions& options,
                                             const std::vector<int>& y_true) {
  check_sequences(model, z_seq, u_seq);
  require(options.particles >= 100, ErrorCode::kInvalidConfiguration,
          "particle mode needs at least 100 particles");
  auto weigh = [&](Particle& p, int t, RandomStream&) {
    return model.observation_probability(p.x, z_seq[t]);
  };
  return run_filter(model, u_seq, PolicyCarry{}, options, rng, y_true, weigh);
}

std::vector<int> misdetection_trace(const EstimateReport& report) { return report.flags; }

AdversaryEvaluation evaluate_adversary(const AdversaryModel& adversary,
                                       std::span<const Trajectory> trajectories,
                                       std::uint64_t seed) {
  adversary.validate();
  std::vector<EstimateReport> reports(trajectories.size());
  parallel_for(static_cast<int>(trajectories.size()), [&](int i) {
    const Trajectory& tr = trajectories[i];
    if (adversary.options.mode == AdversaryMode::kExactTabular) {
      reports[i] = ml_estimate_tabular(adversary, tr.s, tr.u, tr.y);
    } else {
      RandomStream rng(seed, static_cast<std::uint64_t>(i));
      reports[i] = ml_estimate_particle(adversary, tr.s, tr.u, rng, tr.y);
    }
  });
  return summarize(std::move(reports));
}

AdversaryEvaluation evaluate_observation_adversary(const SystemModel& model,
                                                   std::span<const Trajectory> trajectories,
                                                   const AdversaryOptions& options,
                                                   std::uint64_t seed) {
  std::vector<EstimateReport> reports(trajectories.size());
  parallel_for(static_cast<int>(trajectories.size()), [&](int i) {
    const Trajectory& tr = trajectories[i];
    RandomStream rng(seed, static_cast<std::uint64_t>(i));
    reports[i] = ml_estimate_from_observations(model, tr.z, tr.u, rng, options, tr.y);
  });
  return summarize(std::move(reports));
}

void write_reports_csv(std::ostream& os, std::span<const EstimateReport> reports,
                       std::uint64_t first_rollout) {
  os << "rollout,t,y_true,y_hat,flag\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const EstimateReport& r = reports[i];
    for (std::size_t t = 0; t < r.y_hat.size(); ++t) {
      os << first_rollout + i << ',' << t + 1 << ',' << (r.y_true.empty() ? -1 : r.y_true[t])
         << ',' << r.y_hat[t] << ',' << (r.flags.empty() ? 0 : r.flags[t]) << '\n';
    }
  }
}

}  // namespace privctrl
