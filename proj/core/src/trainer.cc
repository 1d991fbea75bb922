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

#include "privctrl/trainer.h"

#include <chrono>
#include <cmath>
#include <memory>
#include <set>

#include <fmt/format.h>

#include "privctrl/error.h"
#include "privctrl/io.h"
#include "privctrl/parallel.h"

namespace privctrl {

namespace {

constexpr int kGradientChunks = 16;

const char* baseline_name(BaselineKind b) {
  return b == BaselineKind::kNone ? "none" : "batch-mean";
}

BaselineKind baseline_from(const std::string& name) {
  if (name == "none") return BaselineKind::kNone;
  if (name == "batch-mean") return BaselineKind::kBatchMean;
  fail(ErrorCode::kInvalidConfiguration, "unknown baseline '" + name + "'");
}

double norm_of(const std::vector<double>& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  return std::sqrt(sq);
}

}  // namespace

void TrainConfig::validate() const {
  require(lambda >= 0.0 && std::isfinite(lambda), ErrorCode::kInvalidConfiguration,
          "lambda must be finite and nonnegative");
  require(policy_lr > 0.0 && classifier_lr > 0.0, ErrorCode::kInvalidConfiguration,
          "learning rates must be positive");
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::kInvalidConfiguration,
          "momentum must lie in [0, 1)");
  require(batch_size >= 1, ErrorCode::kInvalidConfiguration, "batch_size must be positive");
  require(baseline != BaselineKind::kBatchMean || batch_size >= 2,
          ErrorCode::kInvalidConfiguration, "the batch-mean baseline needs batch_size >= 2");
  require(iterations >= 0 && classifier_refresh_steps >= 0 && classifier_warmup_steps >= 0,
          ErrorCode::kInvalidConfiguration, "step counts must be nonnegative");
  require(classifier_hidden >= 1, ErrorCode::kInvalidConfiguration,
          "classifier_hidden must be positive");
  require(max_grad_norm >= 0.0, ErrorCode::kInvalidConfiguration,
          "max_grad_norm must be nonnegative");
  require(eval_every >= 0 && eval_rollouts >= 1, ErrorCode::kInvalidConfiguration,
          "invalid evaluation cadence");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lambda", lambda},
          {"batch_size", batch_size},
          {"policy_lr", policy_lr},
          {"momentum", momentum},
          {"classifier_lr", classifier_lr},
          {"classifier_refresh_steps", classifier_refresh_steps},
          {"classifier_hidden", classifier_hidden},
          {"classifier_warmup_steps", classifier_warmup_steps},
          {"warm_start_classifiers", warm_start_classifiers},
          {"iterations", iterations},
          {"baseline", baseline_name(baseline)},
          {"reward_to_go", reward_to_go},
          {"max_grad_norm", max_grad_norm},
          {"seed", seed},
          {"eval_every", eval_every},
          {"eval_rollouts", eval_rollouts}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  require(j.is_object(), ErrorCode::kInvalidConfiguration, "train config must be an object");
  static const std::set<std::string> known = {
      "lambda", "batch_size", "policy_lr", "momentum", "classifier_lr",
      "classifier_refresh_steps", "classifier_hidden", "classifier_warmup_steps",
      "warm_start_classifiers", "iterations", "baseline", "reward_to_go", "max_grad_norm",
      "seed", "eval_every", "eval_rollouts"};
  for (const auto& [key, value] : j.items()) {
    require(known.contains(key), ErrorCode::kInvalidConfiguration,
            "unknown train config field '" + key + "'");
  }
  try {
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("lambda", c.lambda);
    get("batch_size", c.batch_size);
    get("policy_lr", c.policy_lr);
    get("momentum", c.momentum);
    get("classifier_lr", c.classifier_lr);
    get("classifier_refresh_steps", c.classifier_refresh_steps);
    get("classifier_hidden", c.classifier_hidden);
    get("classifier_warmup_steps", c.classifier_warmup_steps);
    get("warm_start_classifiers", c.warm_start_classifiers);
    get("iterations", c.iterations);
    if (j.contains("baseline")) c.baseline = baseline_from(j.at("baseline").get<std::string>());
    get("reward_to_go", c.reward_to_go);
    get("max_grad_norm", c.max_grad_norm);
    get("seed", c.seed);
    get("eval_every", c.eval_every);
    get("eval_rollouts", c.eval_rollouts);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidConfiguration, std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainReport::to_jsonl(bool with_wall_time) const {
  std::string out;
  for (const IterationRecord& r : iterations) {
    nlohmann::json j = {{"iteration", r.iteration},
                        {"mean_cost", r.mean_cost},
                        {"mean_leakage", r.mean_leakage},
                        {"objective", r.objective},
                        {"grad_norm", r.grad_norm}};
    if (r.eval_cost) j["eval_cost"] = *r.eval_cost;
    if (with_wall_time) j["wall_time"] = r.wall_time;
    out += j.dump();
    out += '\n';
  }
  return out;
}

ObjectiveEstimate objective_estimate(std::span<const Trajectory> trajectories,
                                     const ClassifierPair* pair, double lambda) {
  require(lambda == 0.0 || pair != nullptr, ErrorCode::kInvalidInput,
          "a classifier pair is needed when lambda > 0");
  ObjectiveEstimate out;
  const std::size_t n = trajectories.size();
  out.returns.resize(n);
  out.cost_returns.resize(n);
  out.leakage_returns.assign(n, 0.0);
  const int horizon = n > 0 ? trajectories[0].horizon() : 0;
  out.step_losses.assign(n * horizon, 0.0);
  parallel_for(static_cast<int>(n), [&](int k) {
    const Trajectory& tr = trajectories[k];
    require(tr.horizon() == horizon, ErrorCode::kInvalidInput, "trajectories differ in length");
    std::vector<double> leak;
    if (pair != nullptr && lambda != 0.0) leak = estimate_information_losses(*pair, tr);
    double cost = 0.0, leakage = 0.0;
    for (int t = 0; t < horizon; ++t) {
      const double ci = leak.empty() ? 0.0 : leak[t];
      cost += tr.cost[t];
      leakage += ci;
      out.step_losses[k * horizon + t] = tr.cost[t] + lambda * ci;
    }
    out.cost_returns[k] = cost;
    out.leakage_returns[k] = leakage;
    out.returns[k] = cost + lambda * leakage;
  });
  RunningStats stats;
  for (double r : out.returns) stats.add(r);
  out.value = stats.mean();
  return out;
}

GradientEstimate score_function_gradient(const RecurrentPolicy& policy,
                                         std::span<const TrajectoryContext> contexts,
                                         std::span<const double> returns,
                                         std::span<const double> weights, BaselineKind baseline,
                                         std::span<const double> step_returns) {
  const int n = static_cast<int>(contexts.size());
  require(static_cast<int>(returns.size()) == n, ErrorCode::kInvalidInput,
          "one return per trajectory is required");
  require(weights.empty() || static_cast<int>(weights.size()) == n, ErrorCode::kInvalidInput,
          "one weight per trajectory is required");
  require(baseline == BaselineKind::kNone || n >= 2, ErrorCode::kInvalidInput,
          "the batch-mean baseline needs at least two trajectories");
  const int horizon = n > 0 ? static_cast<int>(contexts[0].z.size()) : 0;
  const bool per_step = !step_returns.empty();
  require(!per_step || static_cast<int>(step_returns.size()) == n * horizon,
          ErrorCode::kInvalidInput, "step returns must be trajectory x step");

  // Leave-one-out baseline: R_k - mean_{j != k} R_j = n/(n-1) (R_k - mean).
  const double loo = n >= 2 ? static_cast<double>(n) / (n - 1) : 1.0;
  double mean = 0.0;
  std::vector<double> step_mean(per_step ? horizon : 0, 0.0);
  if (baseline == BaselineKind::kBatchMean) {
    RunningStats stats;
    for (double r : returns) stats.add(r);
    mean = stats.mean();
    for (int t = 0; t < static_cast<int>(step_mean.size()); ++t) {
      RunningStats st;
      for (int k = 0; k < n; ++k) st.add(step_returns[k * horizon + t]);
      step_mean[t] = st.mean();
    }
  }
  const std::size_t dim = policy.params().size();
  const int chunks = std::max(1, std::min(kGradientChunks, n));
  std::vector<std::vector<double>> partial(chunks, std::vector<double>(dim, 0.0));
  parallel_for(chunks, [&](int c) {
    const int begin = static_cast<int>(static_cast<long>(n) * c / chunks);
    const int end = static_cast<int>(static_cast<long>(n) * (c + 1) / chunks);
    std::vector<double> sw(horizon);
    for (int k = begin; k < end; ++k) {
      const double w = weights.empty() ? 1.0 / n : weights[k];
      if (per_step) {
        for (int t = 0; t < horizon; ++t) {
          const double r = step_returns[k * horizon + t];
          sw[t] = w * (baseline == BaselineKind::kBatchMean ? loo * (r - step_mean[t]) : r);
        }
        const LogProbGradient g = log_prob_gradient(policy, contexts[k], sw);
        for (std::size_t i = 0; i < dim; ++i) partial[c][i] += g.gradient[i];
        continue;
      }
      const double coef =
          w * (baseline == BaselineKind::kBatchMean ? loo * (returns[k] - mean) : returns[k]);
      if (coef == 0.0) continue;
      const LogProbGradient g = log_prob_gradient(policy, contexts[k]);
      for (std::size_t i = 0; i < dim; ++i) partial[c][i] += coef * g.gradient[i];
    }
  });
  GradientEstimate out;
  out.gradient.assign(dim, 0.0);
  for (const auto& p : partial) {
    for (std::size_t i = 0; i < dim; ++i) out.gradient[i] += p[i];
  }
  out.norm = norm_of(out.gradient);
  return out;
}

GradientEstimate policy_gradient_step(RecurrentPolicy& policy,
                                      std::span<const Trajectory> trajectories,
                                      const ClassifierPair* pair, double lambda,
                                      BaselineKind baseline, SgdMomentum& optimizer,
                                      bool reward_to_go, double max_grad_norm) {
  const ObjectiveEstimate est = objective_estimate(trajectories, pair, lambda);
  std::vector<TrajectoryContext> contexts;
  contexts.reserve(trajectories.size());
  for (const Trajectory& tr : trajectories) contexts.push_back(TrajectoryContext::of(tr));
  std::vector<double> to_go;
  if (reward_to_go && !trajectories.empty()) {
    const int horizon = trajectories[0].horizon();
    to_go.resize(est.step_losses.size());
    for (std::size_t k = 0; k < trajectories.size(); ++k) {
      double acc = 0.0;
      for (int t = horizon - 1; t >= 0; --t) {
        acc += est.step_losses[k * horizon + t];
        to_go[k * horizon + t] = acc;
      }
    }
  }
  GradientEstimate g = score_function_gradient(policy, contexts, est.returns, {}, baseline, to_go);
  if (!std::isfinite(g.norm)) fail(ErrorCode::kDivergence, "policy gradient is not finite");
  if (max_grad_norm > 0.0 && g.norm > max_grad_norm) {
    const double scale = max_grad_norm / g.norm;
    for (double& v : g.gradient) v *= scale;
  }
  optimizer.step(policy.mutable_params(), g.gradient);
  for (double v : policy.params()) {
    if (!std::isfinite(v)) fail(ErrorCode::kDivergence, "policy parameters are not finite");
  }
  return g;
}

EvalMetrics evaluate(const SystemModel& model, const RecurrentPolicy& policy,
                     const StageCost& cost, const ClassifierPair* pair,
                     const EvalOptions& options) {
  require(options.rollouts >= 1, ErrorCode::kInvalidConfiguration, "need at least one rollout");
  auto deployed = std::make_shared<RecurrentPolicy>(make_deterministic_controller_head(policy));
  const std::vector<Trajectory> trajs =
      rollout_batch(model, *deployed, cost, options.seed, 0, options.rollouts);
  EvalMetrics m;
  std::vector<double> per_step(trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    per_step[i] = trajs[i].total_cost() / trajs[i].horizon();
  }
  m.cost = mean_se(per_step);
  if (pair != nullptr) m.leakage = estimate_total_leakage(*pair, trajs);
  if (options.with_adversary) {
    AdversaryModel adv;
    adv.model = &model;
    adv.policy = deployed;
    adv.options = options.adversary;
    if (model.kind() == ModelKind::kTabular && options.adversary.mode == AdversaryMode::kExactTabular) {
      adv.options.mode = AdversaryMode::kExactTabular;
    }
    const AdversaryEvaluation ev =
        evaluate_adversary(adv, trajs, derive_seed(options.seed, 0x616476ULL));
    m.accuracy = ev.accuracy;
    m.degenerate_rollouts = ev.degenerate_rollouts;
  }
  return m;
}

TrainReport train(const SystemModel& model, const StageCost& cost, RecurrentPolicy& policy,
                  ClassifierPair& pair, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  const PolicyShape shape = policy.shape();
  require(shape.observations == model.observation_count() && shape.indices == model.indices() &&
              shape.controls == model.control_count(),
          ErrorCode::kInvalidConfiguration, "policy alphabet sizes do not match the model");
  TrainReport report;
  SgdMomentum optimizer(config.policy_lr, config.momentum);
  const std::uint64_t roll_seed = derive_seed(config.seed, 0x726f6c6cULL);
  const bool private_term = config.lambda > 0.0;
  std::vector<double> last_good(policy.params().begin(), policy.params().end());

  for (int it = 0; it < config.iterations; ++it) {
    const auto start = std::chrono::steady_clock::now();
    const long global = hooks.first_iteration + it;
    const std::vector<Trajectory> trajs = rollout_batch(
        model, policy, cost, roll_seed, static_cast<std::uint64_t>(global) * config.batch_size,
        config.batch_size);
    IterationRecord rec;
    rec.iteration = global;
    try {
      if (private_term) {
        if (!config.warm_start_classifiers) {
          pair = ClassifierPair::init(model.indices(), model.control_count(),
                                      model.chain().size(), config.classifier_hidden,
                                      derive_seed(config.seed, 0x636c ^ global),
                                      config.classifier_lr);
        }
        RandomStream crng(derive_seed(config.seed, 0x6374ULL), static_cast<std::uint64_t>(global));
        const ContrastiveBatch batch = build_contrastive_batch(trajs, model.indices(), crng);
        ClassifierTrainOptions copt;
        copt.lr = config.classifier_lr;
        copt.steps = config.classifier_refresh_steps +
                     (it == 0 || !config.warm_start_classifiers ? config.classifier_warmup_steps
                                                                : 0);
        train_classifiers(pair, std::span<const ContrastiveBatch>(&batch, 1), copt);
      }
      const ObjectiveEstimate est = objective_estimate(trajs, private_term ? &pair : nullptr,
                                                       config.lambda);
      const GradientEstimate g = policy_gradient_step(
          policy, trajs, private_term ? &pair : nullptr, config.lambda, config.baseline,
          optimizer, config.reward_to_go, config.max_grad_norm);
      rec.mean_cost = mean_se(est.cost_returns).mean / model.horizon();
      rec.mean_leakage = mean_se(est.leakage_returns).mean;
      rec.objective = est.value;
      rec.grad_norm = g.norm;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kDivergence && !hooks.checkpoint_path.empty()) {
        const RecurrentPolicy good(policy.architecture(), last_good);
        save_policy(hooks.checkpoint_path, good, config.seed, global);
        report.checkpoint = hooks.checkpoint_path;
      }
      throw;
    }
    last_good.assign(policy.params().begin(), policy.params().end());
    if (config.eval_every > 0 && (it + 1) % config.eval_every == 0) {
      EvalOptions eo;
      eo.rollouts = config.eval_rollouts;
      eo.seed = derive_seed(config.seed, 0x6576616cULL);
      eo.with_adversary = false;
      rec.eval_cost = evaluate(model, policy, cost, nullptr, eo).cost.mean;
    }
    rec.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.iterations.push_back(rec);
    if (hooks.on_iteration) hooks.on_iteration(rec, policy);
  }
  return report;
}

nlohmann::json PretrainConfig::to_json() const {
  return {{"iterations", iterations},
          {"batch_size", batch_size},
          {"lr", lr},
          {"k_p", k_p},
          {"seed", seed}};
}

PretrainConfig PretrainConfig::from_json(const nlohmann::json& j) {
  PretrainConfig c;
  try {
    c.iterations = j.value("iterations", c.iterations);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.k_p = j.value("k_p", c.k_p);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidConfiguration, std::string("bad pretrain config: ") + e.what());
  }
  require(c.iterations >= 0 && c.batch_size >= 1 && c.lr > 0.0, ErrorCode::kInvalidConfiguration,
          "pretrain needs iterations >= 0, batch_size >= 1 and lr > 0");
  return c;
}

TabularPolicy coarse_proportional_teacher(const SystemModel& model, double k_p) {
  require(model.kind() == ModelKind::kLinearGaussian && model.state_dim() == 1,
          ErrorCode::kInvalidConfiguration, "the proportional teacher needs a scalar linear model");
  const int nz = model.observation_count();
  const int m = model.indices();
  const int nu = model.control_count();
  const UniformQuantizer& quant = model.linear().quantizer;
  std::vector<double> q(static_cast<std::size_t>(nz) * m, 0.0);
  std::vector<double> centre(m, 0.0), count(m, 0.0);
  for (int z = 0; z < nz; ++z) {
    const int s = std::min(m - 1, z * m / nz);
    q[z * m + s] = 1.0;
    centre[s] += quant.center(z);
    count[s] += 1.0;
  }
  std::vector<double> c(static_cast<std::size_t>(m) * nu, 0.0);
  for (int s = 0; s < m; ++s) {
    const double mid = count[s] > 0.0 ? centre[s] / count[s] : 0.0;
    c[s * nu + model.nearest_control(k_p * mid)] = 1.0;
  }
  return TabularPolicy::memoryless({nz, m, nu}, std::move(q), std::move(c));
}

std::vector<double> pretrain_imitation(const SystemModel& model, const StageCost& cost,
                                       RecurrentPolicy& policy, const PretrainConfig& config) {
  std::vector<double> losses;
  if (config.iterations == 0) return losses;
  const TabularPolicy teacher = coarse_proportional_teacher(model, config.k_p);
  Adam optimizer(config.lr);
  const std::uint64_t seed = derive_seed(config.seed, 0x696d6974ULL);
  const std::size_t dim = policy.params().size();
  for (int it = 0; it < config.iterations; ++it) {
    const std::vector<Trajectory> trajs =
        rollout_batch(model, teacher, cost, seed, static_cast<std::uint64_t>(it) * config.batch_size,
                      config.batch_size);
    std::vector<LogProbGradient> parts(trajs.size());
    parallel_for(static_cast<int>(trajs.size()), [&](int k) {
      parts[k] = log_prob_gradient(policy, TrajectoryContext::of(trajs[k]));
    });
    std::vector<double> grad(dim, 0.0);
    double nll = 0.0;
    const double w = 1.0 / static_cast<double>(trajs.size());
    for (const LogProbGradient& p : parts) {
      nll -= w * p.log_prob;
      for (std::size_t i = 0; i < dim; ++i) grad[i] -= w * p.gradient[i];
    }
    if (!std::isfinite(nll)) fail(ErrorCode::kDivergence, "imitation loss is not finite");
    optimizer.step(policy.mutable_params(), grad);
    losses.push_back(nll / model.horizon());
  }
  return losses;
}

}  // namespace privctrl
