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

#include "privctrl/harness.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "privctrl/io.h"
#include "privctrl/mi.h"
#include "privctrl/oracle.h"
#include "privctrl/rng.h"

namespace privctrl {
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSimulateLabel = 0x73696d;
constexpr std::uint64_t kPretrainLabel = 0x707265;
constexpr std::uint64_t kClassifierLabel = 0x636c73;
constexpr std::uint64_t kLeakageLabel = 0x6c65616b;
constexpr std::uint64_t kHeldOutLabel = 0x686f6c64;

const nlohmann::json& section(const nlohmann::json& j, const char* name) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!j.contains(name)) return empty;
  const nlohmann::json& s = j.at(name);
  require(s.is_object(), ErrorCode::kInvalidConfiguration,
          fmt::format("config field '{}' must be an object", name));
  return s;
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                    const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    require(known.contains(key), ErrorCode::kInvalidConfiguration,
            fmt::format("unknown config field '{}{}'", where, key));
  }
}

AdversaryMode adversary_mode(const std::string& name) {
  if (name == "particle") return AdversaryMode::kParticle;
  if (name == "exact" || name == "exact-tabular") return AdversaryMode::kExactTabular;
  fail(ErrorCode::kInvalidConfiguration, "eval.adversary must be 'particle' or 'exact'");
}

DecodeMode decode_mode(const std::string& name) {
  if (name == "marginal") return DecodeMode::kMarginal;
  if (name == "joint-map") return DecodeMode::kJointMap;
  fail(ErrorCode::kInvalidConfiguration, "eval.decode must be 'marginal' or 'joint-map'");
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::string lambda_dir_name(double lambda) { return fmt::format("lambda_{}", lambda); }

std::uint64_t master_seed(const ExperimentConfig& config, const CommandOptions& options) {
  return options.seed.value_or(config.seed);
}

std::string header_line(const ExperimentConfig& config, std::uint64_t seed) {
  return metadata_comment(config.hash, seed) + "\n";
}

std::string jsonl_header(const ExperimentConfig& config, std::uint64_t seed) {
  return metadata_record(config.hash, seed).dump() + "\n";
}

// The deployed form of a policy: recurrent policies get their greedy
// controller head, anything else is used as is.
std::shared_ptr<const JointPolicy> deployed(std::shared_ptr<const JointPolicy> policy) {
  if (const auto* rec = dynamic_cast<const RecurrentPolicy*>(policy.get())) {
    return std::make_shared<RecurrentPolicy>(make_deterministic_controller_head(*rec));
  }
  return policy;
}

ExperimentConfig load_config(const CommandOptions& options) {
  require(!options.config_path.empty(), ErrorCode::kInvalidConfiguration,
          "--config is required");
  return ExperimentConfig::load(options.config_path);
}

double single_lambda(const ExperimentConfig& config, const CommandOptions& options) {
  if (options.lambdas.empty()) return config.train.lambda;
  require(options.lambdas.size() == 1, ErrorCode::kInvalidConfiguration,
          "train takes a single --lambda value");
  return options.lambdas.front();
}

// Pretrained starting point shared by every lambda of a sweep; depends on
// the master seed only.
RecurrentPolicy starting_policy(const ExperimentConfig& config, std::uint64_t master,
                                std::ostream& log) {
  RecurrentPolicy policy = initial_policy(config);
  if (config.pretrain.iterations > 0) {
    PretrainConfig pc = config.pretrain;
    pc.seed = derive_seed(master, derive_seed(kPretrainLabel, config.pretrain.seed));
    const std::vector<double> nll = pretrain_imitation(*config.model, *config.cost, policy, pc);
    log << fmt::format("pretrain: {} iterations, imitation loss {:.4f} -> {:.4f}\n",
                       pc.iterations, nll.front(), nll.back());
  }
  return policy;
}

struct TrainOutcome {
  RecurrentPolicy policy;
  ClassifierPair pair;
  TrainReport report;
  std::vector<IterationRecord> records;
  bool diverged = false;
  std::string error;
};

void write_train_artifacts(const ExperimentConfig& config, std::uint64_t seed,
                           const std::string& dir, const TrainOutcome& out, long first) {
  TrainReport partial;
  partial.iterations = out.records;
  std::string metrics = jsonl_header(config, seed) + partial.to_jsonl(false);
  write_file_atomic(join_path(dir, "train_report.jsonl"), metrics);
  std::string timing = jsonl_header(config, seed);
  for (const IterationRecord& r : out.records) {
    timing += nlohmann::json{{"iteration", r.iteration}, {"wall_time", r.wall_time}}.dump() + "\n";
  }
  write_file_atomic(join_path(dir, "timing.jsonl"), timing);
  if (!out.diverged) {
    const long step = first + static_cast<long>(out.records.size());
    save_policy(join_path(dir, "policy.json"), out.policy, seed, step);
    save_classifiers(join_path(dir, "classifiers.json"), out.pair, seed, step);
  }
}

TrainOutcome run_training(const ExperimentConfig& config, RecurrentPolicy policy,
                          std::optional<ClassifierPair> pair, double lambda, std::uint64_t seed,
                          const std::string& dir, long first, std::ostream& log) {
  TrainConfig tc = config.train;
  tc.lambda = lambda;
  tc.seed = seed;
  const SystemModel& model = *config.model;
  if (!pair) {
    pair = ClassifierPair::init(model.indices(), model.control_count(), model.chain().size(),
                                tc.classifier_hidden, derive_seed(seed, kClassifierLabel),
                                tc.classifier_lr);
  }
  TrainOutcome out{std::move(policy), std::move(*pair), {}, {}, false, {}};
  TrainHooks hooks;
  hooks.first_iteration = first;
  hooks.checkpoint_path = join_path(dir, "policy.json");
  const int every = std::max(1, tc.iterations / 10);
  hooks.on_iteration = [&](const IterationRecord& r, const RecurrentPolicy&) {
    out.records.push_back(r);
    if ((r.iteration - first) % every == 0) {
      log << fmt::format("  iteration {}: cost {:.4f} leakage {:.4f} objective {:.3f}\n",
                         r.iteration, r.mean_cost, r.mean_leakage, r.objective);
    }
  };
  try {
    out.report = train(model, *config.cost, out.policy, out.pair, tc, hooks);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kDivergence) throw;
    out.diverged = true;
    out.error = e.what();
  }
  write_train_artifacts(config, seed, dir, out, first);
  return out;
}

EvalMetrics evaluate_trained(const ExperimentConfig& config, const RecurrentPolicy& policy,
                             const CommandOptions& options, std::uint64_t seed) {
  const RecurrentPolicy greedy = make_deterministic_controller_head(policy);
  const ClassifierPair pair =
      fit_leakage_classifiers(*config.model, greedy, *config.cost, config.leakage, seed);
  EvalOptions eo;
  eo.rollouts = options.rollouts.value_or(config.eval_rollouts);
  eo.seed = config.eval_seed;
  eo.adversary = config.adversary;
  return evaluate(*config.model, policy, *config.cost, &pair, eo);
}

std::string nan_or(double v, std::size_t n) {
  return n == 0 ? std::string("nan") : format_double(v);
}

std::string csv_text(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput:
    case ErrorCode::kInvalidConfiguration:
    case ErrorCode::kInstanceTooLarge:
    case ErrorCode::kImpossibleObservation:
      return kExitValidation;
    case ErrorCode::kDivergence:
      return kExitDivergence;
    case ErrorCode::kInternalInconsistency:
      return kExitIdentity;
    case ErrorCode::kUndefinedRatio:
    case ErrorCode::kIo:
      return kExitFailure;
  }
  return kExitFailure;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::kInvalidConfiguration, "config must be a JSON object");
  reject_unknown(j, {"model", "cost", "policy", "train", "pretrain", "sweep", "eval", "leakage",
                     "seed", "oracle"},
                 "");
  require(j.contains("model"), ErrorCode::kInvalidConfiguration,
          "missing config field 'model'");
  ExperimentConfig c;
  c.raw = j;
  c.hash = config_hash(j);
  try {
    auto model = std::make_shared<SystemModel>(model_from_json(j.at("model")));
    c.cost = std::make_shared<StageCost>(cost_from_json(j, *model));
    c.model = std::move(model);

    c.policy = section(j, "policy");
    reject_unknown(c.policy, {"hidden", "init_seed", "checkpoint", "baseline"}, "policy.");

    c.train = TrainConfig::from_json(section(j, "train"));
    c.seed = j.value("seed", c.train.seed);
    c.pretrain = PretrainConfig::from_json(section(j, "pretrain"));

    const nlohmann::json& sweep = section(j, "sweep");
    reject_unknown(sweep, {"lambda"}, "sweep.");
    if (sweep.contains("lambda")) c.sweep = sweep.at("lambda").get<std::vector<double>>();
    for (double l : c.sweep) {
      require(std::isfinite(l) && l >= 0.0, ErrorCode::kInvalidConfiguration,
              "sweep.lambda values must be finite and >= 0");
    }
    std::sort(c.sweep.begin(), c.sweep.end());
    c.sweep.erase(std::unique(c.sweep.begin(), c.sweep.end()), c.sweep.end());

    const nlohmann::json& eval = section(j, "eval");
    reject_unknown(eval, {"rollouts", "seed", "particles", "lag", "adversary", "decode",
                          "resample_fraction"},
                   "eval.");
    c.eval_rollouts = eval.value("rollouts", c.eval_rollouts);
    require(c.eval_rollouts >= 100, ErrorCode::kInvalidConfiguration,
            "eval.rollouts must be >= 100");
    c.eval_seed = eval.value("seed", c.eval_seed);
    c.adversary.particles = eval.value("particles", c.adversary.particles);
    c.adversary.lag = eval.value("lag", c.adversary.lag);
    c.adversary.resample_fraction = eval.value("resample_fraction", c.adversary.resample_fraction);
    if (eval.contains("adversary")) {
      c.adversary.mode = adversary_mode(eval.at("adversary").get<std::string>());
    } else if (c.model->kind() == ModelKind::kTabular) {
      c.adversary.mode = AdversaryMode::kExactTabular;
    }
    if (eval.contains("decode")) c.adversary.decode = decode_mode(eval.at("decode").get<std::string>());
    require(c.adversary.particles >= 1 && c.adversary.lag >= 0, ErrorCode::kInvalidConfiguration,
            "eval.particles must be >= 1 and eval.lag >= 0");

    const nlohmann::json& leak = section(j, "leakage");
    reject_unknown(leak, {"train_rollouts", "steps", "batch_rollouts", "hidden", "lr"},
                   "leakage.");
    c.leakage.train_rollouts = leak.value("train_rollouts", c.leakage.train_rollouts);
    c.leakage.steps = leak.value("steps", c.leakage.steps);
    c.leakage.batch_rollouts = leak.value("batch_rollouts", c.leakage.batch_rollouts);
    c.leakage.hidden = leak.value("hidden", c.train.classifier_hidden);
    c.leakage.lr = leak.value("lr", c.leakage.lr);
    require(c.leakage.train_rollouts >= 1 && c.leakage.batch_rollouts >= 1 &&
                c.leakage.steps >= 0 && c.leakage.hidden >= 1 && c.leakage.lr > 0.0,
            ErrorCode::kInvalidConfiguration, "leakage settings out of range");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidConfiguration, std::string("malformed config: ") + e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  nlohmann::json j;
  try {
    j = read_json_file(path);
  } catch (const Error& e) {
    // An unreadable config is a usage problem, not an I/O failure of the run.
    fail(e.code() == ErrorCode::kIo ? ErrorCode::kInvalidConfiguration : e.code(), e.what());
  }
  try {
    return from_json(j);
  } catch (const Error& e) {
    fail(e.code(), path + ": " + e.what());
  }
}

std::uint64_t lambda_seed(std::uint64_t master, double lambda) {
  const double key = lambda == 0.0 ? 0.0 : lambda;
  return derive_seed(master, std::bit_cast<std::uint64_t>(key));
}

RecurrentPolicy initial_policy(const ExperimentConfig& config) {
  Architecture arch;
  arch.observations = config.model->observation_count();
  arch.indices = config.model->indices();
  arch.controls = config.model->control_count();
  arch.hidden = config.policy.value("hidden", arch.hidden);
  return RecurrentPolicy::init(arch, config.policy.value("init_seed", std::uint64_t{11}));
}

std::shared_ptr<const JointPolicy> configured_policy(const ExperimentConfig& config,
                                                     const CommandOptions& options) {
  if (!options.policy_path.empty()) {
    return std::make_shared<RecurrentPolicy>(load_policy(options.policy_path));
  }
  if (config.policy.contains("checkpoint")) {
    return std::make_shared<RecurrentPolicy>(
        load_policy(config.policy.at("checkpoint").get<std::string>()));
  }
  if (config.policy.contains("baseline")) {
    const nlohmann::json& b = config.policy.at("baseline");
    require(b.is_object() && b.contains("k_p"), ErrorCode::kInvalidConfiguration,
            "policy.baseline needs a k_p field");
    return std::make_shared<KpBaselinePolicy>(b.at("k_p").get<double>(), *config.model);
  }
  return std::make_shared<RecurrentPolicy>(initial_policy(config));
}

void write_trajectories_csv(std::ostream& os, std::span<const Trajectory> trajectories,
                            std::uint64_t first_rollout) {
  os << "rollout,t,y,x,z,s,u,cost\n";
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const Trajectory& tr = trajectories[i];
    for (int t = 0; t < tr.horizon(); ++t) {
      std::string x;
      for (int d = 0; d < tr.state_dim; ++d) {
        if (d > 0) x += ';';
        x += format_double(tr.x[static_cast<std::size_t>(t) * tr.state_dim + d]);
      }
      os << first_rollout + i << ',' << t + 1 << ',' << tr.y[t] << ',' << x << ',' << tr.z[t]
         << ',' << tr.s[t] << ',' << tr.u[t] << ',' << format_double(tr.cost[t]) << '\n';
    }
  }
}

ClassifierPair fit_leakage_classifiers(const SystemModel& model, const JointPolicy& policy,
                                       const StageCost& cost, const LeakageOptions& options,
                                       std::uint64_t seed) {
  const std::vector<Trajectory> trajs = rollout_batch(
      model, policy, cost, derive_seed(seed, kLeakageLabel), 0, options.train_rollouts);
  RandomStream rng(derive_seed(seed, kLeakageLabel), 1);
  std::vector<ContrastiveBatch> batches;
  const std::span<const Trajectory> all(trajs);
  for (std::size_t at = 0; at < trajs.size(); at += options.batch_rollouts) {
    const std::size_t n = std::min<std::size_t>(options.batch_rollouts, trajs.size() - at);
    batches.push_back(build_contrastive_batch(all.subspan(at, n), model.indices(), rng));
  }
  ClassifierPair pair =
      ClassifierPair::init(model.indices(), model.control_count(), model.chain().size(),
                           options.hidden, derive_seed(seed, kClassifierLabel), options.lr);
  ClassifierTrainOptions to;
  to.steps = options.steps;
  to.lr = options.lr;
  train_classifiers(pair, batches, to);
  return pair;
}

std::string sweep_csv_header() {
  return "lambda,mean_cost,cost_se,leakage,leakage_se,adversary_acc,acc_se,seed,"
         "degenerate_rollouts,checkpoint,error";
}

std::string sweep_csv_row(const SweepRow& row) {
  const EvalMetrics& m = row.metrics;
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{}", format_double(row.lambda),
                     nan_or(m.cost.mean, m.cost.n), nan_or(m.cost.se, m.cost.n),
                     nan_or(m.leakage.mean, m.leakage.n), nan_or(m.leakage.se, m.leakage.n),
                     nan_or(m.accuracy.mean, m.accuracy.n), nan_or(m.accuracy.se, m.accuracy.n),
                     row.seed, m.degenerate_rollouts, csv_text(row.checkpoint),
                     csv_text(row.error));
}

std::vector<OracleCheckLine> run_oracle_checks(const ExperimentConfig& config,
                                               std::uint64_t seed) {
  const SystemModel& model = *config.model;
  const StageCost& cost = *config.cost;
  require(model.kind() == ModelKind::kTabular, ErrorCode::kInvalidConfiguration,
          "oracle-check needs a tabular model");
  const nlohmann::json& oc = section(config.raw, "oracle");
  reject_unknown(oc, {"lambda", "hidden", "max_outcomes", "classifier_samples"}, "oracle.");
  const double lambda = oc.value("lambda", 0.5);
  EnumerationOptions eopts;
  eopts.max_outcomes = oc.value("max_outcomes", std::size_t{1'000'000});
  const std::size_t needed = outcome_count(model, false);
  require(needed <= eopts.max_outcomes, ErrorCode::kInstanceTooLarge,
          fmt::format("instance has {} outcomes, cap is {}", needed, eopts.max_outcomes));

  Architecture arch;
  arch.observations = model.observation_count();
  arch.indices = model.indices();
  arch.controls = model.control_count();
  arch.hidden = oc.value("hidden", 3);
  // Spread the weights beyond the initialisation scale so that the policy
  // is far from uniform and actually leaks.
  RecurrentPolicy policy = RecurrentPolicy::init(arch, derive_seed(seed, 0x6f7263));
  RandomStream spread(derive_seed(seed, 0x6f7263), 1);
  for (double& v : policy.mutable_params()) v = 3.0 * (spread.uniform() - 0.5);

  std::vector<OracleCheckLine> lines;
  auto add = [&lines](std::string name, double error, double tol) {
    lines.push_back({std::move(name), error, tol, std::isfinite(error) && error <= tol});
  };

  const EnumeratedJoint joint = enumerate_distribution(model, policy, cost, eopts);
  add("normalization", std::abs(joint.total_probability() - 1.0), 1e-12);

  const double mi = exact_mutual_information(joint);
  const ChainDecomposition chain = exact_chain_decomposition(joint);
  add("chain rule", std::abs(chain.total() - mi), 1e-10);
  double cross = 0.0, control = 0.0;
  for (double v : chain.cross_terms) cross = std::max(cross, std::abs(v));
  for (double v : chain.control_terms) control = std::max(control, std::abs(v));
  add("future private terms", cross, 1e-10);
  add("control terms", control, 1e-10);

  const ExactObjective obj = exact_objective(joint, lambda);
  add("additive objective", std::abs(obj.value - obj.additive_value), 1e-10);

  const BeliefAgreement beliefs = compare_beliefs(model, policy, cost, eopts);
  add("quantizer belief", beliefs.quantizer, 1e-10);
  add("controller belief", beliefs.controller, 1e-10);
  add("belief composition", beliefs.composition, 1e-12);
  add("belief information loss", beliefs.information_loss, 1e-10);

  GradientCheckOptions gopts;
  gopts.enumeration = eopts;
  const GradientCheck grad = exact_gradient(model, policy, cost, lambda, gopts);
  add("score gradient", grad.max_relative_error, grad.tolerance);

  const std::vector<double> eg = expected_information_loss_gradient(model, policy, cost, eopts);
  double eg_norm = 0.0;
  for (double v : eg) eg_norm = std::max(eg_norm, std::abs(v));
  add("information loss score mean", eg_norm, 1e-10);

  // logit P(M=1|s_t, y^{t-1}, h) - logit P(M=1|s_t, h) equals c_i, over a
  // strided subset of outcomes.
  const std::size_t samples = oc.value("classifier_samples", std::size_t{64});
  const std::size_t stride = std::max<std::size_t>(1, joint.size() / samples);
  double classifier = 0.0;
  for (std::size_t o = 0; o < joint.size(); o += stride) {
    if (!(joint.prob[o] > 0.0)) continue;
    std::vector<int> ys, ss, us;
    for (int t = 1; t <= joint.horizon; ++t) {
      const int s = joint.s(o, t - 1);
      const double pw = exact_classifier_posterior(joint, t, s, ys, ss, us, true);
      const double px = exact_classifier_posterior(joint, t, s, ys, ss, us, false);
      const double ci = exact_information_loss(joint, t, s, ys, ss, us);
      const double logit = std::log(pw / (1.0 - pw)) - std::log(px / (1.0 - px));
      classifier = std::max(classifier, std::abs(logit - ci));
      ys.push_back(joint.y(o, t - 1));
      ss.push_back(s);
      us.push_back(joint.u(o, t - 1));
    }
  }
  add("classifier posterior", classifier, 1e-10);
  return lines;
}

int cmd_simulate(const CommandOptions& options, std::ostream& log) {
  const ExperimentConfig config = load_config(options);
  const std::uint64_t seed = master_seed(config, options);
  const int n = options.rollouts.value_or(config.eval_rollouts);
  require(n >= 0, ErrorCode::kInvalidConfiguration, "--rollouts must be >= 0");
  const auto policy = configured_policy(config, options);
  const std::vector<Trajectory> trajs =
      n == 0 ? std::vector<Trajectory>{}
             : rollout_batch(*config.model, *policy, *config.cost, derive_seed(seed, kSimulateLabel),
                             0, n);
  std::ostringstream out;
  out << header_line(config, seed);
  write_trajectories_csv(out, trajs);
  const std::string path = join_path(options.out_dir, "trajectories.csv");
  write_file_atomic(path, out.str());
  log << fmt::format("simulate: {} rollouts -> {}\n", n, path);
  return kExitOk;
}

int cmd_train(const CommandOptions& options, std::ostream& log) {
  const ExperimentConfig config = load_config(options);
  const std::uint64_t seed = master_seed(config, options);
  const double lambda = single_lambda(config, options);
  require(lambda >= 0.0, ErrorCode::kInvalidConfiguration, "lambda must be >= 0");

  long first = 0;
  std::optional<ClassifierPair> pair;
  RecurrentPolicy policy = initial_policy(config);
  if (!options.policy_path.empty()) {
    const Checkpoint ck = parse_checkpoint(read_json_file(options.policy_path));
    policy = load_policy(options.policy_path);
    first = ck.step;
    const fs::path sibling = fs::path(options.policy_path).parent_path() / "classifiers.json";
    if (fs::exists(sibling)) pair = load_classifiers(sibling.string(), config.train.classifier_lr);
    log << fmt::format("train: resuming from {} at iteration {}\n", options.policy_path, first);
  } else {
    policy = starting_policy(config, seed, log);
  }

  log << fmt::format("train: lambda {} seed {} iterations {}\n", lambda, seed,
                     config.train.iterations);
  const TrainOutcome out =
      run_training(config, std::move(policy), std::move(pair), lambda, seed, options.out_dir,
                   first, log);
  if (out.diverged) {
    log << "train: " << out.error << "\n";
    return kExitDivergence;
  }
  SweepRow row;
  row.lambda = lambda;
  row.seed = seed;
  // Relative to the output directory so reruns elsewhere match byte for byte.
  row.checkpoint = "policy.json";
  row.metrics = evaluate_trained(config, out.policy, options, seed);
  write_file_atomic(join_path(options.out_dir, "final.csv"),
                    header_line(config, seed) + sweep_csv_header() + "\n" + sweep_csv_row(row) +
                        "\n");
  log << fmt::format("train: cost {:.4f} +- {:.4f}, accuracy {:.4f} +- {:.4f}\n",
                     row.metrics.cost.mean, row.metrics.cost.se, row.metrics.accuracy.mean,
                     row.metrics.accuracy.se);
  return kExitOk;
}

int cmd_sweep(const CommandOptions& options, std::ostream& log) {
  const ExperimentConfig config = load_config(options);
  const std::uint64_t master = master_seed(config, options);
  std::vector<double> lambdas = options.lambdas.empty() ? config.sweep : options.lambdas;
  for (double l : lambdas) {
    require(std::isfinite(l) && l >= 0.0, ErrorCode::kInvalidConfiguration,
            "lambda values must be finite and >= 0");
  }
  std::sort(lambdas.begin(), lambdas.end());
  lambdas.erase(std::unique(lambdas.begin(), lambdas.end()), lambdas.end());
  require(!lambdas.empty(), ErrorCode::kInvalidConfiguration, "sweep needs at least one lambda");

  std::optional<RecurrentPolicy> base;
  std::vector<SweepRow> rows;
  bool any_divergence = false;
  for (double lambda : lambdas) {
    SweepRow row;
    row.lambda = lambda;
    row.seed = lambda_seed(master, lambda);
    const std::string dir = join_path(options.out_dir, lambda_dir_name(lambda));
    log << fmt::format("sweep: lambda {} seed {}\n", lambda, row.seed);
    try {
      if (!base) base = starting_policy(config, master, log);
      const TrainOutcome out =
          run_training(config, *base, std::nullopt, lambda, row.seed, dir, 0, log);
      if (out.diverged) {
        any_divergence = true;
        row.error = out.error;
      } else {
        row.checkpoint = join_path(lambda_dir_name(lambda), "policy.json");
        row.metrics = evaluate_trained(config, out.policy, options, row.seed);
        write_file_atomic(join_path(dir, "final.csv"), header_line(config, row.seed) +
                                                           sweep_csv_header() + "\n" +
                                                           sweep_csv_row(row) + "\n");
        log << fmt::format("  cost {:.4f} +- {:.4f}, accuracy {:.4f} +- {:.4f}\n",
                           row.metrics.cost.mean, row.metrics.cost.se, row.metrics.accuracy.mean,
                           row.metrics.accuracy.se);
      }
    } catch (const Error& e) {
      row.error = e.what();
      log << "  failed: " << e.what() << "\n";
    }
    rows.push_back(std::move(row));
  }
  std::string csv = header_line(config, master) + sweep_csv_header() + "\n";
  for (const SweepRow& row : rows) csv += sweep_csv_row(row) + "\n";
  const std::string path = join_path(options.out_dir, "sweep.csv");
  write_file_atomic(path, csv);
  log << "sweep: wrote " << path << "\n";
  const bool all_failed = std::all_of(rows.begin(), rows.end(),
                                      [](const SweepRow& r) { return !r.error.empty(); });
  if (all_failed) return any_divergence ? kExitDivergence : kExitFailure;
  return kExitOk;
}

int cmd_oracle_check(const CommandOptions& options, std::ostream& log) {
  const ExperimentConfig config = load_config(options);
  const std::uint64_t seed = master_seed(config, options);
  const std::vector<OracleCheckLine> lines = run_oracle_checks(config, seed);
  bool ok = true;
  std::string csv = header_line(config, seed) + "check,error,tolerance,passed\n";
  for (const OracleCheckLine& l : lines) {
    log << fmt::format("{:<28} error {:<10.3e} tol {:<8.1e} {}\n", l.name, l.error, l.tolerance,
                       l.passed ? "PASS" : "FAIL");
    csv += fmt::format("{},{},{},{}\n", csv_text(l.name), format_double(l.error),
                       format_double(l.tolerance), l.passed ? 1 : 0);
    ok = ok && l.passed;
  }
  write_file_atomic(join_path(options.out_dir, "oracle_check.csv"), csv);
  return ok ? kExitOk : kExitIdentity;
}

int cmd_adversary_eval(const CommandOptions& options, std::ostream& log) {
  const ExperimentConfig config = load_config(options);
  const std::uint64_t seed = master_seed(config, options);
  const int n = options.rollouts.value_or(config.eval_rollouts);
  require(n >= 1, ErrorCode::kInvalidConfiguration, "--rollouts must be >= 1");
  const auto policy = deployed(configured_policy(config, options));
  const std::vector<Trajectory> trajs =
      rollout_batch(*config.model, *policy, *config.cost, config.eval_seed, 0, n);
  const std::uint64_t adv_seed = derive_seed(seed, 0x616476ULL);

  AdversaryEvaluation ev;
  if (options.observe_z) {
    ev = evaluate_observation_adversary(*config.model, trajs, config.adversary, adv_seed);
  } else {
    AdversaryModel adv;
    adv.model = config.model.get();
    adv.policy = policy;
    adv.options = config.adversary;
    ev = evaluate_adversary(adv, trajs, adv_seed);
  }
  const std::string meta =
      header_line(config, seed) +
      fmt::format("# scoring=per-step observer={} decode={}\n",
                  options.observe_z ? "observations" : "indices-controls",
                  config.adversary.decode == DecodeMode::kMarginal ? "marginal" : "joint-map");

  std::ostringstream est;
  est << meta;
  write_reports_csv(est, ev.reports);
  write_file_atomic(join_path(options.out_dir, "estimates.csv"), est.str());
  std::ostringstream tr;
  tr << meta;
  write_trajectories_csv(tr, trajs);
  write_file_atomic(join_path(options.out_dir, "trajectories.csv"), tr.str());
  write_file_atomic(join_path(options.out_dir, "adversary.csv"),
                    meta + "rollouts,accuracy,accuracy_se,degenerate_rollouts\n" +
                        fmt::format("{},{},{},{}\n", n, format_double(ev.accuracy.mean),
                                    format_double(ev.accuracy.se), ev.degenerate_rollouts));
  log << fmt::format("adversary-eval: per-step accuracy {:.4f} +- {:.4f} over {} rollouts\n",
                     ev.accuracy.mean, ev.accuracy.se, n);
  if (ev.degenerate_rollouts > 0) {
    log << fmt::format("adversary-eval: {} rollouts hit a degenerate particle set\n",
                       ev.degenerate_rollouts);
  }
  return kExitOk;
}

int cmd_estimate_mi(const CommandOptions& options, std::ostream& log) {
  const ExperimentConfig config = load_config(options);
  const std::uint64_t seed = master_seed(config, options);
  const int n = options.rollouts.value_or(config.eval_rollouts);
  require(n >= 1, ErrorCode::kInvalidConfiguration, "--rollouts must be >= 1");
  const auto policy = deployed(configured_policy(config, options));
  const SystemModel& model = *config.model;
  const ClassifierPair pair = fit_leakage_classifiers(model, *policy, *config.cost,
                                                      config.leakage, seed);
  const std::vector<Trajectory> held_out = rollout_batch(
      model, *policy, *config.cost, derive_seed(seed, kHeldOutLabel), 0, n);

  const int horizon = model.horizon();
  std::vector<RunningStats> per_step(horizon);
  for (const Trajectory& tr : held_out) {
    const std::vector<double> c = estimate_information_losses(pair, tr);
    for (int t = 0; t < horizon; ++t) per_step[t].add(c[t]);
  }
  const MeanSe total = estimate_total_leakage(pair, held_out);

  std::optional<ChainDecomposition> exact;
  if (model.kind() == ModelKind::kTabular) {
    const nlohmann::json& oc = section(config.raw, "oracle");
    EnumerationOptions eo;
    eo.max_outcomes = oc.value("max_outcomes", std::size_t{1'000'000});
    if (outcome_count(model, false) <= eo.max_outcomes) {
      exact = exact_chain_decomposition(enumerate_distribution(model, *policy, *config.cost, eo));
    }
  }
  std::string csv = header_line(config, seed) + "t,information_loss,information_loss_se,exact\n";
  for (int t = 0; t < horizon; ++t) {
    const MeanSe s = per_step[t].summary();
    csv += fmt::format("{},{},{},{}\n", t + 1, format_double(s.mean), format_double(s.se),
                       exact ? format_double(exact->terms[t]) : std::string());
  }
  csv += fmt::format("total,{},{},{}\n", format_double(total.mean), format_double(total.se),
                     exact ? format_double(exact->total()) : std::string());
  write_file_atomic(join_path(options.out_dir, "mi.csv"), csv);
  log << fmt::format("estimate-mi: total leakage {:.4f} +- {:.4f} nats", total.mean, total.se);
  if (exact) log << fmt::format(" (exact {:.4f})", exact->total());
  log << "\n";
  return kExitOk;
}

int run_command(const std::string& name, const CommandOptions& options, std::ostream& log) {
  static const std::map<std::string, int (*)(const CommandOptions&, std::ostream&)> commands = {
      {"simulate", cmd_simulate},         {"train", cmd_train},
      {"sweep", cmd_sweep},               {"oracle-check", cmd_oracle_check},
      {"adversary-eval", cmd_adversary_eval}, {"estimate-mi", cmd_estimate_mi},
  };
  const auto it = commands.find(name);
  if (it == commands.end()) {
    log << "privctrl: unknown command '" << name << "'\n";
    return kExitValidation;
  }
  try {
    return it->second(options, log);
  } catch (const Error& e) {
    log << "privctrl: " << error_code_name(e.code()) << ": " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    log << "privctrl: invalid configuration: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    log << "privctrl: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace privctrl
