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

#include "privctrl/mi.h"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "privctrl/error.h"
#include "privctrl/io.h"
#include "privctrl/parallel.h"

namespace privctrl {

namespace {

// Fixed chunking keeps gradient sums independent of the thread count.
constexpr int kLossChunks = 16;

double softplus(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::vector<int> classifier_columns(const ClassifierArchitecture& a, int s, int u, int y) {
  std::vector<int> cols = {s, a.indices + u};
  if (a.private_symbols > 0) cols.push_back(a.indices + a.controls + y);
  return cols;
}

}  // namespace

nlohmann::json ClassifierArchitecture::to_json() const {
  return {{"indices", indices},
          {"controls", controls},
          {"private_symbols", private_symbols},
          {"hidden", hidden}};
}

ClassifierArchitecture ClassifierArchitecture::from_json(const nlohmann::json& j) {
  ClassifierArchitecture a;
  a.indices = j.at("indices").get<int>();
  a.controls = j.at("controls").get<int>();
  a.private_symbols = j.at("private_symbols").get<int>();
  a.hidden = j.at("hidden").get<int>();
  return a;
}

ClassifierLayout make_classifier_layout(const ClassifierArchitecture& arch) {
  require(arch.indices >= 2 && arch.controls >= 1 && arch.private_symbols >= 0 && arch.hidden >= 1,
          ErrorCode::kInvalidConfiguration, "invalid classifier architecture");
  ParamLayout layout;
  ClassifierLayout out;
  out.cell = add_cell(layout, arch.indices + arch.controls + arch.private_symbols, arch.hidden);
  out.head_w = layout.add(arch.indices, arch.hidden);
  out.head_b = layout.add(arch.indices);
  out.size = layout.size();
  return out;
}

std::size_t ContrastiveBatch::sample_count() const {
  std::size_t n = 0;
  for (const auto& seq : sequences) n += seq.s.size();
  return n;
}

ContrastiveBatch build_contrastive_batch(std::span<const Trajectory> trajectories, int indices,
                                         RandomStream& rng) {
  require(indices >= 2, ErrorCode::kInvalidInput, "need at least two indices");
  ContrastiveBatch batch;
  batch.indices = indices;
  batch.sequences.reserve(trajectories.size());
  for (const Trajectory& tr : trajectories) {
    ContrastiveSequence seq;
    seq.y = tr.y;
    seq.s = tr.s;
    seq.u = tr.u;
    const int n = tr.horizon();
    seq.s_tilde.resize(n);
    seq.label.resize(n);
    seq.s_bar.resize(n);
    for (int t = 0; t < n; ++t) {
      seq.s_tilde[t] = rng.uniform_int(indices);
      seq.label[t] = rng.bernoulli(0.5) ? 1 : 0;
      seq.s_bar[t] = seq.label[t] == 1 ? seq.s[t] : seq.s_tilde[t];
    }
    batch.sequences.push_back(std::move(seq));
  }
  return batch;
}

HistoryClassifier::HistoryClassifier(ClassifierArchitecture arch, std::vector<double> theta)
    : arch_(arch), layout_(make_classifier_layout(arch)), theta_(std::move(theta)) {
  require(static_cast<int>(theta_.size()) == layout_.size, ErrorCode::kInvalidInput,
          "classifier parameter count does not match the architecture");
  for (double v : theta_) {
    require(std::isfinite(v), ErrorCode::kInvalidInput, "classifier parameters must be finite");
  }
}

HistoryClassifier HistoryClassifier::init(const ClassifierArchitecture& arch,
                                          std::uint64_t seed) {
  const ClassifierLayout layout = make_classifier_layout(arch);
  std::vector<double> theta(layout.size, 0.0);
  RandomStream rng(seed, 0x636c6173ULL);
  init_cell(layout.cell, arch.hidden, theta, rng);
  init_uniform(layout.head_w, 0.1 / std::sqrt(static_cast<double>(arch.hidden)), theta, rng);
  return HistoryClassifier(arch, std::move(theta));
}

int HistoryClassifier::parameter_count(const ClassifierArchitecture& arch) {
  return make_classifier_layout(arch).size;
}

Eigen::MatrixXd HistoryClassifier::logits(const std::vector<int>& y, const std::vector<int>& s,
                                          const std::vector<int>& u) const {
  const int n = static_cast<int>(s.size());
  require(static_cast<int>(u.size()) >= n - 1 && (!uses_private() || static_cast<int>(y.size()) >= n - 1),
          ErrorCode::kInvalidInput, "classifier histories are too short");
  Eigen::MatrixXd out(n, arch_.indices);
  Tape tape(theta_);
  Tape::Var h = tape.constant(Eigen::VectorXd::Zero(arch_.hidden));
  for (int t = 0; t < n; ++t) {
    const Tape::Var l = tape.affine(layout_.head_w, h, tape.bias(layout_.head_b));
    out.row(t) = tape.value(l).transpose();
    if (t + 1 < n) {
      const auto cols = classifier_columns(arch_, s[t], u[t], uses_private() ? y[t] : 0);
      h = gated_cell(tape, layout_.cell, h, cols);
    }
  }
  return out;
}

double HistoryClassifier::sequence_loss(const ContrastiveSequence& seq, double weight,
                                        std::span<double> grad) const {
  const int n = seq.horizon();
  Tape tape(theta_);
  Tape::Var h = tape.constant(Eigen::VectorXd::Zero(arch_.hidden));
  double total = 0.0;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(arch_.indices);
  for (int t = 0; t < n; ++t) {
    const Tape::Var l = tape.affine(layout_.head_w, h, tape.bias(layout_.head_b));
    const double v = tape.value(l)[seq.s_bar[t]];
    const double m = seq.label[t];
    total += softplus(v) - m * v;
    if (!grad.empty()) {
      g.setZero();
      g[seq.s_bar[t]] = weight * (sigmoid(v) - m);
      tape.seed(l, g);
    }
    if (t + 1 < n) {
      const auto cols = classifier_columns(arch_, seq.s[t], seq.u[t], uses_private() ? seq.y[t] : 0);
      h = gated_cell(tape, layout_.cell, h, cols);
    }
  }
  if (!grad.empty()) tape.backward(grad);
  return total * weight;
}

double HistoryClassifier::loss(const ContrastiveBatch& batch, std::vector<double>* grad) const {
  const std::size_t count = batch.sample_count();
  require(count > 0, ErrorCode::kInvalidInput, "contrastive batch is empty");
  const double weight = 1.0 / static_cast<double>(count);
  const int n = static_cast<int>(batch.sequences.size());
  const int chunks = std::min(kLossChunks, n);
  std::vector<double> partial(chunks, 0.0);
  std::vector<std::vector<double>> grads(grad != nullptr ? chunks : 0);
  parallel_for(chunks, [&](int c) {
    const int begin = static_cast<int>(static_cast<long>(n) * c / chunks);
    const int end = static_cast<int>(static_cast<long>(n) * (c + 1) / chunks);
    std::span<double> gspan;
    if (grad != nullptr) {
      grads[c].assign(theta_.size(), 0.0);
      gspan = grads[c];
    }
    for (int i = begin; i < end; ++i) partial[c] += sequence_loss(batch.sequences[i], weight, gspan);
  });
  double total = 0.0;
  for (double v : partial) total += v;
  if (grad != nullptr) {
    grad->assign(theta_.size(), 0.0);
    for (const auto& gc : grads) {
      for (std::size_t i = 0; i < gc.size(); ++i) (*grad)[i] += gc[i];
    }
  }
  return total;
}

ClassifierPair ClassifierPair::init(int indices, int controls, int private_symbols, int hidden,
                                    std::uint64_t seed, double lr) {
  ClassifierArchitecture aw{indices, controls, private_symbols, hidden};
  ClassifierArchitecture ax{indices, controls, 0, hidden};
  return ClassifierPair{HistoryClassifier::init(aw, derive_seed(seed, 1)),
                        HistoryClassifier::init(ax, derive_seed(seed, 2)), Adam(lr), Adam(lr), 0};
}

ClassifierTrainStats train_classifiers(ClassifierPair& pair,
                                       std::span<const ContrastiveBatch> batches,
                                       const ClassifierTrainOptions& options) {
  require(options.steps >= 0 && options.lr > 0.0, ErrorCode::kInvalidConfiguration,
          "classifier training needs steps >= 0 and lr > 0");
  ClassifierTrainStats stats;
  if (options.steps == 0) return stats;
  require(!batches.empty(), ErrorCode::kInvalidInput, "no contrastive batches");
  pair.w_opt.set_lr(options.lr);
  pair.xi_opt.set_lr(options.lr);
  std::vector<double> grad;
  auto check = [](double v, const char* which) {
    if (!std::isfinite(v)) {
      fail(ErrorCode::kDivergence, fmt::format("{} classifier loss is not finite", which));
    }
  };
  const int every = std::max(1, options.validation_every);
  for (int step = 0; step < options.steps; ++step) {
    const ContrastiveBatch& batch = batches[step % batches.size()];
    const double lw = pair.w.loss(batch, &grad);
    check(lw, "w");
    pair.w_opt.step(pair.w.mutable_params(), grad);
    const double lx = pair.xi.loss(batch, &grad);
    check(lx, "xi");
    pair.xi_opt.step(pair.xi.mutable_params(), grad);
    stats.w_loss.push_back(lw);
    stats.xi_loss.push_back(lx);
    ++pair.steps;
    if (options.validation != nullptr && ((step + 1) % every == 0 || step + 1 == options.steps)) {
      stats.w_validation.push_back(pair.w.loss(*options.validation));
      stats.xi_validation.push_back(pair.xi.loss(*options.validation));
    }
  }
  for (double v : pair.w.params()) check(v, "w");
  for (double v : pair.xi.params()) check(v, "xi");

  // Compare the two halves of the trailing window of validation losses.
  const int window = options.trailing_window;
  auto rising = [window](const std::vector<double>& v) {
    if (window < 2 || static_cast<int>(v.size()) < window) return false;
    const int half = window / 2;
    double early = 0.0, late = 0.0;
    for (int i = 0; i < half; ++i) early += v[v.size() - window + i];
    for (int i = 0; i < half; ++i) late += v[v.size() - half + i];
    return late > early + 1e-3 * half;
  };
  stats.validation_increasing = rising(stats.w_validation) || rising(stats.xi_validation);
  if (stats.validation_increasing) {
    warn("classifier validation loss increased over the trailing window");
  }
  return stats;
}

double clamped_logit(double logit) {
  const double p = std::clamp(sigmoid(logit), kClassifierClamp, 1.0 - kClassifierClamp);
  return std::log(p) - std::log1p(-p);
}

std::vector<double> estimate_information_losses(const ClassifierPair& pair,
                                                const Trajectory& trajectory) {
  const Eigen::MatrixXd lw = pair.w.logits(trajectory.y, trajectory.s, trajectory.u);
  const Eigen::MatrixXd lx = pair.xi.logits(trajectory.y, trajectory.s, trajectory.u);
  std::vector<double> out(trajectory.horizon());
  for (int t = 0; t < trajectory.horizon(); ++t) {
    const int s = trajectory.s[t];
    out[t] = clamped_logit(lw(t, s)) - clamped_logit(lx(t, s));
  }
  return out;
}

double estimate_information_loss(const ClassifierPair& pair, const Trajectory& trajectory,
                                 int t) {
  require(t >= 1 && t <= trajectory.horizon(), ErrorCode::kInvalidInput, "time index out of range");
  return estimate_information_losses(pair, trajectory)[t - 1];
}

MeanSe estimate_total_leakage(const ClassifierPair& pair,
                              std::span<const Trajectory> trajectories) {
  std::vector<double> totals(trajectories.size());
  parallel_for(static_cast<int>(trajectories.size()), [&](int i) {
    double sum = 0.0;
    for (double v : estimate_information_losses(pair, trajectories[i])) sum += v;
    totals[i] = sum;
  });
  return mean_se(totals);
}

double classifier_probability(const HistoryClassifier& c, const std::vector<int>& y,
                              const std::vector<int>& s, const std::vector<int>& u, int t,
                              int s_bar) {
  require(t >= 1 && t <= static_cast<int>(s.size()), ErrorCode::kInvalidInput,
          "time index out of range");
  return sigmoid(c.logits(y, s, u)(t - 1, s_bar));
}

nlohmann::json classifier_checkpoint(const ClassifierPair& pair, std::uint64_t seed, long step) {
  auto one = [](const HistoryClassifier& c) {
    return nlohmann::json{{"architecture", c.architecture().to_json()},
                          {"parameter_count", c.params().size()},
                          {"params", encode_doubles(c.params())}};
  };
  return {{"format", "privctrl-checkpoint"},
          {"format_version", 1},
          {"kind", "classifier-pair"},
          {"seed", seed},
          {"step", step},
          {"w", one(pair.w)},
          {"xi", one(pair.xi)}};
}

void save_classifiers(const std::string& path, const ClassifierPair& pair, std::uint64_t seed,
                      long step) {
  write_file_atomic(path, classifier_checkpoint(pair, seed, step).dump(2) + "\n");
}

ClassifierPair load_classifiers(const std::string& path, double lr) {
  const nlohmann::json j = read_json_file(path);
  try {
    require(j.at("format").get<std::string>() == "privctrl-checkpoint" &&
                j.at("kind").get<std::string>() == "classifier-pair",
            ErrorCode::kInvalidInput, path + " is not a classifier checkpoint");
    auto one = [](const nlohmann::json& c) {
      std::vector<double> theta = decode_doubles(c.at("params").get<std::string>());
      require(theta.size() == c.at("parameter_count").get<std::size_t>(),
              ErrorCode::kInvalidInput, "checkpoint payload length mismatch");
      return HistoryClassifier(ClassifierArchitecture::from_json(c.at("architecture")),
                               std::move(theta));
    };
    return ClassifierPair{one(j.at("w")), one(j.at("xi")), Adam(lr), Adam(lr),
                          j.at("step").get<long>()};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidInput, std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace privctrl
