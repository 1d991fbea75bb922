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

#include "privctrl/oracle.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <unordered_map>

#include "privctrl/error.h"
#include "privctrl/io.h"
#include "privctrl/parallel.h"

namespace privctrl {

namespace {

// Mixed-radix key over small symbols; overflow means the instance is too
// large for exact bookkeeping.
class Key {
 public:
  void push(int symbol, int radix) {
    std::uint64_t scaled = 0;
    if (__builtin_mul_overflow(static_cast<std::uint64_t>(symbol), radix_, &scaled) ||
        __builtin_add_overflow(value_, scaled, &value_) ||
        __builtin_mul_overflow(radix_, static_cast<std::uint64_t>(radix), &radix_)) {
      fail(ErrorCode::kInstanceTooLarge, "history key exceeds 64 bits");
    }
  }
  std::uint64_t value() const { return value_; }

 private:
  std::uint64_t value_ = 0;
  std::uint64_t radix_ = 1;
};

using KeyFn = std::function<void(std::size_t o, Key& key)>;
using Marginal = std::unordered_map<std::uint64_t, double>;

// Per-outcome log [P(a,b,c) P(c) / (P(a,c) P(b,c))].
std::vector<double> pointwise_cmi(const EnumeratedJoint& j, const KeyFn& a, const KeyFn& b,
                                  const KeyFn& c) {
  const std::size_t n = j.size();
  std::vector<std::uint64_t> kabc(n), kac(n), kbc(n), kc(n);
  Marginal pabc, pac, pbc, pc;
  for (std::size_t o = 0; o < n; ++o) {
    Key k_c;
    c(o, k_c);
    Key k_ac = k_c;
    a(o, k_ac);
    Key k_bc = k_c;
    b(o, k_bc);
    Key k_abc = k_ac;
    b(o, k_abc);
    kabc[o] = k_abc.value();
    kac[o] = k_ac.value();
    kbc[o] = k_bc.value();
    kc[o] = k_c.value();
    pabc[kabc[o]] += j.prob[o];
    pac[kac[o]] += j.prob[o];
    pbc[kbc[o]] += j.prob[o];
    pc[kc[o]] += j.prob[o];
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t o = 0; o < n; ++o) {
    if (j.prob[o] == 0.0) continue;
    out[o] = std::log(pabc[kabc[o]] * pc[kc[o]] / (pac[kac[o]] * pbc[kbc[o]]));
  }
  return out;
}

// Sums over outcomes are accumulated in extended precision so that finite
// differences of exact quantities stay well above rounding noise.
double expectation(const EnumeratedJoint& j, const std::vector<double>& values) {
  long double total = 0.0L;
  for (std::size_t o = 0; o < j.size(); ++o) {
    total += static_cast<long double>(j.prob[o]) * values[o];
  }
  return static_cast<double>(total);
}

KeyFn y_range(const EnumeratedJoint& j, int begin, int end) {
  return [&j, begin, end](std::size_t o, Key& k) {
    for (int t = begin; t < end; ++t) k.push(j.y(o, t), j.ny);
  };
}

KeyFn su_range(const EnumeratedJoint& j, int begin, int end) {
  return [&j, begin, end](std::size_t o, Key& k) {
    for (int t = begin; t < end; ++t) {
      k.push(j.s(o, t), j.m);
      k.push(j.u(o, t), j.nu);
    }
  };
}

KeyFn s_at(const EnumeratedJoint& j, int t) {
  return [&j, t](std::size_t o, Key& k) { k.push(j.s(o, t), j.m); };
}

KeyFn u_at(const EnumeratedJoint& j, int t) {
  return [&j, t](std::size_t o, Key& k) { k.push(j.u(o, t), j.nu); };
}

KeyFn concat(KeyFn first, KeyFn second) {
  return [first = std::move(first), second = std::move(second)](std::size_t o, Key& k) {
    first(o, k);
    second(o, k);
  };
}

std::uint64_t zsu_key(const EnumeratedJoint& j, std::size_t o) {
  Key k;
  for (int t = 0; t < j.horizon; ++t) {
    k.push(j.z(o, t), j.nz);
    k.push(j.s(o, t), j.m);
    k.push(j.u(o, t), j.nu);
  }
  return k.value();
}

TrajectoryContext context_of(const EnumeratedJoint& j, std::size_t o) {
  TrajectoryContext ctx;
  for (int t = 0; t < j.horizon; ++t) {
    ctx.z.push_back(j.z(o, t));
    ctx.s.push_back(j.s(o, t));
    ctx.u.push_back(j.u(o, t));
  }
  return ctx;
}

bool prefix_matches(const EnumeratedJoint& j, std::size_t o, const std::vector<int>& s_hist,
                    const std::vector<int>& u_hist) {
  for (std::size_t t = 0; t < s_hist.size(); ++t) {
    if (j.s(o, static_cast<int>(t)) != s_hist[t]) return false;
  }
  for (std::size_t t = 0; t < u_hist.size(); ++t) {
    if (j.u(o, static_cast<int>(t)) != u_hist[t]) return false;
  }
  return true;
}

bool y_prefix_matches(const EnumeratedJoint& j, std::size_t o, const std::vector<int>& y_hist) {
  for (std::size_t t = 0; t < y_hist.size(); ++t) {
    if (j.y(o, static_cast<int>(t)) != y_hist[t]) return false;
  }
  return true;
}

class Enumerator {
 public:
  Enumerator(const SystemModel& model, const JointPolicy& policy, const StageCost& cost,
             EnumerationOptions options)
      : model_(model), policy_(policy), options_(options) {
    require(model.kind() == ModelKind::kTabular, ErrorCode::kInvalidInput,
            "enumeration requires a tabular model");
    const PolicyShape shape = policy.shape();
    require(shape.observations == model.observation_count() && shape.indices == model.indices() &&
                shape.controls == model.control_count(),
            ErrorCode::kInvalidInput, "policy alphabet sizes do not match the model");
    out_.horizon = model.horizon();
    out_.ny = model.chain().size();
    out_.nx = model.table().states;
    out_.nz = model.table().observations;
    out_.m = model.indices();
    out_.nu = model.control_count();
    out_.has_states = options.keep_states;
    require(std::max({out_.ny, out_.nx, out_.nz, out_.m, out_.nu}) < 255,
            ErrorCode::kInstanceTooLarge, "alphabets must have fewer than 255 symbols");
    stage_.resize(static_cast<std::size_t>(out_.nx) * out_.nu);
    terminal_.resize(out_.nx);
    Eigen::VectorXd xv(1);
    for (int x = 0; x < out_.nx; ++x) {
      xv[0] = x;
      terminal_[x] = cost.terminal(xv);
      for (int u = 0; u < out_.nu; ++u) stage_[x * out_.nu + u] = cost.evaluate(xv, u);
    }
    path_.assign(static_cast<std::size_t>(out_.horizon) * 5, 0);
  }

  EnumeratedJoint run() {
    const TabularParams& p = model_.table();
    std::vector<double> beta(out_.nx, 0.0);
    step(0, policy_.initial_carry(), p.initial_x, beta, 1.0, -1);
    return std::move(out_);
  }

 private:
  void step(int t, const PolicyCarry& carry, const std::vector<double>& alpha,
            const std::vector<double>& beta, double scale, int prev_y) {
    if (!options_.keep_states) {
      path_[t * 5 + 1] = 255;
      inner(t, carry, alpha, beta, scale, prev_y);
      return;
    }
    for (int x = 0; x < out_.nx; ++x) {
      if (alpha[x] <= 0.0) continue;
      std::vector<double> a(out_.nx, 0.0), b(out_.nx, 0.0);
      a[x] = 1.0;
      b[x] = beta[x] / alpha[x];
      path_[t * 5 + 1] = static_cast<std::uint8_t>(x);
      inner(t, carry, a, b, scale * alpha[x], prev_y);
    }
  }

  void inner(int t, const PolicyCarry& carry, const std::vector<double>& alpha,
             const std::vector<double>& beta, double scale, int prev_y) {
    const MarkovChain& chain = model_.chain();
    const int nx = out_.nx;
    const bool last = t + 1 == out_.horizon;
    std::vector<double> az(nx), bz(nx), sp(out_.m), up(out_.nu), bc(nx);
    for (int y = 0; y < out_.ny; ++y) {
      const double py = prev_y < 0 ? chain.initial[y] : chain.p(prev_y, y);
      if (py == 0.0) continue;
      path_[t * 5 + 0] = static_cast<std::uint8_t>(y);
      for (int z = 0; z < out_.nz; ++z) {
        double mass = 0.0;
        for (int x = 0; x < nx; ++x) {
          az[x] = alpha[x] * model_.kz(x, z);
          bz[x] = beta[x] * model_.kz(x, z);
          mass += az[x];
        }
        if (mass == 0.0) continue;
        path_[t * 5 + 2] = static_cast<std::uint8_t>(z);
        Eigen::VectorXd next;
        policy_.quantizer_step(carry, z, sp, &next);
        for (int s = 0; s < out_.m; ++s) {
          if (sp[s] == 0.0) continue;
          path_[t * 5 + 3] = static_cast<std::uint8_t>(s);
          policy_.controller_probs(carry, s, up);
          for (int u = 0; u < out_.nu; ++u) {
            if (up[u] == 0.0) continue;
            path_[t * 5 + 4] = static_cast<std::uint8_t>(u);
            const double ls = scale * py * sp[s] * up[u];
            for (int x = 0; x < nx; ++x) {
              bc[x] = bz[x] + az[x] * (last ? terminal_[x] : stage_[x * out_.nu + u]);
            }
            if (last) {
              emit(ls, mass, bc);
              continue;
            }
            std::vector<double> an(nx, 0.0), bn(nx, 0.0);
            for (int x = 0; x < nx; ++x) {
              if (az[x] == 0.0 && bc[x] == 0.0) continue;
              for (int xn = 0; xn < nx; ++xn) {
                const double k = model_.kx(x, y, u, xn);
                an[xn] += az[x] * k;
                bn[xn] += bc[x] * k;
              }
            }
            double total = 0.0;
            for (double v : an) total += v;
            for (int xn = 0; xn < nx; ++xn) {
              an[xn] /= total;
              bn[xn] /= total;
            }
            PolicyCarry child = carry;
            policy_.advance(child, z, s, u, next);
            step(t + 1, child, an, bn, ls * total, y);
          }
        }
      }
    }
  }

  void emit(double scale, double mass, const std::vector<double>& beta) {
    if (out_.prob.size() >= options_.max_outcomes) {
      fail(ErrorCode::kInstanceTooLarge,
           "enumeration exceeds the outcome cap of " + std::to_string(options_.max_outcomes));
    }
    double cost = 0.0;
    for (double v : beta) cost += v;
    out_.prob.push_back(scale * mass);
    out_.cost_mass.push_back(scale * cost);
    out_.symbols.insert(out_.symbols.end(), path_.begin(), path_.end());
  }

  const SystemModel& model_;
  const JointPolicy& policy_;
  EnumerationOptions options_;
  EnumeratedJoint out_;
  std::vector<double> stage_;
  std::vector<double> terminal_;
  std::vector<std::uint8_t> path_;
};

}  // namespace

double EnumeratedJoint::total_probability() const {
  long double total = 0.0L;
  for (double p : prob) total += p;
  return static_cast<double>(total);
}

double EnumeratedJoint::expected_cost() const {
  long double total = 0.0L;
  for (double c : cost_mass) total += c;
  return static_cast<double>(total);
}

void EnumeratedJoint::write_csv(std::ostream& os) const {
  const char* names[] = {"y", "x", "z", "s", "u"};
  for (int t = 0; t < horizon; ++t) {
    for (const char* n : names) os << n << (t + 1) << ',';
  }
  os << "prob,cost_mass\n";
  for (std::size_t o = 0; o < size(); ++o) {
    for (int t = 0; t < horizon; ++t) {
      os << y(o, t) << ',' << x(o, t) << ',' << z(o, t) << ',' << s(o, t) << ',' << u(o, t)
         << ',';
    }
    os << format_double(prob[o]) << ',' << format_double(cost_mass[o]) << '\n';
  }
}

EnumeratedJoint enumerate_distribution(const SystemModel& model, const JointPolicy& policy,
                                       const StageCost& cost, EnumerationOptions options) {
  return Enumerator(model, policy, cost, options).run();
}

double exact_mutual_information(const EnumeratedJoint& j) {
  const KeyFn none = [](std::size_t, Key&) {};
  return expectation(j, pointwise_cmi(j, su_range(j, 0, j.horizon), y_range(j, 0, j.horizon),
                                      none));
}

double ChainDecomposition::total() const {
  double total = 0.0;
  for (double v : terms) total += v;
  return total;
}

ChainDecomposition exact_chain_decomposition(const EnumeratedJoint& j) {
  ChainDecomposition out;
  for (int t = 0; t < j.horizon; ++t) {
    out.terms.push_back(
        expectation(j, pointwise_cmi(j, s_at(j, t), y_range(j, 0, t), su_range(j, 0, t))));
    out.cross_terms.push_back(expectation(
        j, pointwise_cmi(j, concat(s_at(j, t), u_at(j, t)), y_range(j, t, j.horizon),
                         concat(su_range(j, 0, t), y_range(j, 0, t)))));
    out.control_terms.push_back(expectation(
        j, pointwise_cmi(j, u_at(j, t), y_range(j, 0, j.horizon),
                         concat(su_range(j, 0, t), s_at(j, t)))));
  }
  return out;
}

std::vector<double> exact_information_losses(const EnumeratedJoint& j) {
  std::vector<double> out(j.size() * j.horizon, 0.0);
  for (int t = 0; t < j.horizon; ++t) {
    const std::vector<double> lr =
        pointwise_cmi(j, s_at(j, t), y_range(j, 0, t), su_range(j, 0, t));
    for (std::size_t o = 0; o < j.size(); ++o) out[o * j.horizon + t] = lr[o];
  }
  return out;
}

double exact_information_loss(const EnumeratedJoint& j, int t, int s_t,
                              const std::vector<int>& y_history,
                              const std::vector<int>& s_history,
                              const std::vector<int>& u_history) {
  require(t >= 1 && t <= j.horizon, ErrorCode::kInvalidInput, "time index out of range");
  require(static_cast<int>(y_history.size()) == t - 1 &&
              static_cast<int>(s_history.size()) == t - 1 &&
              static_cast<int>(u_history.size()) == t - 1,
          ErrorCode::kInvalidInput, "histories must have length t - 1");
  double ph = 0.0, phy = 0.0, phs = 0.0, phys = 0.0;
  for (std::size_t o = 0; o < j.size(); ++o) {
    if (!prefix_matches(j, o, s_history, u_history)) continue;
    const double p = j.prob[o];
    const bool y_ok = y_prefix_matches(j, o, y_history);
    const bool s_ok = j.s(o, t - 1) == s_t;
    ph += p;
    if (y_ok) phy += p;
    if (s_ok) phs += p;
    if (y_ok && s_ok) phys += p;
  }
  if (!(ph > 0.0 && phy > 0.0 && phs > 0.0 && phys > 0.0)) {
    fail(ErrorCode::kUndefinedRatio, "information loss conditioned on a zero-probability event");
  }
  return std::log(phys / phy) - std::log(phs / ph);
}

double exact_classifier_posterior(const EnumeratedJoint& j, int t, int s_bar,
                                  const std::vector<int>& y_history,
                                  const std::vector<int>& s_history,
                                  const std::vector<int>& u_history, bool with_y) {
  double denom = 0.0, num = 0.0;
  for (std::size_t o = 0; o < j.size(); ++o) {
    if (!prefix_matches(j, o, s_history, u_history)) continue;
    if (with_y && !y_prefix_matches(j, o, y_history)) continue;
    denom += j.prob[o];
    if (j.s(o, t - 1) == s_bar) num += j.prob[o];
  }
  if (!(denom > 0.0)) fail(ErrorCode::kUndefinedRatio, "classifier context has probability 0");
  const double p = num / denom;
  return p / (p + 1.0 / j.m);
}

Eigen::MatrixXd exact_private_marginals(const EnumeratedJoint& j, const std::vector<int>& s_seq,
                                        const std::vector<int>& u_seq) {
  require(static_cast<int>(s_seq.size()) == j.horizon &&
              static_cast<int>(u_seq.size()) == j.horizon,
          ErrorCode::kInvalidInput, "observed sequences must cover the horizon");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(j.horizon, j.ny);
  double total = 0.0;
  for (std::size_t o = 0; o < j.size(); ++o) {
    if (!prefix_matches(j, o, s_seq, u_seq)) continue;
    total += j.prob[o];
    for (int t = 0; t < j.horizon; ++t) out(t, j.y(o, t)) += j.prob[o];
  }
  if (!(total > 0.0)) fail(ErrorCode::kImpossibleObservation, "observed sequence has probability 0");
  return out / total;
}

BeliefState exact_belief(const EnumeratedJoint& j, BeliefTag tag, int t,
                         const std::vector<int>& s_history, const std::vector<int>& u_history) {
  require(j.has_states, ErrorCode::kInvalidInput, "exact beliefs need an enumeration with states");
  require(t >= 1 && t <= j.horizon, ErrorCode::kInvalidInput, "time index out of range");
  const std::size_t s_len = tag == BeliefTag::kQuantizer ? t - 1 : t;
  require(s_history.size() == s_len && static_cast<int>(u_history.size()) == t - 1,
          ErrorCode::kInvalidInput, "conditioning histories have the wrong length");
  BeliefState out;
  out.tag = tag;
  out.time = t;
  double total = 0.0;
  for (std::size_t o = 0; o < j.size(); ++o) {
    if (!prefix_matches(j, o, s_history, u_history)) continue;
    AtomKey key;
    key.x = j.x(o, t - 1);
    for (int k = 0; k < t - 1; ++k) key.y.push_back(j.y(o, k));
    for (int k = 0; k < t; ++k) key.z.push_back(j.z(o, k));
    out.atoms[key] += j.prob[o];
    total += j.prob[o];
  }
  if (!(total > 0.0)) fail(ErrorCode::kImpossibleObservation, "conditioning event has probability 0");
  for (auto& [key, w] : out.atoms) w /= total;
  return out;
}

ExactObjective exact_objective(const EnumeratedJoint& joint, double lambda) {
  ExactObjective out;
  out.expected_cost = joint.expected_cost();
  out.mutual_information = exact_mutual_information(joint);
  const std::vector<double> losses = exact_information_losses(joint);
  for (std::size_t o = 0; o < joint.size(); ++o) {
    double sum = 0.0;
    for (int t = 0; t < joint.horizon; ++t) sum += losses[o * joint.horizon + t];
    out.additive_leakage += joint.prob[o] * sum;
  }
  out.value = out.expected_cost + lambda * out.mutual_information;
  out.additive_value = out.expected_cost + lambda * out.additive_leakage;
  return out;
}

ExactObjective exact_objective(const SystemModel& model, const JointPolicy& policy,
                               const StageCost& cost, double lambda, EnumerationOptions options) {
  return exact_objective(enumerate_distribution(model, policy, cost, options), lambda);
}

std::vector<double> exact_score_gradient(const SystemModel& model, const RecurrentPolicy& policy,
                                         const StageCost& cost, double lambda,
                                         EnumerationOptions options) {
  options.keep_states = false;
  const EnumeratedJoint j = enumerate_distribution(model, policy, cost, options);
  const std::vector<double> losses = exact_information_losses(j);
  std::unordered_map<std::uint64_t, std::size_t> index;
  std::vector<std::size_t> representative;
  std::vector<double> coefficient;
  for (std::size_t o = 0; o < j.size(); ++o) {
    double leak = 0.0;
    for (int t = 0; t < j.horizon; ++t) leak += losses[o * j.horizon + t];
    const double c = j.cost_mass[o] + lambda * j.prob[o] * leak;
    const auto [it, inserted] = index.try_emplace(zsu_key(j, o), representative.size());
    if (inserted) {
      representative.push_back(o);
      coefficient.push_back(0.0);
    }
    coefficient[it->second] += c;
  }
  const std::size_t dim = policy.params().size();
  std::vector<std::vector<double>> parts(representative.size());
  parallel_for(static_cast<int>(representative.size()), [&](int k) {
    parts[k] = log_prob_gradient(policy, context_of(j, representative[k])).gradient;
  });
  std::vector<double> grad(dim, 0.0);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < dim; ++i) grad[i] += coefficient[k] * parts[k][i];
  }
  return grad;
}

std::vector<double> finite_difference_gradient(const SystemModel& model,
                                               const RecurrentPolicy& policy,
                                               const StageCost& cost, double lambda, double eps,
                                               EnumerationOptions options) {
  options.keep_states = false;
  const std::size_t dim = policy.params().size();
  std::vector<double> grad(dim, 0.0);
  const std::vector<double> theta(policy.params().begin(), policy.params().end());
  // Fourth-order central stencil; the mutual information term carries
  // cancellation noise of order 1e-14 that a two-point rule at small eps
  // amplifies past the comparison tolerance.
  auto value_at = [&](int i, double shift) {
    std::vector<double> t = theta;
    t[i] += shift;
    const RecurrentPolicy p(policy.architecture(), std::move(t));
    return exact_objective(model, p, cost, lambda, options).value;
  };
  parallel_for(static_cast<int>(dim), [&](int i) {
    const double f2 = value_at(i, 2.0 * eps), f1 = value_at(i, eps);
    const double m1 = value_at(i, -eps), m2 = value_at(i, -2.0 * eps);
    grad[i] = (8.0 * (f1 - m1) - (f2 - m2)) / (12.0 * eps);
  });
  return grad;
}

std::vector<double> expected_information_loss_gradient(const SystemModel& model,
                                                       const RecurrentPolicy& policy,
                                                       const StageCost& cost,
                                                       EnumerationOptions options) {
  options.keep_states = false;
  const EnumeratedJoint j = enumerate_distribution(model, policy, cost, options);
  const std::size_t dim = policy.params().size();
  // Score vector of each distinct (z, s, u) path.
  std::unordered_map<std::uint64_t, std::size_t> index;
  std::vector<std::size_t> path_of(j.size());
  std::vector<std::size_t> representative;
  for (std::size_t o = 0; o < j.size(); ++o) {
    const auto [it, inserted] = index.try_emplace(zsu_key(j, o), representative.size());
    if (inserted) representative.push_back(o);
    path_of[o] = it->second;
  }
  std::vector<std::vector<double>> score(representative.size());
  parallel_for(static_cast<int>(representative.size()), [&](int k) {
    score[k] = log_prob_gradient(policy, context_of(j, representative[k])).gradient;
  });

  std::vector<double> out(dim, 0.0);
  for (int t = 0; t < j.horizon; ++t) {
    // c_i = log P(h,y,s) - log P(h,y) - log P(h,s) + log P(h); the gradient
    // of log P(E) is sum_{o in E} P(o) score(o) / P(E).
    const KeyFn h = su_range(j, 0, t);
    const KeyFn events[4] = {concat(concat(h, y_range(j, 0, t)), s_at(j, t)),
                             concat(h, y_range(j, 0, t)), concat(h, s_at(j, t)), h};
    const double sign[4] = {1.0, -1.0, -1.0, 1.0};
    for (int e = 0; e < 4; ++e) {
      std::unordered_map<std::uint64_t, std::pair<double, std::vector<double>>> acc;
      std::vector<std::uint64_t> keys(j.size());
      for (std::size_t o = 0; o < j.size(); ++o) {
        Key k;
        events[e](o, k);
        keys[o] = k.value();
        auto& slot = acc[keys[o]];
        if (slot.second.empty()) slot.second.assign(dim, 0.0);
        slot.first += j.prob[o];
        const std::vector<double>& g = score[path_of[o]];
        for (std::size_t i = 0; i < dim; ++i) slot.second[i] += j.prob[o] * g[i];
      }
      for (std::size_t o = 0; o < j.size(); ++o) {
        const auto& slot = acc.at(keys[o]);
        const double w = sign[e] * j.prob[o] / slot.first;
        for (std::size_t i = 0; i < dim; ++i) out[i] += w * slot.second[i];
      }
    }
  }
  return out;
}

double max_relative_error(const std::vector<double>& a, const std::vector<double>& b,
                          double floor_fraction) {
  require(a.size() == b.size(), ErrorCode::kInvalidInput, "gradient lengths differ");
  double scale = 0.0;
  for (double v : b) scale = std::max(scale, std::abs(v));
  const double floor = std::max(floor_fraction * scale, std::numeric_limits<double>::min());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

GradientCheck exact_gradient(const SystemModel& model, const RecurrentPolicy& policy,
                             const StageCost& cost, double lambda, GradientCheckOptions options) {
  require(policy.params().size() <= options.max_parameters, ErrorCode::kInstanceTooLarge,
          "policy has more parameters than the gradient check allows");
  GradientCheck out;
  out.tolerance = options.tolerance;
  out.score = exact_score_gradient(model, policy, cost, lambda, options.enumeration);
  out.finite_difference =
      finite_difference_gradient(model, policy, cost, lambda, options.eps, options.enumeration);
  out.max_relative_error =
      max_relative_error(out.score, out.finite_difference, options.floor_fraction);
  out.passed = out.max_relative_error < options.tolerance;
  if (!out.passed && options.throw_on_mismatch) {
    fail(ErrorCode::kInternalInconsistency,
         "score gradient disagrees with finite differences: relative error " +
             format_double(out.max_relative_error));
  }
  return out;
}

std::vector<TabularPolicy::QuantizerFn> memoryless_quantizer_grid(const PolicyShape& shape) {
  const double count = std::pow(static_cast<double>(shape.indices), shape.observations);
  require(count <= 1e6, ErrorCode::kInstanceTooLarge, "memoryless quantizer grid too large");
  std::vector<TabularPolicy::QuantizerFn> out;
  for (long k = 0; k < static_cast<long>(count); ++k) {
    std::vector<int> map(shape.observations);
    long rest = k;
    for (int z = 0; z < shape.observations; ++z) {
      map[z] = static_cast<int>(rest % shape.indices);
      rest /= shape.indices;
    }
    out.push_back([map](const PolicyCarry&, int z, std::span<double> probs) {
      std::fill(probs.begin(), probs.end(), 0.0);
      probs[map[z]] = 1.0;
    });
  }
  return out;
}

std::vector<TabularPolicy::ControllerFn> history_controller_grid(const PolicyShape& shape,
                                                                 int horizon,
                                                                 const GridOptions& options,
                                                                 bool* exhaustive) {
  std::vector<std::size_t> offsets;
  std::size_t nodes = 0;
  double log_count = 0.0;
  for (int t = 1; t <= horizon; ++t) {
    offsets.push_back(nodes);
    const double level = std::pow(static_cast<double>(shape.indices), t) *
                         std::pow(static_cast<double>(shape.controls), t - 1);
    require(level < 1e7, ErrorCode::kInstanceTooLarge, "controller history space too large");
    nodes += static_cast<std::size_t>(level);
    log_count += level * std::log(static_cast<double>(shape.controls));
  }
  const bool all = log_count <= std::log(static_cast<double>(options.max_exhaustive)) + 1e-9;
  if (exhaustive != nullptr) *exhaustive = all;
  const std::size_t count =
      all ? static_cast<std::size_t>(std::llround(std::exp(log_count))) : options.random_subset;
  const int m = shape.indices;
  const int nu = shape.controls;
  std::vector<TabularPolicy::ControllerFn> out;
  out.reserve(count);
  RandomStream rng(options.seed, 0x67726964ULL);
  for (std::size_t k = 0; k < count; ++k) {
    auto table = std::make_shared<std::vector<int>>(nodes);
    std::size_t rest = k;
    for (std::size_t n = 0; n < nodes; ++n) {
      if (all) {
        (*table)[n] = static_cast<int>(rest % nu);
        rest /= nu;
      } else {
        (*table)[n] = rng.uniform_int(nu);
      }
    }
    out.push_back([table, offsets, m, nu](const PolicyCarry& carry, int s, std::span<double> probs) {
      std::size_t v = 0, mult = 1;
      for (std::size_t k2 = 0; k2 < carry.s.size(); ++k2) {
        v += carry.s[k2] * mult;
        mult *= m;
        v += carry.u[k2] * mult;
        mult *= nu;
      }
      v += s * mult;
      std::fill(probs.begin(), probs.end(), 0.0);
      probs[(*table)[offsets[carry.s.size()] + v]] = 1.0;
    });
  }
  return out;
}

PolicyGrid make_policy_grid(const SystemModel& model, const GridOptions& options) {
  const PolicyShape shape{model.observation_count(), model.indices(), model.control_count()};
  PolicyGrid grid;
  grid.quantizers = memoryless_quantizer_grid(shape);
  grid.controllers = history_controller_grid(shape, model.horizon(), options, &grid.exhaustive);
  return grid;
}

TabularPolicy::ControllerFn mix_controllers(TabularPolicy::ControllerFn a,
                                            TabularPolicy::ControllerFn b, double w) {
  return [a = std::move(a), b = std::move(b), w](const PolicyCarry& carry, int s,
                                                 std::span<double> probs) {
    std::vector<double> pb(probs.size());
    a(carry, s, probs);
    b(carry, s, pb);
    for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = w * probs[i] + (1.0 - w) * pb[i];
  };
}

SearchResult brute_force_policy_search(const SystemModel& model, const StageCost& cost,
                                       double lambda, const PolicyGrid& grid,
                                       EnumerationOptions options) {
  const std::size_t nq = grid.quantizers.size();
  const std::size_t nc = grid.controllers.size();
  require(nq > 0 && nc > 0, ErrorCode::kInvalidInput, "policy grid is empty");
  require(nq * nc <= 10'000'000, ErrorCode::kInstanceTooLarge, "policy grid too large");
  const PolicyShape shape{model.observation_count(), model.indices(), model.control_count()};
  SearchResult out;
  out.exhaustive = grid.exhaustive;
  out.values.assign(nq * nc, 0.0);
  parallel_for(static_cast<int>(nq * nc), [&](int k) {
    const TabularPolicy policy(shape, grid.quantizers[k / nc], grid.controllers[k % nc]);
    out.values[k] = exact_objective(model, policy, cost, lambda, options).value;
  });
  std::size_t best = 0;
  for (std::size_t k = 1; k < out.values.size(); ++k) {
    if (out.values[k] < out.values[best]) best = k;
  }
  out.quantizer = static_cast<int>(best / nc);
  out.controller = static_cast<int>(best % nc);
  out.value = out.values[best];
  return out;
}

namespace {

// The controller hash must skip z: carries hold the observation history too.
std::uint64_t history_hash(std::uint64_t seed, std::uint64_t salt, const PolicyCarry& carry,
                           int current, bool with_z) {
  std::uint64_t h = splitmix64(seed ^ salt);
  auto mix = [&h](std::uint64_t v) { h = splitmix64(h ^ (v + 0x9E3779B97F4A7C15ULL)); };
  if (with_z) {
    for (int v : carry.z) mix(v);
  }
  mix(0xA1);
  for (int v : carry.s) mix(v);
  mix(0xB2);
  for (int v : carry.u) mix(v);
  mix(0xC3);
  mix(static_cast<std::uint64_t>(current));
  return h;
}

void random_simplex(RandomStream& rng, std::span<double> out) {
  double total = 0.0;
  for (double& v : out) {
    v = -std::log(1.0 - rng.uniform());
    total += v;
  }
  for (double& v : out) v /= total;
}

}  // namespace

std::shared_ptr<TabularPolicy> random_history_policy(const PolicyShape& shape,
                                                     std::uint64_t seed) {
  return std::make_shared<TabularPolicy>(
      shape,
      [seed](const PolicyCarry& carry, int z, std::span<double> out) {
        RandomStream rng(history_hash(seed, 0x51, carry, z, true), 0);
        random_simplex(rng, out);
      },
      [seed](const PolicyCarry& carry, int s, std::span<double> out) {
        RandomStream rng(history_hash(seed, 0x52, carry, s, false), 0);
        random_simplex(rng, out);
      });
}

std::size_t outcome_count(const SystemModel& model, bool keep_states) {
  double per_step = static_cast<double>(model.chain().size()) * model.observation_count() *
                    model.indices() * model.control_count();
  if (keep_states && model.kind() == ModelKind::kTabular) per_step *= model.table().states;
  const double total = std::pow(per_step, model.horizon());
  if (total >= static_cast<double>(std::numeric_limits<std::size_t>::max())) {
    return std::numeric_limits<std::size_t>::max();
  }
  return static_cast<std::size_t>(total);
}

SystemModel random_tabular_model(std::uint64_t seed, const InstanceLimits& limits) {
  RandomStream rng(seed, 0x696e7374ULL);
  auto size = [&] {
    return limits.min_alphabet + rng.uniform_int(limits.max_alphabet - limits.min_alphabet + 1);
  };
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const int ny = size(), nx = size(), nz = size(), m = size(), nu = size();
    const int horizon =
        limits.min_horizon + rng.uniform_int(limits.max_horizon - limits.min_horizon + 1);
    double per_step = static_cast<double>(ny) * nz * m * nu * (limits.keep_states ? nx : 1);
    if (std::pow(per_step, horizon) > static_cast<double>(limits.max_outcomes)) continue;

    MarkovChain chain;
    for (int i = 0; i < ny; ++i) chain.values.push_back(i);
    chain.transition.resize(ny * ny);
    for (int i = 0; i < ny; ++i) random_simplex(rng, std::span<double>(chain.transition).subspan(i * ny, ny));
    chain.initial.resize(ny);
    random_simplex(rng, chain.initial);

    TabularParams p;
    p.states = nx;
    p.observations = nz;
    p.kernel_x.resize(static_cast<std::size_t>(nx) * ny * nu * nx);
    for (std::size_t r = 0; r < p.kernel_x.size() / nx; ++r) {
      random_simplex(rng, std::span<double>(p.kernel_x).subspan(r * nx, nx));
    }
    p.kernel_z.resize(static_cast<std::size_t>(nx) * nz);
    for (int x = 0; x < nx; ++x) random_simplex(rng, std::span<double>(p.kernel_z).subspan(x * nz, nz));
    p.initial_x.resize(nx);
    random_simplex(rng, p.initial_x);
    std::vector<double> controls;
    for (int u = 0; u < nu; ++u) controls.push_back(u);
    return SystemModel::tabular(std::move(p), std::move(chain), std::move(controls), m, horizon);
  }
  fail(ErrorCode::kInvalidConfiguration, "instance limits admit no instance within the outcome budget");
}

StageCost random_cost(const SystemModel& model, std::uint64_t seed) {
  RandomStream rng(seed, 0x636f7374ULL);
  const int nx = model.table().states;
  std::vector<double> stage(static_cast<std::size_t>(nx) * model.control_count());
  std::vector<double> terminal(nx);
  for (double& v : stage) v = rng.uniform();
  for (double& v : terminal) v = rng.uniform();
  return StageCost::table(nx, std::move(stage), std::move(terminal));
}

TabularInstance random_instance(std::uint64_t seed, const InstanceLimits& limits) {
  SystemModel model = random_tabular_model(seed, limits);
  StageCost cost = random_cost(model, seed);
  const PolicyShape shape{model.observation_count(), model.indices(), model.control_count()};
  std::shared_ptr<JointPolicy> policy = random_history_policy(shape, splitmix64(seed));
  return TabularInstance{std::move(model), std::move(cost), std::move(policy)};
}

double max_belief_difference(const BeliefState& a, const BeliefState& b) {
  double worst = 0.0;
  for (const auto& [key, w] : a.atoms) {
    const auto it = b.atoms.find(key);
    worst = std::max(worst, std::abs(w - (it == b.atoms.end() ? 0.0 : it->second)));
  }
  for (const auto& [key, w] : b.atoms) {
    if (!a.atoms.contains(key)) worst = std::max(worst, std::abs(w));
  }
  return worst;
}

BeliefAgreement compare_beliefs(const SystemModel& model, const JointPolicy& policy,
                                const StageCost& cost, EnumerationOptions options) {
  options.keep_states = true;
  const EnumeratedJoint j = enumerate_distribution(model, policy, cost, options);
  BeliefAgreement out;
  // Distinct (s^t, u^t) prefixes in first-appearance order, per length.
  const int horizon = j.horizon;
  for (int t = 1; t <= horizon; ++t) {
    std::set<std::pair<std::vector<int>, std::vector<int>>> seen;
    for (std::size_t o = 0; o < j.size(); ++o) {
      if (j.prob[o] <= 0.0) continue;
      std::vector<int> s_hist, u_hist;
      for (int k = 0; k < t - 1; ++k) {
        s_hist.push_back(j.s(o, k));
        u_hist.push_back(j.u(o, k));
      }
      const int s_t = j.s(o, t - 1);
      const int u_t = j.u(o, t - 1);
      std::vector<int> key_s = s_hist;
      key_s.push_back(s_t);
      std::vector<int> key_u = u_hist;
      key_u.push_back(u_t);
      if (!seen.emplace(key_s, key_u).second) continue;
      ++out.histories;

      BeliefState be = init_belief_joint(model);
      for (int k = 0; k < t - 1; ++k) {
        const QuantizerCollection qk = collection_from_policy(
            policy, std::vector<int>(s_hist.begin(), s_hist.begin() + k),
            std::vector<int>(u_hist.begin(), u_hist.begin() + k));
        be = update_phi_e(update_phi_c(be, qk, s_hist[k]), u_hist[k], model, 0.0);
      }
      out.quantizer = std::max(
          out.quantizer,
          max_belief_difference(be, exact_belief(j, BeliefTag::kQuantizer, t, s_hist, u_hist)));
      const QuantizerCollection q = collection_from_policy(policy, s_hist, u_hist);
      const BeliefState bc = update_phi_c(be, q, s_t);
      out.controller = std::max(
          out.controller,
          max_belief_difference(bc, exact_belief(j, BeliefTag::kController, t, key_s, u_hist)));
      if (t < horizon) {
        const BeliefState two = update_phi_e(bc, u_t, model, 0.0);
        const BeliefState joint = update_phi_joint(be, q, s_t, u_t, model, 0.0);
        out.composition = std::max(out.composition, max_belief_difference(two, joint));
      }
      // Every private history compatible with this common information.
      std::set<std::vector<int>> ys;
      for (const auto& [atom, w] : be.atoms) ys.insert(atom.y);
      for (const std::vector<int>& y_hist : ys) {
        double exact = 0.0;
        try {
          exact = exact_information_loss(j, t, s_t, y_hist, s_hist, u_hist);
        } catch (const Error& e) {
          if (e.code() == ErrorCode::kUndefinedRatio) continue;
          throw;
        }
        const double from_belief = information_loss_from_belief(be, q, s_t, y_hist);
        out.information_loss = std::max(out.information_loss, std::abs(exact - from_belief));
      }
    }
  }
  return out;
}

}  // namespace privctrl
