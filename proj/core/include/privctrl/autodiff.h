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

#ifndef PRIVCTRL_AUTODIFF_H_
#define PRIVCTRL_AUTODIFF_H_

#include <span>
#include <vector>

#include <Eigen/Core>

namespace privctrl {

// A dense parameter matrix stored column-major inside a flat parameter vector.
struct ParamBlock {
  int offset = 0;
  int rows = 0;
  int cols = 0;
  int size() const { return rows * cols; }
};

class ParamLayout {
 public:
  ParamBlock add(int rows, int cols = 1);
  int size() const { return size_; }

 private:
  int size_ = 0;
};

// Reverse-mode tape over vector-valued nodes. The same tape is used for plain
// forward evaluation (record, read values, clear) and for gradient replay, so
// both paths execute identical floating-point operations.
class Tape {
 public:
  using Var = int;

  explicit Tape(std::span<const double> theta);

  Var constant(const Eigen::VectorXd& value);
  // b + sum_k W[:, cols[k]]; entries of cols that are negative are skipped.
  Var embed(ParamBlock w, std::span<const int> cols, ParamBlock b);
  Var bias(ParamBlock b);
  // base + W x.
  Var affine(ParamBlock w, Var x, Var base);
  Var add_column(Var base, ParamBlock w, int col);
  Var sigmoid(Var x);
  Var tanh(Var x);
  // h + g * (c - h), elementwise.
  Var blend(Var h, Var g, Var c);

  const Eigen::VectorXd& value(Var v) const { return nodes_[v].value; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Adds an upstream gradient to node v.
  void seed(Var v, const Eigen::VectorXd& grad);
  // Propagates seeded gradients and accumulates d/dtheta into grad_theta.
  void backward(std::span<double> grad_theta);

  void clear();

 private:
  enum class Op { kConstant, kEmbed, kAffine, kAddColumn, kSigmoid, kTanh, kBlend };

  struct Node {
    Op op = Op::kConstant;
    int a = -1;
    int b = -1;
    int c = -1;
    ParamBlock p1;
    ParamBlock p2;
    int cols_begin = 0;
    int cols_count = 0;
    Eigen::VectorXd value;
    Eigen::VectorXd grad;
  };

  Var push(Node node);
  Eigen::VectorXd& grad_of(int v);

  std::span<const double> theta_;
  std::vector<Node> nodes_;
  std::vector<int> cols_;
};

// Numerically stable log-softmax.
Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits);
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

}  // namespace privctrl

#endif  // PRIVCTRL_AUTODIFF_H_
