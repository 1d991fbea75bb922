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

#include "privctrl/autodiff.h"

#include <cmath>

#include "privctrl/error.h"

namespace privctrl {

ParamBlock ParamLayout::add(int rows, int cols) {
  ParamBlock block{size_, rows, cols};
  size_ += rows * cols;
  return block;
}

Tape::Tape(std::span<const double> theta) : theta_(theta) {}

Tape::Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<Var>(nodes_.size() - 1);
}

void Tape::clear() {
  nodes_.clear();
  cols_.clear();
}

Tape::Var Tape::constant(const Eigen::VectorXd& value) {
  Node node;
  node.op = Op::kConstant;
  node.value = value;
  return push(std::move(node));
}

Tape::Var Tape::embed(ParamBlock w, std::span<const int> cols, ParamBlock b) {
  require(b.size() == w.rows, ErrorCode::kInternalInconsistency,
          "embed bias height mismatch");
  Node node;
  node.op = Op::kEmbed;
  node.p1 = w;
  node.p2 = b;
  node.cols_begin = static_cast<int>(cols_.size());
  node.value = Eigen::Map<const Eigen::VectorXd>(theta_.data() + b.offset, b.rows);
  for (int c : cols) {
    if (c < 0) continue;
    require(c < w.cols, ErrorCode::kInvalidInput, "embed column out of range");
    const double* col = theta_.data() + w.offset + static_cast<std::ptrdiff_t>(c) * w.rows;
    for (int i = 0; i < w.rows; ++i) node.value[i] += col[i];
    cols_.push_back(c);
  }
  node.cols_count = static_cast<int>(cols_.size()) - node.cols_begin;
  return push(std::move(node));
}

Tape::Var Tape::bias(ParamBlock b) {
  return embed(ParamBlock{b.offset, b.size(), 0}, {}, b);
}

Tape::Var Tape::affine(ParamBlock w, Var x, Var base) {
  const Eigen::VectorXd& xv = nodes_[x].value;
  require(xv.size() == w.cols, ErrorCode::kInvalidInput, "affine width mismatch");
  Node node;
  node.op = Op::kAffine;
  node.a = x;
  node.b = base;
  node.p1 = w;
  node.value = base >= 0 ? nodes_[base].value : Eigen::VectorXd::Zero(w.rows);
  require(node.value.size() == w.rows, ErrorCode::kInvalidInput,
          "affine base height mismatch");
  const double* wp = theta_.data() + w.offset;
  for (int j = 0; j < w.cols; ++j) {
    const double xj = xv[j];
    const double* col = wp + static_cast<std::ptrdiff_t>(j) * w.rows;
    for (int i = 0; i < w.rows; ++i) node.value[i] += col[i] * xj;
  }
  return push(std::move(node));
}

Tape::Var Tape::add_column(Var base, ParamBlock w, int col) {
  require(col >= 0 && col < w.cols, ErrorCode::kInvalidInput,
          "add_column index out of range");
  Node node;
  node.op = Op::kAddColumn;
  node.a = base;
  node.p1 = w;
  node.c = col;
  node.value = nodes_[base].value;
  const double* cp = theta_.data() + w.offset + static_cast<std::ptrdiff_t>(col) * w.rows;
  for (int i = 0; i < w.rows; ++i) node.value[i] += cp[i];
  return push(std::move(node));
}

Tape::Var Tape::sigmoid(Var x) {
  Node node;
  node.op = Op::kSigmoid;
  node.a = x;
  const Eigen::VectorXd& xv = nodes_[x].value;
  node.value.resize(xv.size());
  for (Eigen::Index i = 0; i < xv.size(); ++i) {
    node.value[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  }
  return push(std::move(node));
}

Tape::Var Tape::tanh(Var x) {
  Node node;
  node.op = Op::kTanh;
  node.a = x;
  const Eigen::VectorXd& xv = nodes_[x].value;
  node.value.resize(xv.size());
  for (Eigen::Index i = 0; i < xv.size(); ++i) node.value[i] = std::tanh(xv[i]);
  return push(std::move(node));
}

Tape::Var Tape::blend(Var h, Var g, Var c) {
  Node node;
  node.op = Op::kBlend;
  node.a = h;
  node.b = g;
  node.c = c;
  const Eigen::VectorXd& hv = nodes_[h].value;
  const Eigen::VectorXd& gv = nodes_[g].value;
  const Eigen::VectorXd& cv = nodes_[c].value;
  node.value.resize(hv.size());
  for (Eigen::Index i = 0; i < hv.size(); ++i) {
    node.value[i] = hv[i] + gv[i] * (cv[i] - hv[i]);
  }
  return push(std::move(node));
}

Eigen::VectorXd& Tape::grad_of(int v) {
  Node& node = nodes_[v];
  if (node.grad.size() == 0) node.grad = Eigen::VectorXd::Zero(node.value.size());
  return node.grad;
}

void Tape::seed(Var v, const Eigen::VectorXd& grad) {
  require(grad.size() == nodes_[v].value.size(), ErrorCode::kInvalidInput,
          "seed gradient size mismatch");
  grad_of(v) += grad;
}

void Tape::backward(std::span<double> grad_theta) {
  require(grad_theta.size() == theta_.size(), ErrorCode::kInvalidInput,
          "gradient buffer size mismatch");
  double* gt = grad_theta.data();
  for (int v = size() - 1; v >= 0; --v) {
    if (nodes_[v].grad.size() == 0) continue;
    // grad_of() below only touches earlier nodes; nodes_ is not resized.
    const Node& node = nodes_[v];
    const Eigen::VectorXd& g = node.grad;
    switch (node.op) {
      case Op::kConstant:
        break;
      case Op::kEmbed: {
        for (int i = 0; i < node.p2.rows; ++i) gt[node.p2.offset + i] += g[i];
        for (int k = 0; k < node.cols_count; ++k) {
          const int c = cols_[node.cols_begin + k];
          double* col = gt + node.p1.offset + static_cast<std::ptrdiff_t>(c) * node.p1.rows;
          for (int i = 0; i < node.p1.rows; ++i) col[i] += g[i];
        }
        break;
      }
      case Op::kAffine: {
        const ParamBlock w = node.p1;
        const Eigen::VectorXd& xv = nodes_[node.a].value;
        Eigen::VectorXd& gx = grad_of(node.a);
        const double* wp = theta_.data() + w.offset;
        for (int j = 0; j < w.cols; ++j) {
          const double* col = wp + static_cast<std::ptrdiff_t>(j) * w.rows;
          double* gcol = gt + w.offset + static_cast<std::ptrdiff_t>(j) * w.rows;
          double acc = 0.0;
          for (int i = 0; i < w.rows; ++i) {
            gcol[i] += g[i] * xv[j];
            acc += col[i] * g[i];
          }
          gx[j] += acc;
        }
        if (node.b >= 0) grad_of(node.b) += g;
        break;
      }
      case Op::kAddColumn: {
        double* col = gt + node.p1.offset + static_cast<std::ptrdiff_t>(node.c) * node.p1.rows;
        for (int i = 0; i < node.p1.rows; ++i) col[i] += g[i];
        grad_of(node.a) += g;
        break;
      }
      case Op::kSigmoid: {
        Eigen::VectorXd& gx = grad_of(node.a);
        for (Eigen::Index i = 0; i < g.size(); ++i) {
          const double y = node.value[i];
          gx[i] += g[i] * y * (1.0 - y);
        }
        break;
      }
      case Op::kTanh: {
        Eigen::VectorXd& gx = grad_of(node.a);
        for (Eigen::Index i = 0; i < g.size(); ++i) {
          const double y = node.value[i];
          gx[i] += g[i] * (1.0 - y * y);
        }
        break;
      }
      case Op::kBlend: {
        const Eigen::VectorXd& hv = nodes_[node.a].value;
        const Eigen::VectorXd& gv = nodes_[node.b].value;
        const Eigen::VectorXd& cv = nodes_[node.c].value;
        {
          Eigen::VectorXd& gh = grad_of(node.a);
          for (Eigen::Index i = 0; i < g.size(); ++i) gh[i] += g[i] * (1.0 - gv[i]);
        }
        {
          Eigen::VectorXd& gg = grad_of(node.b);
          for (Eigen::Index i = 0; i < g.size(); ++i) gg[i] += g[i] * (cv[i] - hv[i]);
        }
        {
          Eigen::VectorXd& gc = grad_of(node.c);
          for (Eigen::Index i = 0; i < g.size(); ++i) gc[i] += g[i] * gv[i];
        }
        break;
      }
    }
  }
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) total += std::exp(logits[i] - m);
  return ((logits.array() - m) - std::log(total)).matrix();
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

}  // namespace privctrl
