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

#ifndef PRIVCTRL_OPTIM_H_
#define PRIVCTRL_OPTIM_H_

#include <span>
#include <vector>

namespace privctrl {

// Descent steps: theta <- theta - lr * direction(grad).
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum);

  void step(std::span<double> theta, std::span<const double> grad);

  double lr() const { return lr_; }
  const std::vector<double>& velocity() const { return velocity_; }
  void set_velocity(std::vector<double> v) { velocity_ = std::move(v); }

 private:
  double lr_;
  double momentum_;
  std::vector<double> velocity_;
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  void step(std::span<double> theta, std::span<const double> grad);

  long steps() const { return t_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

}  // namespace privctrl

#endif  // PRIVCTRL_OPTIM_H_
