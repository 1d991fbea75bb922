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

#include "privctrl/optim.h"

#include <cmath>

#include "privctrl/error.h"

namespace privctrl {

SgdMomentum::SgdMomentum(double lr, double momentum)
    : lr_(lr), momentum_(momentum) {
  require(lr > 0.0, ErrorCode::kInvalidConfiguration, "learning rate must be > 0");
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::kInvalidConfiguration,
          "momentum must lie in [0, 1)");
}

void SgdMomentum::step(std::span<double> theta, std::span<const double> grad) {
  require(theta.size() == grad.size(), ErrorCode::kInvalidInput,
          "gradient length mismatch");
  if (velocity_.size() != theta.size()) velocity_.assign(theta.size(), 0.0);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    velocity_[i] = momentum_ * velocity_[i] + grad[i];
    theta[i] -= lr_ * velocity_[i];
  }
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  require(lr > 0.0, ErrorCode::kInvalidConfiguration, "learning rate must be > 0");
}

void Adam::step(std::span<double> theta, std::span<const double> grad) {
  require(theta.size() == grad.size(), ErrorCode::kInvalidInput,
          "gradient length mismatch");
  if (m_.size() != theta.size()) {
    m_.assign(theta.size(), 0.0);
    v_.assign(theta.size(), 0.0);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    theta[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

}  // namespace privctrl
