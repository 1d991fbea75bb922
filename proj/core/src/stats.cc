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

#include "privctrl/stats.h"

#include <cmath>

namespace privctrl {

MeanSe mean_se(std::span<const double> values) {
  RunningStats stats;
  for (double v : values) stats.add(v);
  return stats.summary();
}

void RunningStats::add(double x) {
  ++n_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(n_);
  m2_ += delta * (x - mean_);
}

double RunningStats::variance() const {
  return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0;
}

MeanSe RunningStats::summary() const {
  MeanSe out;
  out.n = n_;
  out.mean = mean_;
  out.se = n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0;
  return out;
}

}  // namespace privctrl
