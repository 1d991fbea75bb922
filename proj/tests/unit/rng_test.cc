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

#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "privctrl/error.h"
#include "privctrl/rng.h"
#include "privctrl/stats.h"

namespace privctrl {
namespace {

TEST(RandomStreamTest, SameSeedAndStreamRepeat) {
  RandomStream a(42, 3), b(42, 3);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
}

TEST(RandomStreamTest, StreamsDiffer) {
  RandomStream a(42, 0), b(42, 1);
  int equal = 0;
  for (int i = 0; i < 1000; ++i) equal += a() == b();
  EXPECT_EQ(equal, 0);
}

TEST(RandomStreamTest, SplitIsAFunctionOfParentAndChild) {
  const RandomStream root(7, 5);
  RandomStream a = root.split(9), b = root.split(9), c = root.split(10);
  EXPECT_EQ(a(), b());
  EXPECT_NE(a.stream_id(), c.stream_id());
}

TEST(RandomStreamTest, UniformInUnitInterval) {
  RandomStream r(1);
  RunningStats st;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    st.add(u);
  }
  EXPECT_NEAR(st.mean(), 0.5, 5 * std::sqrt(1.0 / 12 / 100000));
  EXPECT_NEAR(st.variance(), 1.0 / 12, 2e-3);
}

TEST(RandomStreamTest, NormalMoments) {
  RandomStream r(2);
  RunningStats st;
  for (int i = 0; i < 200000; ++i) st.add(r.normal());
  EXPECT_NEAR(st.mean(), 0.0, 5.0 / std::sqrt(200000.0));
  EXPECT_NEAR(st.variance(), 1.0, 0.02);
}

TEST(RandomStreamTest, CategoricalFrequencies) {
  RandomStream r(3);
  const std::vector<double> w = {1.0, 0.0, 3.0};
  std::vector<int> counts(3, 0);
  const int n = 40000;
  for (int i = 0; i < n; ++i) ++counts[r.categorical(w)];
  EXPECT_EQ(counts[1], 0);
  EXPECT_NEAR(counts[0] / double(n), 0.25, 5 * std::sqrt(0.25 * 0.75 / n));
}

TEST(RandomStreamTest, CategoricalRejectsZeroWeights) {
  RandomStream r(3);
  const std::vector<double> w = {0.0, 0.0};
  EXPECT_THROW(r.categorical(w), Error);
}

TEST(RandomStreamTest, UniformIntCoversRange) {
  RandomStream r(4);
  std::set<int> seen;
  for (int i = 0; i < 1000; ++i) {
    const int v = r.uniform_int(7);
    ASSERT_GE(v, 0);
    ASSERT_LT(v, 7);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(DeriveSeedTest, LabelsSeparateSeeds) {
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
}

TEST(StatsTest, MeanSeOfConstantIsExact) {
  const std::vector<double> v(10, 2.5);
  const MeanSe m = mean_se(v);
  EXPECT_EQ(m.mean, 2.5);
  EXPECT_EQ(m.se, 0.0);
  EXPECT_EQ(m.n, 10u);
}

TEST(StatsTest, StandardErrorScalesWithSampleSize) {
  RandomStream r(5);
  std::vector<double> small, large;
  for (int i = 0; i < 100; ++i) small.push_back(r.normal());
  for (int i = 0; i < 400; ++i) large.push_back(r.normal());
  const double ratio = mean_se(small).se / mean_se(large).se;
  EXPECT_NEAR(ratio, 2.0, 0.6);
}

}  // namespace
}  // namespace privctrl
