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

#ifndef PRIVCTRL_RNG_H_
#define PRIVCTRL_RNG_H_

#include <array>
#include <cstdint>
#include <limits>
#include <span>

namespace privctrl {

// Counter-based random stream (Philox4x32-10). A stream is identified by a
// (seed, stream id) pair; split() derives statistically independent children
// without advancing the parent, so batches of rollouts can be generated in any
// order and still reproduce the same draws.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(std::uint64_t seed, std::uint64_t stream = 0);

  RandomStream split(std::uint64_t child) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }

  result_type operator()();

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double normal();
  bool bernoulli(double p);
  int uniform_int(int n);
  // Inverse-CDF draw from unnormalized nonnegative weights.
  int categorical(std::span<const double> weights);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
};

std::uint64_t splitmix64(std::uint64_t x);

// Deterministic seed derivation from a master seed and a label.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t label);

}  // namespace privctrl

#endif  // PRIVCTRL_RNG_H_
