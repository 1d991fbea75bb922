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

#ifndef PRIVCTRL_PARALLEL_H_
#define PRIVCTRL_PARALLEL_H_

#include <functional>

namespace privctrl {

// Worker count: PRIVCTRL_THREADS when set, else the hardware concurrency.
int thread_count();

// Runs body(i) for i in [0, n). Indices are split into contiguous chunks, one
// per worker, so any per-index output is independent of scheduling. If a
// body throws, the exception from the lowest failing chunk is rethrown.
void parallel_for(int n, const std::function<void(int)>& body);

}  // namespace privctrl

#endif  // PRIVCTRL_PARALLEL_H_
