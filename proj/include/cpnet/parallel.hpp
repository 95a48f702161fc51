// Copyright 2026 The cpnet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <functional>

namespace cpnet {

// Worker cap for intra-op parallelism: CPNET_THREADS when set and positive,
// otherwise the hardware concurrency. set_max_threads overrides both.
int max_threads();
void set_max_threads(int threads);

// Runs fn(i) for i in [0, n). Each index is handled by exactly one worker, so
// callers that write disjoint outputs per index stay deterministic regardless
// of the thread count.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace cpnet
