// Copyright 2026 The KVAF Toolkit Authors.
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

#pragma once

#include <cstddef>
#include <functional>

namespace kvaf {

/// Worker count: `requested` if nonzero, else KVAF_THREADS if set, else the
/// hardware concurrency. Never below 1.
unsigned worker_count(unsigned requested = 0);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index runs
/// exactly once; callers write results into per-index slots so the outcome
/// is independent of scheduling. The first exception is rethrown.
void parallel_for(size_t n, unsigned workers, const std::function<void(size_t)>& fn);

}  // namespace kvaf
