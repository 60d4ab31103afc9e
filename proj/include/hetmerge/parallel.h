// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace hetmerge {

// Worker count: HETMERGE_THREADS if set to a positive integer, otherwise the
// hardware concurrency.
std::size_t thread_budget();

// Runs body(i) for i in [0, n). Each index is visited exactly once; callers
// write results to slot i so the outcome does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace hetmerge
