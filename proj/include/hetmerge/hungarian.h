// Copyright 2026 The hetmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "hetmerge/tensor.h"

namespace hetmerge {

// Maximum-weight perfect matching on a square weight matrix (Kuhn-Munkres
// with potentials, O(n^3)). Returns the column assigned to each row.
std::vector<std::size_t> max_weight_assignment(const Matrix& weights);

}  // namespace hetmerge
