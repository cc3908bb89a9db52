// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <string>

namespace mrssm {

std::string shape_str(std::span<const int> shape);

// Throws std::invalid_argument when the condition fails.
inline void check_arg(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Runs fn(0..n-1) on a small thread pool. Work items must be independent.
// max_threads <= 0 uses the hardware concurrency.
void parallel_for(int n, const std::function<void(int)>& fn, int max_threads = 0);

}  // namespace mrssm
