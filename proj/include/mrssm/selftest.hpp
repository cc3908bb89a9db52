// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Property suite shared by the `selftest` CLI command and the acceptance
// tests: fusion/KL oracles, end-to-end gradient checks, objective identities,
// posterior contraction, pose-integration oracles, and missing-modality
// totality on a freshly trained miniature checkpoint.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mrssm {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<CheckResult> run_property_suite(std::uint64_t seed);
bool all_passed(std::span<const CheckResult> results);

}  // namespace mrssm
