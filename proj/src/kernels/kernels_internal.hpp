// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace mrssm::kernels {

// One dispatch slot per kernel with a SIMD variant.
struct KernelTable {
  void (*matmul_nn)(const float*, const float*, float*, int, int, int, bool);
  void (*matmul_tn)(const float*, const float*, float*, int, int, int, bool);
  void (*matmul_nt)(const float*, const float*, float*, int, int, int, bool);
  void (*vadd)(const float*, const float*, float*, std::size_t);
  void (*vsub)(const float*, const float*, float*, std::size_t);
  void (*vmul)(const float*, const float*, float*, std::size_t);
  void (*vdiv)(const float*, const float*, float*, std::size_t);
  void (*vscale)(const float*, float, float*, std::size_t);
  void (*vaxpy)(float, const float*, float*, std::size_t);
  void (*vfma_acc)(const float*, const float*, float*, std::size_t);
  double (*vsum)(const float*, std::size_t);
  void (*vtanh)(const float*, float*, std::size_t);
  void (*vsigmoid)(const float*, float*, std::size_t);
  void (*vexp)(const float*, float*, std::size_t);
  void (*vlog)(const float*, float*, std::size_t);
  void (*vsoftplus)(const float*, float*, std::size_t);
  void (*vsqrt)(const float*, float*, std::size_t);
};

const KernelTable& scalar_table();

#if defined(MRSSM_HAVE_AVX2_TU)
const KernelTable& avx2_table();
#endif

}  // namespace mrssm::kernels
