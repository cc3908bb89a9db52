// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mrssm/kernels/ref_kernels.hpp"
#include "kernels_internal.hpp"

namespace mrssm::kernels {

namespace {

void s_matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  ref::matmul_nn<float>(a, b, c, m, k, n, acc);
}
void s_matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  ref::matmul_tn<float>(a, b, c, m, k, n, acc);
}
void s_matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  ref::matmul_nt<float>(a, b, c, m, k, n, acc);
}
void s_vadd(const float* a, const float* b, float* y, std::size_t n) { ref::vadd(a, b, y, n); }
void s_vsub(const float* a, const float* b, float* y, std::size_t n) { ref::vsub(a, b, y, n); }
void s_vmul(const float* a, const float* b, float* y, std::size_t n) { ref::vmul(a, b, y, n); }
void s_vdiv(const float* a, const float* b, float* y, std::size_t n) { ref::vdiv(a, b, y, n); }
void s_vscale(const float* x, float alpha, float* y, std::size_t n) { ref::vscale(x, alpha, y, n); }
void s_vaxpy(float alpha, const float* x, float* y, std::size_t n) { ref::vaxpy(alpha, x, y, n); }
void s_vfma_acc(const float* a, const float* b, float* y, std::size_t n) { ref::vfma_acc(a, b, y, n); }
double s_vsum(const float* x, std::size_t n) { return ref::vsum(x, n); }
void s_vtanh(const float* x, float* y, std::size_t n) { ref::vtanh(x, y, n); }
void s_vsigmoid(const float* x, float* y, std::size_t n) { ref::vsigmoid(x, y, n); }
void s_vexp(const float* x, float* y, std::size_t n) { ref::vexp(x, y, n); }
void s_vlog(const float* x, float* y, std::size_t n) { ref::vlog(x, y, n); }
void s_vsoftplus(const float* x, float* y, std::size_t n) { ref::vsoftplus(x, y, n); }
void s_vsqrt(const float* x, float* y, std::size_t n) { ref::vsqrt(x, y, n); }

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table = {
      s_matmul_nn, s_matmul_tn, s_matmul_nt,
      s_vadd,      s_vsub,      s_vmul,      s_vdiv, s_vscale, s_vaxpy, s_vfma_acc,
      s_vsum,      s_vtanh,     s_vsigmoid,  s_vexp, s_vlog,   s_vsoftplus, s_vsqrt,
  };
  return table;
}

}  // namespace mrssm::kernels
