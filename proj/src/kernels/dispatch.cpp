// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mrssm/kernels/kernels.hpp"

#include <atomic>
#include <stdexcept>

#include "kernels_internal.hpp"

namespace mrssm::kernels {

namespace {

bool detect_avx2() {
#if defined(MRSSM_HAVE_AVX2_TU) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::atomic<const KernelTable*> g_table{nullptr};
std::atomic<Backend> g_backend{Backend::kScalar};

const KernelTable* table_for(Backend b) {
#if defined(MRSSM_HAVE_AVX2_TU)
  if (b == Backend::kAvx2) return &avx2_table();
#endif
  (void)b;
  return &scalar_table();
}

const KernelTable& table() {
  const KernelTable* t = g_table.load(std::memory_order_acquire);
  if (t) return *t;
  const Backend b = detect_avx2() ? Backend::kAvx2 : Backend::kScalar;
  g_backend.store(b, std::memory_order_relaxed);
  t = table_for(b);
  g_table.store(t, std::memory_order_release);
  return *t;
}

}  // namespace

bool cpu_has_avx2() { return detect_avx2(); }

Backend active_backend() {
  table();  // force detection
  return g_backend.load(std::memory_order_relaxed);
}

void set_backend(Backend b) {
  if (b == Backend::kAvx2 && !detect_avx2()) {
    throw std::invalid_argument("kernels: AVX2 backend requested but not available");
  }
  g_backend.store(b, std::memory_order_relaxed);
  g_table.store(table_for(b), std::memory_order_release);
}

const char* backend_name(Backend b) {
  return b == Backend::kAvx2 ? "avx2" : "scalar";
}

void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  table().matmul_nn(a, b, c, m, k, n, acc);
}
void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  table().matmul_tn(a, b, c, m, k, n, acc);
}
void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  table().matmul_nt(a, b, c, m, k, n, acc);
}
void vadd(const float* a, const float* b, float* y, std::size_t n) { table().vadd(a, b, y, n); }
void vsub(const float* a, const float* b, float* y, std::size_t n) { table().vsub(a, b, y, n); }
void vmul(const float* a, const float* b, float* y, std::size_t n) { table().vmul(a, b, y, n); }
void vdiv(const float* a, const float* b, float* y, std::size_t n) { table().vdiv(a, b, y, n); }
void vscale(const float* x, float alpha, float* y, std::size_t n) { table().vscale(x, alpha, y, n); }
void vaxpy(float alpha, const float* x, float* y, std::size_t n) { table().vaxpy(alpha, x, y, n); }
void vfma_acc(const float* a, const float* b, float* y, std::size_t n) { table().vfma_acc(a, b, y, n); }
double vsum(const float* x, std::size_t n) { return table().vsum(x, n); }
void vtanh(const float* x, float* y, std::size_t n) { table().vtanh(x, y, n); }
void vsigmoid(const float* x, float* y, std::size_t n) { table().vsigmoid(x, y, n); }
void vexp(const float* x, float* y, std::size_t n) { table().vexp(x, y, n); }
void vlog(const float* x, float* y, std::size_t n) { table().vlog(x, y, n); }
void vsoftplus(const float* x, float* y, std::size_t n) { table().vsoftplus(x, y, n); }
void vsqrt(const float* x, float* y, std::size_t n) { table().vsqrt(x, y, n); }

}  // namespace mrssm::kernels
