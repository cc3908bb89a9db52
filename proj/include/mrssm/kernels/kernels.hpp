// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense f32 compute kernels behind the autodiff tape. Every kernel has a
// portable scalar reference implementation; the hot ones additionally have an
// AVX2+FMA variant selected at runtime. The two variants are equivalence
// tested against each other.
#pragma once

#include <cstddef>

namespace mrssm::kernels {

enum class Backend { kScalar, kAvx2 };

bool cpu_has_avx2();
Backend active_backend();
// Forces a backend (config or tests). Throws std::invalid_argument if the
// CPU cannot run it.
void set_backend(Backend b);
const char* backend_name(Backend b);

// Row-major GEMM variants. `acc` adds into c instead of overwriting.
// matmul_nn: C(m,n) = A(m,k) * B(k,n)
// matmul_tn: C(m,n) = A'(k,m)^T * B(k,n)   (a stored as (k,m))
// matmul_nt: C(m,n) = A(m,k) * B'(n,k)^T   (b stored as (n,k))
void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool acc = false);
void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool acc = false);
void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool acc = false);

void vadd(const float* a, const float* b, float* y, std::size_t n);
void vsub(const float* a, const float* b, float* y, std::size_t n);
void vmul(const float* a, const float* b, float* y, std::size_t n);
void vdiv(const float* a, const float* b, float* y, std::size_t n);
void vscale(const float* x, float alpha, float* y, std::size_t n);
void vaxpy(float alpha, const float* x, float* y, std::size_t n);      // y += alpha * x
void vfma_acc(const float* a, const float* b, float* y, std::size_t n);  // y += a ⊙ b
double vsum(const float* x, std::size_t n);  // 64-bit accumulation

void vtanh(const float* x, float* y, std::size_t n);
void vsigmoid(const float* x, float* y, std::size_t n);
void vexp(const float* x, float* y, std::size_t n);
void vlog(const float* x, float* y, std::size_t n);
void vsoftplus(const float* x, float* y, std::size_t n);
void vsqrt(const float* x, float* y, std::size_t n);

}  // namespace mrssm::kernels
