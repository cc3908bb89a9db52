// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
//
// AVX2+FMA kernel variants. exp/log use the classic Cephes single-precision
// polynomials (as popularized by sse_mathfun); accuracy is a few float ulps,
// which the kernel equivalence tests pin down against the scalar reference.
#include <immintrin.h>

#include <cstddef>
#include <cstring>

#include "kernels_internal.hpp"

namespace mrssm::kernels {

namespace {

inline float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, sums);
  sums = _mm_add_ss(sums, sh);
  return _mm_cvtss_f32(sums);
}

inline double hsum4d(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

// exp kernel; inputs are clamped to a range where 2^n stays normal.
inline __m256 exp256(__m256 x) {
  const __m256 hi = _mm256_set1_ps(88.0f);
  const __m256 lo = _mm256_set1_ps(-87.3365478515625f);
  const __m256 log2ef = _mm256_set1_ps(1.44269504088896341f);
  const __m256 c1 = _mm256_set1_ps(0.693359375f);
  const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);
  const __m256 one = _mm256_set1_ps(1.0f);

  x = _mm256_min_ps(_mm256_max_ps(x, lo), hi);

  __m256 fx = _mm256_fmadd_ps(x, log2ef, _mm256_set1_ps(0.5f));
  fx = _mm256_floor_ps(fx);

  x = _mm256_fnmadd_ps(fx, c1, x);
  x = _mm256_fnmadd_ps(fx, c2, x);

  const __m256 z = _mm256_mul_ps(x, x);
  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
  y = _mm256_fmadd_ps(y, z, x);
  y = _mm256_add_ps(y, one);

  __m256i n = _mm256_cvttps_epi32(fx);
  n = _mm256_add_epi32(n, _mm256_set1_epi32(0x7f));
  n = _mm256_slli_epi32(n, 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(n));
}

// log kernel; x <= 0 yields NaN.
inline __m256 log256(__m256 x) {
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 invalid = _mm256_cmp_ps(x, _mm256_setzero_ps(), _CMP_LE_OS);

  x = _mm256_max_ps(x, _mm256_castsi256_ps(_mm256_set1_epi32(0x00800000)));
  __m256i imm = _mm256_srli_epi32(_mm256_castps_si256(x), 23);

  x = _mm256_and_ps(x, _mm256_castsi256_ps(_mm256_set1_epi32(~0x7f800000)));
  x = _mm256_or_ps(x, _mm256_set1_ps(0.5f));

  imm = _mm256_sub_epi32(imm, _mm256_set1_epi32(0x7f));
  __m256 e = _mm256_cvtepi32_ps(imm);
  e = _mm256_add_ps(e, one);

  const __m256 mask = _mm256_cmp_ps(x, _mm256_set1_ps(0.707106781186547524f), _CMP_LT_OS);
  const __m256 tmp = _mm256_and_ps(x, mask);
  x = _mm256_sub_ps(x, one);
  e = _mm256_sub_ps(e, _mm256_and_ps(one, mask));
  x = _mm256_add_ps(x, tmp);

  const __m256 z = _mm256_mul_ps(x, x);
  __m256 y = _mm256_set1_ps(7.0376836292e-2f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(-1.1514610310e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.1676998740e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(-1.2420140846e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.4249322787e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(-1.6668057665e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(2.0000714765e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(-2.4999993993e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(3.3333331174e-1f));
  y = _mm256_mul_ps(y, x);
  y = _mm256_mul_ps(y, z);

  y = _mm256_fmadd_ps(e, _mm256_set1_ps(-2.12194440e-4f), y);
  y = _mm256_fnmadd_ps(z, _mm256_set1_ps(0.5f), y);
  x = _mm256_add_ps(x, y);
  x = _mm256_fmadd_ps(e, _mm256_set1_ps(0.693359375f), x);
  return _mm256_or_ps(x, invalid);  // NaN for x <= 0
}

void a_matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  const int n8 = n & ~7;
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<std::size_t>(i) * n;
    if (!acc) std::memset(crow, 0, sizeof(float) * static_cast<std::size_t>(n));
    for (int kk = 0; kk < k; ++kk) {
      const float as = a[static_cast<std::size_t>(i) * k + kk];
      const __m256 av = _mm256_set1_ps(as);
      const float* brow = b + static_cast<std::size_t>(kk) * n;
      int j = 0;
      for (; j < n8; j += 8) {
        __m256 cv = _mm256_loadu_ps(crow + j);
        cv = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow + j), cv);
        _mm256_storeu_ps(crow + j, cv);
      }
      for (; j < n; ++j) crow[j] += as * brow[j];
    }
  }
}

void a_matmul_tn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  const int n8 = n & ~7;
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<std::size_t>(i) * n;
    if (!acc) std::memset(crow, 0, sizeof(float) * static_cast<std::size_t>(n));
    for (int kk = 0; kk < k; ++kk) {
      const float as = a[static_cast<std::size_t>(kk) * m + i];
      const __m256 av = _mm256_set1_ps(as);
      const float* brow = b + static_cast<std::size_t>(kk) * n;
      int j = 0;
      for (; j < n8; j += 8) {
        __m256 cv = _mm256_loadu_ps(crow + j);
        cv = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow + j), cv);
        _mm256_storeu_ps(crow + j, cv);
      }
      for (; j < n; ++j) crow[j] += as * brow[j];
    }
  }
}

void a_matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  const int k8 = k & ~7;
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::size_t>(i) * k;
    float* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* brow = b + static_cast<std::size_t>(j) * k;
      __m256 accv = _mm256_setzero_ps();
      int kk = 0;
      for (; kk < k8; kk += 8) {
        accv = _mm256_fmadd_ps(_mm256_loadu_ps(arow + kk), _mm256_loadu_ps(brow + kk), accv);
      }
      float s = hsum8(accv);
      for (; kk < k; ++kk) s += arow[kk] * brow[kk];
      crow[j] = acc ? crow[j] + s : s;
    }
  }
}

void a_vadd(const float* a, const float* b, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

void a_vsub(const float* a, const float* b, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) y[i] = a[i] - b[i];
}

void a_vmul(const float* a, const float* b, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void a_vdiv(const float* a, const float* b, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_div_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) y[i] = a[i] / b[i];
}

void a_vscale(const float* x, float alpha, float* y, std::size_t n) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  }
  for (; i < n; ++i) y[i] = alpha * x[i];
}

void a_vaxpy(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 yv = _mm256_loadu_ps(y + i);
    yv = _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), yv);
    _mm256_storeu_ps(y + i, yv);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void a_vfma_acc(const float* a, const float* b, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 yv = _mm256_loadu_ps(y + i);
    yv = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), yv);
    _mm256_storeu_ps(y + i, yv);
  }
  for (; i < n; ++i) y[i] += a[i] * b[i];
}

double a_vsum(const float* x, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    acc0 = _mm256_add_pd(acc0, _mm256_cvtps_pd(_mm256_castps256_ps128(v)));
    acc1 = _mm256_add_pd(acc1, _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1)));
  }
  double s = hsum4d(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += static_cast<double>(x[i]);
  return s;
}

void a_vexp(const float* x, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, exp256(_mm256_loadu_ps(x + i)));
  if (i < n) {
    float buf[8] = {0};
    std::memcpy(buf, x + i, sizeof(float) * (n - i));
    __m256 r = exp256(_mm256_loadu_ps(buf));
    _mm256_storeu_ps(buf, r);
    std::memcpy(y + i, buf, sizeof(float) * (n - i));
  }
}

void a_vlog(const float* x, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, log256(_mm256_loadu_ps(x + i)));
  if (i < n) {
    float buf[8];
    for (int j = 0; j < 8; ++j) buf[j] = 1.0f;
    std::memcpy(buf, x + i, sizeof(float) * (n - i));
    __m256 r = log256(_mm256_loadu_ps(buf));
    _mm256_storeu_ps(buf, r);
    std::memcpy(y + i, buf, sizeof(float) * (n - i));
  }
}

// tanh(x) = 1 - 2 / (exp(2x) + 1)
inline __m256 tanh256(__m256 x) {
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 two = _mm256_set1_ps(2.0f);
  const __m256 e = exp256(_mm256_mul_ps(two, x));
  return _mm256_sub_ps(one, _mm256_div_ps(two, _mm256_add_ps(e, one)));
}

void a_vtanh(const float* x, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, tanh256(_mm256_loadu_ps(x + i)));
  if (i < n) {
    float buf[8] = {0};
    std::memcpy(buf, x + i, sizeof(float) * (n - i));
    __m256 r = tanh256(_mm256_loadu_ps(buf));
    _mm256_storeu_ps(buf, r);
    std::memcpy(y + i, buf, sizeof(float) * (n - i));
  }
}

inline __m256 sigmoid256(__m256 x) {
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 e = exp256(_mm256_sub_ps(_mm256_setzero_ps(), x));
  return _mm256_div_ps(one, _mm256_add_ps(one, e));
}

void a_vsigmoid(const float* x, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, sigmoid256(_mm256_loadu_ps(x + i)));
  if (i < n) {
    float buf[8] = {0};
    std::memcpy(buf, x + i, sizeof(float) * (n - i));
    __m256 r = sigmoid256(_mm256_loadu_ps(buf));
    _mm256_storeu_ps(buf, r);
    std::memcpy(y + i, buf, sizeof(float) * (n - i));
  }
}

// softplus(x) = max(x,0) + log1p(exp(-|x|))
inline __m256 softplus256(__m256 x) {
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 zero = _mm256_setzero_ps();
  const __m256 absx = _mm256_andnot_ps(_mm256_set1_ps(-0.0f), x);
  const __m256 e = exp256(_mm256_sub_ps(zero, absx));
  const __m256 l = log256(_mm256_add_ps(one, e));
  return _mm256_add_ps(_mm256_max_ps(x, zero), l);
}

void a_vsoftplus(const float* x, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, softplus256(_mm256_loadu_ps(x + i)));
  if (i < n) {
    float buf[8] = {0};
    std::memcpy(buf, x + i, sizeof(float) * (n - i));
    __m256 r = softplus256(_mm256_loadu_ps(buf));
    _mm256_storeu_ps(buf, r);
    std::memcpy(y + i, buf, sizeof(float) * (n - i));
  }
}

void a_vsqrt(const float* x, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_sqrt_ps(_mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] = __builtin_sqrtf(x[i]);
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table = {
      a_matmul_nn, a_matmul_tn, a_matmul_nt,
      a_vadd,      a_vsub,      a_vmul,      a_vdiv, a_vscale, a_vaxpy, a_vfma_acc,
      a_vsum,      a_vtanh,     a_vsigmoid,  a_vexp, a_vlog,   a_vsoftplus, a_vsqrt,
  };
  return table;
}

}  // namespace mrssm::kernels
